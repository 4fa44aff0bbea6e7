import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from waning.errors import ParseError, SchemaError
from waning.inference import WaningTestResult
from waning.io import (
    format_real,
    parse_real,
    parse_report,
    read_cohort_csv,
    read_counterfactual_csv,
    read_interval_spec,
    read_report,
    read_summary_csv,
    write_cohort_csv,
    write_counterfactual_csv,
    write_interval_spec,
    write_report,
    write_summary_csv,
)
from waning.model import (
    Cohort,
    Estimate,
    IntervalSpec,
    KBoundsEntry,
    KBoundsEstimate,
    SummaryCell,
    SummaryTable,
    WaningEstimate,
)
from waning.simulate import DgmBoundsConfig, simulate_dgm_bounds

SPEC = IntervalSpec.from_days([[(11, 40), (41, 81)], [(82, 142)]])


def table():
    cells = []
    for k, j in SPEC.keys():
        for a in (0, 1):
            cells.append(SummaryCell(k, j, a, 3 + k + j + a, 1234.5 * (k + a) + 0.1))
    return SummaryTable(SPEC, tuple(cells))


def estimate():
    return WaningEstimate(
        Estimate(0.95, 0.93, 0.97), Estimate(0.9, 0.87, 0.93), Estimate(0.87, 0.84, None),
        Estimate(0.94, None, 0.95), Estimate(0.36, 0.26, None), Estimate(0.81, None, 1.27),
        Estimate(0.5, 0.3, 0.8), alpha=0.05, flags=("variance_partial:Lambda_11",),
        metadata={"resamples": 500, "seed": 7, "profile": {"age": 41.5, "site": "b"}},
    )


def k_estimate():
    return KBoundsEstimate(
        (KBoundsEntry(2, Estimate(0.2, 0.1, None), Estimate(0.95, None, 0.97), Estimate(0.8, 0.7, 0.9)),
         KBoundsEntry(3, None, None, None, "zero denominator in interval 3 for l")),
        "exact_product", 0.05, "cox-bootstrap", "", ("x",), {"resamples": 10},
    )


def test_interval_spec_round_trip(tmp_path):
    p = tmp_path / "spec.json"
    write_interval_spec(SPEC, p)
    assert read_interval_spec(p) == SPEC


def test_interval_spec_invalid(tmp_path):
    p = tmp_path / "spec.json"
    p.write_text(json.dumps({"intervals": [{"k": 1, "subintervals": [{"j": 1, "start_day": 1, "end_day": 10}]}]}))
    with pytest.raises(SchemaError):
        read_interval_spec(p)


def test_summary_round_trip(tmp_path):
    p = tmp_path / "t.csv"
    write_summary_csv(table(), p)
    assert read_summary_csv(p, SPEC) == table()
    assert write_summary_csv(read_summary_csv(p, SPEC)) == p.read_text()


@pytest.mark.parametrize("field, value, error", [
    ("events", "1.5", ParseError), ("events", "-1", ParseError), ("person_time", "abc", ParseError),
    ("person_time", "1,5", ParseError), ("person_time", "-3", ParseError), ("arm", "2", ParseError),
    ("duration_days", "29", SchemaError), ("k", "3", SchemaError), ("person_time", "nan", ParseError),
])
def test_summary_strict(tmp_path, field, value, error):
    lines = write_summary_csv(table()).splitlines()
    header = lines[0].split(",")
    row = lines[1].split(",")
    row[header.index(field)] = value
    if "," in value:
        row[header.index(field)] = f'"{value}"'
    lines[1] = ",".join(row)
    p = tmp_path / "t.csv"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(error) as info:
        read_summary_csv(p, SPEC)
    if error is ParseError:
        assert info.value.row == 2


def test_summary_missing_cell(tmp_path):
    lines = write_summary_csv(table()).splitlines()
    p = tmp_path / "t.csv"
    p.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(SchemaError, match="missing cell"):
        read_summary_csv(p, SPEC)


def test_summary_bad_header(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("k,j,arm,events\n")
    with pytest.raises(SchemaError):
        read_summary_csv(p, SPEC)


def test_cohort_round_trip(tmp_path):
    c = Cohort(["a", "b", "c"], [0, 1, 1], [1.5, 30.0, 0.1 + 0.2], [1, 0, 1],
               {"age": [30.25, 41.0, 1e-7], "site": ["x", "y", "x"]})
    p = tmp_path / "c.csv"
    write_cohort_csv(c, p)
    back = read_cohort_csv(p)
    assert back == c
    assert back.time_days[2] == 0.1 + 0.2


def test_cohort_covariate_selection(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("id,arm,time_days,event,age,site,code\n1,0,5,1,30,x,7\n2,1,9,0,40,y,8\n")
    c = read_cohort_csv(p, ["age", "code:cat"])
    assert [(v.name, v.kind) for v in c.schema] == [("age", "numeric"), ("code", "categorical")]
    with pytest.raises(SchemaError):
        read_cohort_csv(p, ["weight"])
    with pytest.raises(SchemaError):
        read_cohort_csv(p, ["age:int"])


@pytest.mark.parametrize("row, column", [
    ("1,0,0,1", "time_days"), ("1,0,-2,1", "time_days"), ("1,x,5,1", "arm"), ("1,0,5,2", "event"), ("1,0,5e,1", "time_days"),
])
def test_cohort_strict(tmp_path, row, column):
    p = tmp_path / "c.csv"
    p.write_text(f"id,arm,time_days,event\n2,1,3,0\n{row}\n")
    with pytest.raises(ParseError) as info:
        read_cohort_csv(p)
    assert info.value.row == 3 and info.value.column == column


def test_cohort_missing_covariate(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("id,arm,time_days,event,age\n1,0,5,1,\n")
    with pytest.raises(ParseError):
        read_cohort_csv(p)


def test_cohort_duplicate_id(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("id,arm,time_days,event\n1,0,5,1\n1,1,5,0\n")
    with pytest.raises(SchemaError):
        read_cohort_csv(p)


def test_counterfactual_round_trip(tmp_path):
    sim = simulate_dgm_bounds(DgmBoundsConfig.single(0.075, 0.02, 0.045, 0.02, n=500, seed=1))
    p = tmp_path / "cf.csv"
    write_counterfactual_csv(sim.panel, p)
    assert read_counterfactual_csv(p) == sim.panel


@pytest.mark.parametrize("fmt", ["json", "csv"])
@pytest.mark.parametrize("make", [estimate, k_estimate])
def test_report_round_trip(tmp_path, fmt, make):
    obj = make()
    p = tmp_path / f"r.{fmt}"
    text = write_report(obj, p, fmt)
    back = read_report(p)
    assert back == obj
    assert write_report(back, format=fmt) == text


@pytest.mark.parametrize("fmt", ["json", "csv"])
def test_test_result_round_trip(fmt):
    r = WaningTestResult(True, "waning", 0.05, "u_psi_upper")
    assert parse_report(write_report(r, format=fmt), fmt) == r


def test_non_finite_report_values():
    est = WaningEstimate(*(Estimate(x) for x in (0.9, 0.8, 0.7, 1.0, 0.3, math.inf)), psi_obs=Estimate(math.nan))
    text = write_report(est)
    assert '"Infinity"' in text and '"NaN"' in text
    back = parse_report(text)
    assert math.isinf(back.u_psi.point) and math.isnan(back.psi_obs.point)
    back = parse_report(write_report(est, format="csv"), "csv")
    assert math.isinf(back.u_psi.point)


def test_malformed_report():
    with pytest.raises(ParseError):
        parse_report("{not json")
    with pytest.raises(SchemaError):
        parse_report('{"kind": "other"}')
    with pytest.raises(SchemaError):
        parse_report('{"kind": "waning_estimate", "quantities": {"ve1": {"point": "x"}}}')


def test_parse_real_strict():
    assert parse_real("1e-3") == 1e-3
    assert parse_real("-.5") == -0.5
    for bad in ("", " 1", "1 ", "0x10", "1_000", "inf", "NaN", "1e999", "１"):
        with pytest.raises(ParseError):
            parse_real(bad)


@settings(max_examples=1000, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_format_real_round_trips(x):
    s = format_real(x)
    assert float(s) == x
    assert parse_real(s) == x
