import numpy as np
import pytest

from waning.errors import SchemaError
from waning.model import (
    Cohort,
    Covariate,
    IndividualRecord,
    IntervalSpec,
    SummaryCell,
    SummaryTable,
    validate_interval_spec,
    validate_summary_table,
)


def two_interval_spec():
    return IntervalSpec.from_days([[(11, 40), (41, 81)], [(82, 142)]])


def full_table(spec, events=1, pt=100.0, stratum=""):
    return SummaryTable(spec, tuple(
        SummaryCell(k, j, a, events, pt, stratum) for k, j in spec.keys() for a in (0, 1)
    ))


class TestIntervalSpec:
    def test_uniform_layout(self):
        spec = IntervalSpec.uniform(3, 30)
        assert spec.K == 3
        assert [(iv.start_day, iv.end_day) for iv in spec.intervals] == [(1, 30), (31, 60), (61, 90)]
        assert spec.origin == 0.0
        assert spec.start_time(2) == 30.0 and spec.end_time(2) == 60.0

    def test_origin_follows_first_day(self):
        spec = two_interval_spec()
        assert spec.origin == 10.0
        assert spec.interval(1).duration == 71
        assert spec.subinterval(1, 2).duration == 41
        assert validate_interval_spec(spec) == []

    def test_single_interval_rejected(self):
        spec = IntervalSpec.uniform(1, 30)
        problems = validate_interval_spec(spec)
        assert any("K >= 2" in p.message for p in problems)
        with pytest.raises(SchemaError):
            spec.require_valid()

    def test_gap_and_overlap_reported(self):
        gap = IntervalSpec.from_days([[(1, 10)], [(12, 20)]])
        overlap = IntervalSpec.from_days([[(1, 10)], [(10, 20)]])
        assert any("gap" in p.message for p in validate_interval_spec(gap))
        assert any("overlap" in p.message for p in validate_interval_spec(overlap))

    def test_empty_subinterval_reported(self):
        spec = IntervalSpec.from_days([[(5, 4)], [(5, 10)]])
        assert any("duration" in p.message for p in validate_interval_spec(spec))

    def test_out_of_range_lookup(self):
        with pytest.raises(SchemaError):
            IntervalSpec.uniform(2, 5).interval(3)
        with pytest.raises(SchemaError):
            IntervalSpec.uniform(2, 5).subinterval(1, 2)


class TestSummaryTable:
    def test_valid_table(self):
        assert validate_summary_table(full_table(two_interval_spec())) == []

    def test_missing_cell_keyed(self):
        spec = two_interval_spec()
        t = full_table(spec)
        t = SummaryTable(spec, t.cells[1:])
        problems = validate_summary_table(t)
        assert [p.key for p in problems] == [(1, 1, 0, "")]

    def test_duplicate_and_negative(self):
        spec = IntervalSpec.uniform(2, 10)
        cells = list(full_table(spec).cells)
        cells.append(cells[0])
        cells[1] = SummaryCell(1, 1, 1, -1, 10.0)
        msgs = [p.message for p in validate_summary_table(SummaryTable(spec, cells))]
        assert "duplicate cell" in msgs
        assert any("negative events" in m for m in msgs)

    def test_zero_person_time_with_events(self):
        spec = IntervalSpec.uniform(2, 10)
        cells = list(full_table(spec).cells)
        cells[0] = SummaryCell(1, 1, 0, 3, 0.0)
        assert any("zero person-time" in p.message for p in validate_summary_table(SummaryTable(spec, cells)))

    def test_strata_each_complete(self):
        spec = IntervalSpec.uniform(2, 10)
        t = SummaryTable(spec, full_table(spec, stratum="a").cells + full_table(spec, stratum="b").cells[:-1])
        assert t.strata() == ("a", "b")
        assert [p.key for p in validate_summary_table(t)] == [(2, 1, 1, "b")]
        assert validate_summary_table(t.restrict("a")) == []


class TestCohort:
    def make(self):
        return Cohort(
            ["a", "b", "c", "d"], [0, 1, 1, 0], [5.0, 10.0, 3.0, 7.5], [1, 0, 1, 0],
            {"age": [30, 40, 50, 60], "site": ["x", "y", "x", "z"]},
        )

    def test_columns_read_only(self):
        c = self.make()
        with pytest.raises(ValueError):
            c.time_days[0] = 2.0
        with pytest.raises(AttributeError):
            c.arm = None

    def test_schema_inferred(self):
        c = self.make()
        kinds = {cov.name: (cov.kind, cov.levels) for cov in c.schema}
        assert kinds == {"age": ("numeric", ()), "site": ("categorical", ("x", "y", "z"))}
        assert c.encoded_names() == ["age", "site=y", "site=z"]

    def test_design_drops_reference_level(self):
        X = self.make().design()
        np.testing.assert_array_equal(X, [[30, 0, 0], [40, 1, 0], [50, 0, 0], [60, 0, 1]])

    def test_default_profile(self):
        c = self.make()
        assert c.default_profile() == {"age": 45.0, "site": "x"}
        np.testing.assert_array_equal(c.encode_profile(None), [45.0, 0.0, 0.0])
        np.testing.assert_array_equal(c.encode_profile({"site": "z"}), [45.0, 0.0, 1.0])

    def test_profile_errors(self):
        c = self.make()
        with pytest.raises(SchemaError):
            c.encode_profile({"weight": 3})
        with pytest.raises(SchemaError):
            c.encode_profile({"site": "q"})

    def test_records_round_trip(self):
        c = self.make()
        assert Cohort.from_records(list(c.records), c.schema) == c

    def test_take_repeats_rows(self):
        c = self.make().take([1, 1, 3])
        assert list(c.ids) == ["b", "b", "d"]
        assert [cov.levels for cov in c.schema if cov.kind == "categorical"] == [("x", "y", "z")]

    @pytest.mark.parametrize("kw", [
        dict(arm=[0, 2]), dict(event=[0, 3]), dict(time_days=[1.0, 0.0]), dict(time_days=[1.0, np.nan]),
    ])
    def test_invalid_columns(self, kw):
        base = dict(ids=["a", "b"], arm=[0, 1], time_days=[1.0, 2.0], event=[0, 1])
        base.update(kw)
        with pytest.raises(SchemaError):
            Cohort(**base)

    def test_undeclared_level(self):
        with pytest.raises(SchemaError):
            Cohort(["a"], [0], [1.0], [0], {"s": ["q"]}, (Covariate("s", "categorical", ("x",)),))

    def test_record_covariates_frozen(self):
        r = IndividualRecord("1", 0, 1.0, 0, {"a": 1.0})
        with pytest.raises(TypeError):
            r.covariates["a"] = 2.0
