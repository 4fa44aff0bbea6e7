"""File formats: interval specs, summary tables, cohorts, counterfactual panels and reports.

All text is UTF-8 with LF newlines, comma separators and ``.`` as the
decimal point. Parsing is strict: malformed numbers are rejected rather
than coerced, and errors name the row and column.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
import re
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, SchemaError
from .inference import WaningTestResult
from .model import (
    QUANTITIES,
    SIDEDNESS,
    Cohort,
    Covariate,
    Estimate,
    Interval,
    IntervalSpec,
    KBoundsEntry,
    KBoundsEstimate,
    Subinterval,
    SummaryCell,
    SummaryTable,
    validate_summary_table,
)
from .simulate import CounterfactualPanel

SUMMARY_HEADER = ("k", "j", "arm", "stratum", "events", "person_time", "duration_days")
COHORT_HEADER = ("id", "arm", "time_days", "event")
COUNTERFACTUAL_HEADER = ("id", "dy1_a1_e1", "dy2_a1_iso", "dy2_a0_iso")
REPORT_CSV_HEADER = (
    "quantity", "k", "point", "lower", "upper", "sidedness",
    "alpha", "method", "stratum", "backend", "ve2_definition", "flags", "metadata", "error",
)
TEST_CSV_HEADER = ("reject", "direction", "alpha", "basis")

_INT = re.compile(r"[0-9]+\Z")
_REAL = re.compile(r"[+-]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?\Z")


# --------------------------------------------------------------------------
# Scalar parsing


def parse_int(text: str, row=None, column=None) -> int:
    if not _INT.match(text):
        raise ParseError(f"expected a nonnegative integer, got {text!r}", row, column)
    return int(text)


def parse_real(text: str, row=None, column=None, *, nonnegative=False) -> float:
    if not _REAL.match(text):
        raise ParseError(f"expected a decimal number, got {text!r}", row, column)
    value = float(text)
    if not math.isfinite(value):
        raise ParseError(f"number out of range: {text!r}", row, column)
    if nonnegative and value < 0:
        raise ParseError(f"expected a nonnegative number, got {text!r}", row, column)
    return value


def format_real(x: float | None) -> str:
    """17 significant digits; always reads back as a float."""
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _parse_report_real(text: str, row=None, column=None) -> float | None:
    if text == "":
        return None
    if text in ("nan", "inf", "-inf"):
        return float(text)
    return parse_real(text, row, column)


def _open_text(path):
    return open(path, "r", encoding="utf-8", newline="")


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _read_rows(path, header: Sequence[str], *, extra_allowed=False) -> tuple[list[str], list[list[str]]]:
    with _open_text(path) as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    got = rows[0]
    if extra_allowed:
        if tuple(got[: len(header)]) != tuple(header):
            raise SchemaError(f"{path}: header must start with {','.join(header)}, got {','.join(got)}")
    elif tuple(got) != tuple(header):
        raise SchemaError(f"{path}: header must be {','.join(header)}, got {','.join(got)}")
    body = []
    for i, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        if len(r) != len(got):
            raise ParseError(f"expected {len(got)} fields, got {len(r)}", i)
        body.append(r)
    return got, body


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# --------------------------------------------------------------------------
# Interval spec


def interval_spec_to_dict(spec: IntervalSpec) -> dict:
    return {
        "intervals": [
            {"k": iv.k, "subintervals": [{"j": s.j, "start_day": s.start_day, "end_day": s.end_day} for s in iv.subintervals]}
            for iv in spec.intervals
        ]
    }


def interval_spec_from_dict(d: Mapping) -> IntervalSpec:
    try:
        intervals = []
        for iv in d["intervals"]:
            subs = []
            for s in iv["subintervals"]:
                vals = [s["j"], s["start_day"], s["end_day"]]
                if any(isinstance(v, bool) or not isinstance(v, int) for v in vals):
                    raise SchemaError(f"interval {iv.get('k')}: day fields must be integers, got {vals}")
                subs.append(Subinterval(*vals))
            if isinstance(iv["k"], bool) or not isinstance(iv["k"], int):
                raise SchemaError(f"interval index must be an integer, got {iv['k']!r}")
            intervals.append(Interval(iv["k"], tuple(subs)))
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed interval spec: missing or invalid field {exc}") from None
    spec = IntervalSpec(tuple(intervals))
    spec.require_valid()
    return spec


def read_interval_spec(path) -> IntervalSpec:
    try:
        with _open_text(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None
    return interval_spec_from_dict(data)


def write_interval_spec(spec: IntervalSpec, path=None) -> str:
    text = json.dumps(interval_spec_to_dict(spec), indent=2) + "\n"
    if path is not None:
        _write_text(path, text)
    return text


# --------------------------------------------------------------------------
# Summary tables


def read_summary_csv(path, spec: IntervalSpec) -> SummaryTable:
    """Read a summary table; ``duration_days`` must match ``spec``."""
    spec.require_valid()
    _, rows = _read_rows(path, SUMMARY_HEADER)
    cells = []
    seen = set()
    for i, r in enumerate(rows, start=2):
        k = parse_int(r[0], i, "k")
        j = parse_int(r[1], i, "j")
        arm = parse_int(r[2], i, "arm")
        if arm not in (0, 1):
            raise ParseError(f"arm must be 0 or 1, got {r[2]!r}", i, "arm")
        stratum = r[3]
        events = parse_int(r[4], i, "events")
        person_time = parse_real(r[5], i, "person_time", nonnegative=True)
        duration = parse_int(r[6], i, "duration_days")
        key = (k, j, arm, stratum)
        if key in seen:
            raise SchemaError(f"row {i}: duplicate cell (k={k}, j={j}, arm={arm}, stratum={stratum!r})")
        seen.add(key)
        try:
            expected = spec.subinterval(k, j).duration
        except SchemaError:
            raise SchemaError(f"row {i}: subinterval (k={k}, j={j}) not in interval spec") from None
        if duration != expected:
            raise SchemaError(f"row {i}: duration_days {duration} disagrees with interval spec ({expected}) for (k={k}, j={j})")
        cells.append(SummaryCell(k, j, arm, events, person_time, stratum))
    table = SummaryTable(spec, tuple(cells))
    problems = validate_summary_table(table)
    if problems:
        raise SchemaError("; ".join(str(p) for p in problems[:10]))
    return table


def write_summary_csv(table: SummaryTable, path=None) -> str:
    rows = []
    for c in table.cells:
        tau = table.spec.subinterval(c.k, c.j).duration
        rows.append([str(c.k), str(c.j), str(c.arm), c.stratum, str(c.events), repr(float(c.person_time)), str(tau)])
    text = _csv_text(SUMMARY_HEADER, rows)
    if path is not None:
        _write_text(path, text)
    return text


# --------------------------------------------------------------------------
# Cohorts


def _covariate_request(covariates) -> list[tuple[str, str | None]]:
    out = []
    for item in covariates:
        name, _, kind = item.partition(":")
        kind = {"": None, "num": "numeric", "numeric": "numeric", "cat": "categorical", "categorical": "categorical"}.get(kind, "?")
        if kind == "?":
            raise SchemaError(f"covariate {item!r}: kind suffix must be :num or :cat")
        out.append((name.strip(), kind))
    return out


def read_cohort_csv(path, covariates: Sequence[str] | None = None) -> Cohort:
    """Read individual records.

    Parameters
    ----------
    covariates : sequence of str, optional
        Covariate columns to load, each optionally suffixed ``:num`` or
        ``:cat``. Without a suffix a column is numeric when every value
        parses as a number. ``None`` loads every column after the fixed ones.
    """
    header, rows = _read_rows(path, COHORT_HEADER, extra_allowed=True)
    extra = header[len(COHORT_HEADER):]
    requested = _covariate_request(extra if covariates is None else covariates)
    position = {name: i for i, name in enumerate(header)}
    for name, _ in requested:
        if name not in position or name in COHORT_HEADER:
            raise SchemaError(f"{path}: covariate column {name!r} not found in header")

    ids, arms, times, events = [], [], [], []
    seen_ids = set()
    for i, r in enumerate(rows, start=2):
        if r[0] == "":
            raise ParseError("empty id", i, "id")
        if r[0] in seen_ids:
            raise SchemaError(f"row {i}: duplicate id {r[0]!r}")
        seen_ids.add(r[0])
        ids.append(r[0])
        if r[1] not in ("0", "1"):
            raise ParseError(f"arm must be 0 or 1, got {r[1]!r}", i, "arm")
        arms.append(int(r[1]))
        t = parse_real(r[2], i, "time_days")
        if not t > 0:
            raise ParseError(f"time_days must be > 0, got {r[2]!r}", i, "time_days")
        times.append(t)
        if r[3] not in ("0", "1"):
            raise ParseError(f"event must be 0 or 1, got {r[3]!r}", i, "event")
        events.append(int(r[3]))

    cols, schema = {}, []
    for name, kind in requested:
        raw = [r[position[name]] for r in rows]
        for i, v in enumerate(raw, start=2):
            if v == "":
                raise ParseError("missing covariate value", i, name)
        if kind is None:
            kind = "numeric" if all(_REAL.match(v) for v in raw) else "categorical"
        if kind == "numeric":
            cols[name] = np.array([parse_real(v, i, name) for i, v in enumerate(raw, start=2)], dtype=float)
            schema.append(Covariate(name, "numeric"))
        else:
            cols[name] = np.array(raw, dtype=object)
            schema.append(Covariate(name, "categorical", tuple(sorted(set(raw)))))
    if not rows:
        raise SchemaError(f"{path}: no records")
    return Cohort(ids, arms, times, events, cols, schema)


def write_cohort_csv(cohort: Cohort, path=None) -> str:
    header = list(COHORT_HEADER) + [c.name for c in cohort.schema]
    cols = []
    for c in cohort.schema:
        v = cohort.covariates[c.name]
        cols.append([repr(float(x)) for x in v] if c.kind == "numeric" else [str(x) for x in v])
    rows = []
    for i in range(len(cohort)):
        row = [str(cohort.ids[i]), str(int(cohort.arm[i])), repr(float(cohort.time_days[i])), str(int(cohort.event[i]))]
        row.extend(col[i] for col in cols)
        rows.append(row)
    text = _csv_text(header, rows)
    if path is not None:
        _write_text(path, text)
    return text


def write_counterfactual_csv(panel: CounterfactualPanel, path=None) -> str:
    rows = zip(
        (str(i) for i in panel.ids),
        (str(int(v)) for v in panel.dy1_a1_e1),
        (str(int(v)) for v in panel.dy2_a1_iso),
        (str(int(v)) for v in panel.dy2_a0_iso),
    )
    text = _csv_text(COUNTERFACTUAL_HEADER, rows)
    if path is not None:
        _write_text(path, text)
    return text


def read_counterfactual_csv(path) -> CounterfactualPanel:
    _, rows = _read_rows(path, COUNTERFACTUAL_HEADER)
    cols = [[], [], []]
    for i, r in enumerate(rows, start=2):
        for c in range(3):
            if r[c + 1] not in ("0", "1"):
                raise ParseError(f"expected 0 or 1, got {r[c + 1]!r}", i, COUNTERFACTUAL_HEADER[c + 1])
            cols[c].append(int(r[c + 1]))
    ids = np.array([r[0] for r in rows], dtype=object)
    return CounterfactualPanel(ids, *(np.array(c, dtype=np.int8) for c in cols))


# --------------------------------------------------------------------------
# Reports


def _estimate_dict(e: Estimate | None):
    if e is None:
        return None
    return {"point": e.point, "lower": e.lower, "upper": e.upper}


def _estimate_from(d, where: str) -> Estimate | None:
    if d is None:
        return None
    try:
        vals = [d["point"], d.get("lower"), d.get("upper")]
    except (KeyError, AttributeError, TypeError):
        raise SchemaError(f"{where}: estimate needs a 'point' field") from None
    out = []
    for v in vals:
        if isinstance(v, str) and v in ("NaN", "Infinity", "-Infinity"):
            v = float(v.replace("Infinity", "inf"))
        if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
            raise SchemaError(f"{where}: non-numeric value {v!r}")
        out.append(None if v is None else float(v))
    if out[0] is None:
        raise SchemaError(f"{where}: point estimate is null")
    return Estimate(*out)


def report_to_dict(obj) -> dict:
    from .model import WaningEstimate

    if isinstance(obj, WaningEstimate):
        return {
            "kind": "waning_estimate",
            "method": obj.method,
            "ve2_definition": obj.ve2_definition,
            "stratum": obj.stratum,
            "alpha": obj.alpha,
            "quantities": {q: _estimate_dict(getattr(obj, q)) for q in QUANTITIES},
            "flags": list(obj.flags),
            "metadata": dict(obj.metadata),
        }
    if isinstance(obj, KBoundsEstimate):
        return {
            "kind": "k_bounds_estimate",
            "method": obj.method,
            "backend": obj.backend,
            "stratum": obj.stratum,
            "alpha": obj.alpha,
            "intervals": [
                {"k": e.k, "l": _estimate_dict(e.l), "u": _estimate_dict(e.u), "ve_obs": _estimate_dict(e.ve_obs), "error": e.error}
                for e in obj.entries
            ],
            "flags": list(obj.flags),
            "metadata": dict(obj.metadata),
        }
    if isinstance(obj, WaningTestResult):
        return {"kind": "waning_test", "reject": obj.reject, "direction": obj.direction, "alpha": obj.alpha, "basis": obj.basis}
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def report_from_dict(d: Mapping):
    from .model import WaningEstimate

    if not isinstance(d, Mapping):
        raise SchemaError("report must be a JSON object")
    kind = d.get("kind")
    try:
        if kind == "waning_estimate":
            qs = d["quantities"]
            est = {q: _estimate_from(qs.get(q), q) for q in QUANTITIES}
            for q in QUANTITIES[:-1]:
                if est[q] is None:
                    raise SchemaError(f"report is missing quantity {q!r}")
            return WaningEstimate(
                **est,
                alpha=d.get("alpha"),
                method=d.get("method", "summary-delta"),
                ve2_definition=d.get("ve2_definition", "hazard-ratio"),
                stratum=d.get("stratum", ""),
                flags=tuple(d.get("flags", ())),
                metadata=d.get("metadata", {}),
            )
        if kind == "k_bounds_estimate":
            entries = tuple(
                KBoundsEntry(int(e["k"]), _estimate_from(e.get("l"), "l"), _estimate_from(e.get("u"), "u"),
                             _estimate_from(e.get("ve_obs"), "ve_obs"), e.get("error"))
                for e in d["intervals"]
            )
            return KBoundsEstimate(entries, d["backend"], d.get("alpha"), d.get("method", "summary-delta"),
                                   d.get("stratum", ""), tuple(d.get("flags", ())), d.get("metadata", {}))
        if kind == "waning_test":
            return WaningTestResult(bool(d["reject"]), d["direction"], d.get("alpha"), d["basis"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed {kind} report: {exc!r}") from None
    raise SchemaError(f"unknown report kind {kind!r}")


def _json(value, indent: int = 0) -> str:
    """JSON text with floats at 17 significant digits and non-finite floats as strings."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        x = float(value)
        if math.isnan(x):
            return '"NaN"'
        if math.isinf(x):
            return '"Infinity"' if x > 0 else '"-Infinity"'
        return format_real(x)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, Mapping):
        if not value:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {_json(v, indent + 1)}" for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        return "[\n" + ",\n".join(pad + _json(v, indent + 1) for v in value) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _report_csv(obj) -> str:
    d = report_to_dict(obj)
    if d["kind"] == "waning_test":
        return _csv_text(TEST_CSV_HEADER, [["true" if obj.reject else "false", obj.direction, format_real(obj.alpha), obj.basis]])
    common = [
        format_real(d["alpha"]), d["method"], d["stratum"], d.get("backend", ""), d.get("ve2_definition", ""),
        ";".join(d["flags"]), _json(d["metadata"]).replace("\n", "").replace("  ", "") if d["metadata"] else "",
    ]
    rows = []
    if d["kind"] == "waning_estimate":
        for q in QUANTITIES:
            e = d["quantities"][q]
            if e is None:
                continue
            rows.append([q, "", format_real(e["point"]), format_real(e["lower"]), format_real(e["upper"]), SIDEDNESS[q], *common, ""])
    else:
        for entry in d["intervals"]:
            for q, side in (("l", "lower"), ("u", "upper"), ("ve_obs", "two-sided")):
                e = entry[q]
                if e is None:
                    rows.append([q, str(entry["k"]), "", "", "", side, *common, entry["error"] or ""])
                    continue
                rows.append([q, str(entry["k"]), format_real(e["point"]), format_real(e["lower"]),
                             format_real(e["upper"]), side, *common, entry["error"] or ""])
    return _csv_text(REPORT_CSV_HEADER, rows)


def write_report(obj, path=None, format: str = "json") -> str:
    """Serialize an estimate or test result; also writes it to ``path`` if given."""
    if format == "json":
        text = _json(report_to_dict(obj)) + "\n"
    elif format == "csv":
        text = _report_csv(obj)
    else:
        raise ValueError(f"format must be 'json' or 'csv', got {format!r}")
    if path is not None:
        _write_text(path, text)
    return text


def parse_report(text: str, format: str = "json"):
    if format == "json":
        try:
            return report_from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON report ({exc.msg})", exc.lineno) from None
    if format != "csv":
        raise ValueError(f"format must be 'json' or 'csv', got {format!r}")
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows:
        raise SchemaError("empty report")
    if tuple(rows[0]) == TEST_CSV_HEADER:
        r = rows[1]
        return WaningTestResult(r[0] == "true", r[1], _parse_report_real(r[2], 2, "alpha"), r[3])
    if tuple(rows[0]) != REPORT_CSV_HEADER:
        raise SchemaError(f"unrecognized report header {','.join(rows[0])}")
    body = rows[1:]
    if not body:
        raise SchemaError("report has no rows")
    first = body[0]
    alpha = _parse_report_real(first[6], 2, "alpha")
    method, stratum, backend, ve2_def = first[7], first[8], first[9], first[10]
    metadata = json.loads(first[12]) if first[12] else {}

    def est(r, i):
        return Estimate(_parse_report_real(r[2], i, "point"), _parse_report_real(r[3], i, "lower"), _parse_report_real(r[4], i, "upper"))

    if first[1] == "":
        from .model import WaningEstimate

        q = {r[0]: est(r, i) for i, r in enumerate(body, start=2)}
        flags = tuple(f for f in first[11].split(";") if f)
        return WaningEstimate(**{name: q.get(name) for name in QUANTITIES}, alpha=alpha, method=method,
                              ve2_definition=ve2_def, stratum=stratum, flags=flags, metadata=metadata)
    flags = tuple(f for f in first[11].split(";") if f)
    by_k: dict[int, dict] = {}
    for i, r in enumerate(body, start=2):
        k = parse_int(r[1], i, "k")
        slot = by_k.setdefault(k, {"error": r[13] or None})
        slot[r[0]] = None if r[2] == "" else est(r, i)
    entries = tuple(KBoundsEntry(k, s.get("l"), s.get("u"), s.get("ve_obs"), s["error"]) for k, s in by_k.items())
    return KBoundsEstimate(entries, backend, alpha, method, stratum, flags, metadata)


def read_report(path, format: str | None = None):
    if format is None:
        format = "csv" if str(path).lower().endswith(".csv") else "json"
    with _open_text(path) as fh:
        return parse_report(fh.read(), format)
