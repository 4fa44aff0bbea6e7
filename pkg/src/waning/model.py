"""Domain types shared by estimation, inference and simulation.

All types are immutable after construction. Arrays held by :class:`Cohort`
are flagged read-only so instances can be shared between threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import SchemaError

ARMS = (0, 1)

#: Report quantities in their serialization order.
QUANTITIES = ("ve1", "ve2_obs", "l2", "u2", "l_psi", "u_psi", "psi_obs")

#: Which confidence limits each quantity carries.
SIDEDNESS = {
    "ve1": "two-sided",
    "ve2_obs": "two-sided",
    "psi_obs": "two-sided",
    "l2": "lower",
    "l_psi": "lower",
    "u2": "upper",
    "u_psi": "upper",
}

METHODS = ("summary-delta", "logistic-bootstrap", "cox-bootstrap")


def _freeze(mapping):
    return MappingProxyType(dict(mapping))


# --------------------------------------------------------------------------
# Interval layout


@dataclass(frozen=True)
class Subinterval:
    """Days ``start_day`` through ``end_day`` inclusive."""

    j: int
    start_day: int
    end_day: int

    @property
    def duration(self) -> int:
        return self.end_day - self.start_day + 1


@dataclass(frozen=True)
class Interval:
    k: int
    subintervals: tuple[Subinterval, ...]

    def __post_init__(self):
        object.__setattr__(self, "subintervals", tuple(self.subintervals))

    @property
    def start_day(self) -> int:
        return self.subintervals[0].start_day

    @property
    def end_day(self) -> int:
        return self.subintervals[-1].end_day

    @property
    def duration(self) -> int:
        return sum(s.duration for s in self.subintervals)


@dataclass(frozen=True)
class IntervalSpec:
    """Partition of follow-up into analysis intervals and day-level subintervals.

    Day ``d`` covers continuous time ``(d - 1, d]``, so a record with
    ``time_days = t`` is at risk during every day ``d`` with ``d - 1 < t``.
    """

    intervals: tuple[Interval, ...]

    def __post_init__(self):
        object.__setattr__(self, "intervals", tuple(self.intervals))

    @classmethod
    def from_days(cls, layout: Sequence[Sequence[tuple[int, int]]]) -> "IntervalSpec":
        """Build from nested ``[(start_day, end_day), ...]`` lists, one list per interval."""
        intervals = []
        for k, subs in enumerate(layout, start=1):
            intervals.append(
                Interval(k, tuple(Subinterval(j, int(s), int(e)) for j, (s, e) in enumerate(subs, start=1)))
            )
        return cls(tuple(intervals))

    @classmethod
    def uniform(cls, n_intervals: int, width: int, first_day: int = 1) -> "IntervalSpec":
        """``n_intervals`` back-to-back intervals of ``width`` days, one subinterval each."""
        layout = []
        for k in range(n_intervals):
            start = first_day + k * width
            layout.append([(start, start + width - 1)])
        return cls.from_days(layout)

    @property
    def K(self) -> int:
        return len(self.intervals)

    def interval(self, k: int) -> Interval:
        if not 1 <= k <= len(self.intervals):
            raise SchemaError(f"interval k={k} outside 1..{len(self.intervals)}")
        return self.intervals[k - 1]

    def subinterval(self, k: int, j: int) -> Subinterval:
        subs = self.interval(k).subintervals
        if not 1 <= j <= len(subs):
            raise SchemaError(f"subinterval (k={k}, j={j}) not in interval spec")
        return subs[j - 1]

    def keys(self) -> Iterator[tuple[int, int]]:
        for iv in self.intervals:
            for s in iv.subintervals:
                yield iv.k, s.j

    @property
    def origin(self) -> float:
        """Continuous time at which follow-up starts."""
        return float(self.intervals[0].start_day - 1)

    def end_time(self, k: int) -> float:
        return float(self.interval(k).end_day)

    def start_time(self, k: int) -> float:
        return float(self.interval(k).start_day - 1)

    def require_valid(self) -> None:
        problems = validate_interval_spec(self)
        if problems:
            raise SchemaError("invalid interval spec: " + "; ".join(str(p) for p in problems))


@dataclass(frozen=True)
class Violation:
    key: tuple
    message: str

    def __str__(self) -> str:
        return f"{self.key}: {self.message}"


def validate_interval_spec(spec: IntervalSpec) -> list[Violation]:
    """Check ordering, contiguity and the two-interval minimum."""
    out: list[Violation] = []
    if len(spec.intervals) < 2:
        out.append(Violation(("K",), f"K >= 2 required, got K={len(spec.intervals)}"))
    previous_end = None
    for pos, iv in enumerate(spec.intervals, start=1):
        if iv.k != pos:
            out.append(Violation((iv.k,), f"interval index {iv.k} out of order (expected {pos})"))
        if not iv.subintervals:
            out.append(Violation((iv.k,), "interval has no subintervals"))
            continue
        for jpos, s in enumerate(iv.subintervals, start=1):
            key = (iv.k, s.j)
            if s.j != jpos:
                out.append(Violation(key, f"subinterval index {s.j} out of order (expected {jpos})"))
            if s.duration < 1:
                out.append(Violation(key, f"duration {s.duration} < 1 day"))
            if previous_end is not None:
                if s.start_day <= previous_end:
                    out.append(Violation(key, f"overlaps previous subinterval ending day {previous_end}"))
                elif s.start_day != previous_end + 1:
                    out.append(Violation(key, f"gap after day {previous_end} (starts day {s.start_day})"))
            previous_end = s.end_day
    return out


# --------------------------------------------------------------------------
# Summary data


@dataclass(frozen=True)
class SummaryCell:
    k: int
    j: int
    arm: int
    events: int
    person_time: float
    stratum: str = ""

    @property
    def key(self) -> tuple[int, int, int, str]:
        return (self.k, self.j, self.arm, self.stratum)


@dataclass(frozen=True)
class SummaryTable:
    spec: IntervalSpec
    cells: tuple[SummaryCell, ...]

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))

    def strata(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for c in self.cells:
            seen.setdefault(c.stratum, None)
        return tuple(seen)

    def lookup(self) -> dict[tuple[int, int, int, str], SummaryCell]:
        return {c.key: c for c in self.cells}

    def restrict(self, stratum: str) -> "SummaryTable":
        return SummaryTable(self.spec, tuple(c for c in self.cells if c.stratum == stratum))

    def require_valid(self) -> None:
        problems = validate_summary_table(self)
        if problems:
            raise SchemaError("invalid summary table: " + "; ".join(str(p) for p in problems[:10]))


def validate_summary_table(table: SummaryTable) -> list[Violation]:
    """List every invariant violation, keyed by ``(k, j, arm, stratum)``."""
    out = list(validate_interval_spec(table.spec))
    expected = set(table.spec.keys())
    seen: set[tuple] = set()
    for c in table.cells:
        key = c.key
        if key in seen:
            out.append(Violation(key, "duplicate cell"))
        seen.add(key)
        if (c.k, c.j) not in expected:
            out.append(Violation(key, "subinterval not in interval spec"))
        if c.arm not in ARMS:
            out.append(Violation(key, f"arm must be 0 or 1, got {c.arm!r}"))
        if isinstance(c.events, bool) or not isinstance(c.events, (int, np.integer)):
            out.append(Violation(key, f"events must be an integer count, got {c.events!r}"))
        elif c.events < 0:
            out.append(Violation(key, f"negative events {c.events}"))
        pt = c.person_time
        if not isinstance(pt, (int, float, np.floating, np.integer)) or not math.isfinite(pt) or pt < 0:
            out.append(Violation(key, f"person_time must be finite and >= 0, got {pt!r}"))
        elif pt == 0 and isinstance(c.events, (int, np.integer)) and c.events > 0:
            out.append(Violation(key, f"zero person-time with {c.events} events"))
    for stratum in table.strata() or ("",):
        for k, j in sorted(expected):
            for arm in ARMS:
                if (k, j, arm, stratum) not in seen:
                    out.append(Violation((k, j, arm, stratum), "missing cell"))
    return out


# --------------------------------------------------------------------------
# Individual-level data


@dataclass(frozen=True)
class Covariate:
    name: str
    kind: str = "numeric"  # or "categorical"
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise SchemaError(f"covariate {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "levels", tuple(self.levels))

    def encoded_names(self) -> list[str]:
        if self.kind == "numeric":
            return [self.name]
        # first level is the reference category
        return [f"{self.name}={lvl}" for lvl in self.levels[1:]]


@dataclass(frozen=True)
class IndividualRecord:
    id: str
    arm: int
    time_days: float
    event: int
    covariates: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "covariates", _freeze(self.covariates))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


class Cohort:
    """Column-oriented collection of individual records.

    Parameters
    ----------
    ids, arm, time_days, event : array-like
        One entry per record.
    covariates : mapping of name to array-like, optional
        Numeric columns are stored as float64, categorical ones as strings.
    schema : sequence of Covariate, optional
        Inferred from ``covariates`` when omitted (numeric unless the values
        are strings). Categorical levels default to the sorted observed values.
    """

    __slots__ = ("ids", "arm", "time_days", "event", "covariates", "schema")

    def __init__(self, ids, arm, time_days, event, covariates=None, schema=None):
        covariates = dict(covariates or {})
        arm = np.asarray(arm)
        time_days = np.asarray(time_days, dtype=float)
        event = np.asarray(event)
        n = len(arm)
        ids = np.asarray([str(i) for i in ids], dtype=object) if len(ids) else np.empty(0, dtype=object)
        if not (len(ids) == len(time_days) == len(event) == n):
            raise SchemaError("cohort columns have different lengths")
        if n and not np.isin(arm, ARMS).all():
            raise SchemaError("arm must be 0 or 1")
        if n and not np.isin(event, (0, 1)).all():
            raise SchemaError("event must be 0 or 1")
        if n and not (np.isfinite(time_days).all() and (time_days > 0).all()):
            raise SchemaError("time_days must be finite and > 0")
        if schema is None:
            schema = []
            for name, values in covariates.items():
                values = np.asarray(values)
                if values.dtype.kind in "OUS":
                    schema.append(Covariate(name, "categorical", tuple(sorted({str(v) for v in values}))))
                else:
                    schema.append(Covariate(name, "numeric"))
        schema = tuple(schema)
        names = [c.name for c in schema]
        if sorted(names) != sorted(covariates):
            raise SchemaError(f"covariate schema {names} does not match columns {sorted(covariates)}")
        cols = {}
        for cov in schema:
            values = np.asarray(covariates[cov.name])
            if len(values) != n:
                raise SchemaError(f"covariate {cov.name!r} has {len(values)} values for {n} records")
            if cov.kind == "numeric":
                values = values.astype(float)
                if n and not np.isfinite(values).all():
                    raise SchemaError(f"covariate {cov.name!r} has missing or non-finite values")
            else:
                values = np.asarray([str(v) for v in values], dtype=object)
                unknown = set(values) - set(cov.levels)
                if unknown:
                    raise SchemaError(f"covariate {cov.name!r} has undeclared levels {sorted(unknown)}")
            cols[cov.name] = _readonly(values)
        object.__setattr__(self, "ids", _readonly(ids))
        object.__setattr__(self, "arm", _readonly(arm.astype(np.int8)))
        object.__setattr__(self, "time_days", _readonly(time_days))
        object.__setattr__(self, "event", _readonly(event.astype(np.int8)))
        object.__setattr__(self, "covariates", MappingProxyType(cols))
        object.__setattr__(self, "schema", schema)

    def __setattr__(self, name, value):
        raise AttributeError("Cohort is immutable")

    @classmethod
    def from_records(cls, records: Iterable[IndividualRecord], schema=None) -> "Cohort":
        records = list(records)
        names = [c.name for c in schema] if schema is not None else (
            list(records[0].covariates) if records else []
        )
        covs = {name: [r.covariates[name] for r in records] for name in names}
        return cls(
            [r.id for r in records],
            [r.arm for r in records],
            [r.time_days for r in records],
            [r.event for r in records],
            covs,
            schema,
        )

    def __len__(self) -> int:
        return len(self.arm)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Cohort):
            return NotImplemented
        if self.schema != other.schema or len(self) != len(other):
            return False
        same = (
            np.array_equal(self.ids, other.ids)
            and np.array_equal(self.arm, other.arm)
            and np.array_equal(self.time_days, other.time_days)
            and np.array_equal(self.event, other.event)
        )
        return same and all(np.array_equal(self.covariates[c.name], other.covariates[c.name]) for c in self.schema)

    __hash__ = None

    def __repr__(self) -> str:
        return f"Cohort(n={len(self)}, covariates={[c.name for c in self.schema]})"

    @property
    def records(self) -> Iterator[IndividualRecord]:
        for i in range(len(self)):
            yield IndividualRecord(
                str(self.ids[i]),
                int(self.arm[i]),
                float(self.time_days[i]),
                int(self.event[i]),
                {c.name: (float(self.covariates[c.name][i]) if c.kind == "numeric" else str(self.covariates[c.name][i]))
                 for c in self.schema},
            )

    def take(self, index) -> "Cohort":
        """Rows at ``index`` (repeats allowed), keeping the covariate schema."""
        index = np.asarray(index)
        return Cohort(
            self.ids[index],
            self.arm[index],
            self.time_days[index],
            self.event[index],
            {name: col[index] for name, col in self.covariates.items()},
            self.schema,
        )

    def encoded_names(self) -> list[str]:
        return [n for c in self.schema for n in c.encoded_names()]

    def design(self) -> np.ndarray:
        """Covariate matrix with categorical columns one-hot encoded (reference level dropped)."""
        n = len(self)
        blocks = []
        for cov in self.schema:
            col = self.covariates[cov.name]
            if cov.kind == "numeric":
                blocks.append(col.reshape(n, 1))
            else:
                blocks.append(np.stack([(col == lvl).astype(float) for lvl in cov.levels[1:]], axis=1)
                              if len(cov.levels) > 1 else np.empty((n, 0)))
        if not blocks:
            return np.empty((n, 0))
        return np.hstack(blocks).astype(float)

    def encode_profile(self, profile: Mapping[str, object] | None) -> np.ndarray:
        """Encode a covariate profile; unspecified covariates take :meth:`default_profile` values."""
        values = dict(self.default_profile())
        for name, v in (profile or {}).items():
            if name not in values:
                raise SchemaError(f"profile names unknown covariate {name!r}")
            values[name] = v
        out = []
        for cov in self.schema:
            v = values[cov.name]
            if cov.kind == "numeric":
                try:
                    out.append(float(v))
                except (TypeError, ValueError):
                    raise SchemaError(f"profile value for {cov.name!r} must be numeric, got {v!r}") from None
            else:
                v = str(v)
                if v not in cov.levels:
                    raise SchemaError(f"profile level {v!r} not among {list(cov.levels)} for {cov.name!r}")
                out.extend(1.0 if v == lvl else 0.0 for lvl in cov.levels[1:])
        return np.asarray(out, dtype=float)

    def default_profile(self) -> dict[str, object]:
        """Mean of each numeric covariate and the most frequent level of each categorical one."""
        prof: dict[str, object] = {}
        for cov in self.schema:
            col = self.covariates[cov.name]
            if cov.kind == "numeric":
                prof[cov.name] = float(col.mean()) if len(col) else 0.0
            else:
                counts = {lvl: int(np.sum(col == lvl)) for lvl in cov.levels}
                prof[cov.name] = max(cov.levels, key=lambda lvl: (counts[lvl], -cov.levels.index(lvl)))
        return prof


# --------------------------------------------------------------------------
# Estimates


@dataclass(frozen=True)
class CumulativeHazards:
    """Per-subinterval rates and per-interval cumulative hazards.

    Keys are ``(k, arm, stratum)`` for interval quantities and
    ``(k, j, arm, stratum)`` for subinterval quantities. A variance of ``None``
    means it is unavailable (the cell had no events). ``variance_complete``
    is False for an interval whose variance omits such cells.
    """

    spec: IntervalSpec
    rates: Mapping[tuple, float]
    rate_variances: Mapping[tuple, float | None]
    cumulative: Mapping[tuple, float]
    cumulative_variances: Mapping[tuple, float | None]
    variance_complete: Mapping[tuple, bool]

    def __post_init__(self):
        for name in ("rates", "rate_variances", "cumulative", "cumulative_variances", "variance_complete"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))

    def strata(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for (_, _, s) in self.cumulative:
            seen.setdefault(s, None)
        return tuple(seen)

    def Lambda(self, k: int, arm: int, stratum: str = "") -> float:
        try:
            return self.cumulative[(k, arm, stratum)]
        except KeyError:
            raise SchemaError(f"no cumulative hazard for k={k}, arm={arm}, stratum={stratum!r}") from None

    def variance(self, k: int, arm: int, stratum: str = "") -> float | None:
        return self.cumulative_variances.get((k, arm, stratum))


@dataclass(frozen=True)
class Estimate:
    """A point estimate with optional confidence limits (``None`` = not reported)."""

    point: float
    lower: float | None = None
    upper: float | None = None

    @property
    def has_ci(self) -> bool:
        return self.lower is not None or self.upper is not None


@dataclass(frozen=True)
class WaningEstimate:
    ve1: Estimate
    ve2_obs: Estimate
    l2: Estimate
    u2: Estimate
    l_psi: Estimate
    u_psi: Estimate
    psi_obs: Estimate | None = None
    alpha: float | None = None
    method: str = "summary-delta"
    ve2_definition: str = "hazard-ratio"  # or "conditional-incidence"
    stratum: str = ""
    flags: tuple[str, ...] = ()
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "flags", tuple(self.flags))
        object.__setattr__(self, "metadata", _freeze(self.metadata))

    def quantities(self) -> dict[str, Estimate]:
        out = {q: getattr(self, q) for q in QUANTITIES}
        if out["psi_obs"] is None:
            del out["psi_obs"]
        return out

    def points(self) -> dict[str, float]:
        return {q: e.point for q, e in self.quantities().items()}

    def with_flags(self, *flags: str) -> "WaningEstimate":
        merged = tuple(dict.fromkeys(self.flags + tuple(flags)))
        return replace(self, flags=merged)

    def identity_residuals(self) -> tuple[float, float]:
        """``l_psi*(1-l2) - (1-ve1)`` and ``u_psi*(1-u2) - (1-ve1)``."""
        base = 1.0 - self.ve1.point
        return (
            self.l_psi.point * (1.0 - self.l2.point) - base,
            self.u_psi.point * (1.0 - self.u2.point) - base,
        )


@dataclass(frozen=True)
class KBoundsEntry:
    k: int
    l: Estimate | None
    u: Estimate | None
    ve_obs: Estimate | None
    error: str | None = None


@dataclass(frozen=True)
class KBoundsEstimate:
    entries: tuple[KBoundsEntry, ...]
    backend: str  # "exact_product" or "rare_event"
    alpha: float | None = None
    method: str = "summary-delta"
    stratum: str = ""
    flags: tuple[str, ...] = ()
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "flags", tuple(self.flags))
        object.__setattr__(self, "metadata", _freeze(self.metadata))

    def entry(self, k: int) -> KBoundsEntry:
        for e in self.entries:
            if e.k == k:
                return e
        raise KeyError(k)
