"""Hazard, cumulative hazard and cumulative incidence estimation.

Three backends are provided:

* summary rates (events over person-time per subinterval),
* discrete-time logistic hazards fitted per interval by IRLS,
* Cox proportional hazards fitted separately in each arm, with Efron ties
  and a Breslow baseline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import (
    EmptyRiskSet,
    HazardOutOfRange,
    HorizonExceeded,
    NoEvents,
    NonConvergence,
    SchemaError,
    Separation,
    ZeroPersonTime,
)
from .model import ARMS, Cohort, CumulativeHazards, IntervalSpec, SummaryCell, SummaryTable

# Newton / IRLS settings
REL_LOGLIK_TOL = 1e-9
SCORE_TOL = 1e-8
STEP_TOL = 1e-6
MAX_ITER = 50
MAX_HALVINGS = 10
SEPARATION_BOUND = 30.0


# --------------------------------------------------------------------------
# Summary rates


def rate_hazards(table: SummaryTable) -> CumulativeHazards:
    """Piecewise-constant hazards from event counts and person-time.

    ``rate = N / T`` with variance ``rate**2 / N``; the cumulative hazard of
    interval k sums ``rate * tau`` over its subintervals, and its variance sums
    ``var(rate) * tau**2``. Cells without events get rate 0 and an unavailable
    variance.
    """
    for c in table.cells:
        if c.events > 0 and c.person_time == 0:
            raise ZeroPersonTime(f"cell {c.key}: {c.events} events with zero person-time")
    table.require_valid()

    spec = table.spec
    cells = table.lookup()
    rates, rate_vars = {}, {}
    cum, cum_vars, complete = {}, {}, {}
    for stratum in table.strata():
        for iv in spec.intervals:
            for arm in ARMS:
                total = 0.0
                total_var = 0.0
                ok = True
                for sub in iv.subintervals:
                    c = cells[(iv.k, sub.j, arm, stratum)]
                    rate = c.events / c.person_time if c.events > 0 else 0.0
                    var = rate * rate / c.events if c.events > 0 else None
                    rates[(iv.k, sub.j, arm, stratum)] = rate
                    rate_vars[(iv.k, sub.j, arm, stratum)] = var
                    total += rate * sub.duration
                    if var is None:
                        ok = False
                    else:
                        total_var += var * sub.duration**2
                key = (iv.k, arm, stratum)
                cum[key] = total
                any_var = any(rate_vars[(iv.k, s.j, arm, stratum)] is not None for s in iv.subintervals)
                cum_vars[key] = total_var if any_var else None
                complete[key] = ok
    return CumulativeHazards(spec, rates, rate_vars, cum, cum_vars, complete)


def tabulate_cohort(cohort: Cohort, spec: IntervalSpec, stratum_by: str | None = None) -> SummaryTable:
    """Collapse individual records into events and person-time per subinterval.

    Parameters
    ----------
    stratum_by : str, optional
        Name of a categorical covariate whose levels become strata.
    """
    windows = [spec.subinterval(k, j) for k, j in spec.keys()]
    starts = np.array([s.start_day - 1 for s in windows], dtype=float)
    ends = np.array([s.end_day for s in windows], dtype=float)
    if stratum_by is None:
        labels = [""]
        codes = np.zeros(len(cohort), dtype=np.int64)
    else:
        cov = {c.name: c for c in cohort.schema}.get(stratum_by)
        if cov is None or cov.kind != "categorical":
            raise SchemaError(f"stratum column {stratum_by!r} must be a categorical covariate")
        labels = list(cov.levels)
        lookup = {lvl: i for i, lvl in enumerate(labels)}
        codes = np.array([lookup[v] for v in cohort.covariates[stratum_by]], dtype=np.int64)
    group = codes * 2 + cohort.arm.astype(np.int64)
    events, ptime = kernels.tabulate(cohort.time_days, cohort.event, group, 2 * len(labels), starts, ends)
    cells = []
    for s, label in enumerate(labels):
        for w, (k, j) in enumerate(spec.keys()):
            for arm in ARMS:
                g = 2 * s + arm
                cells.append(SummaryCell(k, j, arm, int(events[g, w]), float(ptime[g, w]), label))
    return SummaryTable(spec, tuple(cells))


# --------------------------------------------------------------------------
# Discrete-time risk sets


def interval_risk_set(cohort: Cohort, spec: IntervalSpec, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Records at risk in interval k and their event indicator.

    At risk means event-free and uncensored at the start of the interval and
    not censored before its end. Records censored exactly at the end day
    count as having completed the interval.
    """
    start, end = spec.start_time(k), spec.end_time(k)
    t = cohort.time_days
    ev = cohort.event.astype(bool)
    at_risk = (t > start) & (ev | (t >= end))
    y = (ev & (t <= end))[at_risk]
    return at_risk, y.astype(float)


def empirical_incidences(cohort: Cohort, spec: IntervalSpec, mask=None) -> dict[tuple[int, int], float]:
    """Kaplan-Meier cumulative incidence at each interval end, per arm.

    With no censoring this equals the fraction of the arm with an event by
    the end of the interval.
    """
    sub = cohort if mask is None else cohort.take(np.flatnonzero(mask))
    out = {}
    for arm in ARMS:
        hazards = []
        for k in range(1, spec.K + 1):
            at_risk, y = interval_risk_set(sub, spec, k)
            in_arm = sub.arm[at_risk] == arm
            n = int(in_arm.sum())
            if n == 0:
                raise EmptyRiskSet(f"no arm-{arm} records at risk in interval {k}")
            hazards.append(float(y[in_arm].sum()) / n)
            out[(k, arm)] = product_cumulative_incidence(hazards)
    return out


# --------------------------------------------------------------------------
# Logistic hazards


def logistic_loglik(beta, X, y) -> float:
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def logistic_score(beta, X, y) -> np.ndarray:
    return X.T @ (y - expit(X @ beta))


def logistic_information(beta, X) -> np.ndarray:
    p = expit(X @ beta)
    w = p * (1.0 - p)
    return (X * w[:, None]).T @ X


@dataclass(frozen=True)
class NewtonResult:
    beta: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    loglik_path: tuple[float, ...]


def _newton(fun, beta0, label: str) -> NewtonResult:
    """Maximize a concave objective with Newton steps and step-halving.

    ``fun(beta)`` returns ``(loglik, score, information)`` where information
    is the negative Hessian. Stops when the score sup-norm drops below
    ``SCORE_TOL``, or when the relative log-likelihood change is below
    ``REL_LOGLIK_TOL`` and the step itself is small. The step condition keeps
    iterating on monotone likelihoods, which then trip the separation bound.
    """
    beta = np.array(beta0, dtype=float)
    ll, score, info = fun(beta)
    path = [ll]
    if beta.size == 0 or np.max(np.abs(score)) < SCORE_TOL:
        return NewtonResult(beta, ll, 0, True, tuple(path))
    for it in range(1, MAX_ITER + 1):
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, score, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            raise NonConvergence(f"{label}: singular information matrix")
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + scale * step
            cll, cscore, cinfo = fun(cand)
            if np.isfinite(cll) and cll >= ll - 1e-12 * abs(ll):
                break
            scale *= 0.5
        else:
            # no ascent along the Newton direction: at the numerical optimum
            return NewtonResult(beta, ll, it, bool(np.max(np.abs(score)) < 1e-6 * max(1.0, abs(ll))), tuple(path))
        if np.max(np.abs(cand)) > SEPARATION_BOUND:
            raise Separation(f"{label}: coefficient exceeded {SEPARATION_BOUND:g} (monotone likelihood)")
        rel = abs(cll - ll) / max(abs(ll), 1e-300)
        small_step = np.max(np.abs(scale * step)) < STEP_TOL * (1.0 + np.max(np.abs(cand)))
        beta, ll, score, info = cand, cll, cscore, cinfo
        path.append(ll)
        if np.max(np.abs(score)) < SCORE_TOL or (rel < REL_LOGLIK_TOL and small_step):
            return NewtonResult(beta, ll, it, True, tuple(path))
    raise NonConvergence(f"{label}: no convergence after {MAX_ITER} iterations")


@dataclass(frozen=True)
class LogisticHazardModel:
    """Per-interval logistic models for the discrete-time hazard.

    Coefficients are ordered ``(intercept, arm, covariates...)`` with
    categorical covariates one-hot encoded.
    """

    spec: IntervalSpec
    names: tuple[str, ...]
    coefficients: Mapping[int, np.ndarray]
    converged: Mapping[int, bool]
    loglik: Mapping[int, float]
    iterations: Mapping[int, int]
    loglik_path: Mapping[int, tuple[float, ...]] = field(default_factory=dict)

    def hazard(self, k: int, arm: int, profile=()) -> float:
        """Predicted hazard in interval k for arm ``arm`` at an encoded covariate profile."""
        beta = self.coefficients[k]
        x = np.concatenate(([1.0, float(arm)], np.asarray(profile, dtype=float).ravel()))
        if x.size != beta.size:
            raise SchemaError(f"profile has {x.size - 2} covariates, model expects {beta.size - 2}")
        return float(expit(x @ beta))

    def hazards(self, arm: int, profile=()) -> list[float]:
        return [self.hazard(k, arm, profile) for k in range(1, self.spec.K + 1)]


def fit_logistic_hazards(cohort: Cohort, spec: IntervalSpec) -> LogisticHazardModel:
    """Fit one logistic regression per interval on its risk set."""
    spec.require_valid()
    Z = cohort.design()
    names = ("intercept", "arm", *cohort.encoded_names())
    coefs, conv, lls, its, paths = {}, {}, {}, {}, {}
    for k in range(1, spec.K + 1):
        at_risk, y = interval_risk_set(cohort, spec, k)
        arm = cohort.arm[at_risk].astype(float)
        for a in ARMS:
            if not np.any(arm == a):
                raise EmptyRiskSet(f"interval {k}: no arm-{a} records at risk")
            ya = y[arm == a]
            # a constant outcome within an arm makes the likelihood monotone in the arm direction
            if ya.min() == ya.max():
                raise Separation(f"interval {k}: every arm-{a} record has outcome {int(ya[0])}")
        X = np.column_stack([np.ones(len(y)), arm, Z[at_risk]])
        ybar = y.mean()
        beta0 = np.zeros(X.shape[1])
        if 0.0 < ybar < 1.0:
            beta0[0] = math.log(ybar / (1.0 - ybar))

        def fun(beta, X=X, y=y):
            return logistic_loglik(beta, X, y), logistic_score(beta, X, y), logistic_information(beta, X)

        res = _newton(fun, beta0, f"logistic interval {k}")
        coefs[k] = res.beta
        conv[k] = res.converged
        lls[k] = res.loglik
        its[k] = res.iterations
        paths[k] = res.loglik_path
    return LogisticHazardModel(spec, names, coefs, conv, lls, its, paths)


# --------------------------------------------------------------------------
# Cox model


@dataclass(frozen=True)
class CoxArmFit:
    beta: np.ndarray
    event_times: np.ndarray
    cumulative_baseline: np.ndarray
    loglik: float
    iterations: int
    converged: bool

    def baseline(self, t: float) -> float:
        """Right-continuous step function value at time ``t``."""
        i = np.searchsorted(self.event_times, t, side="right")
        return float(self.cumulative_baseline[i - 1]) if i > 0 else 0.0


@dataclass(frozen=True)
class CoxFit:
    arms: Mapping[int, CoxArmFit]
    names: tuple[str, ...]
    horizon: float
    origin: float
    ties: str


def _prepare_arm(cohort: Cohort, arm: int, horizon: float, origin: float):
    sel = (cohort.arm == arm) & (cohort.time_days > origin)
    t = cohort.time_days[sel]
    ev = (cohort.event[sel].astype(bool) & (t <= horizon)).astype(np.int8)
    t = np.minimum(t, horizon)
    X = cohort.design()[sel]
    order = np.argsort(t, kind="stable")
    return t[order], ev[order], X[order]


def fit_cox(cohort: Cohort, horizon_days: float, origin: float = 0.0, ties: str = "efron") -> CoxFit:
    """Arm-stratified Cox regression with a Breslow baseline.

    Parameters
    ----------
    cohort : Cohort
        Categorical covariates are one-hot encoded.
    horizon_days : float
        Events after the horizon are treated as censored at the horizon.
    origin : float
        Records with ``time_days <= origin`` are excluded, so that the
        baseline accumulates only over ``(origin, horizon]``.
    ties : {"efron", "breslow"}
    """
    if ties not in ("efron", "breslow"):
        raise ValueError(f"unknown ties method {ties!r}")
    if not horizon_days > origin:
        raise SchemaError("horizon must exceed origin")
    efron = ties == "efron"
    fits = {}
    for arm in ARMS:
        t, ev, X = _prepare_arm(cohort, arm, horizon_days, origin)
        if not ev.any():
            raise NoEvents(f"arm {arm}: no events in ({origin:g}, {horizon_days:g}]")

        def fun(beta, t=t, ev=ev, X=X):
            ll, g, h = kernels.cox_partial_stats(t, ev, X, beta, efron)
            return ll, g, -h

        res = _newton(fun, np.zeros(X.shape[1]), f"cox arm {arm}")
        times, inc = kernels.breslow_increments(t, ev, X @ res.beta)
        fits[arm] = CoxArmFit(res.beta, times, np.cumsum(inc), res.loglik, res.iterations, res.converged)
    return CoxFit(fits, tuple(cohort.encoded_names()), float(horizon_days), float(origin), ties)


def cumulative_incidence(fit: CoxFit, k: int, arm: int, l, spec: IntervalSpec) -> float:
    """``1 - exp(-baseline(t_k))**exp(beta @ l)`` at the end of interval k."""
    t_k = spec.end_time(k)
    if t_k > fit.horizon:
        raise HorizonExceeded(f"interval {k} ends at day {t_k:g}, beyond fitted horizon {fit.horizon:g}")
    af = fit.arms[arm]
    l = np.asarray(l, dtype=float).ravel()
    if l.size != af.beta.size:
        raise SchemaError(f"covariate vector has {l.size} entries, fit expects {af.beta.size}")
    r = math.exp(float(af.beta @ l)) if l.size else 1.0
    return -math.expm1(-af.baseline(t_k) * r)


# --------------------------------------------------------------------------
# Product-form incidence


def product_cumulative_incidence(hazards: Sequence[float], k: int | None = None) -> float:
    """Probability of an event within the first ``k`` discrete steps.

    Evaluates ``sum_r prod_{v<r} (1 - h_v) h_r`` over the first ``k`` hazards
    (all of them when ``k`` is None).
    """
    h = list(hazards) if k is None else list(hazards)[:k]
    if k is not None and k > len(hazards):
        raise SchemaError(f"k={k} exceeds the {len(hazards)} hazards supplied")
    total = 0.0
    surv = 1.0
    for i, hv in enumerate(h):
        hv = float(hv)
        if not 0.0 <= hv <= 1.0:
            raise HazardOutOfRange(f"hazard {hv!r} at step {i + 1} outside [0, 1]")
        total += surv * hv
        surv *= 1.0 - hv
    return min(total, 1.0)


def day_hazards(ch: CumulativeHazards, arm: int, stratum: str = "") -> list[list[float]]:
    """Expand subinterval rates into one discrete hazard per day, grouped by interval."""
    out = []
    for iv in ch.spec.intervals:
        days = []
        for sub in iv.subintervals:
            days.extend([ch.rates[(iv.k, sub.j, arm, stratum)]] * sub.duration)
        out.append(days)
    return out
