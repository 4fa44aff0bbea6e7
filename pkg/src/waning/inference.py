"""Confidence intervals and the waning test.

Summary data get closed-form delta-method intervals on the log scale.
Individual-level data get percentile bootstrap intervals. Quantities that
are lower bounds carry only a lower limit, upper bounds only an upper limit.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.special import ndtri

from .bounds import (
    bounds_from_incidences,
    bounds_from_lambdas,
    k_bounds_from_incidences,
    k_bounds_from_interval_hazards,
)
from .errors import MissingCI, MissingVariance, TooManyFailedResamples, TransformUnavailable, WaningError, ZeroEvents
from .hazard import cumulative_incidence, fit_cox, fit_logistic_hazards, product_cumulative_incidence
from .model import (
    QUANTITIES,
    SIDEDNESS,
    Cohort,
    CumulativeHazards,
    Estimate,
    IntervalSpec,
    KBoundsEntry,
    KBoundsEstimate,
    WaningEstimate,
)


def z_quantile(p: float) -> float:
    """Standard normal quantile."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p!r}")
    return float(ndtri(p))


@dataclass(frozen=True)
class CiPolicy:
    """Confidence level and sidedness.

    Two-sided intervals use ``z(1 - alpha/2)``; one-sided limits use ``z(1 - alpha)``.
    """

    alpha: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")

    @property
    def z_two_sided(self) -> float:
        return z_quantile(1.0 - self.alpha / 2.0)

    @property
    def z_one_sided(self) -> float:
        return z_quantile(1.0 - self.alpha)

    def z(self, quantity: str) -> float:
        return self.z_two_sided if SIDEDNESS[quantity] == "two-sided" else self.z_one_sided


# --------------------------------------------------------------------------
# Delta method


def _ve_limits(point: float, se: float, z: float, side: str) -> tuple[float | None, float | None]:
    """Back-transform limits for a quantity of the form ``1 - ratio``."""
    base = math.log(1.0 - point)
    lower = 1.0 - math.exp(base + z * se) if side in ("two-sided", "lower") else None
    upper = 1.0 - math.exp(base - z * se) if side in ("two-sided", "upper") else None
    return lower, upper


def _ratio_limits(point: float, se: float, z: float, side: str) -> tuple[float | None, float | None]:
    base = math.log(point)
    lower = math.exp(base - z * se) if side in ("two-sided", "lower") else None
    upper = math.exp(base + z * se) if side in ("two-sided", "upper") else None
    return lower, upper


_RATIO_SCALE = {"l_psi", "u_psi", "psi_obs"}


def _log_variances(L, V) -> dict[str, Callable[[], float]]:
    """Variances of the log-transformed estimators, as lazily evaluated terms."""
    L10, L11, L20, L21 = L
    V10, V11, V20, V21 = V
    s1 = L11 + L21
    s0 = L10 + L20
    return {
        "ve1": lambda: V10 / L10**2 + V11 / L11**2,
        "ve2_obs": lambda: V20 / L20**2 + V21 / L21**2,
        "l2": lambda: V20 / L20**2 + (V11 + V21) / s1**2,
        "u2": lambda: V21 / L21**2 + (V10 + V20) / s0**2,
        "l_psi": lambda: V10 / L10**2 + V20 / L20**2 + V21 / s1**2 + V11 / s1**2 * L21**2 / L11**2,
        "u_psi": lambda: V11 / L11**2 + V21 / L21**2 + V20 / s0**2 + V10 / s0**2 * L20**2 / L10**2,
        "psi_obs": lambda: V10 / L10**2 + V11 / L11**2 + V20 / L20**2 + V21 / L21**2,
    }


def _needed(q: str) -> tuple[int, ...]:
    # indices into (L10, L11, L20, L21) touched by each variance formula
    return {
        "ve1": (0, 1),
        "ve2_obs": (2, 3),
        "l2": (1, 2, 3),
        "u2": (0, 2, 3),
        "l_psi": (0, 1, 2, 3),
        "u_psi": (0, 1, 2, 3),
        "psi_obs": (0, 1, 2, 3),
    }[q]


def delta_method_cis(ch: CumulativeHazards, est: WaningEstimate, policy: CiPolicy = CiPolicy(), strict: bool = True) -> WaningEstimate:
    """Attach delta-method confidence limits to a summary-data estimate.

    Parameters
    ----------
    strict : bool
        If True, a quantity whose log transform or variance is unavailable
        raises. If False it keeps its point estimate without limits and the
        estimate gains an ``ci_unavailable:<quantity>`` flag.
    """
    s = est.stratum
    keys = [(1, 0), (1, 1), (2, 0), (2, 1)]
    L = tuple(ch.Lambda(k, a, s) for k, a in keys)
    V = tuple(ch.variance(k, a, s) for k, a in keys)
    formulas = _log_variances(L, tuple(0.0 if v is None else v for v in V))
    names = ["Lambda_10", "Lambda_11", "Lambda_20", "Lambda_21"]

    flags = list(est.flags)
    out = {}
    for q, e in est.quantities().items():
        try:
            ratio = q in _RATIO_SCALE
            if (ratio and not e.point > 0.0) or (not ratio and not e.point < 1.0) or not math.isfinite(e.point):
                raise TransformUnavailable(f"{q} = {e.point!r}: log transform undefined")
            missing = [names[i] for i in _needed(q) if V[i] is None]
            if missing:
                raise MissingVariance(f"{q}: variance unavailable for {', '.join(missing)}")
            try:
                var = formulas[q]()
            except ZeroDivisionError:
                raise TransformUnavailable(f"{q}: variance formula divides by a zero cumulative hazard") from None
            se = math.sqrt(var)
            limits = (_ratio_limits if ratio else _ve_limits)(e.point, se, policy.z(q), SIDEDNESS[q])
            out[q] = Estimate(e.point, *limits)
        except (TransformUnavailable, MissingVariance):
            if strict:
                raise
            flags.append(f"ci_unavailable:{q}")
            out[q] = Estimate(e.point)
    for (k, a), name in zip(keys, names):
        if not ch.variance_complete.get((k, a, s), True):
            flags.append(f"variance_partial:{name}")
    return replace(est, **out, alpha=policy.alpha, method="summary-delta", flags=tuple(dict.fromkeys(flags)))


def k_delta_method_cis(ch: CumulativeHazards, kest: KBoundsEstimate, policy: CiPolicy = CiPolicy()) -> KBoundsEstimate:
    """Delta-method limits for K-interval bounds using rare-event variances.

    For the exact backend the same variances are applied around the exact
    point estimates; both are first-order equivalent.
    """
    s = kest.stratum
    K = ch.spec.K
    L = {(k, a): ch.Lambda(k, a, s) for k in range(1, K + 1) for a in (0, 1)}
    V = {(k, a): ch.variance(k, a, s) for k in range(1, K + 1) for a in (0, 1)}
    z1, z2 = policy.z_one_sided, policy.z_two_sided
    flags = list(kest.flags)
    entries = []
    for e in kest.entries:
        if e.error is not None:
            entries.append(e)
            continue
        k = e.k
        c1 = sum(L[kk, 1] for kk in range(1, k + 1))
        c0 = sum(L[kk, 0] for kk in range(1, k + 1))
        v1 = [V[kk, 1] for kk in range(1, k + 1)]
        v0 = [V[kk, 0] for kk in range(1, k + 1)]

        def limits(point, terms, z, side, name):
            try:
                if not point < 1.0 or any(v is None for v, _ in terms) or any(d == 0 for _, d in terms):
                    raise ValueError
                se = math.sqrt(sum(v / d**2 for v, d in terms))
                return Estimate(point, *_ve_limits(point, se, z, side))
            except ValueError:
                flags.append(f"ci_unavailable:{name}_{k}")
                return Estimate(point)

        l = limits(e.l.point, [(None if None in v1 else sum(v1), c1), (V[k, 0], L[k, 0])], z1, "lower", "l")
        u = limits(e.u.point, [(V[k, 1], L[k, 1]), (None if None in v0 else sum(v0), c0)], z1, "upper", "u")
        ve = limits(e.ve_obs.point, [(V[k, 1], L[k, 1]), (V[k, 0], L[k, 0])], z2, "two-sided", "ve_obs")
        entries.append(KBoundsEntry(k, l, u, ve))
    return replace(kest, entries=tuple(entries), alpha=policy.alpha, flags=tuple(dict.fromkeys(flags)))


def subinterval_ve_ci(N1: int, T1: float, N0: int, T0: float, alpha: float = 0.05) -> tuple[float, float, float]:
    """Rate-ratio vaccine efficacy in one subinterval with a log-scale interval.

    Returns ``(ve, lower, upper)``.
    """
    if N0 <= 0 or N1 <= 0:
        raise ZeroEvents(f"both arms need events (N0={N0}, N1={N1})")
    if T0 <= 0 or T1 <= 0:
        raise ZeroEvents(f"both arms need positive person-time (T0={T0}, T1={T1})")
    rr = (N1 / T1) / (N0 / T0)
    half = z_quantile(1.0 - alpha / 2.0) * math.sqrt(1.0 / N0 + 1.0 / N1)
    return 1.0 - rr, 1.0 - rr * math.exp(half), 1.0 - rr * math.exp(-half)


@dataclass(frozen=True)
class SubgroupCI:
    rate: Estimate
    incidence: Estimate


def subgroup_hazard_ci(N: int, T: float, tau: float, alpha: float = 0.05) -> SubgroupCI:
    """Rate with a log-scale interval, and the implied incidence over ``tau`` days.

    The incidence interval uses the log-minus-log transform of survival.
    """
    if N <= 0:
        raise ZeroEvents(f"N must be positive, got {N}")
    if T <= 0:
        raise ZeroEvents(f"T must be positive, got {T}")
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    rate = N / T
    f = math.exp(z_quantile(1.0 - alpha / 2.0) / math.sqrt(N))
    cum = rate * tau
    return SubgroupCI(
        Estimate(rate, rate / f, rate * f),
        Estimate(-math.expm1(-cum), -math.expm1(-cum / f), -math.expm1(-cum * f)),
    )


# --------------------------------------------------------------------------
# Individual-level estimators


def individual_estimate(
    cohort: Cohort,
    spec: IntervalSpec,
    estimator: str,
    profile=None,
    backend: str = "rare_event",
) -> WaningEstimate | KBoundsEstimate:
    """Point estimates from individual records at an encoded covariate profile.

    ``profile=None`` uses :meth:`Cohort.default_profile` of ``cohort``.

    ``estimator="logistic"`` uses per-interval logistic hazards with the
    chosen ``backend``; ``estimator="cox"`` uses arm-specific Cox models and
    the exact incidence formulas (``backend`` is ignored).
    """
    method = f"{estimator}-bootstrap"
    profile = cohort.encode_profile(None) if profile is None else np.asarray(profile, dtype=float)
    if estimator == "logistic":
        model = fit_logistic_hazards(cohort, spec)
        h0, h1 = model.hazards(0, profile), model.hazards(1, profile)
        if spec.K == 2:
            if backend.replace("-", "_") == "rare_event":
                return bounds_from_lambdas(h0[0], h1[0], h0[1], h1[1], method=method)
            mu = {(k, a): product_cumulative_incidence(h, k) for a, h in ((0, h0), (1, h1)) for k in (1, 2)}
            return bounds_from_incidences(mu, method=method)
        return k_bounds_from_interval_hazards(h0, h1, backend, method=method)
    if estimator == "cox":
        fit = fit_cox(cohort, spec.end_time(spec.K), origin=spec.origin)
        Y = {a: [cumulative_incidence(fit, k, a, profile, spec) for k in range(1, spec.K + 1)] for a in (0, 1)}
        if spec.K == 2:
            mu = {(k, a): Y[a][k - 1] for a in (0, 1) for k in (1, 2)}
            return bounds_from_incidences(mu, method=method)
        return k_bounds_from_incidences(Y[0], Y[1], method=method)
    raise ValueError(f"estimator must be 'logistic' or 'cox', got {estimator!r}")


# --------------------------------------------------------------------------
# Bootstrap


@dataclass(frozen=True)
class BootstrapConfig:
    """Nonparametric bootstrap settings.

    Resample ``i`` draws from ``PCG64(SeedSequence(seed, spawn_key=(i,)))``,
    so each resample depends only on ``(seed, i)`` and results do not depend
    on thread count or scheduling.
    """

    resamples: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.resamples < 2:
            raise ValueError("resamples must be >= 2")

    def generator(self, i: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(i,))))


def thread_count() -> int:
    """Worker threads for resampling: ``WANING_THREADS`` if set, else the CPU count."""
    env = os.environ.get("WANING_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


def _flatten(est: WaningEstimate | KBoundsEstimate) -> dict[str, float]:
    if isinstance(est, WaningEstimate):
        return {q: e.point for q, e in est.quantities().items()}
    out = {}
    for e in est.entries:
        if e.error is None:
            out[f"l_{e.k}"] = e.l.point
            out[f"u_{e.k}"] = e.u.point
            out[f"ve_obs_{e.k}"] = e.ve_obs.point
    return out


def percentile_limits(values, alpha: float, side: str) -> tuple[float | None, float | None]:
    """Percentile limits as order statistics (inverse empirical CDF)."""
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    if v.size == 0:
        return None, None
    q = {"two-sided": (alpha / 2.0, 1.0 - alpha / 2.0), "lower": (alpha, None), "upper": (None, 1.0 - alpha)}[side]
    lo = float(np.quantile(v, q[0], method="inverted_cdf")) if q[0] is not None else None
    hi = float(np.quantile(v, q[1], method="inverted_cdf")) if q[1] is not None else None
    return lo, hi


def bootstrap_replicates(cohort: Cohort, estimate: Callable[[Cohort], object], config: BootstrapConfig, threads: int | None = None):
    """Run ``estimate`` on every resample; returns ``(results, failures)``.

    ``results`` is a list in resample order with ``None`` for resamples whose
    estimator raised a library error.
    """
    n = len(cohort)

    def one(i):
        idx = config.generator(i).integers(0, n, size=n)
        try:
            return estimate(cohort.take(idx))
        except WaningError:
            return None

    threads = thread_count() if threads is None else threads
    if threads <= 1:
        results = [one(i) for i in range(config.resamples)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(config.resamples)))
    failures = sum(r is None for r in results)
    return results, failures


def bootstrap_cis(
    cohort: Cohort,
    spec: IntervalSpec,
    estimator: str,
    config: BootstrapConfig = BootstrapConfig(),
    policy: CiPolicy = CiPolicy(),
    profile=None,
    backend: str = "rare_event",
    threads: int | None = None,
) -> WaningEstimate | KBoundsEstimate:
    """Percentile bootstrap intervals around the full-data estimate.

    Resamples whose estimator fails are dropped and counted in
    ``metadata["failed_resamples"]``; more than half failing raises
    :class:`TooManyFailedResamples`. The covariate profile is fixed from the
    full cohort so every resample targets the same conditional estimand.
    """
    if profile is None:
        profile = cohort.encode_profile(None)

    def estimate(c):
        return individual_estimate(c, spec, estimator, profile, backend)

    point = estimate(cohort)
    results, failures = bootstrap_replicates(cohort, estimate, config, threads)
    if failures * 2 > config.resamples:
        raise TooManyFailedResamples(f"{failures} of {config.resamples} resamples failed")
    draws: dict[str, list[float]] = {}
    for r in results:
        if r is None:
            continue
        for key, value in _flatten(r).items():
            draws.setdefault(key, []).append(value)

    meta = dict(point.metadata)
    meta.update(resamples=config.resamples, seed=config.seed, failed_resamples=failures)

    def attach(key: str, e: Estimate, side: str) -> Estimate:
        lo, hi = percentile_limits(draws.get(key, []), policy.alpha, side)
        return Estimate(e.point, lo, hi)

    if isinstance(point, WaningEstimate):
        new = {q: attach(q, e, SIDEDNESS[q]) for q, e in point.quantities().items()}
        return replace(point, **new, alpha=policy.alpha, metadata=meta)
    entries = []
    for e in point.entries:
        if e.error is not None:
            entries.append(e)
            continue
        entries.append(KBoundsEntry(
            e.k,
            attach(f"l_{e.k}", e.l, "lower"),
            attach(f"u_{e.k}", e.u, "upper"),
            attach(f"ve_obs_{e.k}", e.ve_obs, "two-sided"),
        ))
    return replace(point, entries=tuple(entries), alpha=policy.alpha, metadata=meta)


# --------------------------------------------------------------------------
# Waning test


@dataclass(frozen=True)
class WaningTestResult:
    reject: bool
    direction: str  # "waning", "strengthening" or "none"
    alpha: float | None
    basis: str  # "u_psi_upper", "l_psi_lower" or "none"


def waning_test(est: WaningEstimate) -> WaningTestResult:
    """Test the null of no change in protection between intervals.

    Under the null the lower psi bound is at most 1 and the upper psi bound
    at least 1. An upper limit for ``u_psi`` below 1 rejects towards waning;
    a lower limit for ``l_psi`` above 1 rejects towards strengthening.
    """
    upper = est.u_psi.upper
    lower = est.l_psi.lower
    if upper is None or lower is None:
        missing = [n for n, v in (("u_psi upper", upper), ("l_psi lower", lower)) if v is None]
        raise MissingCI(f"waning test needs confidence limits: missing {', '.join(missing)}")
    if upper < 1.0:
        return WaningTestResult(True, "waning", est.alpha, "u_psi_upper")
    if lower > 1.0:
        return WaningTestResult(True, "strengthening", est.alpha, "l_psi_lower")
    return WaningTestResult(False, "none", est.alpha, "none")


__all__ = [
    "BootstrapConfig",
    "CiPolicy",
    "QUANTITIES",
    "SubgroupCI",
    "WaningTestResult",
    "bootstrap_cis",
    "bootstrap_replicates",
    "delta_method_cis",
    "individual_estimate",
    "k_delta_method_cis",
    "percentile_limits",
    "subgroup_hazard_ci",
    "subinterval_ve_ci",
    "thread_count",
    "waning_test",
    "z_quantile",
]
