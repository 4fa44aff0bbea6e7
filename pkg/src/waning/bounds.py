"""Point estimators for the interval-1 and interval-2 vaccine effects and their bounds.

Two-interval estimators come in a hazard form (cumulative hazards, rare
events) and an incidence form (cumulative incidences, exact). The
K-interval generalisation supports both through ``backend``.
"""
from __future__ import annotations

import math
import warnings
from typing import Mapping, Sequence

from .errors import DegenerateVE, NonMonotoneIncidence, RareEventWarning, ZeroDenominator
from .hazard import day_hazards, product_cumulative_incidence
from .model import CumulativeHazards, Estimate, KBoundsEntry, KBoundsEstimate, WaningEstimate

RARE_EVENT_LIMIT = 0.1
DEGENERACY_RTOL = 1e-12

BACKENDS = ("exact_product", "rare_event")


def _div(num: float, den: float) -> float:
    """IEEE-style division: returns inf or nan instead of raising."""
    if den == 0.0:
        if num == 0.0 or math.isnan(num):
            return math.nan
        return math.copysign(math.inf, num)
    return num / den


def _psi_pair(ve1: float, l2: float, u2: float) -> tuple[float, float]:
    base = 1.0 - ve1
    return _div(base, 1.0 - l2), _div(base, 1.0 - u2)


def _finish(ve1, ve2, l2, u2, scale, extra_flags, **kw) -> WaningEstimate:
    l_psi, u_psi = _psi_pair(ve1, l2, u2)
    psi = _div(1.0 - ve1, 1.0 - ve2)
    flags = list(extra_flags)
    for name, den in (("l_psi", 1.0 - l2), ("u_psi", 1.0 - u2), ("psi_obs", 1.0 - ve2)):
        if abs(den) <= DEGENERACY_RTOL * max(scale, 1.0):
            flags.append(f"degenerate:{name}")
    for name, v in (("ve1", ve1), ("ve2_obs", ve2), ("l2", l2), ("u2", u2), ("l_psi", l_psi), ("u_psi", u_psi)):
        if not math.isfinite(v):
            flags.append(f"nonfinite:{name}")
    return WaningEstimate(
        Estimate(ve1), Estimate(ve2), Estimate(l2), Estimate(u2), Estimate(l_psi), Estimate(u_psi),
        Estimate(psi) if math.isfinite(psi) else None,
        flags=tuple(dict.fromkeys(flags)), **kw,
    )


def bounds_from_lambdas(L10: float, L11: float, L20: float, L21: float, **kw) -> WaningEstimate:
    """Rare-event estimators from four cumulative hazards ``L{k}{arm}``."""
    for name, v in (("Lambda_10", L10), ("Lambda_20", L20)):
        if v == 0.0:
            raise ZeroDenominator(name)
    scale = max(L10, L11, L20, L21)
    flags = []
    for name, v in (("Lambda_11", L11), ("Lambda_21", L21)):
        if v <= DEGENERACY_RTOL * scale:
            flags.append(f"zero_vaccine_hazard:{name}")
    if L10 + L20 > RARE_EVENT_LIMIT or L11 + L21 > RARE_EVENT_LIMIT:
        warnings.warn(
            f"cumulative hazard sums ({L10 + L20:.3g}, {L11 + L21:.3g}) exceed {RARE_EVENT_LIMIT}; "
            "rare-event approximations may be poor",
            RareEventWarning,
            stacklevel=3,
        )
        flags.append("rare_event_violation")
    ve1 = 1.0 - L11 / L10
    ve2 = 1.0 - L21 / L20
    l2 = 1.0 - (L11 + L21) / L20
    u2 = 1.0 - _div(L21, L10 + L20)
    kw.setdefault("ve2_definition", "hazard-ratio")
    return _finish(ve1, ve2, l2, u2, 1.0, flags, **kw)


def bounds_from_hazards(ch: CumulativeHazards, stratum: str = "") -> WaningEstimate:
    """Two-interval estimators from summary-data cumulative hazards (points only)."""
    L = {(k, a): ch.Lambda(k, a, stratum) for k in (1, 2) for a in (0, 1)}
    return bounds_from_lambdas(L[1, 0], L[1, 1], L[2, 0], L[2, 1], stratum=stratum, method="summary-delta")


def _as_incidence_map(mu) -> dict[tuple[int, int], float]:
    if isinstance(mu, Mapping):
        return {(int(k), int(a)): float(v) for (k, a), v in mu.items()}
    m10, m11, m20, m21 = mu
    return {(1, 0): m10, (1, 1): m11, (2, 0): m20, (2, 1): m21}


def bounds_from_incidences(mu, **kw) -> WaningEstimate:
    """Plugin estimators from cumulative incidences at the ends of intervals 1 and 2.

    Parameters
    ----------
    mu : mapping ``(k, arm) -> incidence`` or tuple ``(mu10, mu11, mu20, mu21)``
    """
    m = _as_incidence_map(mu)
    m10, m11, m20, m21 = m[1, 0], m[1, 1], m[2, 0], m[2, 1]
    for a, (a1, a2) in enumerate(((m10, m20), (m11, m21))):
        if a2 < a1:
            raise NonMonotoneIncidence(f"arm {a}: incidence falls from {a1!r} to {a2!r}")
        if not (0.0 <= a1 <= 1.0 and 0.0 <= a2 <= 1.0):
            raise NonMonotoneIncidence(f"arm {a}: incidences outside [0, 1]")
    if m10 == 0.0:
        raise ZeroDenominator("mu_10")
    d0 = m20 - m10
    if d0 == 0.0:
        raise ZeroDenominator("mu_20 - mu_10", "zero denominator: mu_20 - mu_10 = 0 (affects l2 and ve2_obs)")
    if m11 >= 1.0:
        raise ZeroDenominator("1 - mu_11")
    d1 = m21 - m11
    ve1 = 1.0 - m11 / m10
    ve2 = 1.0 - (d1 / d0) * ((1.0 - m10) / (1.0 - m11))
    l2 = 1.0 - m21 / d0
    u2 = 1.0 - d1 / m20
    flags = []
    if d1 <= DEGENERACY_RTOL * max(m20, m21):
        flags.append("zero_vaccine_hazard:interval2")
    kw.setdefault("ve2_definition", "conditional-incidence")
    return _finish(ve1, ve2, l2, u2, 1.0, flags, **kw)


def psi_obs(ve1: float, ve2_obs: float) -> float:
    """Ratio of interval-1 to interval-2 risk ratios, ``(1 - ve1) / (1 - ve2_obs)``."""
    if ve2_obs == 1.0:
        raise DegenerateVE("ve2_obs = 1: the observed risk ratio in interval 2 is zero")
    return (1.0 - ve1) / (1.0 - ve2_obs)


# --------------------------------------------------------------------------
# K intervals


def _entry(k, num_l, den_l, num_u, den_u, num_v, den_v) -> KBoundsEntry:
    problems = [name for name, den in (("l", den_l), ("u", den_u), ("ve_obs", den_v)) if den == 0.0]
    if problems:
        return KBoundsEntry(k, None, None, None, f"zero denominator in interval {k} for {', '.join(problems)}")
    return KBoundsEntry(k, Estimate(1.0 - num_l / den_l), Estimate(1.0 - num_u / den_u), Estimate(1.0 - num_v / den_v))


def k_bounds_rare(L0: Sequence[float], L1: Sequence[float]) -> list[KBoundsEntry]:
    """Rare-event bounds for k = 2..K from per-interval cumulative hazards."""
    out = []
    for k in range(2, len(L0) + 1):
        c1 = math.fsum(L1[:k])
        c0 = math.fsum(L0[:k])
        out.append(_entry(k, c1, L0[k - 1], L1[k - 1], c0, L1[k - 1], L0[k - 1]))
    return out


def k_bounds_exact(Y0: Sequence[float], Y1: Sequence[float]) -> list[KBoundsEntry]:
    """Exact bounds for k = 2..K from cumulative incidences at interval ends."""
    out = []
    for k in range(2, len(Y0) + 1):
        dy0 = Y0[k - 1] - Y0[k - 2]
        dy1 = Y1[k - 1] - Y1[k - 2]
        h0_den = dy0 * (1.0 - Y1[k - 2])
        h1_num = dy1 * (1.0 - Y0[k - 2])
        out.append(_entry(k, Y1[k - 1], dy0, dy1, Y0[k - 1], h1_num, h0_den))
    return out


def _check_backend(backend: str) -> str:
    backend = backend.replace("-", "_")
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {backend!r}")
    return backend


def k_interval_bounds(ch: CumulativeHazards, backend: str = "rare_event", stratum: str = "") -> KBoundsEstimate:
    """Bounds for every interval k >= 2.

    The exact backend treats each day's rate as a discrete hazard and forms
    cumulative incidences by the product rule; the rare-event backend uses
    sums of cumulative hazards.
    """
    backend = _check_backend(backend)
    K = ch.spec.K
    if backend == "rare_event":
        L0 = [ch.Lambda(k, 0, stratum) for k in range(1, K + 1)]
        L1 = [ch.Lambda(k, 1, stratum) for k in range(1, K + 1)]
        entries = k_bounds_rare(L0, L1)
    else:
        Y = {}
        for arm in (0, 1):
            days: list[float] = []
            Y[arm] = []
            for block in day_hazards(ch, arm, stratum):
                days.extend(block)
                Y[arm].append(product_cumulative_incidence(days))
        entries = k_bounds_exact(Y[0], Y[1])
    return KBoundsEstimate(tuple(entries), backend, stratum=stratum, method="summary-delta")


def k_bounds_from_interval_hazards(h0: Sequence[float], h1: Sequence[float], backend: str = "rare_event", **kw) -> KBoundsEstimate:
    """K-interval bounds from one discrete hazard per interval and arm."""
    backend = _check_backend(backend)
    if backend == "rare_event":
        entries = k_bounds_rare(list(h0), list(h1))
    else:
        Y0 = [product_cumulative_incidence(h0, k) for k in range(1, len(h0) + 1)]
        Y1 = [product_cumulative_incidence(h1, k) for k in range(1, len(h1) + 1)]
        entries = k_bounds_exact(Y0, Y1)
    return KBoundsEstimate(tuple(entries), backend, **kw)


def k_bounds_from_incidences(Y0: Sequence[float], Y1: Sequence[float], **kw) -> KBoundsEstimate:
    """K-interval bounds from cumulative incidences at each interval end."""
    return KBoundsEstimate(tuple(k_bounds_exact(list(Y0), list(Y1))), "exact_product", **kw)
