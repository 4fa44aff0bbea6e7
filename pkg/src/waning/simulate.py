"""Synthetic trial data.

Three mechanisms:

* a counterfactual mechanism that attains the lower or upper bound on the
  interval-2 challenge effect, with the counterfactual panel emitted so the
  true effect can be computed;
* discrete-time logistic hazards with random censoring;
* an exposure mechanism with leaky or all-or-nothing protection and latent
  heterogeneity, where observed and challenge effects can be compared.

Intervals in simulated cohorts are consecutive blocks of ``width`` days. An
event in interval k is recorded at the interval's last day, censoring during
interval k at half a day after the interval starts, and subjects who
complete follow-up are censored at the last day of interval K.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, InvalidProbabilities
from .hazard import interval_risk_set
from .model import Cohort, IntervalSpec

DEFAULT_WIDTH = 30


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def _check_prob(name: str, v: float) -> float:
    try:
        v = float(v)
    except (TypeError, ValueError):
        raise InvalidProbabilities(f"{name} must be a number, got {v!r}") from None
    if not 0.0 <= v <= 1.0:
        raise InvalidProbabilities(f"{name} = {v!r} outside [0, 1]")
    return v


def _check_n(n) -> int:
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise ConfigError(f"n must be a positive integer, got {n!r}")
    return int(n)


def _interval_times(K: int, width: int, event_k: np.ndarray, censor_k: np.ndarray):
    """Record times from the interval of the event (0 = none) and of censoring (0 = none)."""
    time = np.full(event_k.shape, float(K * width))
    event = (event_k > 0).astype(np.int8)
    time[event_k > 0] = event_k[event_k > 0] * float(width)
    cens = censor_k > 0
    time[cens] = (censor_k[cens] - 1) * float(width) + 0.5
    return time, event


# --------------------------------------------------------------------------
# Bound-attaining mechanism


@dataclass(frozen=True)
class BoundsStratum:
    """Interval probabilities ``p[(k, arm)] = P(event in interval k | arm, stratum)``."""

    label: str
    weight: float
    p: Mapping[tuple[int, int], float]


@dataclass(frozen=True)
class DgmBoundsConfig:
    strata: tuple[BoundsStratum, ...]
    target: str = "lower"
    arm_prob: float = 0.5
    n: int = 100_000
    seed: int = 0
    width: int = DEFAULT_WIDTH

    def __post_init__(self):
        object.__setattr__(self, "strata", tuple(self.strata))
        if self.target not in ("lower", "upper"):
            raise ConfigError(f"target must be 'lower' or 'upper', got {self.target!r}")
        _check_prob("arm_prob", self.arm_prob)
        _check_n(self.n)
        if not self.strata:
            raise ConfigError("at least one stratum is required")
        total = 0.0
        for s in self.strata:
            total += _check_prob(f"weight of stratum {s.label!r}", s.weight)
            for a in (0, 1):
                p1 = _check_prob(f"p[1,{a}] in stratum {s.label!r}", s.p[(1, a)])
                p2 = _check_prob(f"p[2,{a}] in stratum {s.label!r}", s.p[(2, a)])
                if p1 + p2 > 1.0 + 1e-12:
                    raise InvalidProbabilities(f"stratum {s.label!r}, arm {a}: p1 + p2 = {p1 + p2!r} > 1")
        if abs(total - 1.0) > 1e-9:
            raise InvalidProbabilities(f"stratum weights sum to {total!r}, not 1")

    @classmethod
    def single(cls, p10, p11, p20, p21, **kw) -> "DgmBoundsConfig":
        p = {(1, 0): p10, (1, 1): p11, (2, 0): p20, (2, 1): p21}
        return cls((BoundsStratum("", 1.0, p),), **kw)

    @classmethod
    def from_dict(cls, d: Mapping) -> "DgmBoundsConfig":
        """Build from ``{"strata": [{"label", "weight", "p": {"1": [p_k1_arm0, p_k1_arm1], "2": [...]}}], ...}``."""
        try:
            strata = []
            for s in d["strata"]:
                p = {(int(k), a): s["p"][k][a] for k in ("1", "2") for a in (0, 1)}
                strata.append(BoundsStratum(str(s.get("label", "")), s.get("weight", 1.0), p))
            extra = {k: d[k] for k in ("target", "arm_prob", "n", "seed", "width") if k in d}
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed bounds config: {exc!r}") from None
        return cls(tuple(strata), **extra)


@dataclass(frozen=True)
class CounterfactualPanel:
    """Per-subject counterfactual interval indicators.

    ``dy1_a1_e1``: interval-1 event under vaccine with an exposure in interval 1.
    ``dy2_a1_iso`` / ``dy2_a0_iso``: interval-2 event under vaccine / placebo
    after isolation in interval 1 and an exposure in interval 2.
    """

    ids: np.ndarray
    dy1_a1_e1: np.ndarray
    dy2_a1_iso: np.ndarray
    dy2_a0_iso: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, CounterfactualPanel):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("ids", "dy1_a1_e1", "dy2_a1_iso", "dy2_a0_iso"))

    __hash__ = None

    def challenge_ve2(self, mask=None) -> float:
        """Interval-2 challenge effect computed from the panel."""
        sel = slice(None) if mask is None else mask
        den = self.dy2_a0_iso[sel].mean()
        return 1.0 - self.dy2_a1_iso[sel].mean() / den if den > 0 else math.nan


@dataclass(frozen=True)
class BoundsTruth:
    """Analytic values implied by the configuration."""

    ve2_challenge: Mapping[str, float]  # per stratum label
    ve2_challenge_marginal: float
    l2: Mapping[str, float]
    u2: Mapping[str, float]


@dataclass(frozen=True)
class BoundsSimulation:
    cohort: Cohort
    panel: CounterfactualPanel
    spec: IntervalSpec
    truth: BoundsTruth


def _ratio(num, den):
    return 1.0 - num / den if den > 0 else math.nan


def dgm_bounds_truth(cfg: DgmBoundsConfig) -> BoundsTruth:
    ve, l2, u2 = {}, {}, {}
    num = den = 0.0
    for s in cfg.strata:
        p = s.p
        l2[s.label] = _ratio(p[1, 1] + p[2, 1], p[2, 0])
        u2[s.label] = _ratio(p[2, 1], p[1, 0] + p[2, 0])
        if cfg.target == "lower":
            a1, a0 = p[1, 1] + p[2, 1], p[2, 0]
        else:
            a1, a0 = p[2, 1], p[1, 0] + p[2, 0]
        ve[s.label] = _ratio(a1, a0)
        num += s.weight * a1
        den += s.weight * a0
    return BoundsTruth(ve, _ratio(num, den), l2, u2)


def simulate_dgm_bounds(cfg: DgmBoundsConfig) -> BoundsSimulation:
    """Draw observed data and counterfactuals from the bound-attaining mechanism.

    A single uniform ``u`` per subject drives every outcome. Observed events:
    interval 1 if ``u <= p1``, interval 2 if ``p1 < u <= p1 + p2``, using the
    subject's own arm. Under the lower target the vaccinated isolation
    counterfactual fires on ``u <= p11 + p21`` and the placebo one on
    ``p10 < u <= p10 + p20``; the upper target swaps the two rules between arms.
    """
    rng = _rng(cfg.seed)
    n = cfg.n
    weights = np.array([s.weight for s in cfg.strata])
    stratum = rng.choice(len(cfg.strata), size=n, p=weights / weights.sum()) if len(cfg.strata) > 1 else np.zeros(n, dtype=int)
    arm = (rng.random(n) < cfg.arm_prob).astype(np.int8)
    u = rng.random(n)

    def table(k, a):
        return np.array([s.p[(k, a)] for s in cfg.strata])[stratum]

    p10, p11, p20, p21 = table(1, 0), table(1, 1), table(2, 0), table(2, 1)
    p1 = np.where(arm == 1, p11, p10)
    p2 = np.where(arm == 1, p21, p20)
    event_k = np.where(u <= p1, 1, np.where(u <= p1 + p2, 2, 0))
    time, event = _interval_times(2, cfg.width, event_k, np.zeros(n, dtype=int))

    if cfg.target == "lower":
        dy2_a1 = u <= p11 + p21
        dy2_a0 = (u > p10) & (u <= p10 + p20)
    else:
        dy2_a0 = u <= p10 + p20
        dy2_a1 = (u > p11) & (u <= p11 + p21)
    ids = np.array([str(i + 1) for i in range(n)], dtype=object)
    covs = {}
    if len(cfg.strata) > 1:
        labels = np.array([s.label for s in cfg.strata], dtype=object)
        covs["l"] = labels[stratum]
    cohort = Cohort(ids, arm, time, event, covs)
    panel = CounterfactualPanel(ids, (u <= p11).astype(np.int8), dy2_a1.astype(np.int8), dy2_a0.astype(np.int8))
    return BoundsSimulation(cohort, panel, IntervalSpec.uniform(2, cfg.width), dgm_bounds_truth(cfg))


# --------------------------------------------------------------------------
# Logistic hazards with censoring


@dataclass(frozen=True)
class DgmLogisticConfig:
    """Per-interval hazards ``expit(b0 + b1*arm + b2*l)`` with ``l ~ Uniform[0, 1]``.

    ``censoring`` is the probability of being lost at the start of each
    interval, before the outcome is drawn.
    """

    beta: tuple[tuple[float, float, float], ...] = (
        (-3.0, -2.0, 0.5),
        (-3.0, -1.5, 0.5),
        (-3.0, -1.0, 0.5),
        (-3.0, -0.5, 0.5),
    )
    censoring: float = 0.02
    n: int = 10_000
    seed: int = 0
    width: int = DEFAULT_WIDTH
    arm_prob: float = 0.5

    def __post_init__(self):
        beta = tuple(tuple(float(x) for x in b) for b in self.beta)
        if len(beta) < 2 or any(len(b) != 3 for b in beta):
            raise ConfigError("beta needs one (b0, b1, b2) triple per interval and at least two intervals")
        if not all(math.isfinite(x) for b in beta for x in b):
            raise ConfigError("beta must be finite")
        object.__setattr__(self, "beta", beta)
        c = _check_prob("censoring", self.censoring)
        if c >= 1.0:
            raise InvalidProbabilities("censoring must be < 1")
        _check_prob("arm_prob", self.arm_prob)
        _check_n(self.n)

    @property
    def K(self) -> int:
        return len(self.beta)

    @classmethod
    def from_dict(cls, d: Mapping) -> "DgmLogisticConfig":
        known = {"beta", "censoring", "n", "seed", "width", "arm_prob"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown logistic config keys {sorted(unknown)}")
        try:
            return cls(**{k: (tuple(map(tuple, v)) if k == "beta" else v) for k, v in d.items()})
        except TypeError as exc:
            raise ConfigError(f"malformed logistic config: {exc}") from None

    def hazard(self, k: int, arm: int, l: float) -> float:
        b0, b1, b2 = self.beta[k - 1]
        return float(expit(b0 + b1 * arm + b2 * l))

    def spec(self) -> IntervalSpec:
        return IntervalSpec.uniform(self.K, self.width)


def simulate_dgm_logistic(cfg: DgmLogisticConfig) -> Cohort:
    rng = _rng(cfg.seed)
    n, K = cfg.n, cfg.K
    arm = (rng.random(n) < cfg.arm_prob).astype(np.int8)
    l = rng.random(n)
    uc = rng.random((K, n))
    uy = rng.random((K, n))
    event_k = np.zeros(n, dtype=int)
    censor_k = np.zeros(n, dtype=int)
    alive = np.ones(n, dtype=bool)
    for k in range(1, K + 1):
        b0, b1, b2 = cfg.beta[k - 1]
        cens = alive & (uc[k - 1] < cfg.censoring)
        censor_k[cens] = k
        alive &= ~cens
        hit = alive & (uy[k - 1] < expit(b0 + b1 * arm + b2 * l))
        event_k[hit] = k
        alive &= ~hit
    time, event = _interval_times(K, cfg.width, event_k, censor_k)
    ids = np.array([str(i + 1) for i in range(n)], dtype=object)
    return Cohort(ids, arm, time, event, {"l": l})


# --------------------------------------------------------------------------
# Exposure mechanism


@dataclass(frozen=True)
class TwoPointLaw:
    """Discrete law on multipliers; the default is the point mass at 1."""

    values: tuple[float, ...] = (1.0,)
    probs: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        probs = tuple(float(p) for p in self.probs)
        if len(values) != len(probs) or not values:
            raise ConfigError("values and probs must be nonempty and of equal length")
        if any(v < 0 or not math.isfinite(v) for v in values):
            raise ConfigError("multipliers must be finite and >= 0")
        for p in probs:
            _check_prob("law probability", p)
        if abs(sum(probs) - 1.0) > 1e-9:
            raise InvalidProbabilities(f"law probabilities sum to {sum(probs)!r}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)


@dataclass(frozen=True)
class DgmExposureConfig:
    """Single-exposure-per-interval infection mechanism.

    In interval k a subject is exposed with probability
    ``min(1, exposure[k] * u_e)`` and an exposure infects with probability
    ``min(1, transmission * u_y * f)``, where ``f = 1`` on placebo. Under
    ``leaky`` protection ``f = 1 - vaccine_effect[k]`` on vaccine; under
    ``all_or_nothing`` a fraction ``vaccine_effect`` of vaccinees is immune
    (``f = 0``) and the rest have ``f = 1``.
    """

    exposure: tuple[float, ...] = (0.05, 0.05, 0.05)
    transmission: float = 0.2
    protection: str = "leaky"
    vaccine_effect: float | tuple[float, ...] = 0.8
    susceptibility: TwoPointLaw = field(default_factory=TwoPointLaw)
    propensity: TwoPointLaw = field(default_factory=TwoPointLaw)
    n: int = 100_000
    seed: int = 0
    width: int = DEFAULT_WIDTH
    arm_prob: float = 0.5

    def __post_init__(self):
        exposure = tuple(_check_prob("exposure probability", e) for e in self.exposure)
        if len(exposure) < 2:
            raise ConfigError("at least two intervals of exposure are required")
        object.__setattr__(self, "exposure", exposure)
        _check_prob("transmission", self.transmission)
        _check_prob("arm_prob", self.arm_prob)
        _check_n(self.n)
        if self.protection not in ("leaky", "all_or_nothing"):
            raise ConfigError(f"protection must be 'leaky' or 'all_or_nothing', got {self.protection!r}")
        ve = self.vaccine_effect
        if isinstance(ve, (list, tuple)):
            if self.protection == "all_or_nothing":
                raise ConfigError("all_or_nothing protection takes a single protected fraction")
            if len(ve) != len(exposure):
                raise ConfigError("vaccine_effect needs one value per interval")
            ve = tuple(_check_prob("vaccine_effect", v) for v in ve)
        else:
            ve = _check_prob("vaccine_effect", ve)
        object.__setattr__(self, "vaccine_effect", ve)
        for name in ("susceptibility", "propensity"):
            law = getattr(self, name)
            if isinstance(law, Mapping):
                object.__setattr__(self, name, TwoPointLaw(tuple(law["values"]), tuple(law["probs"])))

    @property
    def K(self) -> int:
        return len(self.exposure)

    @classmethod
    def from_dict(cls, d: Mapping) -> "DgmExposureConfig":
        known = {"exposure", "transmission", "protection", "vaccine_effect", "susceptibility",
                 "propensity", "n", "seed", "width", "arm_prob"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown exposure config keys {sorted(unknown)}")
        try:
            kw = dict(d)
            if "exposure" in kw:
                kw["exposure"] = tuple(kw["exposure"])
            if isinstance(kw.get("vaccine_effect"), list):
                kw["vaccine_effect"] = tuple(kw["vaccine_effect"])
            return cls(**kw)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"malformed exposure config: {exc}") from None

    def leaky_factor(self, k: int) -> float:
        ve = self.vaccine_effect
        return 1.0 - (ve[k - 1] if isinstance(ve, tuple) else ve)

    def spec(self) -> IntervalSpec:
        return IntervalSpec.uniform(self.K, self.width)

    def types(self):
        """Latent types ``(weight, u_y, u_e, immune)``, for each arm."""
        out = {0: [], 1: []}
        for (uy, py), (ue, pe) in itertools.product(
            zip(self.susceptibility.values, self.susceptibility.probs),
            zip(self.propensity.values, self.propensity.probs),
        ):
            out[0].append((py * pe, uy, ue, False))
            if self.protection == "all_or_nothing":
                theta = float(self.vaccine_effect)
                out[1].append((py * pe * theta, uy, ue, True))
                out[1].append((py * pe * (1.0 - theta), uy, ue, False))
            else:
                out[1].append((py * pe, uy, ue, False))
        return out

    def infection_prob(self, k: int, arm: int, uy: float, immune: bool) -> float:
        """Infection probability given one controlled exposure in interval k."""
        if immune:
            return 0.0
        f = self.leaky_factor(k) if (arm == 1 and self.protection == "leaky") else 1.0
        return min(1.0, self.transmission * uy * f)


@dataclass(frozen=True)
class ExposureReport:
    ve_challenge: tuple[float, ...]
    ve_obs_analytic: tuple[float, ...]
    ve_obs_simulated: tuple[float, ...]
    hazards_analytic: Mapping[int, tuple[float, ...]]

    @property
    def diverges(self) -> bool:
        """True when the analytic observed effect departs from the challenge effect in some interval."""
        return any(
            abs(o - c) > 1e-9 for o, c in zip(self.ve_obs_analytic, self.ve_challenge)
            if math.isfinite(o) and math.isfinite(c)
        )

    def lines(self) -> list[str]:
        rows = ["k  ve_challenge  ve_obs_analytic  ve_obs_simulated"]
        for k, (c, a, s) in enumerate(zip(self.ve_challenge, self.ve_obs_analytic, self.ve_obs_simulated), start=1):
            rows.append(f"{k}  {c:.6f}  {a:.6f}  {s:.6f}")
        rows.append(f"diverges: {'yes' if self.diverges else 'no'}")
        return rows


def exposure_truth(cfg: DgmExposureConfig) -> tuple[tuple[float, ...], tuple[float, ...], dict[int, tuple[float, ...]]]:
    """Challenge effects and observed discrete hazards, in closed form over the latent types."""
    types = cfg.types()
    challenge = []
    for k in range(1, cfg.K + 1):
        risk = {a: sum(w * cfg.infection_prob(k, a, uy, imm) for w, uy, _, imm in types[a]) for a in (0, 1)}
        challenge.append(1.0 - risk[1] / risk[0] if risk[0] > 0 else math.nan)
    hazards = {}
    for a in (0, 1):
        surv = [w for w, *_ in types[a]]
        hs = []
        for k in range(1, cfg.K + 1):
            q = [min(1.0, cfg.exposure[k - 1] * ue) * cfg.infection_prob(k, a, uy, imm) for _, uy, ue, imm in types[a]]
            at_risk = sum(surv)
            hs.append(sum(s * qi for s, qi in zip(surv, q)) / at_risk if at_risk > 0 else math.nan)
            surv = [s * (1.0 - qi) for s, qi in zip(surv, q)]
        hazards[a] = tuple(hs)
    ve_obs = tuple(1.0 - h1 / h0 if h0 > 0 else math.nan for h0, h1 in zip(hazards[0], hazards[1]))
    return tuple(challenge), ve_obs, hazards


def simulate_dgm_exposure(cfg: DgmExposureConfig) -> tuple[Cohort, ExposureReport]:
    rng = _rng(cfg.seed)
    n, K = cfg.n, cfg.K
    arm = (rng.random(n) < cfg.arm_prob).astype(np.int8)
    sus, prop = cfg.susceptibility, cfg.propensity
    uy = np.asarray(sus.values)[rng.choice(len(sus.values), size=n, p=sus.probs)]
    ue = np.asarray(prop.values)[rng.choice(len(prop.values), size=n, p=prop.probs)]
    immune = np.zeros(n, dtype=bool)
    if cfg.protection == "all_or_nothing":
        immune = (arm == 1) & (rng.random(n) < float(cfg.vaccine_effect))
    else:
        rng.random(n)  # keep the stream layout independent of the protection model
    ux = rng.random((K, n))
    ut = rng.random((K, n))
    event_k = np.zeros(n, dtype=int)
    alive = np.ones(n, dtype=bool)
    for k in range(1, K + 1):
        f = np.where((arm == 1) & (cfg.protection == "leaky"), cfg.leaky_factor(k), 1.0)
        exposed = ux[k - 1] < np.minimum(1.0, cfg.exposure[k - 1] * ue)
        infect = ut[k - 1] < np.minimum(1.0, cfg.transmission * uy * f)
        hit = alive & exposed & infect & ~immune
        event_k[hit] = k
        alive &= ~hit
    time, event = _interval_times(K, cfg.width, event_k, np.zeros(n, dtype=int))
    ids = np.array([str(i + 1) for i in range(n)], dtype=object)
    cohort = Cohort(ids, arm, time, event)

    spec = cfg.spec()
    simulated = []
    for k in range(1, K + 1):
        at_risk, y = interval_risk_set(cohort, spec, k)
        a = cohort.arm[at_risk]
        h = [y[a == g].mean() if np.any(a == g) else math.nan for g in (0, 1)]
        simulated.append(1.0 - h[1] / h[0] if h[0] > 0 else math.nan)
    challenge, ve_obs, hazards = exposure_truth(cfg)
    return cohort, ExposureReport(challenge, ve_obs, tuple(simulated), hazards)


def logistic_truth(cfg: DgmLogisticConfig, l: float) -> dict[str, list[float]]:
    """True hazards and rare-event bounds at covariate value ``l``."""
    h0 = [cfg.hazard(k, 0, l) for k in range(1, cfg.K + 1)]
    h1 = [cfg.hazard(k, 1, l) for k in range(1, cfg.K + 1)]
    lower = [1.0 - sum(h1[:k]) / h0[k - 1] for k in range(2, cfg.K + 1)]
    upper = [1.0 - h1[k - 1] / sum(h0[:k]) for k in range(2, cfg.K + 1)]
    ve = [1.0 - a / b for a, b in zip(h1, h0)]
    return {"h0": h0, "h1": h1, "lower": lower, "upper": upper, "ve_obs": ve}
