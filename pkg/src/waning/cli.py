"""Command-line front end.

Exit codes: 0 success, 2 input or data error, 3 estimation degeneracy,
4 internal error.
"""
from __future__ import annotations

import argparse
import json
import sys
import traceback

from . import __version__
from .bounds import bounds_from_hazards, bounds_from_incidences, k_interval_bounds
from .errors import ConfigError, DataError, MissingCI, SchemaError, WaningError
from .hazard import day_hazards, product_cumulative_incidence, rate_hazards
from .inference import (
    BootstrapConfig,
    CiPolicy,
    bootstrap_cis,
    delta_method_cis,
    individual_estimate,
    k_delta_method_cis,
    waning_test,
)
from .io import (
    read_cohort_csv,
    read_interval_spec,
    read_report,
    read_summary_csv,
    write_cohort_csv,
    write_counterfactual_csv,
    write_interval_spec,
    write_report,
)
from .model import KBoundsEstimate, WaningEstimate
from .simulate import (
    DgmBoundsConfig,
    DgmExposureConfig,
    DgmLogisticConfig,
    simulate_dgm_bounds,
    simulate_dgm_exposure,
    simulate_dgm_logistic,
)

SCHEMAS = """\
file formats:
  interval spec (JSON):
    {"intervals": [{"k": 1, "subintervals": [{"j": 1, "start_day": 12, "end_day": 21}, ...]}, ...]}
    days are inclusive; subintervals must be contiguous; at least two intervals.
  summary table (CSV):
    k,j,arm,stratum,events,person_time,duration_days
    one row per subinterval, arm and stratum; stratum may be empty.
  cohort (CSV):
    id,arm,time_days,event[,covariate columns...]
    arm and event are 0/1; time_days > 0 is the event or censoring time.
  counterfactual panel (CSV):
    id,dy1_a1_e1,dy2_a1_iso,dy2_a0_iso
  report (JSON):
    {"kind": "waning_estimate", ..., "quantities": {"u_psi": {"point": 0.81, "lower": null, "upper": 1.27}, ...}}
    a null limit means the limit is not reported (one-sided interval).

environment:
  WANING_THREADS   maximum bootstrap worker threads (results do not depend on it)

exit codes: 0 ok, 2 input/data error, 3 estimation degeneracy, 4 internal error
"""


def _print_estimate(est) -> None:
    if isinstance(est, WaningEstimate):
        for name, e in est.quantities().items():
            lo = "-" if e.lower is None else f"{e.lower:.4f}"
            hi = "-" if e.upper is None else f"{e.upper:.4f}"
            print(f"{name:8s} {e.point: .4f} ({lo}, {hi})")
    else:
        for e in est.entries:
            if e.error:
                print(f"k={e.k}: {e.error}")
                continue
            print(f"k={e.k}: l={e.l.point:.4f} ve_obs={e.ve_obs.point:.4f} u={e.u.point:.4f}")
    for flag in est.flags:
        print(f"flag: {flag}")


def _print_test(est: WaningEstimate) -> None:
    try:
        result = waning_test(est)
    except MissingCI as exc:
        print(f"waning test: unavailable ({exc})")
        return
    print(f"waning test: {_verdict(result)}")


def _verdict(result) -> str:
    return f"reject: {result.direction}" if result.reject else "no rejection"


def _pick_stratum(strata, requested):
    if requested is not None:
        if requested not in strata:
            raise SchemaError(f"stratum {requested!r} not in table (have {list(strata)})")
        return requested
    if len(strata) == 1:
        return strata[0]
    raise SchemaError(f"table has {len(strata)} strata {list(strata)}; choose one with --stratum")


def cmd_estimate_summary(args) -> int:
    spec = read_interval_spec(args.spec)
    table = read_summary_csv(args.input, spec)
    stratum = _pick_stratum(table.strata(), args.stratum)
    ch = rate_hazards(table)
    policy = CiPolicy(args.alpha)
    backend = args.backend.replace("-", "_")
    if args.k_intervals:
        est = k_delta_method_cis(ch, k_interval_bounds(ch, backend, stratum), policy)
    else:
        est = bounds_from_hazards(ch, stratum)
        if backend == "exact_product":
            Y = {}
            for arm in (0, 1):
                days = [h for block in day_hazards(ch, arm, stratum)[:2] for h in block]
                n1 = spec.interval(1).duration
                Y[(1, arm)] = product_cumulative_incidence(days[:n1])
                Y[(2, arm)] = product_cumulative_incidence(days)
            est = bounds_from_incidences(Y, stratum=stratum, method="summary-delta")
        est = delta_method_cis(ch, est, policy, strict=False)
    write_report(est, args.out, args.format)
    _print_estimate(est)
    if isinstance(est, WaningEstimate):
        _print_test(est)
    return 0


def _parse_profile(items):
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise SchemaError(f"--profile expects name=value, got {item!r}")
        out[name.strip()] = value.strip()
    return out


def cmd_estimate_individual(args) -> int:
    spec = read_interval_spec(args.spec)
    covariates = [c for c in (args.covariates or "").split(",") if c.strip()]
    cohort = read_cohort_csv(args.input, covariates)
    profile = _parse_profile(args.profile)
    x = cohort.encode_profile(profile)
    if args.bootstrap and args.bootstrap > 0:
        est = bootstrap_cis(
            cohort, spec, args.estimator, BootstrapConfig(args.bootstrap, args.seed), CiPolicy(args.alpha),
            profile=x, backend=args.backend,
        )
    else:
        est = individual_estimate(cohort, spec, args.estimator, x, args.backend)
    full_profile = cohort.default_profile()
    full_profile.update(profile)
    from dataclasses import replace

    meta = dict(est.metadata)
    kinds = {c.name: c.kind for c in cohort.schema}
    meta["profile"] = {k: (float(v) if kinds[k] == "numeric" else str(v)) for k, v in full_profile.items()}
    est = replace(est, metadata=meta)
    write_report(est, args.out, args.format)
    _print_estimate(est)
    if isinstance(est, WaningEstimate):
        _print_test(est)
    return 0


def _load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return data


def cmd_simulate(args) -> int:
    data = _load_config(args.config)
    if args.dgm == "bounds":
        sim = simulate_dgm_bounds(DgmBoundsConfig.from_dict(data))
        write_cohort_csv(sim.cohort, args.out)
        if args.counterfactuals:
            write_counterfactual_csv(sim.panel, args.counterfactuals)
        spec = sim.spec
        t = sim.truth
        print(f"target: {DgmBoundsConfig.from_dict(data).target}")
        for label, v in t.ve2_challenge.items():
            name = label or "(all)"
            print(f"stratum {name}: analytic VE2 challenge = {v:.4f} (L2 = {t.l2[label]:.4f}, U2 = {t.u2[label]:.4f})")
        print(f"marginal analytic VE2 challenge = {t.ve2_challenge_marginal:.4f}")
        print(f"panel VE2 challenge = {sim.panel.challenge_ve2():.4f}")
    elif args.dgm == "logistic":
        cfg = DgmLogisticConfig.from_dict(data)
        write_cohort_csv(simulate_dgm_logistic(cfg), args.out)
        spec = cfg.spec()
        print(f"wrote {cfg.n} records over {cfg.K} intervals")
    else:
        cfg = DgmExposureConfig.from_dict(data)
        cohort, report = simulate_dgm_exposure(cfg)
        write_cohort_csv(cohort, args.out)
        spec = cfg.spec()
        for line in report.lines():
            print(line)
    if args.spec_out:
        write_interval_spec(spec, args.spec_out)
    return 0


def cmd_test_waning(args) -> int:
    est = read_report(args.input)
    if not isinstance(est, WaningEstimate):
        raise SchemaError("the waning test needs a two-interval estimate report")
    if args.alpha is not None and est.alpha is not None and abs(args.alpha - est.alpha) > 1e-12:
        raise DataError(f"--alpha {args.alpha} does not match the report's confidence level {est.alpha}")
    result = waning_test(est)
    print(_verdict(result))
    if args.out:
        write_report(result, args.out, "csv" if str(args.out).lower().endswith(".csv") else "json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="waning",
        description="Bounds on vaccine challenge effects and waning from randomized trial data.",
        epilog=SCHEMAS,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("estimate-summary", help="estimate from a summary table with delta-method CIs",
                       epilog=SCHEMAS, formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("--input", required=True, help="summary table CSV")
    s.add_argument("--spec", required=True, help="interval spec JSON")
    s.add_argument("--stratum", help="stratum label to analyse")
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--k-intervals", action="store_true", help="report bounds for every interval k >= 2")
    s.add_argument("--backend", choices=["exact", "rare-event", "exact_product", "rare_event"], default="rare-event")
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=["json", "csv"], default="json")
    s.set_defaults(func=cmd_estimate_summary)

    s = sub.add_parser("estimate-individual", help="estimate from individual records with bootstrap CIs",
                       epilog=SCHEMAS, formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("--input", required=True, help="cohort CSV")
    s.add_argument("--spec", required=True, help="interval spec JSON")
    s.add_argument("--estimator", choices=["logistic", "cox"], required=True)
    s.add_argument("--covariates", default="", help="comma-separated covariate columns, optional :num/:cat suffix")
    s.add_argument("--profile", action="append", metavar="NAME=VALUE",
                   help="covariate value for conditional estimates (repeatable); defaults to means / modal levels")
    s.add_argument("--bootstrap", type=int, default=500, help="number of resamples (0 for points only)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--backend", choices=["exact", "rare-event", "exact_product", "rare_event"], default="rare-event")
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=["json", "csv"], default="json")
    s.set_defaults(func=cmd_estimate_individual)

    s = sub.add_parser("simulate", help="generate synthetic data")
    s.add_argument("--dgm", choices=["bounds", "logistic", "exposure"], required=True)
    s.add_argument("--config", required=True, help="simulator config JSON")
    s.add_argument("--out", required=True, help="cohort CSV to write")
    s.add_argument("--counterfactuals", help="counterfactual panel CSV to write (bounds DGM)")
    s.add_argument("--spec-out", help="interval spec JSON to write")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("test-waning", help="test for waning from an estimate report")
    s.add_argument("--input", required=True, help="estimate report (JSON or CSV)")
    s.add_argument("--alpha", type=float, help="must match the report's confidence level")
    s.add_argument("--out", help="write the test result here")
    s.set_defaults(func=cmd_test_waning)
    return p


def _normalize_backend(args):
    if hasattr(args, "backend"):
        args.backend = {"exact": "exact_product", "rare-event": "rare_event"}.get(args.backend, args.backend)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    _normalize_backend(args)
    try:
        if hasattr(args, "alpha") and args.alpha is not None and not 0.0 < args.alpha < 1.0:
            raise DataError(f"--alpha must lie in (0, 1), got {args.alpha}")
        return args.func(args)
    except WaningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:  # pragma: no cover - exercised only on bugs
        print("internal error:", file=sys.stderr)
        traceback.print_exc()
        return 4


if __name__ == "__main__":
    sys.exit(main())
