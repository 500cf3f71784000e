"""Command-line front end: simulate, estimate, test, power, figures, validate.

Exit codes: 0 success, 2 invalid usage or configuration, 3 runtime failure.
Every command that takes --seed is bit-reproducible for a fixed seed and any
worker count; MMRU_DEFAULT_SEED supplies the seed when --seed is absent.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from ._version import __version__
from .errors import MmruError, ScenarioError
from .estimators import compute_estimates
from .harness import (
    ScenarioSpec,
    _round12,
    builtin_scenarios,
    convergence_diagnostics,
    export_histograms_csv,
    export_power_csv,
    export_power_json,
    power_curve,
    power_family,
    run_replications,
    scenario_by_name,
    write_metadata_sidecar,
)
from .inference import run_test
from .sampling import (
    DiscreteLaw,
    DrawCountLaw,
    IndependentDiscrete,
    PointMass,
    PoissonLaw,
    Rng,
    ShiftedCommonCount,
    ShiftedMultinomial,
    clamp_deviations,
)
from .urn import UrnConfig, init, run, write_trajectory

SEED_ENV = "MMRU_DEFAULT_SEED"


# ---------------------------------------------------------------------------
# Scenario files


def _need(obj: dict, key: str, context: str = ""):
    if key not in obj:
        field = f"{context}.{key}" if context else key
        raise ScenarioError(field, "missing required field")
    return obj[key]


def _rescope(exc: ScenarioError, prefix: str) -> ScenarioError:
    return ScenarioError(f"{prefix}.{exc.field}", str(exc).split(": ", 1)[-1])


def _parse_discrete(obj: dict, context: str) -> DiscreteLaw:
    try:
        return DiscreteLaw(
            tuple(_need(obj, "values", context)),
            tuple(_need(obj, "probabilities", context)),
        )
    except ScenarioError as exc:
        if exc.field.startswith(context):
            raise
        raise _rescope(exc, context) from None


def _parse_replacement(obj: dict):
    kind = _need(obj, "type", "replacement")
    try:
        if kind == "point":
            return PointMass(tuple(_need(obj, "values", "replacement")))
        if kind == "independent":
            marginals = _need(obj, "marginals", "replacement")
            laws = tuple(
                _parse_discrete(m, f"replacement.marginals[{k}]")
                for k, m in enumerate(marginals)
            )
            return IndependentDiscrete(laws)
        if kind == "shifted_multinomial":
            return ShiftedMultinomial(
                _need(obj, "trials", "replacement"),
                tuple(_need(obj, "pvec", "replacement")),
                tuple(_need(obj, "offsets", "replacement")),
                tuple(_need(obj, "scales", "replacement")),
            )
        if kind == "shifted_common_count":
            base_obj = _need(obj, "base", "replacement")
            base_kind = _need(base_obj, "type", "replacement.base")
            if base_kind == "poisson":
                base = PoissonLaw(_need(base_obj, "mean", "replacement.base"))
            elif base_kind == "discrete":
                base = _parse_discrete(base_obj, "replacement.base")
            else:
                raise ScenarioError("replacement.base.type", f"unknown law {base_kind!r}")
            return ShiftedCommonCount(
                base,
                tuple(_need(obj, "offsets", "replacement")),
                tuple(_need(obj, "scales", "replacement")),
            )
    except ScenarioError as exc:
        if exc.field.startswith("replacement"):
            raise
        raise _rescope(exc, "replacement") from None
    raise ScenarioError("replacement.type", f"unknown law {kind!r}")


_SCENARIO_KEYS = {
    "name",
    "d",
    "initial_composition",
    "draw_mode",
    "draw_count",
    "replacement",
    "horizon",
    "replications",
    "base_seed",
    "e",
}


def parse_scenario_file(path) -> ScenarioSpec:
    """Parse and validate a JSON scenario description.

    Schema (see README for a full example):
      name, initial_composition, draw_mode, horizon, replications,
      draw_count: {support, probabilities},
      replacement: {type: point | independent | shifted_multinomial |
                    shifted_common_count, ...},
      optional d, base_seed, e.
    """
    try:
        with open(path) as fh:
            raw = fh.read()
    except OSError as exc:
        raise MmruError(f"cannot read scenario file {path}: {exc}") from exc
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioError("json", f"line {exc.lineno}, column {exc.colno}: {exc.msg}")
    if not isinstance(obj, dict):
        raise ScenarioError("json", "top level must be an object")
    for key in obj:
        if key not in _SCENARIO_KEYS:
            raise ScenarioError(key, "unknown field")
    composition = _need(obj, "initial_composition")
    d = obj.get("d", len(composition))
    if d != len(composition):
        raise ScenarioError("d", f"contradicts initial_composition length {len(composition)}")
    count_obj = _need(obj, "draw_count")
    try:
        count_law = DrawCountLaw(
            tuple(_need(count_obj, "support", "draw_count")),
            tuple(_need(count_obj, "probabilities", "draw_count")),
            cap=int(count_obj.get("cap", 0)),
        )
    except ScenarioError as exc:
        if exc.field.startswith("draw_count"):
            raise
        raise _rescope(exc, "draw_count") from None
    config = UrnConfig(
        d=d,
        H0=tuple(composition),
        draw_mode=_need(obj, "draw_mode"),
        count_law=count_law,
        replacement_law=_parse_replacement(_need(obj, "replacement")),
    )
    kwargs = {}
    if "base_seed" in obj:
        kwargs["base_seed"] = int(obj["base_seed"])
    if obj.get("e") is not None:
        kwargs["e"] = int(obj["e"])
    return ScenarioSpec(
        name=str(_need(obj, "name")),
        config=config,
        horizon=_need(obj, "horizon"),
        replications=_need(obj, "replications"),
        **kwargs,
    )


# ---------------------------------------------------------------------------
# Shared plumbing


def _resolve_seed(flag_seed):
    """Effective seed and where it came from: flag, environment, or scenario."""
    if flag_seed is not None:
        return flag_seed, "cli"
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env), "env"
        except ValueError:
            raise ScenarioError(SEED_ENV, f"must be an integer, got {env!r}") from None
    return None, "scenario-default"


def _resolve_spec(args) -> tuple:
    """ScenarioSpec with CLI overrides applied, plus the seed source label."""
    if getattr(args, "scenario_file", None):
        spec = parse_scenario_file(args.scenario_file)
    else:
        spec = scenario_by_name(args.scenario)
    seed, source = _resolve_seed(getattr(args, "seed", None))
    overrides = {}
    if getattr(args, "n", None) is not None:
        overrides["horizon"] = args.n
    if getattr(args, "reps", None) is not None:
        overrides["replications"] = args.reps
    if seed is not None:
        overrides["base_seed"] = seed
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    return spec, source


def _default_parallelism() -> int:
    return os.cpu_count() or 1


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ScenarioError("alpha", "must lie strictly between 0 and 1")


def _check_k0(k0: int, d: int) -> int:
    if k0 is None:
        return d
    if not 2 <= k0 <= d:
        raise ScenarioError("k0", f"must lie in [2, {d}]")
    return k0


def _emit_json(payload: dict, out) -> None:
    text = json.dumps(_round12(payload), indent=2)
    print(text)
    if out:
        try:
            with open(out, "w") as fh:
                fh.write(text + "\n")
        except OSError as exc:
            raise MmruError(f"cannot write {out}: {exc}") from exc


def _single_run(spec: ScenarioSpec, record_every: int = 0):
    rng = Rng(spec.base_seed, 0)
    state = init(spec.config)
    return run(state, spec.horizon, rng, record_every=record_every)


# ---------------------------------------------------------------------------
# Commands


def cmd_simulate(args) -> int:
    spec, seed_source = _resolve_spec(args)
    if args.record_every < 1:
        raise ScenarioError("record_every", "must be a positive integer")
    state, records = _single_run(spec, record_every=args.record_every)
    write_trajectory(records, spec.config.d, args.out)
    write_metadata_sidecar(
        args.out,
        {
            "scenario": spec.name,
            "base_seed": spec.base_seed,
            "seed_source": seed_source,
            "horizon": spec.horizon,
            "record_every": args.record_every,
            "d": spec.config.d,
            "draw_mode": spec.config.draw_mode,
            "true_m": list(spec.true_m),
            "true_t": spec.true_t,
            "clamp_deviations": clamp_deviations(spec.config.replacement_law),
            "library_version": __version__,
        },
    )
    print(f"wrote {len(records)} stages to {args.out}")
    return 0


def _estimate_notes(est) -> list:
    notes = []
    for k, value in enumerate(est.m_hat):
        if value is None:
            notes.append(f"m_hat[{k}] undefined: color {k} was never drawn")
    for k, value in enumerate(est.sigma2_hat):
        if value is None:
            notes.append(f"sigma2_hat[{k}] undefined: color {k} was never drawn")
    d = est.d
    for k in range(d):
        for s in range(k + 1, d):
            if est.q_cross_hat[k][s] is None:
                notes.append(
                    f"q_cross_hat[{k}][{s}] undefined: no joint observations"
                )
    return notes


def cmd_estimate(args) -> int:
    spec, _ = _resolve_spec(args)
    state, _ = _single_run(spec)
    est = compute_estimates(state, min_joint=args.min_joint, allow_partial=True)
    payload = est.to_dict()
    payload["notes"] = _estimate_notes(est)
    _emit_json(payload, args.out)
    return 0


def cmd_test(args) -> int:
    spec, _ = _resolve_spec(args)
    _check_alpha(args.alpha)
    k0 = _check_k0(args.k0, spec.config.d)
    state, _ = _single_run(spec)
    result = run_test(state, k0, alpha=args.alpha, min_draws=args.min_draws)
    _emit_json(result.to_dict(), args.out)
    return 0


def cmd_power(args) -> int:
    if args.reps is not None and args.reps < 1:
        raise ScenarioError("reps", "must be a positive integer")
    if args.n is not None and args.n < 1:
        raise ScenarioError("n", "must be a positive integer")
    _check_alpha(args.alpha)
    seed, seed_source = _resolve_seed(args.seed)
    family = []
    for spec in power_family():
        overrides = {}
        if args.reps is not None:
            overrides["replications"] = args.reps
        if args.n is not None:
            overrides["horizon"] = args.n
        if seed is not None:
            overrides["base_seed"] = seed
        family.append(dataclasses.replace(spec, **overrides) if overrides else spec)
    k0 = _check_k0(args.k0, family[0].config.d)
    points = power_curve(
        family, alpha=args.alpha, k0=k0, parallelism=args.parallelism
    )
    metadata = {
        "family": args.family,
        "scenarios": [spec.name for spec in family],
        "base_seed": family[0].base_seed,
        "seed_source": seed_source,
        "horizon": family[0].horizon,
        "replications": family[0].replications,
        "alpha": args.alpha,
        "k0": k0,
        "clamp_deviations": [
            clamp_deviations(spec.config.replacement_law) for spec in family
        ],
        "library_version": __version__,
    }
    if args.format == "json":
        export_power_json(points, args.out, metadata)
    else:
        export_power_csv(points, args.out, metadata)
    print(f"wrote power table ({len(points)} rows) to {args.out}")
    return 0


def cmd_figures(args) -> int:
    if args.reps is not None and args.reps < 1:
        raise ScenarioError("reps", "must be a positive integer")
    if args.n is not None and args.n < 1:
        raise ScenarioError("n", "must be a positive integer")
    if not os.path.isdir(args.out):
        raise MmruError(f"output directory does not exist: {args.out}")
    seed, seed_source = _resolve_seed(args.seed)
    wanted = {"1": ("",), "2": ("-636",), "both": ("", "-636")}[args.figure]
    written = []
    for letter in ("a", "b", "c", "d"):
        for suffix in wanted:
            spec = scenario_by_name(f"case-{letter}{suffix}")
            overrides = {}
            if args.reps is not None:
                overrides["replications"] = args.reps
            if args.n is not None:
                overrides["horizon"] = args.n
            if seed is not None:
                overrides["base_seed"] = seed
            if overrides:
                spec = dataclasses.replace(spec, **overrides)
            summary = run_replications(spec, parallelism=args.parallelism)
            summary.metadata["seed_source"] = seed_source
            path = os.path.join(args.out, f"{spec.name}-hist.csv")
            export_histograms_csv(summary, path)
            written.append(path)
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_validate(args) -> int:
    spec, _ = _resolve_spec(args)
    payload = {
        "name": spec.name,
        "d": spec.config.d,
        "initial_composition": list(spec.config.H0),
        "draw_mode": spec.config.draw_mode,
        "horizon": spec.horizon,
        "replications": spec.replications,
        "base_seed": spec.base_seed,
        "e": spec.e,
        "true_m": list(spec.true_m),
        "true_q": list(spec.true_q),
        "true_t": spec.true_t,
        "clamp_deviations": clamp_deviations(spec.config.replacement_law),
        "valid": True,
    }
    if args.diagnose:
        if spec.horizon < 1:
            raise ScenarioError("horizon", "diagnostics need a positive horizon")
        step = max(1, spec.horizon // 100)
        checkpoints = sorted(set(list(range(step, spec.horizon + 1, step)) + [spec.horizon]))
        report = convergence_diagnostics(spec, checkpoints)
        payload["diagnostics"] = report.to_dict()
    _emit_json(payload, args.out)
    return 0


# ---------------------------------------------------------------------------
# Parser


def _scenario_epilog() -> str:
    lines = ["built-in scenarios (true reinforcement means in parentheses):"]
    for spec in builtin_scenarios():
        means = ", ".join(f"{v:.6g}" for v in spec.true_m)
        lines.append(
            f"  {spec.name:<12} m=({means})  horizon={spec.horizon} replications={spec.replications}"
        )
    return "\n".join(lines)


def _add_source(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--scenario", help="built-in scenario name")
    group.add_argument("--scenario-file", help="path to a JSON scenario file")


def _add_seed(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        help=f"base seed (default: ${SEED_ENV} if set, else the scenario's)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmru",
        description="Simulate randomly reinforced urns with multiple draws, "
        "estimate reinforcement moments, and test equality of arm means.",
        epilog=_scenario_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("simulate", help="run one path and write its trajectory CSV")
    _add_source(p)
    _add_seed(p)
    p.add_argument("--n", type=int, default=None, help="stages to run (default: scenario horizon)")
    p.add_argument("--record-every", type=int, default=1, help="record every k-th stage (default 1)")
    p.add_argument("--out", required=True, help="trajectory CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="run one path and print moment estimates as JSON")
    _add_source(p)
    _add_seed(p)
    p.add_argument("--n", type=int, default=None, help="stages to run (default: scenario horizon)")
    p.add_argument("--min-joint", type=int, default=30, help="joint draws needed for the product-form cross moment (default 30)")
    p.add_argument("--out", default=None, help="also write the JSON here")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("test", help="run one path and test equality of the top k0 means")
    _add_source(p)
    _add_seed(p)
    p.add_argument("--n", type=int, default=None, help="stages to run (default: scenario horizon)")
    p.add_argument("--alpha", type=float, default=0.05, help="significance level (default 0.05)")
    p.add_argument("--k0", type=int, default=None, help="arms under test (default: all colors)")
    p.add_argument("--min-draws", type=int, default=30, help="draws required per tested arm (default 30)")
    p.add_argument("--out", default=None, help="also write the JSON here")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("power", help="empirical power of the test across the built-in family")
    p.add_argument("--family", choices=["fig4"], default="fig4", help="scenario family (default fig4)")
    _add_seed(p)
    p.add_argument("--reps", type=int, default=None, help="replications per family member (default 500)")
    p.add_argument("--n", type=int, default=None, help="stages per replication (default 1000)")
    p.add_argument("--alpha", type=float, default=0.05, help="significance level (default 0.05)")
    p.add_argument("--k0", type=int, default=None, help="arms under test (default: all colors)")
    p.add_argument("--parallelism", type=int, default=_default_parallelism(), help="worker processes (default: machine cores)")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--out", required=True, help="output path")
    p.set_defaults(func=cmd_power)

    p = sub.add_parser("figures", help="histogram data tables for the four cases under both initial compositions")
    p.add_argument("--figure", choices=["1", "2", "both"], default="both", help="1: equal start, 2: unequal start (default both)")
    _add_seed(p)
    p.add_argument("--reps", type=int, default=None, help="replications per scenario (default 5000)")
    p.add_argument("--n", type=int, default=None, help="stages per replication (default 10000)")
    p.add_argument("--parallelism", type=int, default=_default_parallelism(), help="worker processes (default: machine cores)")
    p.add_argument("--out", required=True, help="existing output directory")
    p.set_defaults(func=cmd_figures)

    p = sub.add_parser("validate", help="parse a scenario, report its derived quantities, optionally run convergence diagnostics")
    _add_source(p)
    _add_seed(p)
    p.add_argument("--n", type=int, default=None, help="horizon override for diagnostics")
    p.add_argument("--diagnose", action="store_true", help="run single-path convergence diagnostics")
    p.add_argument("--out", default=None, help="also write the JSON here")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MmruError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
