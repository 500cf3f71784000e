"""Scenario library, Monte Carlo replication engine, and data exports.

Replications are embarrassingly parallel: replication r of a scenario always
uses the rng stream (base_seed, r), so results are identical for any worker
count and aggregation merges in replication-index order. Exports write the
same numbers whether they came from one process or many.
"""

from __future__ import annotations

import json
import math
import multiprocessing
from dataclasses import dataclass, field

from ._version import __version__
from .errors import MmruError
from .estimators import DEFAULT_MIN_JOINT, compute_estimates
from .inference import DEFAULT_MIN_DRAWS, run_test
from .sampling import (
    DiscreteLaw,
    DrawCountLaw,
    IndependentDiscrete,
    PoissonLaw,
    Rng,
    ShiftedCommonCount,
    ShiftedMultinomial,
    clamp_deviations,
    law_moments,
)
from .urn import (
    WITH_REPLACEMENT,
    WITHOUT_REPLACEMENT,
    UrnConfig,
    init,
    normalized_composition,
    run,
)

HIST_BINS = 50

# ties between means narrower than this count as equal when deriving t
MEAN_TIE_TOL = 1e-12

DEFAULT_BASE_SEED = 20260816

# 95% normal quantile used by the Wilson interval
WILSON_Z = 1.959963984540054


@dataclass
class ScenarioSpec:
    """A named urn configuration plus its Monte Carlo run parameters.

    True moments of the replacement law (clamp included) are derived on
    construction, so every spec knows its own m, q, cross moments and the
    number of maximal means t.
    """

    name: str
    config: UrnConfig
    horizon: int
    replications: int
    base_seed: int = DEFAULT_BASE_SEED
    e: int = None
    true_m: list = field(init=False)
    true_q: list = field(init=False)
    true_q_cross: list = field(init=False)
    true_t: int = field(init=False)

    def __post_init__(self):
        self.horizon = int(self.horizon)
        self.replications = int(self.replications)
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.replications < 0:
            raise ValueError("replications must be nonnegative")
        m, q, cross = law_moments(self.config.replacement_law)
        self.true_m = m
        self.true_q = q
        self.true_q_cross = cross
        top = max(m)
        self.true_t = sum(1 for mk in m if top - mk <= MEAN_TIE_TOL)


@dataclass
class ReplicationResult:
    """Terminal snapshot of one replication; None fields mean 'not computed'."""

    replication: int
    Z: list
    m_hat: list
    N_A: list
    theta: float = None
    p_value: float = None
    reject: bool = None
    error: str = None
    estimates: object = None

    def to_dict(self) -> dict:
        return {
            "replication": self.replication,
            "Z": self.Z,
            "m_hat": self.m_hat,
            "N_A": self.N_A,
            "theta": self.theta,
            "p_value": self.p_value,
            "reject": self.reject,
            "error": self.error,
        }


@dataclass
class ReplicationSummary:
    """Ordered per-replication results plus deterministic aggregates."""

    scenario: str
    e: int
    d: int
    horizon: int
    replications: int
    base_seed: int
    results: list
    bin_edges: list
    histogram_counts: list
    rejections: int = None
    power: float = None
    wilson_low: float = None
    wilson_high: float = None
    errors: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        power = None
        if self.power is not None:
            power = {
                "rejections": self.rejections,
                "power": self.power,
                "wilson_low": self.wilson_low,
                "wilson_high": self.wilson_high,
            }
        return {
            "metadata": dict(self.metadata),
            "histograms": {
                "bin_edges": list(self.bin_edges),
                "counts": [list(row) for row in self.histogram_counts],
            },
            "power": power,
            "replications": [res.to_dict() for res in self.results],
            "errors": list(self.errors),
        }


# ---------------------------------------------------------------------------
# Built-in scenarios


def _uniform_law(lo: int, hi: int) -> DiscreteLaw:
    n = hi - lo + 1
    return DiscreteLaw(tuple(range(lo, hi + 1)), (1.0 / n,) * n)


def _point_law(value: float) -> DiscreteLaw:
    return DiscreteLaw((value,), (1.0,))


def _case_count_law() -> DrawCountLaw:
    return DrawCountLaw(support=(3, 6), probabilities=(1.0 / 3.0, 2.0 / 3.0))


def _power_count_law() -> DrawCountLaw:
    return DrawCountLaw(support=(6, 8), probabilities=(0.25, 0.75))


_CASE_LAWS = {
    "a": lambda: IndependentDiscrete((_uniform_law(3, 5), _uniform_law(3, 5), _point_law(1.0))),
    "b": lambda: IndependentDiscrete((_uniform_law(2, 6), _uniform_law(3, 5), _point_law(1.0))),
    "c": lambda: ShiftedMultinomial(5, (0.4, 0.4, 0.2), (2.0, 2.0, 1.0), (1.0, 1.0, 0.0)),
    "d": lambda: ShiftedMultinomial(5, (0.3, 0.4, 0.3), (1.0, 2.0, 1.0), (2.0, 1.0, 0.0)),
}


def power_replacement_law(e: int) -> ShiftedCommonCount:
    """Three arms sharing one Poisson(6) count; the third is depressed by 0.2e."""
    return ShiftedCommonCount(
        base=PoissonLaw(6.0),
        offsets=(1.0, 1.0, 1.0 - 0.2 * e),
        scales=(1.0, 1.0, 1.0),
    )


def _case_scenario(letter: str, H0: tuple, suffix: str = "") -> ScenarioSpec:
    config = UrnConfig(
        d=3,
        H0=H0,
        draw_mode=WITHOUT_REPLACEMENT,
        count_law=_case_count_law(),
        replacement_law=_CASE_LAWS[letter](),
    )
    return ScenarioSpec(
        name=f"case-{letter}{suffix}",
        config=config,
        horizon=10_000,
        replications=5_000,
    )


def _power_scenario(e: int) -> ScenarioSpec:
    config = UrnConfig(
        d=3,
        H0=(9, 9, 9),
        draw_mode=WITH_REPLACEMENT,
        count_law=_power_count_law(),
        replacement_law=power_replacement_law(e),
    )
    name = "equal-arms" if e == 0 else f"power-e{e}"
    return ScenarioSpec(
        name=name,
        config=config,
        horizon=1_000,
        replications=1_000 if e == 0 else 500,
        e=e,
    )


def builtin_scenarios() -> list:
    """All named scenarios: four replacement cases under two initial
    compositions, the identical-arms null, and the power family e=1..10."""
    specs = []
    for letter in ("a", "b", "c", "d"):
        specs.append(_case_scenario(letter, (6, 6, 6)))
        specs.append(_case_scenario(letter, (6, 3, 6), suffix="-636"))
    specs.append(_power_scenario(0))
    for e in range(1, 11):
        specs.append(_power_scenario(e))
    return specs


def scenario_by_name(name: str) -> ScenarioSpec:
    for spec in builtin_scenarios():
        if spec.name == name:
            return spec
    known = ", ".join(s.name for s in builtin_scenarios())
    raise KeyError(f"unknown scenario {name!r}; built-ins: {known}")


def power_family() -> list:
    return [_power_scenario(e) for e in range(1, 11)]


# ---------------------------------------------------------------------------
# Replication engine


def _replicate(args) -> ReplicationResult:
    config, horizon, base_seed, r, k0, alpha, min_draws, min_joint = args
    rng = Rng(base_seed, r)
    state = init(config)
    try:
        run(state, horizon, rng)
        z = normalized_composition(state)
        est = compute_estimates(state, min_joint=min_joint, allow_partial=True)
    except MmruError as exc:
        return ReplicationResult(
            replication=r, Z=None, m_hat=None, N_A=None, error=str(exc)
        )
    result = ReplicationResult(
        replication=r,
        Z=z,
        m_hat=est.m_hat,
        N_A=list(est.N_A),
        estimates=est,
    )
    if k0 is not None:
        try:
            test = run_test(state, k0, alpha=alpha, min_draws=min_draws, min_joint=min_joint)
            result.theta = test.theta
            result.p_value = test.p_value
            result.reject = test.reject
        except MmruError as exc:
            result.error = str(exc)
    return result


def _metadata(spec: ScenarioSpec, k0, alpha) -> dict:
    meta = {
        "scenario": spec.name,
        "e": spec.e,
        "base_seed": spec.base_seed,
        "horizon": spec.horizon,
        "replications": spec.replications,
        "d": spec.config.d,
        "draw_mode": spec.config.draw_mode,
        "true_m": list(spec.true_m),
        "true_t": spec.true_t,
        "clamp_deviations": clamp_deviations(spec.config.replacement_law),
        "library_version": __version__,
    }
    if k0 is not None:
        meta["k0"] = k0
        meta["alpha"] = alpha
    return meta


def wilson_interval(successes: int, trials: int, z: float = WILSON_Z) -> tuple:
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise ValueError("trials must be positive")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")
    phat = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (phat + z2 / (2.0 * trials)) / denom
    half = (
        z
        * math.sqrt(phat * (1.0 - phat) / trials + z2 / (4.0 * trials * trials))
        / denom
    )
    return (max(0.0, center - half), min(1.0, center + half))


def run_replications(
    spec: ScenarioSpec,
    parallelism: int = 1,
    k0: int = None,
    alpha: float = 0.05,
    min_draws: int = DEFAULT_MIN_DRAWS,
    min_joint: int = DEFAULT_MIN_JOINT,
) -> ReplicationSummary:
    """Run R independent replications and aggregate terminal compositions.

    Passing k0 runs the equal-means test on every replication and fills the
    power fields. Per-replication failures are collected as errors; the run
    only fails if every replication does.
    """
    if spec.replications < 1:
        raise ValueError("replications must be at least 1")
    if spec.horizon < 1:
        raise ValueError("horizon must be at least 1")
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    tasks = [
        (spec.config, spec.horizon, spec.base_seed, r, k0, alpha, min_draws, min_joint)
        for r in range(spec.replications)
    ]
    if parallelism == 1 or spec.replications == 1:
        results = [_replicate(t) for t in tasks]
    else:
        chunk = max(1, spec.replications // (4 * parallelism))
        with multiprocessing.Pool(processes=parallelism) as pool:
            results = pool.map(_replicate, tasks, chunksize=chunk)
    good = [res for res in results if res.Z is not None]
    if not good:
        first = results[0].error if results else "no replications"
        raise MmruError(f"all {spec.replications} replications failed; first: {first}")
    d = spec.config.d
    edges = [i / HIST_BINS for i in range(HIST_BINS + 1)]
    counts = [[0] * HIST_BINS for _ in range(d)]
    for res in good:
        for k in range(d):
            idx = min(int(res.Z[k] * HIST_BINS), HIST_BINS - 1)
            counts[k][idx] += 1
    summary = ReplicationSummary(
        scenario=spec.name,
        e=spec.e,
        d=d,
        horizon=spec.horizon,
        replications=spec.replications,
        base_seed=spec.base_seed,
        results=results,
        bin_edges=edges,
        histogram_counts=counts,
        errors=[res.error for res in results if res.error is not None],
        metadata=_metadata(spec, k0, alpha),
    )
    if k0 is not None:
        rejections = sum(1 for res in results if res.reject is True)
        low, high = wilson_interval(rejections, spec.replications)
        summary.rejections = rejections
        summary.power = rejections / spec.replications
        summary.wilson_low = low
        summary.wilson_high = high
    return summary


# ---------------------------------------------------------------------------
# Convergence diagnostics


@dataclass
class ConvergenceReport:
    """Single-path growth ratios at increasing checkpoints.

    Quantities whose limits the theory pins down: S_n/n, per-color H_nk and
    draw counts against n^(m_k/m_1), and the vanishing compositions scaled
    back up by n^(1 - m_k/m_1).
    """

    scenario: str
    exponents: list
    checkpoints: list
    s_over_n: list
    h_ratio: list
    draw_ratio: list
    z_scaled: list
    converged: bool

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "exponents": list(self.exponents),
            "checkpoints": list(self.checkpoints),
            "s_over_n": list(self.s_over_n),
            "h_ratio": [list(row) for row in self.h_ratio],
            "draw_ratio": [list(row) for row in self.draw_ratio],
            "z_scaled": [list(row) for row in self.z_scaled],
            "converged": self.converged,
        }


def _rel_change(prev: float, last: float) -> float:
    scale = max(abs(prev), abs(last))
    if scale < 1e-12:
        return 0.0
    return abs(last - prev) / scale


def convergence_diagnostics(
    spec: ScenarioSpec, checkpoints: list, stream: int = 0
) -> ConvergenceReport:
    """Track one path's growth ratios; flag convergence when the last two
    checkpoints agree within 10% relative on every tracked quantity."""
    points = sorted(set(int(n) for n in checkpoints))
    if not points or points[0] < 1:
        raise ValueError("checkpoints must be positive stage indices")
    d = spec.config.d
    m1 = max(spec.true_m)
    exponents = [mk / m1 for mk in spec.true_m]
    rng = Rng(spec.base_seed, stream)
    state = init(spec.config)
    done = 0
    s_over_n, h_ratio, draw_ratio, z_scaled = [], [], [], []
    for n in points:
        run(state, n - done, rng)
        done = n
        z = normalized_composition(state)
        s_over_n.append(state.S / n)
        h_ratio.append([state.H[k] / n ** exponents[k] for k in range(d)])
        draw_ratio.append([state.N_A[k] / n ** exponents[k] for k in range(d)])
        z_scaled.append([n ** (1.0 - exponents[k]) * z[k] for k in range(d)])
    converged = False
    if len(points) >= 2:
        pairs = [(s_over_n[-2], s_over_n[-1])]
        for k in range(d):
            pairs.append((h_ratio[-2][k], h_ratio[-1][k]))
            pairs.append((draw_ratio[-2][k], draw_ratio[-1][k]))
            pairs.append((z_scaled[-2][k], z_scaled[-1][k]))
        converged = all(_rel_change(a, b) < 0.10 for a, b in pairs)
    return ConvergenceReport(
        scenario=spec.name,
        exponents=exponents,
        checkpoints=points,
        s_over_n=s_over_n,
        h_ratio=h_ratio,
        draw_ratio=draw_ratio,
        z_scaled=z_scaled,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# Power curve


@dataclass
class PowerPoint:
    e: int
    m2_minus_m3: float
    replications: int
    rejections: int
    power: float
    wilson_low: float
    wilson_high: float

    def to_dict(self) -> dict:
        return {
            "e": self.e,
            "m2_minus_m3": self.m2_minus_m3,
            "replications": self.replications,
            "rejections": self.rejections,
            "power": self.power,
            "wilson_low": self.wilson_low,
            "wilson_high": self.wilson_high,
        }


def power_curve(
    family: list,
    alpha: float = 0.05,
    k0: int = None,
    parallelism: int = 1,
) -> list:
    """Empirical rejection rate of the equal-means test across a scenario
    family, with 95% Wilson intervals. m2_minus_m3 reports the true gap
    between the second and third reinforcement means, clamp included."""
    points = []
    for spec in family:
        arms = k0 if k0 is not None else spec.config.d
        summary = run_replications(spec, parallelism=parallelism, k0=arms, alpha=alpha)
        points.append(
            PowerPoint(
                e=spec.e,
                m2_minus_m3=spec.true_m[1] - spec.true_m[2],
                replications=spec.replications,
                rejections=summary.rejections,
                power=summary.power,
                wilson_low=summary.wilson_low,
                wilson_high=summary.wilson_high,
            )
        )
    return points


# ---------------------------------------------------------------------------
# Exports


def _fmt(value) -> str:
    """CSV cell: 12 significant digits for floats, empty for None."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _round12(obj):
    """Round every float to 12 significant digits, recursively."""
    if isinstance(obj, float):
        return float(f"{obj:.12g}")
    if isinstance(obj, list):
        return [_round12(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _round12(v) for k, v in obj.items()}
    return obj


def _write_text(path, text: str) -> None:
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as exc:
        raise MmruError(f"cannot write {path}: {exc}") from exc


def write_metadata_sidecar(path, metadata: dict) -> None:
    """JSON sidecar at <path>.meta.json describing how the data was produced."""
    _write_text(f"{path}.meta.json", json.dumps(_round12(metadata), indent=2) + "\n")


def export_csv(summary: ReplicationSummary, path) -> None:
    """Per-replication table; metadata goes to a <path>.meta.json sidecar."""
    d = summary.d
    header = (
        ["scenario", "e", "replication", "n"]
        + [f"Z_{k + 1}" for k in range(d)]
        + [f"m_hat_{k + 1}" for k in range(d)]
        + [f"N_A_{k + 1}" for k in range(d)]
        + ["theta", "p_value", "reject"]
    )
    lines = [",".join(header)]
    for res in summary.results:
        if res.Z is None:
            continue
        row = [summary.scenario, _fmt(summary.e), str(res.replication), str(summary.horizon)]
        row += [_fmt(z) for z in res.Z]
        row += [_fmt(m) for m in res.m_hat]
        row += [_fmt(na) for na in res.N_A]
        row += [_fmt(res.theta), _fmt(res.p_value), _fmt(res.reject)]
        lines.append(",".join(row))
    _write_text(path, "\n".join(lines) + "\n")
    write_metadata_sidecar(path, summary.metadata)


def export_histograms_csv(summary: ReplicationSummary, path) -> None:
    """Histogram table: one row per color and bin; colors numbered from 1."""
    lines = ["scenario,color,bin_left,bin_right,count"]
    for k in range(summary.d):
        for i in range(HIST_BINS):
            lines.append(
                ",".join(
                    [
                        summary.scenario,
                        str(k + 1),
                        _fmt(summary.bin_edges[i]),
                        _fmt(summary.bin_edges[i + 1]),
                        str(summary.histogram_counts[k][i]),
                    ]
                )
            )
    _write_text(path, "\n".join(lines) + "\n")
    write_metadata_sidecar(path, summary.metadata)


def export_power_csv(points: list, path, metadata: dict = None) -> None:
    lines = ["e,m2_minus_m3,replications,rejections,power,wilson_low,wilson_high"]
    for pt in points:
        lines.append(
            ",".join(
                [
                    str(pt.e),
                    _fmt(pt.m2_minus_m3),
                    str(pt.replications),
                    str(pt.rejections),
                    _fmt(pt.power),
                    _fmt(pt.wilson_low),
                    _fmt(pt.wilson_high),
                ]
            )
        )
    _write_text(path, "\n".join(lines) + "\n")
    write_metadata_sidecar(path, metadata if metadata is not None else {})


def export_json(summary: ReplicationSummary, path) -> None:
    """Full summary with metadata embedded; floats at 12 significant digits."""
    _write_text(path, json.dumps(_round12(summary.to_dict()), indent=2) + "\n")


def export_power_json(points: list, path, metadata: dict = None) -> None:
    payload = {
        "metadata": metadata if metadata is not None else {},
        "points": [pt.to_dict() for pt in points],
    }
    _write_text(path, json.dumps(_round12(payload), indent=2) + "\n")


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
