"""State machine for the reinforced urn.

One step draws the stage size N, draws N balls jointly by color (without
replacement from the counts, or with replacement from the proportions),
draws the replacement vector A independently of history, adds A_k new balls
of color k per drawn color-k ball, and feeds every running sum the
estimators later read.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ScenarioError
from .sampling import (
    DrawCountLaw,
    ReplacementLaw,
    Rng,
    law_dimension,
    sample_draw_count,
    sample_multinomial,
    sample_multivariate_hypergeometric,
    sample_replacement,
)

WITHOUT_REPLACEMENT = "without_replacement"
WITH_REPLACEMENT = "with_replacement"


@dataclass
class UrnConfig:
    d: int
    H0: tuple
    draw_mode: str
    count_law: DrawCountLaw
    replacement_law: ReplacementLaw
    compensated_sums: bool = False

    def __post_init__(self):
        self.d = int(self.d)
        self.H0 = tuple(int(h) for h in self.H0)
        if self.d < 2:
            raise ScenarioError("d", "at least two colors required")
        if len(self.H0) != self.d:
            raise ScenarioError("initial_composition", f"expected {self.d} entries")
        if any(h < 0 for h in self.H0):
            raise ScenarioError("initial_composition", "entries must be nonnegative integers")
        if sum(self.H0) < 1:
            raise ScenarioError("initial_composition", "urn must start nonempty")
        if self.draw_mode not in (WITHOUT_REPLACEMENT, WITH_REPLACEMENT):
            raise ScenarioError("draw_mode", f"unknown mode {self.draw_mode!r}")
        if law_dimension(self.replacement_law) != self.d:
            raise ScenarioError("replacement_law", f"dimension must be {self.d}")


@dataclass
class RunningSums:
    """Every accumulator the estimators need, updated once per stage.

    Matrix entries are meaningful off the diagonal only (pairs k != s);
    diagonals stay zero. sum_AAX[k][s] is the asymmetric sum A_k A_s X_k.
    """

    d: int
    sum_N: int = 0
    sum_N2: int = 0
    sum_ratio: list = field(default_factory=list)
    sum_AX: list = field(default_factory=list)
    sum_A2X: list = field(default_factory=list)
    sum_AAX: list = field(default_factory=list)
    sum_XX: list = field(default_factory=list)
    sum_AAXX: list = field(default_factory=list)
    compensated: bool = False
    _carry: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        d = self.d
        if not self.sum_ratio:
            self.sum_ratio = [0.0] * d
            self.sum_AX = [0.0] * d
            self.sum_A2X = [0.0] * d
            self.sum_AAX = [[0.0] * d for _ in range(d)]
            self.sum_XX = [[0] * d for _ in range(d)]
            self.sum_AAXX = [[0.0] * d for _ in range(d)]

    @property
    def total_draws(self) -> int:
        return self.sum_N

    @property
    def weighted_additions(self) -> float:
        return sum(self.sum_AX)


@dataclass
class StageRecord:
    n: int
    N: int
    X: list
    A: list
    Z_after: list


@dataclass
class UrnState:
    config: UrnConfig
    n: int
    H: list
    S: float
    N_A: list
    sums: RunningSums


def init(config: UrnConfig) -> UrnState:
    """Fresh state at stage 0: H = H0, every running sum zero."""
    d = config.d
    return UrnState(
        config=config,
        n=0,
        H=[float(h) for h in config.H0],
        S=float(sum(config.H0)),
        N_A=[0] * d,
        sums=RunningSums(d=d, compensated=config.compensated_sums),
    )


def normalized_composition(state: UrnState) -> list:
    """Z = H / S; entries in [0, 1] summing to 1 up to rounding."""
    if not state.S > 0:
        raise ValueError("urn is empty")
    s = state.S
    return [h / s for h in state.H]


def _kahan_add(sums: RunningSums, key, value, current):
    # compensated add for one scalar cell; key identifies the accumulator
    carry = sums._carry.get(key, 0.0)
    y = value - carry
    t = current + y
    sums._carry[key] = (t - current) - y
    return t


def step(state: UrnState, rng: Rng, want_record: bool = False):
    """Advance one stage in place; returns (state, StageRecord | None)."""
    cfg = state.config
    d = cfg.d
    H = state.H
    N = sample_draw_count(cfg.count_law, int(state.S), rng)

    if cfg.draw_mode == WITHOUT_REPLACEMENT:
        counts = []
        for h in H:
            hi = int(h)
            if h != hi:
                raise ValueError(
                    "without-replacement drawing requires integer counts; "
                    f"got H = {H}"
                )
            counts.append(hi)
        X = sample_multivariate_hypergeometric(counts, N, rng)
    else:
        s = state.S
        X = sample_multinomial([h / s for h in H], N, rng)

    A = sample_replacement(cfg.replacement_law, rng)

    sums = state.sums
    N_A = state.N_A
    sum_ratio = sums.sum_ratio
    sum_AX = sums.sum_AX
    sum_A2X = sums.sum_A2X
    sums.sum_N += N
    sums.sum_N2 += N * N

    if not sums.compensated:
        for k in range(d):
            xk = X[k]
            if xk == 0:
                continue
            ak = A[k]
            w = ak * xk
            H[k] += w
            N_A[k] += xk
            sum_ratio[k] += xk / N
            sum_AX[k] += w
            sum_A2X[k] += ak * w
            row = sums.sum_AAX[k]
            for s_ in range(d):
                if s_ != k:
                    row[s_] += w * A[s_]
        for k in range(d - 1):
            xk = X[k]
            if xk == 0:
                continue
            for s_ in range(k + 1, d):
                xs = X[s_]
                if xs == 0:
                    continue
                xx = xk * xs
                aaxx = A[k] * A[s_] * xx
                sums.sum_XX[k][s_] += xx
                sums.sum_XX[s_][k] += xx
                sums.sum_AAXX[k][s_] += aaxx
                sums.sum_AAXX[s_][k] += aaxx
    else:
        for k in range(d):
            xk = X[k]
            if xk == 0:
                continue
            ak = A[k]
            w = ak * xk
            H[k] += w
            N_A[k] += xk
            sum_ratio[k] = _kahan_add(sums, ("ratio", k), xk / N, sum_ratio[k])
            sum_AX[k] = _kahan_add(sums, ("ax", k), w, sum_AX[k])
            sum_A2X[k] = _kahan_add(sums, ("a2x", k), ak * w, sum_A2X[k])
            row = sums.sum_AAX[k]
            for s_ in range(d):
                if s_ != k:
                    row[s_] = _kahan_add(sums, ("aax", k, s_), w * A[s_], row[s_])
        for k in range(d - 1):
            xk = X[k]
            if xk == 0:
                continue
            for s_ in range(k + 1, d):
                xs = X[s_]
                if xs == 0:
                    continue
                xx = xk * xs
                aaxx = A[k] * A[s_] * xx
                sums.sum_XX[k][s_] += xx
                sums.sum_XX[s_][k] += xx
                v = _kahan_add(sums, ("aaxx", k, s_), aaxx, sums.sum_AAXX[k][s_])
                sums.sum_AAXX[k][s_] = v
                sums.sum_AAXX[s_][k] = v

    # keep S identical to sum(H) instead of accumulating separately
    s_new = 0.0
    for h in H:
        s_new += h
    state.S = s_new
    state.n += 1

    record = None
    if want_record:
        record = StageRecord(
            n=state.n, N=N, X=list(X), A=list(A), Z_after=[h / s_new for h in H]
        )
    return state, record


def run(state: UrnState, steps: int, rng: Rng, record_every: int = 0):
    """Apply `steps` stages; record stages whose index divides record_every."""
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    records = []
    if record_every > 0:
        for _ in range(steps):
            want = (state.n + 1) % record_every == 0
            _, rec = step(state, rng, want_record=want)
            if rec is not None:
                records.append(rec)
    else:
        for _ in range(steps):
            step(state, rng)
    return state, records


def write_trajectory(records, d: int, path) -> None:
    """CSV export: n,N,X_1..X_d,A_1..A_d,Z_1..Z_d with 12 significant digits."""
    cols = (
        ["n", "N"]
        + [f"X_{k + 1}" for k in range(d)]
        + [f"A_{k + 1}" for k in range(d)]
        + [f"Z_{k + 1}" for k in range(d)]
    )
    lines = [",".join(cols)]
    for rec in records:
        row = [str(rec.n), str(rec.N)]
        row += [str(int(x)) for x in rec.X]
        row += [f"{a:.12g}" for a in rec.A]
        row += [f"{z:.12g}" for z in rec.Z_after]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
