"""Exact sampling kernels and pmfs for every distribution the urn draws from.

All samplers are inverse-CDF: each variate consumes exactly one uniform from
the stream (none when the outcome is forced), which keeps replay deterministic
and makes sequences independent of buffering or platform. Rejection samplers
are deliberately avoided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ScenarioError

# Probabilities must sum to 1 within this tolerance.
PROB_TOL = 1e-12

CountVector = list  # length-d list of nonnegative integers


class Rng:
    """Deterministic uniform stream for one replication.

    (seed, stream_id) maps to PCG64 seeded through
    SeedSequence(entropy=seed, spawn_key=(stream_id,)). Spawn-keyed
    SeedSequence streams are the generator family's documented mechanism for
    statistically independent parallel streams, and the same pair always
    reproduces the same sequence regardless of parallelism.

    Uniforms are drawn in blocks and handed out one at a time; the block size
    does not affect the sequence.
    """

    BLOCK = 4096

    __slots__ = ("seed", "stream_id", "_gen", "_buf", "_pos")

    def __init__(self, seed: int, stream_id: int = 0):
        if not (0 <= int(seed) < 2**64):
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        if not (0 <= int(stream_id) < 2**64):
            raise ValueError(f"stream_id must be a 64-bit unsigned integer, got {stream_id}")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(ss))
        self._buf: list = []
        self._pos = 0

    def next_uniform(self) -> float:
        """One uniform in [0, 1)."""
        i = self._pos
        if i >= len(self._buf):
            self._buf = self._gen.random(self.BLOCK).tolist()
            i = 0
        self._pos = i + 1
        return self._buf[i]

    def uniforms(self, count: int) -> list:
        return [self.next_uniform() for _ in range(count)]


# ---------------------------------------------------------------------------
# Elementary laws


@dataclass
class DiscreteLaw:
    """Finite discrete law given by support values and probabilities."""

    values: tuple
    probabilities: tuple
    _cum: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.values = tuple(self.values)
        self.probabilities = tuple(float(p) for p in self.probabilities)
        if len(self.values) == 0:
            raise ScenarioError("values", "support must be nonempty")
        if len(self.values) != len(self.probabilities):
            raise ScenarioError("probabilities", "length must match support")
        if any(p < 0 for p in self.probabilities):
            raise ScenarioError("probabilities", "entries must be nonnegative")
        total = math.fsum(self.probabilities)
        if abs(total - 1.0) > PROB_TOL:
            raise ScenarioError("probabilities", f"must sum to 1, got {total!r}")
        cum = []
        acc = 0.0
        for p in self.probabilities:
            acc += p
            cum.append(acc)
        cum[-1] = 1.0  # guard the walk against rounding at the top
        self._cum = tuple(cum)

    def sample(self, rng: Rng):
        if len(self.values) == 1:
            return self.values[0]
        u = rng.next_uniform()
        for v, c in zip(self.values, self._cum):
            if u < c:
                return v
        return self.values[-1]

    def pmf_pairs(self):
        return zip(self.values, self.probabilities)

    def min_value(self):
        return min(self.values)

    def max_value(self):
        return max(self.values)


@dataclass
class PoissonLaw:
    """Poisson count law, sampled by exact sequential inversion from 0."""

    mean: float

    def __post_init__(self):
        self.mean = float(self.mean)
        if not (self.mean > 0):
            raise ScenarioError("mean", "Poisson mean must be positive")

    def sample(self, rng: Rng) -> int:
        u = rng.next_uniform()
        lam = self.mean
        p = math.exp(-lam)
        cum = p
        y = 0
        while u >= cum:
            y += 1
            p *= lam / y
            cum += p
            if p == 0.0:  # ran off the representable tail
                break
        return y

    def pmf_pairs(self):
        """Enumerate (y, pmf) until the tail is numerically negligible."""
        lam = self.mean
        p = math.exp(-lam)
        y = 0
        while True:
            yield y, p
            y += 1
            p *= lam / y
            if y > lam and p < 1e-20:
                return

    def min_value(self):
        return 0


# ---------------------------------------------------------------------------
# Draw-count law


@dataclass
class DrawCountLaw:
    """Law of the number of balls drawn per stage.

    Support above the current urn total S_n is clamped onto S_n with its
    probability mass preserved, so the effective support is always inside
    {1, ..., min(cap, S_n)}.
    """

    support: tuple
    probabilities: tuple
    cap: int = 0
    _cum: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.support = tuple(int(v) for v in self.support)
        self.probabilities = tuple(float(p) for p in self.probabilities)
        if len(self.support) == 0:
            raise ScenarioError("support", "must be nonempty")
        if any(v < 1 for v in self.support):
            raise ScenarioError("support", "draw counts must be positive integers")
        if len(set(self.support)) != len(self.support):
            raise ScenarioError("support", "values must be distinct")
        if len(self.support) != len(self.probabilities):
            raise ScenarioError("probabilities", "length must match support")
        if any(p < 0 for p in self.probabilities):
            raise ScenarioError("probabilities", "entries must be nonnegative")
        total = math.fsum(self.probabilities)
        if abs(total - 1.0) > PROB_TOL:
            raise ScenarioError("probabilities", f"must sum to 1, got {total!r}")
        if self.cap == 0:
            self.cap = max(self.support)
        self.cap = int(self.cap)
        if max(self.support) > self.cap:
            raise ScenarioError("cap", "support may not exceed the cap")
        cum = []
        acc = 0.0
        for p in self.probabilities:
            acc += p
            cum.append(acc)
        cum[-1] = 1.0
        self._cum = tuple(cum)

    def mean(self) -> float:
        return math.fsum(v * p for v, p in zip(self.support, self.probabilities))

    def second_moment(self) -> float:
        return math.fsum(v * v * p for v, p in zip(self.support, self.probabilities))


def sample_draw_count(law: DrawCountLaw, S_n: int, rng: Rng) -> int:
    """Draw N for the next stage, clamping support above S_n onto S_n."""
    if S_n < 1:
        raise ValueError(f"urn total must be at least 1, got {S_n}")
    support = law.support
    if len(support) == 1 or support[0] >= S_n:
        # single atom, or every support point clamps to the same value
        return min(support[0], S_n)
    u = rng.next_uniform()
    for v, c in zip(support, law._cum):
        if u < c:
            return min(v, S_n)
    return min(support[-1], S_n)


# ---------------------------------------------------------------------------
# Hypergeometric / multinomial kernels


def _log_comb(n: float, k: float) -> float:
    return math.lgamma(n + 1.0) - math.lgamma(k + 1.0) - math.lgamma(n - k + 1.0)


def sample_hypergeometric(successes: int, total: int, draws: int, rng: Rng) -> int:
    """Exact inverse-CDF draw of the number of successes in `draws` removals.

    The support endpoint pmf uses a running product for the common case
    (support starts at 0 and draws is small) and log-gamma otherwise; the walk
    then follows the ratio recurrence. Exactly one uniform is consumed unless
    the outcome is forced.
    """
    if not (0 <= successes <= total):
        raise ValueError(f"need 0 <= successes <= total, got {successes}/{total}")
    if not (0 <= draws <= total):
        raise ValueError(f"need 0 <= draws <= total, got draws={draws}, total={total}")
    fail = total - successes
    lo = draws - fail if draws > fail else 0
    hi = draws if draws < successes else successes
    if lo == hi:
        return lo
    u = rng.next_uniform()
    if lo == 0 and draws <= 64:
        p = 1.0
        for i in range(draws):
            p *= (fail - i) / (total - i)
    else:
        p = math.exp(
            _log_comb(successes, lo) + _log_comb(fail, draws - lo) - _log_comb(total, draws)
        )
    cum = p
    x = lo
    while u >= cum and x < hi:
        p *= ((successes - x) * (draws - x)) / ((x + 1) * (fail - draws + x + 1))
        x += 1
        cum += p
    return x


def sample_multivariate_hypergeometric(H: CountVector, draws: int, rng: Rng) -> CountVector:
    """Draw color counts for `draws` balls removed without replacement.

    Sequential conditioning: x_1 ~ Hypergeometric(H_1, S, draws), then recurse
    on the remaining colors and balls. Exact for the joint multivariate law.
    """
    total = 0
    for h in H:
        if h < 0:
            raise ValueError("counts must be nonnegative")
        total += h
    if draws > total:
        raise ValueError(f"draws {draws} exceeds total {total}")
    d = len(H)
    x = [0] * d
    if d == 0:
        return x
    rem_total = total
    rem_draws = draws
    for k in range(d - 1):
        if rem_draws == 0:
            return x
        xk = sample_hypergeometric(H[k], rem_total, rem_draws, rng)
        x[k] = xk
        rem_total -= H[k]
        rem_draws -= xk
    x[d - 1] = rem_draws
    return x


def pmf_multivariate_hypergeometric(H: CountVector, draws: int, x: CountVector) -> float:
    """prod_k C(H_k, x_k) / C(S, draws); 0 outside the support."""
    total = sum(H)
    if draws > total or any(h < 0 for h in H):
        raise ValueError("invalid composition or draw count")
    if len(x) != len(H):
        return 0.0
    s = 0
    for hk, xk in zip(H, x):
        if xk < 0 or xk > hk:
            return 0.0
        s += xk
    if s != draws:
        return 0.0
    log_p = -_log_comb(total, draws)
    for hk, xk in zip(H, x):
        log_p += _log_comb(hk, xk)
    return math.exp(log_p)


def sample_binomial(n: int, prob: float, rng: Rng) -> int:
    """Exact inverse-CDF binomial draw (building block for the multinomial)."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0 or prob <= 0.0:
        return 0
    if prob >= 1.0:
        return n
    # keep the start-point pmf representable: flip to the smaller tail, and
    # split very large n so q**n never underflows
    if prob > 0.5:
        return n - sample_binomial(n, 1.0 - prob, rng)
    if n > 900:
        half = n // 2
        return sample_binomial(half, prob, rng) + sample_binomial(n - half, prob, rng)
    u = rng.next_uniform()
    q = 1.0 - prob
    ratio = prob / q
    p = q**n
    cum = p
    x = 0
    while u >= cum and x < n:
        p *= ratio * (n - x) / (x + 1)
        x += 1
        cum += p
    return x


def _validate_probability_vector(p) -> None:
    if any(pk < 0 for pk in p):
        raise ValueError("probabilities must be nonnegative")
    total = math.fsum(p)
    if abs(total - 1.0) > PROB_TOL:
        raise ValueError(f"probabilities must sum to 1, got {total!r}")


def sample_multinomial(p, draws: int, rng: Rng) -> CountVector:
    """Exact multinomial draw via sequential conditional binomials."""
    _validate_probability_vector(p)
    d = len(p)
    x = [0] * d
    rem = draws
    for k in range(d - 1):
        if rem == 0:
            return x
        rest = math.fsum(p[k:])  # exact conditioning mass, keeps tail colors honest
        if rest <= 0.0:
            return x
        cond = p[k] / rest
        if cond > 1.0:
            cond = 1.0
        xk = sample_binomial(rem, cond, rng)
        x[k] = xk
        rem -= xk
    x[d - 1] = rem
    return x


def pmf_multinomial(p, draws: int, x: CountVector) -> float:
    """draws!/prod x_k! * prod p_k^{x_k}; 0 outside the support."""
    _validate_probability_vector(p)
    if len(x) != len(p):
        return 0.0
    s = 0
    for xk in x:
        if xk < 0:
            return 0.0
        s += xk
    if s != draws:
        return 0.0
    log_p = math.lgamma(draws + 1.0)
    for pk, xk in zip(p, x):
        if xk > 0:
            if pk == 0.0:
                return 0.0
            log_p += xk * math.log(pk) - math.lgamma(xk + 1.0)
    return math.exp(log_p)


# ---------------------------------------------------------------------------
# Replacement laws

BaseCountLaw = Union[DiscreteLaw, PoissonLaw]


@dataclass
class PointMass:
    """Deterministic replacement vector."""

    values: tuple

    def __post_init__(self):
        self.values = tuple(float(v) for v in self.values)
        if any(v < 1 for v in self.values):
            raise ScenarioError("values", "A must be >= 1 for every color")

    @property
    def dimension(self) -> int:
        return len(self.values)


@dataclass
class IndependentDiscrete:
    """Independent finite marginal per color."""

    marginals: tuple

    def __post_init__(self):
        self.marginals = tuple(self.marginals)
        for k, law in enumerate(self.marginals):
            if law.min_value() < 1:
                raise ScenarioError(f"marginals[{k}]", "A must be >= 1 for every color")

    @property
    def dimension(self) -> int:
        return len(self.marginals)


@dataclass
class ShiftedMultinomial:
    """A_k = offset_k + scale_k * Y_k with Y ~ Multinomial(trials, pvec).

    Components are correlated through the shared multinomial total.
    """

    trials: int
    pvec: tuple
    offsets: tuple
    scales: tuple

    def __post_init__(self):
        self.trials = int(self.trials)
        self.pvec = tuple(float(p) for p in self.pvec)
        self.offsets = tuple(float(o) for o in self.offsets)
        self.scales = tuple(float(s) for s in self.scales)
        if self.trials < 1:
            raise ScenarioError("trials", "must be a positive integer")
        try:
            _validate_probability_vector(self.pvec)
        except ValueError as exc:
            raise ScenarioError("pvec", str(exc)) from None
        if not (len(self.pvec) == len(self.offsets) == len(self.scales)):
            raise ScenarioError("offsets", "pvec, offsets, scales must share one length")
        for k, (o, s) in enumerate(zip(self.offsets, self.scales)):
            lo = min(o, o + s * self.trials)
            if lo < 1:
                raise ScenarioError(f"offsets[{k}]", "A must be >= 1 for every color")

    @property
    def dimension(self) -> int:
        return len(self.pvec)


@dataclass
class ShiftedCommonCount:
    """A_k = max(1, offset_k + scale_k * Y) with one shared count Y per stage.

    The clamp at 1 keeps every realizable value inside the model's support
    even when an affine image of Y dips below 1; moments account for it.
    """

    base: BaseCountLaw
    offsets: tuple
    scales: tuple

    def __post_init__(self):
        self.offsets = tuple(float(o) for o in self.offsets)
        self.scales = tuple(float(s) for s in self.scales)
        if len(self.offsets) != len(self.scales):
            raise ScenarioError("scales", "offsets and scales must share one length")

    @property
    def dimension(self) -> int:
        return len(self.offsets)


ReplacementLaw = Union[PointMass, IndependentDiscrete, ShiftedMultinomial, ShiftedCommonCount]


def sample_replacement(law: ReplacementLaw, rng: Rng) -> list:
    """One replacement vector A with every component >= 1."""
    if isinstance(law, PointMass):
        return list(law.values)
    if isinstance(law, IndependentDiscrete):
        return [float(m.sample(rng)) for m in law.marginals]
    if isinstance(law, ShiftedMultinomial):
        y = sample_multinomial(law.pvec, law.trials, rng)
        return [o + s * yk for o, s, yk in zip(law.offsets, law.scales, y)]
    if isinstance(law, ShiftedCommonCount):
        y = law.base.sample(rng)
        return [max(1.0, o + s * y) for o, s in zip(law.offsets, law.scales)]
    raise TypeError(f"unknown replacement law {type(law).__name__}")


def law_moments(law: ReplacementLaw):
    """Closed-form (m, q, q_cross) with m_k=E[A_k], q_k=E[A_k^2], q_cross[k][s]=E[A_k A_s].

    q_cross carries q on its diagonal. ShiftedCommonCount moments are computed
    by summation over the base law's enumerated pmf (truncated where the tail
    is below 1e-20), which accounts exactly for the clamp at 1.
    """
    if isinstance(law, PointMass):
        v = law.values
        m = list(v)
        q = [a * a for a in v]
        cross = [[a * b for b in v] for a in v]
        return m, q, cross
    if isinstance(law, IndependentDiscrete):
        m, q = [], []
        for lawk in law.marginals:
            m.append(math.fsum(x * p for x, p in lawk.pmf_pairs()))
            q.append(math.fsum(x * x * p for x, p in lawk.pmf_pairs()))
        d = len(m)
        cross = [[q[k] if k == s else m[k] * m[s] for s in range(d)] for k in range(d)]
        return m, q, cross
    if isinstance(law, ShiftedMultinomial):
        T, p = law.trials, law.pvec
        d = len(p)
        ey = [T * pk for pk in p]
        ey2 = [T * pk * (1 - pk) + (T * pk) ** 2 for pk in p]
        m = [o + s * e for o, s, e in zip(law.offsets, law.scales, ey)]
        q = [
            o * o + 2 * o * s * e + s * s * e2
            for o, s, e, e2 in zip(law.offsets, law.scales, ey, ey2)
        ]
        cross = [[0.0] * d for _ in range(d)]
        for k in range(d):
            cross[k][k] = q[k]
            for s in range(k + 1, d):
                eyks = T * (T - 1) * p[k] * p[s]
                ok, sk = law.offsets[k], law.scales[k]
                os_, ss = law.offsets[s], law.scales[s]
                val = ok * os_ + ok * ss * ey[s] + os_ * sk * ey[k] + sk * ss * eyks
                cross[k][s] = cross[s][k] = val
        return m, q, cross
    if isinstance(law, ShiftedCommonCount):
        d = law.dimension
        m = [0.0] * d
        q = [0.0] * d
        cross = [[0.0] * d for _ in range(d)]
        for y, p in law.base.pmf_pairs():
            a = [max(1.0, o + s * y) for o, s in zip(law.offsets, law.scales)]
            for k in range(d):
                m[k] += p * a[k]
                q[k] += p * a[k] * a[k]
                for s in range(k + 1, d):
                    cross[k][s] += p * a[k] * a[s]
        for k in range(d):
            cross[k][k] = q[k]
            for s in range(k + 1, d):
                cross[s][k] = cross[k][s]
        return m, q, cross
    raise TypeError(f"unknown replacement law {type(law).__name__}")


def clamp_deviations(law: ReplacementLaw) -> list:
    """Per-color mean lift introduced by the max(1, .) clamp; zeros if no clamping."""
    if not isinstance(law, ShiftedCommonCount):
        return [0.0] * law.dimension
    m, _, _ = law_moments(law)
    ey = math.fsum(y * p for y, p in law.base.pmf_pairs())
    return [mk - (o + s * ey) for mk, o, s in zip(m, law.offsets, law.scales)]


def law_dimension(law: ReplacementLaw) -> int:
    return law.dimension
