"""Asymptotic covariance matrices and the chi-square test on payoff means.

The centered payoff estimators, scaled by the square root of their draw
counts, are jointly asymptotically normal with a covariance that couples the
maximal-mean arms and leaves the rest independent. This module builds that
covariance from plug-in moment estimates, derives the covariance of the
consecutive-difference vector used by the equal-means test, and evaluates the
resulting chi-square statistic. Matrix dimensions never exceed the number of
colors, so all linear algebra is direct and single-threaded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import (
    DegenerateCovariance,
    InsufficientDraws,
    MmruError,
    NotPositiveDefinite,
)
from .estimators import DEFAULT_MIN_JOINT, MomentEstimates, compute_estimates
from .urn import UrnState

# minimum draws per tested arm before the quadratic form is meaningful
DEFAULT_MIN_DRAWS = 30

# 1-norm condition estimate beyond this counts as singular
CONDITION_LIMIT = 1e12

# Cholesky pivot below this fraction of the largest diagonal fails
PIVOT_TOL = 1e-12

NULL_REGIME = "null"
ALT_REGIME = "alt"


class SymMatrix:
    """Symmetric real matrix storing only the upper triangle.

    Symmetry is exact by construction: get/set mirror (i, j) and (j, i) onto
    the same slot, so round-tripping can never desymmetrize.
    """

    __slots__ = ("dimension", "_data")

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError("dimension must be at least 1")
        self.dimension = dimension
        self._data = [0.0] * (dimension * (dimension + 1) // 2)

    def _slot(self, i: int, j: int) -> int:
        if not (0 <= i < self.dimension and 0 <= j < self.dimension):
            raise IndexError(f"index ({i}, {j}) outside {self.dimension}x{self.dimension}")
        if i > j:
            i, j = j, i
        return i * self.dimension - i * (i - 1) // 2 + (j - i)

    def get(self, i: int, j: int) -> float:
        return self._data[self._slot(i, j)]

    def set(self, i: int, j: int, value: float) -> None:
        self._data[self._slot(i, j)] = float(value)

    def to_lists(self) -> list:
        """Full matrix as nested lists (row-major)."""
        return [
            [self.get(i, j) for j in range(self.dimension)]
            for i in range(self.dimension)
        ]

    @classmethod
    def from_lists(cls, rows: list) -> "SymMatrix":
        """Build from a full square matrix, averaging tiny asymmetries away."""
        dim = len(rows)
        mat = cls(dim)
        for i in range(dim):
            if len(rows[i]) != dim:
                raise ValueError("matrix must be square")
            for j in range(i, dim):
                mat.set(i, j, 0.5 * (rows[i][j] + rows[j][i]))
        return mat

    def max_abs_diag(self) -> float:
        return max(abs(self.get(i, i)) for i in range(self.dimension))

    def norm1(self) -> float:
        """Maximum absolute column sum."""
        return max(
            sum(abs(self.get(i, j)) for i in range(self.dimension))
            for j in range(self.dimension)
        )

    def matvec(self, vec: list) -> list:
        if len(vec) != self.dimension:
            raise ValueError("vector length mismatch")
        return [
            math.fsum(self.get(i, j) * vec[j] for j in range(self.dimension))
            for i in range(self.dimension)
        ]

    def __repr__(self) -> str:
        return f"SymMatrix({self.to_lists()!r})"


def _require(value, what: str) -> float:
    if value is None:
        raise MmruError(f"{what} is undefined; cannot build covariance")
    return value


def _restrict(est: MomentEstimates, arms: list) -> MomentEstimates:
    """Project the estimates onto the given arm indices, in the given order."""
    return MomentEstimates(
        n=est.n,
        mu_hat=est.mu_hat,
        qN_hat=est.qN_hat,
        nu_hat=[est.nu_hat[a] for a in arms],
        m_hat=[est.m_hat[a] for a in arms],
        q_hat=[est.q_hat[a] for a in arms],
        q_cross_hat=[[est.q_cross_hat[a][b] for b in arms] for a in arms],
        q_cross_provenance=[
            [est.q_cross_provenance[a][b] for b in arms] for a in arms
        ],
        sigma2_hat=[est.sigma2_hat[a] for a in arms],
        c_hat=[[est.c_hat[a][b] for b in arms] for a in arms],
        N_A=[est.N_A[a] for a in arms],
    )


def build_sigma(est: MomentEstimates, t: int) -> SymMatrix:
    """Plug-in asymptotic covariance of the scaled payoff estimators.

    Arms are assumed ordered by descending mean with the first `t` maximal.
    The top-left t x t block couples through the drawn fractions and the
    draw-count dispersion; arms beyond t contribute only their own variance.
    """
    d = est.d
    if not 1 <= t <= d:
        raise ValueError(f"t must be in [1, {d}], got {t}")
    if est.mu_hat is None or est.mu_hat <= 0:
        raise ValueError("mu_hat must be positive to build the covariance")
    ratio = _require(est.qN_hat, "qN_hat") / est.mu_hat - 1.0
    sigma = SymMatrix(d)
    for i in range(t):
        s2 = _require(est.sigma2_hat[i], f"sigma2_hat[{i}]")
        nu = _require(est.nu_hat[i], f"nu_hat[{i}]")
        sigma.set(i, i, s2 * (nu * ratio + 1.0))
        for j in range(i + 1, t):
            c = _require(est.c_hat[i][j], f"c_hat[{i}][{j}]")
            nuj = _require(est.nu_hat[j], f"nu_hat[{j}]")
            sigma.set(i, j, c * math.sqrt(nu * nuj) * ratio)
    for k in range(t, d):
        sigma.set(k, k, _require(est.sigma2_hat[k], f"sigma2_hat[{k}]"))
    return sigma


def _draw_ratio(est: MomentEstimates, q: int) -> float:
    """N_{A_{q+1}} / N_{A_q} for 0-based arm q."""
    if est.N_A[q] < 1:
        raise MmruError(f"arm {q} has zero draws; ratio undefined")
    return est.N_A[q + 1] / est.N_A[q]


def build_sigma_star_null(est: MomentEstimates, k0: int) -> SymMatrix:
    """Covariance of the consecutive-difference vector when all k0 arms tie.

    Uses the covariance built with t = k0 over the first k0 arms, so only
    those arms' estimates need to be populated.
    """
    if not 2 <= k0 <= est.d:
        raise ValueError(f"k0 must be in [2, {est.d}], got {k0}")
    for q in range(k0):
        if est.N_A[q] < 1:
            raise MmruError(f"arm {q} has zero draws; cannot form difference vector")
    top = _restrict(est, list(range(k0)))
    sigma = build_sigma(top, k0)
    star = SymMatrix(k0 - 1)
    root = [math.sqrt(_draw_ratio(top, q)) for q in range(k0 - 1)]
    for q in range(k0 - 1):
        star.set(
            q,
            q,
            root[q] * root[q] * sigma.get(q, q)
            - 2.0 * root[q] * sigma.get(q, q + 1)
            + sigma.get(q + 1, q + 1),
        )
        for p in range(q + 1, k0 - 1):
            star.set(
                q,
                p,
                root[p] * root[q] * sigma.get(p, q)
                - root[q] * sigma.get(p + 1, q)
                - root[p] * sigma.get(p, q + 1)
                + sigma.get(p + 1, q + 1),
            )
    return star


def build_sigma_star_alt(est: MomentEstimates, k0: int, k: int) -> SymMatrix:
    """Difference-vector covariance when only the first k of k0 arms tie.

    Power diagnostic only; the test itself always uses the null form. The
    off-diagonal rule for pairs past the tie boundary follows the stated
    display for p < q and is mirrored by symmetry.
    """
    if not 2 <= k0 <= est.d:
        raise ValueError(f"k0 must be in [2, {est.d}], got {k0}")
    if not 1 <= k < k0:
        raise ValueError(f"k must be in [1, {k0 - 1}], got {k}")
    for q in range(k0):
        if est.N_A[q] < 1:
            raise MmruError(f"arm {q} has zero draws; cannot form difference vector")
    top = _restrict(est, list(range(k0)))
    sigma = build_sigma(top, k)
    star = SymMatrix(k0 - 1)
    root = [math.sqrt(_draw_ratio(top, q)) for q in range(k0 - 1)]
    # 0-based q below corresponds to arm pair (q, q+1); the tie boundary sits
    # between 0-based arms k-1 and k.
    for q in range(k0 - 1):
        if q <= k - 2:
            diag = (
                root[q] * root[q] * sigma.get(q, q)
                - 2.0 * root[q] * sigma.get(q, q + 1)
                + sigma.get(q + 1, q + 1)
            )
        elif q == k - 1:
            diag = sigma.get(q + 1, q + 1)
        else:
            diag = root[q] * root[q] * sigma.get(q, q) + sigma.get(q + 1, q + 1)
        star.set(q, q, diag)
        for p in range(q):
            if q <= k - 2:
                value = (
                    root[p] * root[q] * sigma.get(p, q)
                    - root[q] * sigma.get(p + 1, q)
                    - root[p] * sigma.get(p, q + 1)
                    + sigma.get(p + 1, q + 1)
                )
            else:
                value = -root[q] * sigma.get(p + 1, q)
            star.set(p, q, value)
    return star


def pairwise_stat(est: MomentEstimates, k: int, regime: str = NULL_REGIME) -> float:
    """Standardized difference of consecutive payoff estimates.

    `k` is the 0-based index of the first arm of the pair (k, k+1); arms are
    assumed ordered by descending mean. Under `null` the pair is treated as
    tied maximal arms and the dispersion correction applies; under `alt` the
    second arm is past the tie boundary and the correction factor is 1. The
    statistic is left uncentered, so it is asymptotically standard normal
    exactly when the true means of the pair are equal.
    """
    d = est.d
    if not 0 <= k <= d - 2:
        raise ValueError(f"k must be in [0, {d - 2}], got {k}")
    if regime not in (NULL_REGIME, ALT_REGIME):
        raise ValueError(f"regime must be '{NULL_REGIME}' or '{ALT_REGIME}'")
    nk = est.N_A[k]
    nk1 = est.N_A[k + 1]
    if nk < 1 or nk1 < 1:
        raise MmruError("both arms need at least one draw")
    s2k = _require(est.sigma2_hat[k], f"sigma2_hat[{k}]")
    s2k1 = _require(est.sigma2_hat[k + 1], f"sigma2_hat[{k + 1}]")
    base = s2k / nk + s2k1 / nk1
    if base <= 0.0:
        raise DegenerateCovariance(
            f"zero variance for arm pair ({k}, {k + 1}); statistic undefined"
        )
    if regime == ALT_REGIME:
        factor = 1.0
    else:
        mu = _require(est.mu_hat, "mu_hat")
        if mu <= 0:
            raise ValueError("mu_hat must be positive")
        ratio = _require(est.qN_hat, "qN_hat") / mu - 1.0
        nuk = _require(est.nu_hat[k], f"nu_hat[{k}]")
        nuk1 = _require(est.nu_hat[k + 1], f"nu_hat[{k + 1}]")
        c = _require(est.c_hat[k][k + 1], f"c_hat[{k}][{k + 1}]")
        numer = (
            s2k * (nuk * ratio + 1.0) * nk1
            - 2.0 * c * math.sqrt(nuk * nuk1) * ratio * math.sqrt(nk * nk1)
            + s2k1 * (nuk1 * ratio + 1.0) * nk
        )
        denom = s2k * nk1 + s2k1 * nk
        if denom <= 0.0:
            raise DegenerateCovariance(
                f"zero variance for arm pair ({k}, {k + 1}); statistic undefined"
            )
        factor = numer / denom
        if factor <= 0.0:
            raise DegenerateCovariance(
                f"correction factor {factor:.6g} not positive for pair ({k}, {k + 1})"
            )
    diff = _require(est.m_hat[k], f"m_hat[{k}]") - _require(
        est.m_hat[k + 1], f"m_hat[{k + 1}]"
    )
    return diff / math.sqrt(factor * base)


def _gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0.0:
        raise ValueError("shape must be positive")
    if x < 0.0:
        raise ValueError("x must be nonnegative")
    if x == 0.0:
        return 0.0
    log_scale = -x + a * math.log(x) - math.lgamma(a)
    if x < a + 1.0:
        # series expansion of P
        term = 1.0 / a
        total = term
        denom = a
        for _ in range(10000):
            denom += 1.0
            term *= x / denom
            total += term
            if abs(term) < abs(total) * 1e-17:
                return min(1.0, total * math.exp(log_scale))
        raise MmruError("incomplete gamma series failed to converge")
    # Lentz continued fraction for Q, then complement
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b if b != 0.0 else 1.0 / tiny
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return max(0.0, 1.0 - math.exp(log_scale) * h)
    raise MmruError("incomplete gamma continued fraction failed to converge")


def chi_square_cdf(x: float, df: int) -> float:
    """Lower tail probability of the chi-square distribution."""
    if df < 1:
        raise ValueError("df must be at least 1")
    if x < 0.0:
        raise ValueError("x must be nonnegative")
    return _gamma_p(0.5 * df, 0.5 * x)


def _chi_square_pdf(x: float, df: int) -> float:
    a = 0.5 * df
    if x <= 0.0:
        return 0.0
    return math.exp((a - 1.0) * math.log(x) - 0.5 * x - a * math.log(2.0) - math.lgamma(a))


def chi_square_quantile(p: float, df: int) -> float:
    """Inverse of chi_square_cdf in its first argument."""
    if df < 1:
        raise ValueError("df must be at least 1")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    lo = 0.0
    hi = max(float(df), 1.0)
    while chi_square_cdf(hi, df) < p:
        hi *= 2.0
    x = 0.5 * (lo + hi)
    for _ in range(200):
        err = chi_square_cdf(x, df) - p
        if err > 0.0:
            hi = x
        else:
            lo = x
        if abs(err) <= 1e-13:
            return x
        grad = _chi_square_pdf(x, df)
        if grad > 0.0:
            step = x - err / grad
        else:
            step = 0.5 * (lo + hi)
        if not lo < step < hi:
            step = 0.5 * (lo + hi)
        if hi - lo <= 1e-15 * max(1.0, hi):
            return 0.5 * (lo + hi)
        x = step
    return x


def spd_inverse(mat: SymMatrix) -> SymMatrix:
    """Inverse of a symmetric positive definite matrix via Cholesky."""
    n = mat.dimension
    scale = mat.max_abs_diag()
    if scale <= 0.0:
        raise NotPositiveDefinite("matrix diagonal is zero")
    tol = PIVOT_TOL * scale
    lower = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1):
            acc = mat.get(i, j) - math.fsum(lower[i][k] * lower[j][k] for k in range(j))
            if i == j:
                if acc <= tol:
                    raise NotPositiveDefinite(
                        f"pivot {acc:.6g} at row {i} within tolerance of zero"
                    )
                lower[i][i] = math.sqrt(acc)
            else:
                lower[i][j] = acc / lower[j][j]
    inv_cols = []
    for col in range(n):
        # forward solve L y = e_col, then back solve L^T z = y
        y = [0.0] * n
        for i in range(col, n):
            rhs = 1.0 if i == col else 0.0
            y[i] = (rhs - math.fsum(lower[i][k] * y[k] for k in range(col, i))) / lower[i][i]
        z = [0.0] * n
        for i in range(n - 1, -1, -1):
            z[i] = (y[i] - math.fsum(lower[k][i] * z[k] for k in range(i + 1, n))) / lower[i][i]
        inv_cols.append(z)
    inv = SymMatrix(n)
    for i in range(n):
        for j in range(i, n):
            inv.set(i, j, 0.5 * (inv_cols[j][i] + inv_cols[i][j]))
    return inv


@dataclass
class TestResult:
    k0: int
    theta: float
    df: int
    alpha: float
    critical: float
    p_value: float
    reject: bool
    arm_order: list
    estimates: MomentEstimates

    def to_dict(self) -> dict:
        """Stable field names and order for JSON export."""
        return {
            "k0": self.k0,
            "theta": self.theta,
            "df": self.df,
            "alpha": self.alpha,
            "critical": self.critical,
            "p_value": self.p_value,
            "reject": self.reject,
            "arm_order": list(self.arm_order),
            "n": self.estimates.n,
        }


def order_arms(est: MomentEstimates) -> list:
    """Arm indices sorted by descending payoff estimate, ties by index.

    Arms whose estimate is undefined sort to the bottom.
    """
    def key(i: int):
        m = est.m_hat[i]
        if m is None:
            return (1, 0.0, i)
        return (0, -m, i)

    return sorted(range(est.d), key=key)


def run_test(
    state: UrnState,
    k0: int,
    alpha: float = 0.05,
    min_draws: int = DEFAULT_MIN_DRAWS,
    min_joint: int = DEFAULT_MIN_JOINT,
) -> TestResult:
    """Chi-square test that the k0 largest payoff means are all equal.

    Arms are ranked by their payoff estimates (ties broken by original
    index); the top k0 form the consecutive-difference vector, whose
    covariance under the all-tied hypothesis is inverted for the quadratic
    form. Rejection compares the statistic against the upper alpha quantile
    with k0 - 1 degrees of freedom.
    """
    d = state.config.d
    if not 2 <= k0 <= d:
        raise ValueError(f"k0 must be in [2, {d}], got {k0}")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0 and 1")
    est = compute_estimates(state, min_joint=min_joint, allow_partial=True)
    order = order_arms(est)
    top = order[:k0]
    for arm in top:
        have = est.N_A[arm]
        if est.m_hat[arm] is None or have < min_draws:
            raise InsufficientDraws(arm, have, min_draws)
    ranked = _restrict(est, order)
    vec = [
        math.sqrt(ranked.N_A[q + 1]) * (ranked.m_hat[q] - ranked.m_hat[q + 1])
        for q in range(k0 - 1)
    ]
    star = build_sigma_star_null(ranked, k0)
    try:
        inv = spd_inverse(star)
    except NotPositiveDefinite as exc:
        raise DegenerateCovariance(
            f"difference covariance is not positive definite: {exc}"
        ) from exc
    if star.norm1() * inv.norm1() > CONDITION_LIMIT:
        raise DegenerateCovariance(
            "difference covariance is numerically singular "
            f"(condition estimate above {CONDITION_LIMIT:.0e})"
        )
    # quadratic form with an SPD inverse; clamp rounding noise at zero
    theta = max(0.0, math.fsum(v * w for v, w in zip(vec, inv.matvec(vec))))
    df = k0 - 1
    critical = chi_square_quantile(1.0 - alpha, df)
    p_value = 1.0 - chi_square_cdf(theta, df)
    return TestResult(
        k0=k0,
        theta=theta,
        df=df,
        alpha=alpha,
        critical=critical,
        p_value=p_value,
        reject=theta > critical,
        arm_order=order,
        estimates=est,
    )
