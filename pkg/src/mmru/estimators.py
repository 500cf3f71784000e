"""Strongly consistent moment estimators computed from an urn's running sums.

Every estimator is a ratio of accumulators the urn maintains per stage, so a
snapshot costs O(d^2) regardless of horizon. Undefined quantities raise typed
errors instead of returning sentinels; `compute_estimates(allow_partial=True)`
converts them to explicit None entries for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import MmruError, NoDrawsForColor, NoJointObservations
from .urn import UrnState

# conventional small-sample floor for trusting the product-form cross moment
DEFAULT_MIN_JOINT = 30

# |negative variance| beyond this is corruption, not rounding
VARIANCE_TOL = 1e-9

PRODUCT_FORM = "product-form"
FALLBACK_FORM = "fallback-form"
DIAGONAL = "diagonal"
UNDEFINED = "undefined"


@dataclass
class MomentEstimates:
    n: int
    mu_hat: float
    qN_hat: float
    nu_hat: list
    m_hat: list
    q_hat: list
    q_cross_hat: list
    q_cross_provenance: list
    sigma2_hat: list
    c_hat: list
    N_A: list

    @property
    def d(self) -> int:
        return len(self.nu_hat)

    def to_dict(self) -> dict:
        """Stable field names and order for JSON export."""
        return {
            "mu_hat": self.mu_hat,
            "qN_hat": self.qN_hat,
            "nu_hat": list(self.nu_hat),
            "m_hat": list(self.m_hat),
            "q_hat": list(self.q_hat),
            "q_cross_hat": {
                "values": [list(row) for row in self.q_cross_hat],
                "provenance": [list(row) for row in self.q_cross_provenance],
            },
            "sigma2_hat": list(self.sigma2_hat),
            "c_hat": [list(row) for row in self.c_hat],
            "N_A": list(self.N_A),
            "n": self.n,
        }


def estimate_mu(state: UrnState) -> float:
    """Mean draw count: sum of N_j over n stages."""
    if state.n < 1:
        raise ValueError("no stages run yet")
    return state.sums.sum_N / state.n


def estimate_qN(state: UrnState) -> float:
    """Second moment of the draw count: sum of N_j^2 over n stages."""
    if state.n < 1:
        raise ValueError("no stages run yet")
    return state.sums.sum_N2 / state.n


def estimate_nu(state: UrnState) -> list:
    """Mean drawn fraction per color: (1/n) sum of X_jk / N_j."""
    if state.n < 1:
        raise ValueError("no stages run yet")
    n = state.n
    return [r / n for r in state.sums.sum_ratio]


def estimate_mean_payoff(state: UrnState, k: int) -> float:
    """sum A_jk X_jk / N_{A_k,n}: mean reinforcement per drawn color-k ball."""
    n_ak = state.N_A[k]
    if n_ak == 0:
        raise NoDrawsForColor(k)
    return state.sums.sum_AX[k] / n_ak


def estimate_second_moment(state: UrnState, k: int) -> float:
    """sum A_jk^2 X_jk / N_{A_k,n}."""
    n_ak = state.N_A[k]
    if n_ak == 0:
        raise NoDrawsForColor(k)
    return state.sums.sum_A2X[k] / n_ak


def estimate_cross_moment(state: UrnState, k: int, s: int, min_joint: int = DEFAULT_MIN_JOINT):
    """Estimate E[A_k A_s], returning (value, provenance flag).

    Product form sum A_k A_s X_k X_s / sum X_k X_s is used when the joint draw
    count reaches min_joint; otherwise the fallback sum A_k A_s X_k / N_{A_k,n}.
    The two forms cover complementary parameter regimes, and the data-driven
    gate picks the product form whenever joint draws are plentiful.
    """
    if k == s:
        raise ValueError("cross moment requires two distinct colors")
    joint = state.sums.sum_XX[k][s]
    if joint >= min_joint:
        return state.sums.sum_AAXX[k][s] / joint, PRODUCT_FORM
    if state.N_A[k] >= 1:
        return state.sums.sum_AAX[k][s] / state.N_A[k], FALLBACK_FORM
    raise NoJointObservations(k, s)


def derive_variances(est: MomentEstimates) -> MomentEstimates:
    """Fill sigma2_hat and c_hat from the raw moment estimates in place.

    sigma2_k = q_k - m_k^2 is a weighted variance, so negativity beyond
    rounding means corrupted sums and raises.
    """
    d = est.d
    sigma2 = [None] * d
    for k in range(d):
        if est.m_hat[k] is None or est.q_hat[k] is None:
            continue
        v = est.q_hat[k] - est.m_hat[k] ** 2
        if v < 0.0:
            if v < -VARIANCE_TOL:
                raise MmruError(
                    f"negative variance {v!r} for color {k}: inconsistent running sums"
                )
            v = 0.0
        sigma2[k] = v
    c = [[None] * d for _ in range(d)]
    for k in range(d):
        c[k][k] = sigma2[k]
        for s in range(k + 1, d):
            qks = est.q_cross_hat[k][s]
            if qks is None or est.m_hat[k] is None or est.m_hat[s] is None:
                continue
            c[k][s] = c[s][k] = qks - est.m_hat[k] * est.m_hat[s]
    est.sigma2_hat = sigma2
    est.c_hat = c
    return est


def compute_estimates(
    state: UrnState, min_joint: int = DEFAULT_MIN_JOINT, allow_partial: bool = False
) -> MomentEstimates:
    """Snapshot of every moment estimator at the current stage.

    With allow_partial, colors that were never drawn get None entries instead
    of raising; cross-moment cells pick the fallback orientation with the
    larger draw count so the stored matrix stays symmetric.
    """
    d = state.config.d
    m_hat: list = [None] * d
    q_hat: list = [None] * d
    for k in range(d):
        try:
            m_hat[k] = estimate_mean_payoff(state, k)
            q_hat[k] = estimate_second_moment(state, k)
        except NoDrawsForColor:
            if not allow_partial:
                raise
    q_cross: list = [[None] * d for _ in range(d)]
    prov: list = [[UNDEFINED] * d for _ in range(d)]
    for k in range(d):
        q_cross[k][k] = q_hat[k]
        prov[k][k] = DIAGONAL if q_hat[k] is not None else UNDEFINED
        for s in range(k + 1, d):
            joint = state.sums.sum_XX[k][s]
            if joint < min_joint and state.N_A[s] > state.N_A[k]:
                lead = s, k
            else:
                lead = k, s
            try:
                val, flag = estimate_cross_moment(state, *lead, min_joint=min_joint)
            except NoJointObservations:
                if not allow_partial:
                    raise
                continue
            q_cross[k][s] = q_cross[s][k] = val
            prov[k][s] = prov[s][k] = flag
    est = MomentEstimates(
        n=state.n,
        mu_hat=estimate_mu(state),
        qN_hat=estimate_qN(state),
        nu_hat=estimate_nu(state),
        m_hat=m_hat,
        q_hat=q_hat,
        q_cross_hat=q_cross,
        q_cross_provenance=prov,
        sigma2_hat=[],
        c_hat=[],
        N_A=list(state.N_A),
    )
    return derive_variances(est)
