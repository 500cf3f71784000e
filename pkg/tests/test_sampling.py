import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mmru.errors import ScenarioError
from mmru.sampling import (
    DiscreteLaw,
    DrawCountLaw,
    IndependentDiscrete,
    PointMass,
    PoissonLaw,
    Rng,
    ShiftedCommonCount,
    ShiftedMultinomial,
    clamp_deviations,
    law_dimension,
    law_moments,
    pmf_multinomial,
    pmf_multivariate_hypergeometric,
    sample_draw_count,
    sample_hypergeometric,
    sample_multinomial,
    sample_multivariate_hypergeometric,
    sample_replacement,
)

from _oracles import compositions


def uniform_law(lo, hi):
    width = hi - lo + 1
    return DiscreteLaw(tuple(range(lo, hi + 1)), (1.0 / width,) * width)


# ---------------------------------------------------------------------------
# Rng


def test_rng_matches_generator_stream():
    reference = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=123, spawn_key=(5,)))
    ).random(5000)
    rng = Rng(123, 5)
    got = rng.uniforms(5000)
    assert got == reference.tolist()


def test_rng_determinism_and_stream_separation():
    a = Rng(99, 0).uniforms(100)
    b = Rng(99, 0).uniforms(100)
    c = Rng(99, 1).uniforms(100)
    d = Rng(100, 0).uniforms(100)
    assert a == b
    assert a != c
    assert a != d


def test_rng_rejects_out_of_range_seeds():
    with pytest.raises(ValueError):
        Rng(-1)
    with pytest.raises(ValueError):
        Rng(2**64)
    with pytest.raises(ValueError):
        Rng(3, stream_id=-2)


# ---------------------------------------------------------------------------
# Discrete and draw-count laws


def test_discrete_law_validation():
    with pytest.raises(ScenarioError):
        DiscreteLaw((), ())
    with pytest.raises(ScenarioError):
        DiscreteLaw((1, 2), (0.5,))
    with pytest.raises(ScenarioError):
        DiscreteLaw((1, 2), (0.7, -0.3))
    with pytest.raises(ScenarioError):
        DiscreteLaw((1, 2), (0.5, 0.4))


def test_single_atom_sample_consumes_no_uniform():
    law = DiscreteLaw((7,), (1.0,))
    rng = Rng(5, 0)
    ref = Rng(5, 0)
    assert law.sample(rng) == 7
    assert rng.next_uniform() == ref.next_uniform()


def test_draw_count_law_validation():
    with pytest.raises(ScenarioError):
        DrawCountLaw((0, 2), (0.5, 0.5))
    with pytest.raises(ScenarioError):
        DrawCountLaw((2, 2), (0.5, 0.5))
    with pytest.raises(ScenarioError):
        DrawCountLaw((2, 3), (0.5, 0.5), cap=2)
    law = DrawCountLaw((3, 6), (1 / 3, 2 / 3))
    assert law.cap == 6
    assert law.mean() == pytest.approx(5.0)
    assert law.second_moment() == pytest.approx(27.0)


def test_sample_draw_count_point_mass_consumes_nothing():
    law = DrawCountLaw((1,), (1.0,))
    rng = Rng(11, 0)
    ref = Rng(11, 0)
    assert sample_draw_count(law, 100, rng) == 1
    assert rng.next_uniform() == ref.next_uniform()


def test_sample_draw_count_clamps_to_urn_total():
    law = DrawCountLaw((3, 6), (1 / 3, 2 / 3))
    rng = Rng(17, 0)
    for _ in range(200):
        value = sample_draw_count(law, 4, rng)
        assert value in (3, 4)
    with pytest.raises(ValueError):
        sample_draw_count(law, 0, rng)


def test_sample_draw_count_empirical_mean():
    # mean 5, sd sqrt(2); 3 sigma of the sample mean over 1e6 draws
    law = DrawCountLaw((3, 6), (1 / 3, 2 / 3))
    rng = Rng(21, 0)
    n = 1_000_000
    total = sum(sample_draw_count(law, 1000, rng) for _ in range(n))
    assert abs(total / n - 5.0) < 3 * math.sqrt(2.0 / n)


# ---------------------------------------------------------------------------
# Hypergeometric kernels


def test_hypergeometric_forced_outcomes():
    rng = Rng(1, 0)
    ref = Rng(1, 0)
    assert sample_hypergeometric(5, 5, 3, rng) == 3
    assert sample_hypergeometric(0, 7, 4, rng) == 0
    # forced draws consume no randomness
    assert rng.next_uniform() == ref.next_uniform()


def test_hypergeometric_rejects_bad_arguments():
    rng = Rng(1, 0)
    with pytest.raises(ValueError):
        sample_hypergeometric(6, 5, 1, rng)
    with pytest.raises(ValueError):
        sample_hypergeometric(2, 5, 6, rng)


def test_hypergeometric_marginal_frequency():
    # P(x=1) = C(2,1)C(2,1)/C(4,2) = 2/3
    rng = Rng(31, 0)
    n = 1_000_000
    ones = sum(1 for _ in range(n) if sample_hypergeometric(2, 4, 2, rng) == 1)
    p = 2 / 3
    assert abs(ones / n - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_mvh_forced_paths():
    rng = Rng(2, 0)
    ref = Rng(2, 0)
    assert sample_multivariate_hypergeometric([1, 1, 1], 3, rng) == [1, 1, 1]
    assert sample_multivariate_hypergeometric([4, 0, 2], 6, rng) == [4, 0, 2]
    assert rng.next_uniform() == ref.next_uniform()


def test_mvh_rejects_overdraw():
    with pytest.raises(ValueError):
        sample_multivariate_hypergeometric([2, 1], 4, Rng(3, 0))


def test_mvh_three_symmetric_colors():
    rng = Rng(41, 0)
    n = 1_000_000
    counts = {}
    for _ in range(n):
        x = tuple(sample_multivariate_hypergeometric([1, 1, 1], 2, rng))
        counts[x] = counts.get(x, 0) + 1
    assert set(counts) == {(1, 1, 0), (1, 0, 1), (0, 1, 1)}
    band = 3 * math.sqrt((1 / 3) * (2 / 3) / n)
    for value in counts.values():
        assert abs(value / n - 1 / 3) < band


def test_mvh_pmf_values():
    assert pmf_multivariate_hypergeometric([1, 1, 1], 2, [1, 1, 0]) == pytest.approx(
        1 / 3, abs=1e-15
    )
    assert pmf_multivariate_hypergeometric([2, 1], 2, [2, 0]) == pytest.approx(
        1 / 3, abs=1e-15
    )
    assert pmf_multivariate_hypergeometric([2, 1], 2, [0, 2]) == 0.0
    assert pmf_multivariate_hypergeometric([2, 1], 2, [1, 1, 0]) == 0.0
    with pytest.raises(ValueError):
        pmf_multivariate_hypergeometric([2, 1], 4, [2, 1])


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_mvh_sample_bounds_and_total(data):
    d = data.draw(st.integers(2, 4))
    H = data.draw(st.lists(st.integers(0, 6), min_size=d, max_size=d))
    total = sum(H)
    if total == 0:
        return
    draws = data.draw(st.integers(1, total))
    seed = data.draw(st.integers(0, 2**32))
    x = sample_multivariate_hypergeometric(H, draws, Rng(seed, 0))
    assert sum(x) == draws
    assert all(0 <= xk <= hk for xk, hk in zip(x, H))


# ---------------------------------------------------------------------------
# Multinomial kernels


def test_multinomial_degenerate_probability():
    rng = Rng(4, 0)
    assert sample_multinomial([1.0, 0.0, 0.0], 5, rng) == [5, 0, 0]


def test_multinomial_rejects_bad_probabilities():
    rng = Rng(4, 0)
    with pytest.raises(ValueError):
        sample_multinomial([0.5, 0.4], 3, rng)
    with pytest.raises(ValueError):
        sample_multinomial([1.2, -0.2], 3, rng)


def test_multinomial_fair_coin():
    rng = Rng(51, 0)
    n = 100_000
    heads = sum(sample_multinomial([0.5, 0.5], 1, rng)[0] for _ in range(n))
    assert abs(heads / n - 0.5) < 3 * math.sqrt(0.25 / n)


def test_multinomial_pmf_values():
    assert pmf_multinomial([0.5, 0.5], 2, [1, 1]) == pytest.approx(0.5, abs=1e-15)
    assert pmf_multinomial([1.0, 0.0], 3, [3, 0]) == pytest.approx(1.0, abs=1e-15)
    assert pmf_multinomial([0.4, 0.4, 0.2], 2, [1, 1, 0]) == pytest.approx(
        0.32, abs=1e-12
    )
    assert pmf_multinomial([0.4, 0.6], 2, [3, -1]) == 0.0


def test_multinomial_pmf_sums_to_one():
    p = [0.4, 0.4, 0.2]
    for draws in (1, 3, 5):
        total = math.fsum(
            pmf_multinomial(p, draws, list(x)) for x in compositions(draws, 3)
        )
        assert abs(total - 1.0) < 1e-10


def test_multinomial_gof_against_pmf():
    p = [0.4, 0.4, 0.2]
    draws = 5
    outcomes = list(compositions(draws, 3))
    index = {x: i for i, x in enumerate(outcomes)}
    rng = Rng(61, 0)
    n = 1_000_000
    counts = [0] * len(outcomes)
    for _ in range(n):
        counts[index[tuple(sample_multinomial(p, draws, rng))]] += 1
    expected = [pmf_multinomial(p, draws, list(x)) * n for x in outcomes]
    result = stats.chisquare(counts, expected)
    assert result.pvalue > 0.01


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_multinomial_sample_total(data):
    d = data.draw(st.integers(2, 4))
    raw = data.draw(
        st.lists(st.floats(0.01, 1.0, allow_nan=False), min_size=d, max_size=d)
    )
    total = math.fsum(raw)
    p = [v / total for v in raw]
    draws = data.draw(st.integers(0, 20))
    seed = data.draw(st.integers(0, 2**32))
    x = sample_multinomial(p, draws, Rng(seed, 0))
    assert sum(x) == draws
    assert all(xk >= 0 for xk in x)


# ---------------------------------------------------------------------------
# Replacement laws


def test_point_mass_replacement():
    law = PointMass((4, 4, 1))
    rng = Rng(6, 0)
    ref = Rng(6, 0)
    assert sample_replacement(law, rng) == [4, 4, 1]
    assert rng.next_uniform() == ref.next_uniform()
    assert law_dimension(law) == 3


def test_replacement_support_validation():
    with pytest.raises(ScenarioError):
        PointMass((0.5, 2))
    with pytest.raises(ScenarioError):
        IndependentDiscrete((uniform_law(0, 2),))
    with pytest.raises(ScenarioError):
        ShiftedMultinomial(5, (0.5, 0.5), (0.5, 2), (1, 1))
    with pytest.raises(ScenarioError):
        ShiftedMultinomial(0, (0.5, 0.5), (2, 2), (1, 1))


def test_case_a_law_empirical_mean():
    law = IndependentDiscrete((uniform_law(3, 5), uniform_law(3, 5), uniform_law(1, 1)))
    rng = Rng(71, 0)
    n = 1_000_000
    total = 0.0
    for _ in range(n):
        total += sample_replacement(law, rng)[0]
    # Var(uniform{3,4,5}) = 2/3
    assert abs(total / n - 4.0) < 3 * math.sqrt((2 / 3) / n)


def test_shifted_multinomial_structure():
    law = ShiftedMultinomial(5, (0.4, 0.4, 0.2), (2, 2, 1), (1, 1, 0))
    rng = Rng(81, 0)
    a1 = []
    a2 = []
    for _ in range(100_000):
        a = sample_replacement(law, rng)
        # components are offset + multinomial count; the hidden third count
        # forces (a1-2) + (a2-2) <= 5 with integer parts
        y1 = a[0] - 2
        y2 = a[1] - 2
        assert y1 == int(y1) and y2 == int(y2)
        assert 0 <= y1 and 0 <= y2 and y1 + y2 <= 5
        assert a[2] == 1.0
        a1.append(a[0])
        a2.append(a[1])
    corr = np.corrcoef(a1, a2)[0][1]
    assert corr < 0


def test_shifted_common_count_clamps_at_one():
    law = ShiftedCommonCount(PoissonLaw(6.0), (1, 1, -1.0), (1, 1, 1))
    rng = Rng(91, 0)
    for _ in range(5000):
        a = sample_replacement(law, rng)
        assert all(v >= 1.0 for v in a)
        # shared count: first two components move together
        assert a[0] == a[1]


# ---------------------------------------------------------------------------
# Closed-form moments


def test_point_mass_moments():
    m, q, cross = law_moments(PointMass((4, 4, 1)))
    assert m == [4, 4, 1]
    assert q == [16, 16, 1]
    assert cross == [[16, 16, 4], [16, 16, 4], [4, 4, 1]]


def test_case_law_moments():
    case_a = IndependentDiscrete(
        (uniform_law(3, 5), uniform_law(3, 5), uniform_law(1, 1))
    )
    m, q, cross = law_moments(case_a)
    assert m == pytest.approx([4, 4, 1], abs=1e-12)
    assert q == pytest.approx([50 / 3, 50 / 3, 1], abs=1e-12)
    assert cross[0][1] == pytest.approx(16.0, abs=1e-12)  # independent colors

    case_b = IndependentDiscrete(
        (uniform_law(2, 6), uniform_law(3, 5), uniform_law(1, 1))
    )
    m, q, _ = law_moments(case_b)
    assert m == pytest.approx([4, 4, 1], abs=1e-12)
    assert q[0] == pytest.approx(18.0, abs=1e-12)  # variance 2 instead of 2/3

    case_c = ShiftedMultinomial(5, (0.4, 0.4, 0.2), (2, 2, 1), (1, 1, 0))
    m, q, cross = law_moments(case_c)
    assert m == pytest.approx([4, 4, 1], abs=1e-12)
    # E[Y1 Y2] = 5*4*0.16 = 3.2, so E[A1 A2] = 4 + 2*2 + 2*2 + 3.2 = 15.2
    assert cross[0][1] == pytest.approx(15.2, abs=1e-12)
    assert cross[0][1] - m[0] * m[1] == pytest.approx(-0.8, abs=1e-12)

    case_d = ShiftedMultinomial(5, (0.3, 0.4, 0.3), (1, 2, 1), (2, 1, 0))
    m, q, cross = law_moments(case_d)
    assert m == pytest.approx([4, 4, 1], abs=1e-12)
    assert q == pytest.approx([20.2, 17.2, 1], abs=1e-12)
    assert cross[0][1] == pytest.approx(14.8, abs=1e-12)


def test_clamped_common_count_moments():
    # A3 = max(1, 1 - 0.2e + Y), Y ~ Poisson(6); only Y=0 clamps for e<=5,
    # Y in {0,1} for 6<=e<=10, lifting the mean by the truncated mass
    for e, lift in ((1, 0.2 * math.exp(-6)), (10, 8 * math.exp(-6))):
        law = ShiftedCommonCount(
            PoissonLaw(6.0), (1.0, 1.0, 1.0 - 0.2 * e), (1.0, 1.0, 1.0)
        )
        m, _, _ = law_moments(law)
        assert m[0] == pytest.approx(7.0, abs=1e-9)
        assert m[1] == pytest.approx(7.0, abs=1e-9)
        assert m[2] == pytest.approx(7.0 - 0.2 * e + lift, abs=1e-9)
        dev = clamp_deviations(law)
        assert dev[0] == pytest.approx(0.0, abs=1e-12)
        assert dev[1] == pytest.approx(0.0, abs=1e-12)
        assert dev[2] == pytest.approx(lift, abs=1e-9)
    assert law_moments(
        ShiftedCommonCount(PoissonLaw(6.0), (1.0, 1.0, -1.0), (1.0, 1.0, 1.0))
    )[0][2] == pytest.approx(5 + 8 * math.exp(-6), abs=1e-9)


def test_clamp_deviations_zero_without_clamping():
    assert clamp_deviations(PointMass((4, 4, 1))) == [0.0, 0.0, 0.0]
    # enumerating the Poisson tail leaves sub-1e-12 residue, never exact zero
    law = ShiftedCommonCount(PoissonLaw(6.0), (3.0, 3.0), (1.0, 1.0))
    assert clamp_deviations(law) == pytest.approx([0.0, 0.0], abs=1e-12)


CASE_LAWS = {
    "independent-345": IndependentDiscrete(
        (uniform_law(3, 5), uniform_law(3, 5), uniform_law(1, 1))
    ),
    "independent-26": IndependentDiscrete(
        (uniform_law(2, 6), uniform_law(3, 5), uniform_law(1, 1))
    ),
    "multinomial-late": ShiftedMultinomial(5, (0.4, 0.4, 0.2), (2, 2, 1), (1, 1, 0)),
    "multinomial-spread": ShiftedMultinomial(5, (0.3, 0.4, 0.3), (1, 2, 1), (2, 1, 0)),
    "clamped-poisson": ShiftedCommonCount(
        PoissonLaw(6.0), (1.0, 1.0, -1.0), (1.0, 1.0, 1.0)
    ),
}


@pytest.mark.parametrize("name", sorted(CASE_LAWS))
def test_law_moments_match_sampler(name):
    """Closed-form moments agree with the empirical sampler within 4 SE."""
    law = CASE_LAWS[name]
    m, q, cross = law_moments(law)
    d = law_dimension(law)
    rng = Rng(sum(map(ord, name)), 0)
    n = 10_000_000
    sums = [0.0] * d
    sq = [0.0] * d
    fourth = [0.0] * d
    cross01 = 0.0
    cross01_sq = 0.0
    for _ in range(n):
        a = sample_replacement(law, rng)
        for k in range(d):
            ak = a[k]
            akk = ak * ak
            sums[k] += ak
            sq[k] += akk
            fourth[k] += akk * akk
        prod = a[0] * a[1]
        cross01 += prod
        cross01_sq += prod * prod
    for k in range(d):
        mean = sums[k] / n
        se = math.sqrt(max(sq[k] / n - mean * mean, 0.0) / n)
        assert abs(mean - m[k]) <= 4 * se + 1e-12
        mean2 = sq[k] / n
        se2 = math.sqrt(max(fourth[k] / n - mean2 * mean2, 0.0) / n)
        assert abs(mean2 - q[k]) <= 4 * se2 + 1e-12
    mean_cross = cross01 / n
    se_cross = math.sqrt(max(cross01_sq / n - mean_cross * mean_cross, 0.0) / n)
    assert abs(mean_cross - cross[0][1]) <= 4 * se_cross + 1e-12


@pytest.mark.parametrize("e", list(range(1, 10)))
def test_power_family_law_moments_match_sampler(e):
    """Same agreement check for the remaining family members, lighter sampling."""
    law = ShiftedCommonCount(
        PoissonLaw(6.0), (1.0, 1.0, 1.0 - 0.2 * e), (1.0, 1.0, 1.0)
    )
    m, _, _ = law_moments(law)
    rng = Rng(1000 + e, 0)
    n = 1_000_000
    values = [0.0, 0.0, 0.0]
    squares = [0.0, 0.0, 0.0]
    for _ in range(n):
        a = sample_replacement(law, rng)
        for k in range(3):
            values[k] += a[k]
            squares[k] += a[k] * a[k]
    for k in range(3):
        mean = values[k] / n
        se = math.sqrt(max(squares[k] / n - mean * mean, 0.0) / n)
        assert abs(mean - m[k]) <= 4 * se + 1e-12
