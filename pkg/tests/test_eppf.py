import math

import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from app.eppf import (
    LabelledSizes,
    conditional_sizes_prior,
    log_eppf,
    log_eppf_dpm,
    log_eppf_given_K,
    log_eppf_mfm,
)
from app.kplus_prior import kplus_pmf
from app.model_priors import BetaNegBinomialPrior, ModelSpec, PointMassPrior, UniformPrior
from app.recursion_core import static_V_table
from tests.enumeration import compositions, set_partition_sizes


def test_labelled_sizes_validation() -> None:
    assert LabelledSizes.of([3, 2, 1]).N == 6
    assert LabelledSizes.parse("3,2,1").k == 3
    with pytest.raises(ValueError):
        LabelledSizes.of([2, 0])
    with pytest.raises(ValueError):
        LabelledSizes(sizes=(2, 2), N=5)
    with pytest.raises(ValueError):
        LabelledSizes.parse("3,x")
    with pytest.raises(ValueError):
        LabelledSizes.of([])


def test_ewens_small_partitions() -> None:
    assert log_eppf_dpm(LabelledSizes.of([2]), 1.0) == pytest.approx(math.log(0.5))
    assert log_eppf_dpm(LabelledSizes.of([1, 1]), 1.0) == pytest.approx(math.log(0.5))
    for alpha in (0.1, 1.0, 7.0):
        assert log_eppf_dpm(LabelledSizes.of([1]), alpha) == pytest.approx(0.0, abs=1e-14)


def test_given_K_small_cases() -> None:
    assert log_eppf_given_K(LabelledSizes.of([5]), 1, 0.7) == pytest.approx(0.0, abs=1e-12)
    assert math.exp(log_eppf_given_K(LabelledSizes.of([1, 1]), 2, 1.0)) == pytest.approx(1 / 3)
    assert log_eppf_given_K(LabelledSizes.of([1, 1, 1]), 2, 1.0) == -math.inf


def test_given_K_sums_to_one_over_set_partitions() -> None:
    total = sum(
        count * math.exp(log_eppf_given_K(LabelledSizes.of(sizes), 3, 1.0))
        for sizes, count in set_partition_sizes(6).items()
    )

    assert total == pytest.approx(1.0, rel=1e-12)


def test_point_mass_reduces_to_given_K() -> None:
    spec = ModelSpec.static(6, 0.8, PointMassPrior(4))
    sizes = LabelledSizes.of([3, 2, 1])

    assert log_eppf_mfm(sizes, spec) == pytest.approx(log_eppf_given_K(sizes, 4, 0.8), abs=1e-12)


def test_static_eppf_matches_miller_harrison_form() -> None:
    prior = UniformPrior(1, 30)
    spec = ModelSpec.static(10, 1.0, prior)
    table = static_V_table(1.0, prior, 10, 4, K_max=30)
    for sizes in ([10], [6, 4], [5, 3, 2], [4, 3, 2, 1]):
        labelled = LabelledSizes.of(sizes)
        expected = math.log(table[10, labelled.k]) + sum(
            special.gammaln(n + 1.0) - special.gammaln(1.0) for n in sizes
        )
        assert log_eppf_mfm(labelled, spec) == pytest.approx(expected, abs=1e-10)


def test_mfm_rejects_dpm_spec_and_wrong_n() -> None:
    with pytest.raises(ValueError):
        log_eppf_mfm(LabelledSizes.of([1, 1]), ModelSpec.dpm(2, 1.0))
    with pytest.raises(ValueError):
        log_eppf_mfm(LabelledSizes.of([1, 1]), ModelSpec.static(3, 1.0, UniformPrior(1, 5)))


@settings(max_examples=30, deadline=None)
@given(sizes=st.lists(st.integers(min_value=1, max_value=6), min_size=1, max_size=5), data=st.data())
def test_eppf_exchangeable(sizes, data) -> None:
    permuted = data.draw(st.permutations(sizes))
    N = sum(sizes)
    for spec in (
        ModelSpec.dpm(N, 0.7),
        ModelSpec.static(N, 1.3, UniformPrior(1, 8)),
        ModelSpec.dynamic(N, 2.0, UniformPrior(1, 8)),
    ):
        assert log_eppf(LabelledSizes.of(sizes), spec) == log_eppf(LabelledSizes.of(permuted), spec)


def _model_specs(N: int):
    return (
        ModelSpec.dpm(N, 0.8),
        ModelSpec.static(N, 1.0, UniformPrior(1, 30)),
        ModelSpec.dynamic(N, 2.0, UniformPrior(1, 10)),
    )


@pytest.mark.parametrize("N", range(1, 10))
def test_set_partition_sums_match_kplus_pmf(N: int) -> None:
    partitions = set_partition_sizes(N)
    for spec in _model_specs(N):
        pmf = kplus_pmf(spec)
        by_k = [0.0] * (N + 1)
        for sizes, count in partitions.items():
            by_k[len(sizes)] += count * math.exp(log_eppf(LabelledSizes.of(sizes), spec))
        for k in range(1, N + 1):
            assert by_k[k] == pytest.approx(pmf.prob(k), rel=1e-9, abs=1e-300)


def test_conditional_prior_small_cases() -> None:
    for spec in (
        ModelSpec.dpm(7, 1.0),
        ModelSpec.static(7, 0.4, UniformPrior(1, 30)),
        ModelSpec.dynamic(7, 1.0, UniformPrior(1, 30)),
    ):
        assert conditional_sizes_prior(LabelledSizes.of([7]), spec) == pytest.approx(1.0)

    assert conditional_sizes_prior(LabelledSizes.of([1, 2]), ModelSpec.dpm(3, 1.0)) == pytest.approx(0.5)


def test_dpm_conditional_prior_free_of_alpha() -> None:
    sizes = LabelledSizes.of([4, 1, 3])

    low = conditional_sizes_prior(sizes, ModelSpec.dpm(8, 0.1))
    high = conditional_sizes_prior(sizes, ModelSpec.dpm(8, 10.0))

    assert low == high


@pytest.mark.parametrize("N", [1, 4, 8, 12])
@pytest.mark.parametrize("parameter", [0.1, 1.0, 4.0])
def test_conditional_prior_normalizes(N: int, parameter: float) -> None:
    for spec in (ModelSpec.dpm(N, parameter), ModelSpec.static(N, parameter, UniformPrior(1, 30))):
        for k in range(1, N + 1):
            total = sum(conditional_sizes_prior(LabelledSizes.of(sizes), spec) for sizes in compositions(N, k))
            assert total == pytest.approx(1.0, abs=1e-10)


def test_dynamic_conditional_prior_normalizes() -> None:
    spec = ModelSpec.dynamic(7, 1.5, UniformPrior(1, 9))
    for k in range(1, 8):
        total = sum(conditional_sizes_prior(LabelledSizes.of(sizes), spec) for sizes in compositions(7, k))
        assert total == pytest.approx(1.0, abs=1e-10)


def test_static_conditional_prior_free_of_prior_on_K() -> None:
    sizes = LabelledSizes.of([5, 2, 2, 1])

    uniform = conditional_sizes_prior(sizes, ModelSpec.static(10, 1.0, UniformPrior(1, 30)))
    bnb = conditional_sizes_prior(sizes, ModelSpec.static(10, 1.0, BetaNegBinomialPrior(1.0, 4.0, 3.0)))

    assert uniform == pytest.approx(bnb, rel=1e-12)


def test_dynamic_conditional_prior_matches_published_weight_form() -> None:
    N, alpha = 6, 1.5
    prior = UniformPrior(1, 9)
    sizes = (3, 2, 1)
    k = len(sizes)

    def term(K: int) -> float:
        gamma = alpha / K
        log_w = (
            prior.log_pmf(K)
            + k * math.log(alpha / K)
            + special.gammaln(alpha)
            + special.gammaln(K + 1.0)
            - k * special.gammaln(1.0 + gamma)
            - special.gammaln(alpha + N)
            - special.gammaln(K - k + 1.0)
        )
        product = sum(special.gammaln(n + gamma) - special.gammaln(n + 1.0) for n in sizes)
        return math.exp(log_w + product)

    raw = sum(term(K) for K in range(k, 10))
    # Нормировка: сумма по всем композициям.
    normalizer = 0.0
    for composition in compositions(N, k):
        normalizer += sum(
            math.exp(
                float(prior.log_pmf(K))
                + k * math.log(alpha / K)
                + special.gammaln(alpha)
                + special.gammaln(K + 1.0)
                - k * special.gammaln(1.0 + alpha / K)
                - special.gammaln(alpha + N)
                - special.gammaln(K - k + 1.0)
                + sum(special.gammaln(n + alpha / K) - special.gammaln(n + 1.0) for n in composition)
            )
            for K in range(k, 10)
        )

    spec = ModelSpec.dynamic(N, alpha, prior)
    assert conditional_sizes_prior(LabelledSizes.of(sizes), spec) == pytest.approx(raw / normalizer, rel=1e-10)
