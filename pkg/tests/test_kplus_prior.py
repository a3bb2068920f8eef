import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from app.kplus_prior import KPlusPmf, kplus_pmf, kplus_pmf_dpm, kplus_summaries, prior_k_column
from app.model_priors import (
    BetaNegBinomialPrior,
    ModelSpec,
    PointMassPrior,
    TruncationError,
    UniformPrior,
    reference_spec,
)


def test_dpm_three_observations() -> None:
    pmf = kplus_pmf_dpm(3, 1.0)

    assert pmf.probs == pytest.approx([1 / 3, 1 / 2, 1 / 6], rel=1e-12)
    assert pmf.covered_mass == pytest.approx(1.0)


def test_dpm_reference_mode_and_tail() -> None:
    pmf = kplus_pmf(reference_spec("dpm", 100))

    assert pmf.mode == 2
    assert pmf.tail(10) < 1e-5


@pytest.mark.parametrize("N", [10, 100, 1000])
@pytest.mark.parametrize("alpha", [1 / 3, 1.0, 3.0])
def test_dpm_mean_matches_series(N: int, alpha: float) -> None:
    pmf = kplus_pmf_dpm(N, alpha)
    k = np.arange(1, N + 1)

    expected = sum(alpha / (alpha + i) for i in range(N))

    assert float(np.dot(k, pmf.probs)) == pytest.approx(expected, rel=1e-10)


def test_static_reference_shape() -> None:
    pmf = kplus_pmf(reference_spec("static", 100))
    probs = pmf.probs

    assert np.all(np.diff(probs[:18]) >= 0)
    assert np.all(np.diff(probs[20:30]) < 0)
    assert np.all(probs[30:] == 0.0)
    assert probs.sum() == pytest.approx(1.0, abs=1e-10)


def test_dynamic_reference_homogeneity() -> None:
    pmf = kplus_pmf(reference_spec("dynamic", 100))

    assert pmf.mode == 1
    assert pmf.prob(1) > 0.5
    assert pmf.covered_mass == pytest.approx(1.0, abs=1e-7)


def _static_unit_gamma_mean(N: int, hi: int) -> float:
    # γ = 1: P(компонента пуста | K) = (K-1)/(N+K-1).
    return sum(K * N / (N + K - 1) for K in range(1, hi + 1)) / hi


def test_static_mean_approaches_prior_mean() -> None:
    spec = reference_spec("static", 500)

    summary = kplus_summaries(kplus_pmf(spec))

    assert summary.mean == pytest.approx(_static_unit_gamma_mean(500, 30), rel=1e-10)
    assert summary.mean == pytest.approx(14.925854431204028, rel=1e-10)
    assert summary.mean < spec.prior_k.mean()


@pytest.mark.parametrize("N", [10, 100])
def test_static_mean_matches_closed_form(N: int) -> None:
    pmf = kplus_pmf(ModelSpec.static(N, 1.0, UniformPrior(1, 30)))

    assert kplus_summaries(pmf).mean == pytest.approx(_static_unit_gamma_mean(N, 30), rel=1e-10)


@pytest.mark.parametrize(
    "spec",
    [
        ModelSpec.static(40, 1.0, UniformPrior(1, 30)),
        ModelSpec.dynamic(40, 1.0, UniformPrior(1, 30)),
        ModelSpec.static(40, 0.3, PointMassPrior(6)),
        ModelSpec.dynamic(40, 2.0, UniformPrior(5, 12)),
    ],
)
def test_finite_support_pmf_sums_to_one(spec: ModelSpec) -> None:
    assert kplus_pmf(spec).probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_point_mass_above_hard_cap() -> None:
    pmf = kplus_pmf(ModelSpec.dynamic(50, 1.0, PointMassPrior(1000)))

    assert pmf.k_max_used == 1000
    assert pmf.probs.sum() == pytest.approx(1.0, abs=1e-10)
    assert not pmf.truncated


def test_large_point_mass_approaches_dpm() -> None:
    alpha = 1.0
    finite = kplus_pmf(ModelSpec.dynamic(50, alpha, PointMassPrior(10_000)))
    limit = kplus_pmf_dpm(50, alpha)

    assert 0.5 * np.sum(np.abs(finite.probs - limit.probs)) < 1e-3


@pytest.mark.parametrize("K0, gamma", [(5, 1.0), (8, 0.5), (3, 2.0)])
def test_static_and_dynamic_agree_under_point_mass(K0: int, gamma: float) -> None:
    static = kplus_pmf(ModelSpec.static(40, gamma, PointMassPrior(K0)))
    dynamic = kplus_pmf(ModelSpec.dynamic(40, gamma * K0, PointMassPrior(K0)))

    assert np.max(np.abs(static.probs - dynamic.probs)) <= 1e-12


def test_single_observation() -> None:
    pmf = kplus_pmf(ModelSpec.static(1, 1.0, UniformPrior(1, 30)))

    assert list(pmf.probs) == pytest.approx([1.0])


def test_point_mass_one_is_homogeneous() -> None:
    pmf = kplus_pmf(ModelSpec.static(12, 1.0, PointMassPrior(1)))

    assert pmf.prob(1) == pytest.approx(1.0)
    assert pmf.tail(1) == 0.0


@settings(max_examples=25, deadline=None)
@given(
    N=st.integers(min_value=1, max_value=30),
    gamma=st.floats(min_value=0.05, max_value=5.0),
    hi=st.integers(min_value=1, max_value=12),
)
def test_static_pmf_normalizes(N: int, gamma: float, hi: int) -> None:
    pmf = kplus_pmf(ModelSpec.static(N, gamma, UniformPrior(1, hi)))

    assert pmf.probs.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.all(pmf.probs[hi:] == 0.0)


def test_dynamic_pmf_normalizes_for_bnb() -> None:
    pmf = kplus_pmf(ModelSpec.dynamic(30, 1.0, BetaNegBinomialPrior(1.0, 4.0, 3.0)))

    assert pmf.probs.sum() == pytest.approx(1.0, abs=1e-7)
    assert not pmf.truncated


def test_summaries_quantile_convention() -> None:
    pmf = kplus_pmf_dpm(3, 1.0)

    assert kplus_summaries(pmf, 0.99).quantile == 3
    assert kplus_summaries(pmf, 0.5).quantile == 2
    assert kplus_summaries(pmf, 1 / 3).quantile == 1


def test_quantile_slack_only_absorbs_rounding() -> None:
    pmf = KPlusPmf(N=3, probs=np.array([0.25, 0.5, 0.25]), covered_mass=1.0, model="static")

    assert kplus_summaries(pmf, 0.25).quantile == 1
    assert kplus_summaries(pmf, 0.25 + 1e-14).quantile == 1
    assert kplus_summaries(pmf, 0.25 + 1e-9).quantile == 2


def test_summaries_moments() -> None:
    summary = kplus_summaries(kplus_pmf_dpm(3, 1.0), 0.9)

    assert summary.mean == pytest.approx(11 / 6)
    assert summary.sd == pytest.approx(math.sqrt(23 / 6 - (11 / 6) ** 2))
    assert summary.p_homogeneity == pytest.approx(1 / 3)
    assert summary.mode == 2


def test_summaries_reject_low_mass() -> None:
    pmf = KPlusPmf(N=3, probs=np.array([0.1, 0.2, 0.1]), covered_mass=0.4, model="static")

    with pytest.raises(TruncationError):
        kplus_summaries(pmf)


def test_summaries_reject_bad_quantile() -> None:
    with pytest.raises(ValueError):
        kplus_summaries(kplus_pmf_dpm(3, 1.0), 1.0)


def test_table_headers() -> None:
    spec = ModelSpec.static(4, 1.0, UniformPrior(1, 3))
    pmf = kplus_pmf(spec)

    plain = pmf.to_table().to_csv().splitlines()
    with_prior = pmf.to_table(prior_k_column(spec)).to_csv().splitlines()

    assert plain[0] == "k,prob"
    assert len(plain) == 5
    assert with_prior[0] == "k,prob,prior_k"
    assert with_prior[4].endswith(",0")
    assert prior_k_column(reference_spec("dpm", 4)) is None
