from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.integrate
from numpy.testing import assert_allclose

from aoii_csmdp import phasetype
from aoii_csmdp.exceptions import ConditioningOnNull, ConfigError, SingularMatrix
from aoii_csmdp.phasetype import AbsorbingChain

# From phase 0 the chain absorbs into column 0 w.p. 2/3 and moves to phase 1
# w.p. 1/3, from where it absorbs into column 1.
BRANCHING = AbsorbingChain.from_arrays(
    A=[[-3.0, 1.0], [0.0, -2.0]],
    B=[[2.0, 0.0], [0.0, 2.0]],
    beta=[1.0, 0.0],
)

ERLANG = phasetype.phase_type([[-2.0, 2.0], [0.0, -2.0]], [1.0, 0.0])


def test_exponential_cdf_pdf() -> None:
    """Test the distribution functions of an exponential law."""
    ph = phasetype.phase_type([[-2.0]], [1.0])
    assert phasetype.ph_cdf(ph, 1.0) == pytest.approx(1.0 - math.exp(-2.0))
    assert phasetype.ph_pdf(ph, 1.0) == pytest.approx(2.0 * math.exp(-2.0))
    assert phasetype.ph_cdf(ph, 0.0) == 0.0
    assert phasetype.ph_moments(ph) == pytest.approx((0.5, 0.5))


def test_erlang_moments() -> None:
    """Test moments against the Erlang(2, 2) closed form."""
    mean, second = phasetype.ph_moments(ERLANG)
    assert mean == pytest.approx(1.0)
    assert second == pytest.approx(1.5)


def test_pdf_integrates_to_one() -> None:
    """Test pdf normalization and the first moment by quadrature."""
    mass, _ = scipy.integrate.quad(lambda t: phasetype.ph_pdf(ERLANG, t), 0.0, math.inf)
    mean, _ = scipy.integrate.quad(lambda t: t * phasetype.ph_pdf(ERLANG, t), 0.0, math.inf)
    assert mass == pytest.approx(1.0, abs=1e-6)
    assert mean == pytest.approx(1.0, abs=1e-6)


def test_conditional_moments_exponential() -> None:
    """Test E[T | T < 1] and E[T^2 | T < 1] for a unit exponential."""
    ph = phasetype.phase_type([[-1.0]], [1.0])
    first, second = phasetype.ph_conditional_moments(ph, 1.0)
    cdf = 1.0 - math.exp(-1.0)
    assert first == pytest.approx(0.418023, abs=1e-6)
    assert first == pytest.approx((1.0 - 2.0 * math.exp(-1.0)) / cdf)
    assert second == pytest.approx((2.0 - 5.0 * math.exp(-1.0)) / cdf)


def test_conditional_moments_by_quadrature() -> None:
    """Test conditional moments of a two-phase law by quadrature."""
    tau = 0.8
    first, second = phasetype.ph_conditional_moments(ERLANG, tau)
    cdf = phasetype.ph_cdf(ERLANG, tau)
    m1, _ = scipy.integrate.quad(lambda t: t * phasetype.ph_pdf(ERLANG, t), 0.0, tau)
    m2, _ = scipy.integrate.quad(lambda t: t * t * phasetype.ph_pdf(ERLANG, t), 0.0, tau)
    assert first == pytest.approx(m1 / cdf, rel=1e-8)
    assert second == pytest.approx(m2 / cdf, rel=1e-8)


def test_conditioning_on_null_event() -> None:
    """Test that conditioning on T < 0 is rejected."""
    with pytest.raises(ConditioningOnNull):
        phasetype.ph_conditional_moments(ERLANG, 0.0)


def test_tail_mean_memoryless() -> None:
    """Test E[T | T >= tau] = tau + 1/rate for an exponential law."""
    ph = phasetype.phase_type([[-4.0]], [1.0])
    assert phasetype.ph_tail_mean(ph, 3.0) == pytest.approx(3.25)


def test_total_expectation() -> None:
    """Test that the conditional means recombine into the mean."""
    tau = 1.3
    cdf = phasetype.ph_cdf(ERLANG, tau)
    head, _ = phasetype.ph_conditional_moments(ERLANG, tau)
    tail = phasetype.ph_tail_mean(ERLANG, tau)
    assert cdf * head + (1.0 - cdf) * tail == pytest.approx(1.0, rel=1e-9)


def test_mat_exp_semigroup() -> None:
    """Test e^{(s+t)A} = e^{sA} e^{tA}."""
    A = np.array([[-1.025, 0.025], [0.4, -0.41]])
    assert_allclose(
        phasetype.mat_exp(A, 1.7),
        phasetype.mat_exp(A, 0.5) @ phasetype.mat_exp(A, 1.2),
        atol=1e-9,
    )
    assert_allclose(phasetype.mat_exp(A, 0.0), np.eye(2))


def test_mat_exp_matches_taylor_series() -> None:
    """Test e^{A} against its power series on the waiting block of S_1."""
    A = np.array([[-0.75, 0.7], [0.01, -0.41]])
    expected = np.zeros_like(A)
    term = np.eye(2)
    for k in range(1, 62):
        expected += term
        term = term @ A / k
    assert_allclose(phasetype.mat_exp(A, 1.0), expected, rtol=0.0, atol=1e-10)


def test_mat_exp_negative_time() -> None:
    """Test that negative times are rejected."""
    with pytest.raises(ConfigError):
        phasetype.mat_exp([[-1.0]], -1.0)


def test_absorption_probs() -> None:
    """Test the absorption probabilities of the branching chain."""
    assert_allclose(phasetype.absorption_probs(BRANCHING), [2.0 / 3.0, 1.0 / 3.0])


def test_embedded_dtmc_divides_rows() -> None:
    """Test that each row is divided by its own exit rate."""
    assert_allclose(phasetype.embedded_dtmc(BRANCHING.A), [[0.0, 1.0 / 3.0], [0.0, 0.0]])


def test_fundamental_matrix_and_visits() -> None:
    """Test expected visits of the branching chain."""
    assert_allclose(phasetype.fundamental_matrix(BRANCHING.A), [[1.0, 1.0 / 3.0], [0.0, 1.0]])
    assert phasetype.expected_visits(BRANCHING) == pytest.approx(4.0 / 3.0)


def test_sample_absorption_matches_analysis() -> None:
    """Test Monte Carlo absorption against the analytical values."""
    sample = phasetype.sample_absorption(BRANCHING, 20_000, np.random.default_rng(1))
    into_first = float(np.mean(sample.absorbed_into == 0))
    assert into_first == pytest.approx(2.0 / 3.0, abs=0.02)
    assert sample.times.mean() == pytest.approx(0.5, abs=0.02)
    assert sample.visits.mean() == pytest.approx(4.0 / 3.0, abs=0.02)
    assert sample.summary()["paths"] == 20_000


def test_singular_matrix() -> None:
    """Test that singular matrices are rejected by the factorization."""
    with pytest.raises(SingularMatrix):
        phasetype.lu(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_invalid_chain() -> None:
    """Test that rows of [A | B] must sum to zero."""
    with pytest.raises(ConfigError):
        AbsorbingChain.from_arrays(A=[[-1.0]], B=[[2.0]], beta=[1.0])
    with pytest.raises(ConfigError):
        AbsorbingChain.from_arrays(A=[[-1.0]], B=[[1.0]], beta=[0.5])
