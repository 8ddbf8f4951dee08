from __future__ import annotations

import math

import pytest

from aoii_csmdp.exceptions import ConfigError
from aoii_csmdp.markov import GeneratorMatrix
from aoii_csmdp.model import ThresholdPolicy, sync_chain
from aoii_csmdp.policies import Poisson, SingleThreshold, Thresholds, policy_from_dict


def test_thresholds_wait_for_estimate_threshold() -> None:
    """Test that the threshold is picked by the monitor estimate."""
    policy = Thresholds([0.5, 2.0, 1.0])
    assert policy.sample_delay(2, 0.5, lambda rate: math.inf) == pytest.approx(1.5)
    assert policy.sample_delay(1, 4.0, lambda rate: math.inf) == 0.0
    assert policy.as_dict() == {"kind": "thresholds", "tau": [0.5, 2.0, 1.0]}


def test_single_threshold_ignores_estimate() -> None:
    """Test the equal-threshold baseline."""
    policy = SingleThreshold(2.0)
    assert policy.sample_delay(1, 0.5, lambda rate: 0.0) == pytest.approx(1.5)
    assert policy.sample_delay(3, 0.5, lambda rate: 0.0) == pytest.approx(1.5)


def test_poisson_draws_delays() -> None:
    """Test that Poisson sampling draws exponential delays at its intensity."""
    rates: list[float] = []

    def exponential(rate: float) -> float:
        rates.append(rate)
        return 0.25

    assert Poisson(3.0).sample_delay(1, 10.0, exponential) == 0.25
    assert rates == [3.0]


def test_single_threshold_chain(q2: GeneratorMatrix) -> None:
    """Test that the baseline matches equal thresholds."""
    chain = SingleThreshold(1.5).analytic_chain(q2, 1.0)
    expected = sync_chain(q2, 1.0, ThresholdPolicy.uniform(3, 1.5))
    assert chain.maoii == pytest.approx(expected.maoii)
    assert chain.rate == pytest.approx(expected.rate)


def test_threshold_count_must_match(q2: GeneratorMatrix) -> None:
    """Test that a policy needs one threshold per state."""
    with pytest.raises(ConfigError):
        Thresholds([1.0, 1.0]).analytic_chain(q2, 1.0)


@pytest.mark.parametrize(
    "data",
    [
        {"kind": "thresholds", "tau": [1.0, 2.0]},
        {"kind": "single_threshold", "tau": 1.0},
        {"kind": "poisson", "gamma": 0.5},
    ],
)
def test_policy_round_trip(data: dict[str, object]) -> None:
    """Test building policies from their records."""
    assert policy_from_dict(data).as_dict() == data


@pytest.mark.parametrize(
    "data",
    [
        {"kind": "random"},
        {"kind": "thresholds"},
        {"kind": "poisson", "gamma": "fast"},
        {"kind": "single_threshold", "tau": -1.0},
    ],
)
def test_malformed_policies(data: dict[str, object]) -> None:
    """Test rejected policy records."""
    with pytest.raises(ConfigError):
        policy_from_dict(data)
