"""Threshold, single-threshold and Poisson sampling policies."""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from typing import Any

from .exceptions import ConfigError
from .interface import SamplingPolicy
from .markov import GeneratorMatrix
from .model import SyncChain, ThresholdPolicy, poisson_sync_chain, sync_chain


class Thresholds(SamplingPolicy):
    """Sample once AoII reaches tau_j, where j is the monitor estimate."""

    def __init__(self, tau: Sequence[float] | ThresholdPolicy) -> None:
        """Initialize Thresholds."""
        self._policy = tau if isinstance(tau, ThresholdPolicy) else ThresholdPolicy.of(tau)

    @property
    def policy(self) -> ThresholdPolicy:
        """The threshold vector."""
        return self._policy

    def sample_delay(
        self, estimate: int, aoii: float, exponential: Callable[[float], float]
    ) -> float:
        """Return the time left until AoII reaches the threshold."""
        return max(float(self._policy.tau[estimate - 1]) - aoii, 0.0)

    def analytic_chain(self, g: GeneratorMatrix, mu: float) -> SyncChain:
        """Return the synchronization chain of the thresholds."""
        if self._policy.tau.size != g.n:
            raise ConfigError(f"Policy has {self._policy.tau.size} thresholds for {g.n} states")
        return sync_chain(g, mu, self._policy)

    def as_dict(self) -> dict[str, Any]:
        """Return the policy as a JSON-compatible record."""
        return {"kind": "thresholds", "tau": self._policy.to_list()}


class SingleThreshold(SamplingPolicy):
    """The same threshold regardless of the monitor estimate."""

    def __init__(self, tau: float) -> None:
        """Initialize SingleThreshold."""
        if not tau >= 0 or not math.isfinite(tau):
            raise ConfigError(f"Threshold must be finite and nonnegative, got {tau}")
        self._tau = tau

    def sample_delay(
        self, estimate: int, aoii: float, exponential: Callable[[float], float]
    ) -> float:
        """Return the time left until AoII reaches the threshold."""
        return max(self._tau - aoii, 0.0)

    def analytic_chain(self, g: GeneratorMatrix, mu: float) -> SyncChain:
        """Return the synchronization chain of the equal thresholds."""
        return sync_chain(g, mu, ThresholdPolicy.uniform(g.n, self._tau))

    def as_dict(self) -> dict[str, Any]:
        """Return the policy as a JSON-compatible record."""
        return {"kind": "single_threshold", "tau": self._tau}


class Poisson(SamplingPolicy):
    """Sample at the instants of a rate-gamma Poisson process while idle and out of sync."""

    def __init__(self, gamma: float) -> None:
        """Initialize Poisson."""
        if not gamma >= 0 or not math.isfinite(gamma):
            raise ConfigError(f"Sampling intensity must be finite and nonnegative, got {gamma}")
        self._gamma = gamma

    @property
    def gamma(self) -> float:
        """The sampling intensity."""
        return self._gamma

    def sample_delay(
        self, estimate: int, aoii: float, exponential: Callable[[float], float]
    ) -> float:
        """Draw the time to the next sampling instant."""
        return exponential(self._gamma)

    def analytic_chain(self, g: GeneratorMatrix, mu: float) -> SyncChain:
        """Return the synchronization chain of Poisson sampling."""
        return poisson_sync_chain(g, mu, self._gamma)

    def as_dict(self) -> dict[str, Any]:
        """Return the policy as a JSON-compatible record."""
        return {"kind": "poisson", "gamma": self._gamma}


def policy_from_dict(data: dict[str, Any]) -> SamplingPolicy:
    """Build a policy from its JSON record."""
    kind = data.get("kind")
    try:
        if kind == "thresholds":
            return Thresholds([float(x) for x in data["tau"]])
        if kind == "single_threshold":
            return SingleThreshold(float(data["tau"]))
        if kind == "poisson":
            return Poisson(float(data["gamma"]))
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"Malformed {kind} policy: {data}") from err
    raise ConfigError(f"Unknown policy kind: {kind}")
