"""Interface for sampling policies driven by the simulator."""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections.abc import Callable
from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from .markov import GeneratorMatrix
    from .model import SyncChain


class SamplingPolicy(ABC):
    """Decides when the sensor samples while the monitor is out of sync."""

    @abstractmethod
    def sample_delay(
        self, estimate: int, aoii: float, exponential: Callable[[float], float]
    ) -> float:
        """Return the time until the next sample from an idle, out-of-sync state.

        `estimate` is the monitor value (1-based), `aoii` the current AoII and
        `exponential(rate)` draws an exponential variate. Returns math.inf if
        the sensor would never sample.
        """

    @abstractmethod
    def analytic_chain(self, g: GeneratorMatrix, mu: float) -> SyncChain:
        """Return the analytical synchronization chain of this policy."""

    @abstractmethod
    def as_dict(self) -> dict[str, Any]:
        """Return the policy as a JSON-compatible record."""
