"""Event-driven Monte Carlo of the remote estimation system.

The source is a CTMC, the sensor samples according to a SamplingPolicy and
the channel has exponential service with preemption: a source change during
a transmission cancels it, so only the currently observed value is ever
delivered. Feedback is instantaneous.

Runs are measured in synchronization cycles. A cycle starts when source and
monitor agree (after a mismatch) and ends at the next such instant, so the
estimators are ratios of regenerative cycle sums.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import numpy as np
import scipy.stats
from numpy.typing import ArrayLike, NDArray

from .diagnostics import SIMULATOR_DIAGNOSTICS as DIAGNOSTICS
from .exceptions import CalibrationFailed, ConfigError, NonMonotoneScript
from .interface import SamplingPolicy
from .markov import GeneratorMatrix, holding_and_jump
from .model import poisson_sync_chain

_LOGGER = logging.getLogger(__name__)

DEFAULT_CYCLES = 100_000
DEFAULT_BATCHES = 50
_BLOCK = 4096


class EventKind(enum.Enum):
    """Kinds of trace events."""

    SOURCE_JUMP = "SourceJump"
    TX_START = "TxStart"
    TX_PREEMPT = "TxPreempt"
    TX_DELIVER = "TxDeliver"
    SYNC_BY_DRIFT = "SyncByDrift"
    SYNC_BY_DELIVERY = "SyncByDelivery"


@dataclass(frozen=True)
class TraceEvent:
    """One event of a sample path; states in `detail` are 1-based."""

    time: float
    kind: EventKind
    aoii_after: float
    detail: str = ""

    def as_dict(self) -> dict[str, Any]:
        """Return the event as a JSON-compatible record."""
        return {
            "time": self.time,
            "kind": self.kind.value,
            "detail": self.detail,
            "aoii_after": self.aoii_after,
        }


@dataclass(frozen=True)
class EventTrace:
    """Ordered events of a sample path together with its AoII area."""

    events: tuple[TraceEvent, ...]
    area: float
    horizon: float

    def of_kind(self, kind: EventKind) -> list[TraceEvent]:
        """Return the events of one kind."""
        return [event for event in self.events if event.kind == kind]


@dataclass(frozen=True)
class SimConfig:
    """Parameters of a simulation run."""

    generator: GeneratorMatrix
    mu: float
    policy: SamplingPolicy
    cycles: int = DEFAULT_CYCLES
    seed: int = 0
    warmup_cycles: int = 0
    batches: int = DEFAULT_BATCHES
    replications: int = 1

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise ConfigError(f"Service rate must be positive, got {self.mu}")
        if self.cycles < 1 or self.replications < 1:
            raise ConfigError("cycles and replications must be at least 1")
        if self.seed < 0:
            raise ConfigError(f"Seed must be nonnegative, got {self.seed}")
        if self.warmup_cycles < 0:
            raise ConfigError("warmup_cycles must be nonnegative")
        if self.batches < 2:
            raise ConfigError(f"batches must be at least 2, got {self.batches}")


@dataclass(frozen=True)
class SimResult:
    """Monte Carlo estimates of MAoII and the sampling rate."""

    maoii_hat: float
    rate_hat: float
    cycles_run: int
    transmissions: int
    preemptions: int
    stderr_maoii: float
    stderr_rate: float
    batch_area: tuple[float, ...] = field(repr=False)
    batch_time: tuple[float, ...] = field(repr=False)
    batch_transmissions: tuple[float, ...] = field(repr=False)

    @classmethod
    def from_batches(
        cls,
        area: ArrayLike,
        time: ArrayLike,
        transmissions: ArrayLike,
        cycles_run: int,
        preemptions: int,
    ) -> SimResult:
        """Build the estimates from per-batch sums."""
        areas = np.asarray(area, dtype=float)
        times = np.asarray(time, dtype=float)
        counts = np.asarray(transmissions, dtype=float)
        maoii_batches = areas / times
        rate_batches = counts / times
        # A single batch carries no spread information.
        scale = 1.0 / math.sqrt(len(times)) if len(times) > 1 else 0.0
        return cls(
            maoii_hat=float(areas.sum() / times.sum()),
            rate_hat=float(counts.sum() / times.sum()),
            cycles_run=cycles_run,
            transmissions=int(counts.sum()),
            preemptions=preemptions,
            stderr_maoii=float(maoii_batches.std(ddof=min(1, len(times) - 1))) * scale,
            stderr_rate=float(rate_batches.std(ddof=min(1, len(times) - 1))) * scale,
            batch_area=tuple(float(x) for x in areas),
            batch_time=tuple(float(x) for x in times),
            batch_transmissions=tuple(float(x) for x in counts),
        )

    def merge(self, other: SimResult) -> SimResult:
        """Pool two independent runs."""
        return SimResult.from_batches(
            self.batch_area + other.batch_area,
            self.batch_time + other.batch_time,
            self.batch_transmissions + other.batch_transmissions,
            self.cycles_run + other.cycles_run,
            self.preemptions + other.preemptions,
        )

    def confidence_interval(self, level: float = 0.95) -> tuple[float, float]:
        """Return Student-t half widths for (MAoII, rate) over the batch means."""
        dof = len(self.batch_time) - 1
        if dof < 1:
            return 0.0, 0.0
        quantile = float(scipy.stats.t.ppf(0.5 + level / 2.0, df=dof))
        return quantile * self.stderr_maoii, quantile * self.stderr_rate

    def as_dict(self) -> dict[str, Any]:
        """Return the estimates as a JSON-compatible record."""
        ci_maoii, ci_rate = self.confidence_interval()
        return {
            "maoii_hat": self.maoii_hat,
            "rate_hat": self.rate_hat,
            "stderr_maoii": self.stderr_maoii,
            "stderr_rate": self.stderr_rate,
            "ci95_maoii": ci_maoii,
            "ci95_rate": ci_rate,
            "cycles_run": self.cycles_run,
            "transmissions": self.transmissions,
            "preemptions": self.preemptions,
        }


class _Clock(Protocol):
    """Source of source-change and service times for the engine."""

    def next_jump(self, now: float, state: int) -> tuple[float, int]:
        """Return the time and target of the next source change."""

    def commit_jump(self) -> None:
        """Mark the last returned source change as having happened."""

    def service_end(self, now: float) -> float:
        """Return the completion time of a transmission started now."""

    def exponential(self, rate: float) -> float:
        """Draw an exponential variate."""


class _RandomClock:
    """Draws from a seeded generator by inverse transform, in blocks."""

    def __init__(
        self,
        rng: np.random.Generator,
        sigma: NDArray[np.float64],
        jump: NDArray[np.float64],
        mu: float,
    ) -> None:
        self._rng = rng
        self._sigma = [float(s) for s in sigma]
        self._cumulative = np.cumsum(jump, axis=1)
        self._mu = mu
        self._uniforms: list[float] = []
        self._exponentials: list[float] = []

    def _uniform(self) -> float:
        if not self._uniforms:
            self._uniforms = self._rng.random(_BLOCK).tolist()
        return self._uniforms.pop()

    def exponential(self, rate: float) -> float:
        if rate <= 0:
            return math.inf
        if not self._exponentials:
            self._exponentials = (-np.log1p(-self._rng.random(_BLOCK))).tolist()
        return self._exponentials.pop() / rate

    def next_jump(self, now: float, state: int) -> tuple[float, int]:
        target = int(np.searchsorted(self._cumulative[state], self._uniform(), side="right"))
        return now + self.exponential(self._sigma[state]), min(target, len(self._sigma) - 1)

    def commit_jump(self) -> None:
        pass

    def service_end(self, now: float) -> float:
        return now + self.exponential(self._mu)


class _ScriptedClock:
    """Replays scripted source changes and service durations."""

    def __init__(
        self,
        jumps: Sequence[tuple[float, int]],
        services: Sequence[float],
        rng: np.random.Generator,
    ) -> None:
        self._jumps = list(jumps)
        self._services = list(services)
        self._random = _RandomClock(rng, np.ones(1), np.ones((1, 1)), 1.0)

    def next_jump(self, now: float, state: int) -> tuple[float, int]:
        if not self._jumps:
            return math.inf, state
        return self._jumps[0]

    def commit_jump(self) -> None:
        self._jumps.pop(0)

    def service_end(self, now: float) -> float:
        if not self._services:
            return math.inf
        return now + self._services.pop(0)

    def exponential(self, rate: float) -> float:
        return self._random.exponential(rate)


class _Engine:
    """State machine shared by random runs and scripted replays."""

    def __init__(
        self,
        clock: _Clock,
        policy: SamplingPolicy,
        state: int,
        estimate: int,
        trace: list[TraceEvent] | None = None,
    ) -> None:
        self._clock = clock
        self._policy = policy
        self._trace = trace
        self.now = 0.0
        self.state = state
        self.estimate = estimate
        self.since: float | None = None if state == estimate else 0.0
        self.tx_end: float | None = None
        self.area = 0.0
        self.transmissions = 0
        self.preemptions = 0

    def aoii(self) -> float:
        return 0.0 if self.since is None else self.now - self.since

    def _advance(self, to: float) -> None:
        if self.since is not None:
            self.area += 0.5 * ((to - self.since) ** 2 - (self.now - self.since) ** 2)
        self.now = to

    def _record(self, kind: EventKind, detail: str = "") -> None:
        if self._trace is not None:
            self._trace.append(TraceEvent(self.now, kind, self.aoii(), detail))

    def _sync(self, kind: EventKind) -> None:
        self.since = None
        self.tx_end = None
        self._record(kind, str(self.estimate + 1))

    def _jump(self, target: int) -> bool:
        """Apply a source change; return True if it re-synchronized."""
        self._clock.commit_jump()
        previous, self.state = self.state, target
        if self.since is None:
            self.since = self.now
        self._record(EventKind.SOURCE_JUMP, f"{previous + 1}->{target + 1}")
        if self.tx_end is not None:
            self.tx_end = None
            self.preemptions += 1
            self._record(EventKind.TX_PREEMPT, str(previous + 1))
        if self.state == self.estimate:
            self._sync(EventKind.SYNC_BY_DRIFT)
            return True
        return False

    def step(self, horizon: float = math.inf) -> bool:
        """Process the next event; return True if it ended a cycle.

        Stops at `horizon` without processing later events.
        """
        jump_time, target = self._clock.next_jump(self.now, self.state)
        if self.since is None:
            if jump_time > horizon:
                self._advance(horizon)
                return False
            self._advance(jump_time)
            return self._jump(target)

        if self.tx_end is None:
            wait = self._policy.sample_delay(
                self.estimate + 1, self.aoii(), self._clock.exponential
            )
            sample_time = self.now + wait
            if jump_time <= sample_time:
                if jump_time > horizon:
                    self._advance(horizon)
                    return False
                self._advance(jump_time)
                return self._jump(target)
            if sample_time > horizon:
                self._advance(horizon)
                return False
            self._advance(sample_time)
            self.tx_end = self._clock.service_end(self.now)
            self.transmissions += 1
            self._record(EventKind.TX_START, str(self.state + 1))
            return False

        if self.tx_end < jump_time:
            if self.tx_end > horizon:
                self._advance(horizon)
                return False
            self._advance(self.tx_end)
            self.estimate = self.state
            self._record(EventKind.TX_DELIVER, str(self.state + 1))
            self._sync(EventKind.SYNC_BY_DELIVERY)
            return True
        if jump_time > horizon:
            self._advance(horizon)
            return False
        self._advance(jump_time)
        return self._jump(target)


def _replication_rng(seed: int, index: int) -> np.random.Generator:
    """Return the counter-based generator of one replication."""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(sequence))


def _run_replication(cfg: SimConfig, index: int) -> SimResult:
    sigma, jump = holding_and_jump(cfg.generator)
    clock = _RandomClock(_replication_rng(cfg.seed, index), sigma, jump, cfg.mu)
    engine = _Engine(clock, cfg.policy, state=0, estimate=0)

    completed = 0
    while completed < cfg.warmup_cycles:
        completed += engine.step()
    engine.area = 0.0
    engine.transmissions = 0
    engine.preemptions = 0
    start = engine.now

    n_batches = min(cfg.batches, cfg.cycles)
    area = np.zeros(n_batches)
    time = np.zeros(n_batches)
    transmissions = np.zeros(n_batches)
    marks = (0.0, 0, start)
    for cycle in range(cfg.cycles):
        while not engine.step():
            pass
        batch = cycle * n_batches // cfg.cycles
        area[batch] += engine.area - marks[0]
        transmissions[batch] += engine.transmissions - marks[1]
        time[batch] += engine.now - marks[2]
        marks = (engine.area, engine.transmissions, engine.now)
    DIAGNOSTICS.increment("cycles", cfg.cycles)
    DIAGNOSTICS.increment("transmissions", engine.transmissions)
    DIAGNOSTICS.increment("preemptions", engine.preemptions)
    return SimResult.from_batches(area, time, transmissions, cfg.cycles, engine.preemptions)


def simulate(cfg: SimConfig) -> SimResult:
    """Simulate the system for `cfg.cycles` synchronization cycles per replication."""
    DIAGNOSTICS.increment("simulate")
    _LOGGER.debug(
        "Simulating %s for %d cycles x %d replications (seed=%d)",
        cfg.policy.as_dict(),
        cfg.cycles,
        cfg.replications,
        cfg.seed,
    )
    result = _run_replication(cfg, 0)
    for index in range(1, cfg.replications):
        result = result.merge(_run_replication(cfg, index))
    _LOGGER.debug("maoii_hat=%.6g rate_hat=%.6g", result.maoii_hat, result.rate_hat)
    return result


def sample_path(cfg: SimConfig, horizon: float) -> EventTrace:
    """Return the event trace of a random run over [0, horizon]."""
    sigma, jump = holding_and_jump(cfg.generator)
    clock = _RandomClock(_replication_rng(cfg.seed, 0), sigma, jump, cfg.mu)
    events: list[TraceEvent] = []
    engine = _Engine(clock, cfg.policy, state=0, estimate=0, trace=events)
    while engine.now < horizon:
        engine.step(horizon=horizon)
    return EventTrace(events=tuple(events), area=engine.area, horizon=horizon)


def replay(
    policy: SamplingPolicy,
    jumps: Sequence[tuple[float, int]],
    services: Sequence[float],
    initial_state: int = 1,
    initial_estimate: int = 1,
    horizon: float | None = None,
    seed: int = 0,
) -> EventTrace:
    """Replay a scripted sample path and return its event trace.

    `jumps` are (time, new state) source changes and `services` are the
    service durations of successive transmissions; states are 1-based. The
    seed only matters for policies that draw their own sampling instants.
    """
    times = [t for t, _ in jumps]
    if any(b <= a for a, b in zip(times, times[1:])) or any(t < 0 for t in times):
        raise NonMonotoneScript(f"Scripted jump times must be strictly increasing: {times}")
    if any(s < 0 for s in services):
        raise NonMonotoneScript("Scripted service durations must be nonnegative")
    end = horizon if horizon is not None else (times[-1] if times else 0.0)
    script = [(t, k - 1) for t, k in jumps]
    events: list[TraceEvent] = []
    clock = _ScriptedClock(script, services, np.random.default_rng(seed))
    engine = _Engine(clock, policy, initial_state - 1, initial_estimate - 1, trace=events)
    while engine.now < end:
        engine.step(horizon=end)
    return EventTrace(events=tuple(events), area=engine.area, horizon=end)


def write_trace(trace: EventTrace, path: Path) -> None:
    """Write the trace as line-delimited JSON records."""
    with path.open("w", encoding="utf-8") as out:
        for event in trace.events:
            out.write(json.dumps(event.as_dict()) + "\n")


@dataclass(frozen=True)
class PoissonCalibration:
    """Poisson intensity meeting a sampling rate budget."""

    gamma: float
    rate: float
    trajectory: tuple[tuple[float, float], ...]
    """(gamma, rate) pairs visited by the search."""


GAMMA_CAP = 1e6


def calibrate_poisson(
    g: GeneratorMatrix,
    mu: float,
    b: float,
    eps: float = 1e-2,
    max_iters: int = 200,
    rate_of: Callable[[float], float] | None = None,
) -> PoissonCalibration:
    """Find the Poisson intensity whose sampling rate equals the budget b.

    The rate is taken from the analytical Poisson model unless `rate_of` is
    given. If even GAMMA_CAP stays under budget, the budget is slack and
    GAMMA_CAP is returned.
    """
    if not b > 0:
        raise ConfigError(f"Budget must be positive, got {b}")
    trajectory: list[tuple[float, float]] = []

    def rate(gamma: float) -> float:
        value = rate_of(gamma) if rate_of else poisson_sync_chain(g, mu, gamma).rate
        trajectory.append((gamma, value))
        return value

    def result(gamma: float, value: float) -> PoissonCalibration:
        return PoissonCalibration(gamma=gamma, rate=value, trajectory=tuple(trajectory))

    lo, hi = 0.0, 1.0
    hi_rate = rate(hi)
    while hi_rate < b - eps:
        if hi >= GAMMA_CAP:
            _LOGGER.info("Budget %.6g is slack for Poisson sampling (rate %.6g)", b, hi_rate)
            return result(hi, hi_rate)
        lo, hi = hi, min(2.0 * hi, GAMMA_CAP)
        hi_rate = rate(hi)
    if abs(hi_rate - b) <= eps:
        return result(hi, hi_rate)
    for _ in range(max_iters):
        mid = 0.5 * (lo + hi)
        mid_rate = rate(mid)
        if abs(mid_rate - b) <= eps:
            return result(mid, mid_rate)
        if mid_rate > b:
            hi = mid
        else:
            lo = mid
    raise CalibrationFailed(f"No Poisson intensity meets budget {b} within {eps}")
