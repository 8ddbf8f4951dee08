from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from aoii_csmdp import diagnostics
from aoii_csmdp.exceptions import ConfigError, NonMonotoneScript
from aoii_csmdp.markov import GeneratorMatrix
from aoii_csmdp.model import ThresholdPolicy, poisson_sync_chain, sync_chain
from aoii_csmdp.policies import Poisson, Thresholds
from aoii_csmdp.simulator import (
    EventKind,
    SimConfig,
    SimResult,
    calibrate_poisson,
    replay,
    sample_path,
    simulate,
    write_trace,
)
from aoii_csmdp.validation import random_script, trace_is_consistent

BAND = 4.0


def binary_path() -> tuple[Thresholds, list[tuple[float, int]], list[float]]:
    """Sample path of a binary source with one drift and two deliveries."""
    return Thresholds([0.5, 0.0]), [(4.0, 2), (7.0, 1), (8.0, 2)], [2.0, 5.0, 0.5]


def test_replay_binary_path() -> None:
    """Test drift and delivery epochs of the binary sample path."""
    policy, jumps, services = binary_path()
    trace = replay(policy, jumps, services, initial_state=1, initial_estimate=2, horizon=11.0)
    assert [e.time for e in trace.of_kind(EventKind.SYNC_BY_DRIFT)] == [7.0]
    assert [e.time for e in trace.of_kind(EventKind.SYNC_BY_DELIVERY)] == [2.0, 9.0]
    assert [e.time for e in trace.of_kind(EventKind.TX_START)] == [0.0, 4.5, 8.5]
    assert [e.time for e in trace.of_kind(EventKind.TX_PREEMPT)] == [7.0]
    assert not [e for e in trace.of_kind(EventKind.TX_DELIVER) if e.time == 7.0]
    assert trace.area == pytest.approx(7.0)
    assert trace_is_consistent(trace, 1, 2)


def test_replay_preemption() -> None:
    """Test that a source change mid-service preempts and restarts at once."""
    trace = replay(Thresholds([1.0, 1.0, 1.0]), [(1.0, 2), (3.0, 3)], [3.0, 0.5], horizon=4.0)
    assert [(e.time, e.kind, e.detail) for e in trace.events] == [
        (1.0, EventKind.SOURCE_JUMP, "1->2"),
        (2.0, EventKind.TX_START, "2"),
        (3.0, EventKind.SOURCE_JUMP, "2->3"),
        (3.0, EventKind.TX_PREEMPT, "2"),
        (3.0, EventKind.TX_START, "3"),
        (3.5, EventKind.TX_DELIVER, "3"),
        (3.5, EventKind.SYNC_BY_DELIVERY, "3"),
    ]
    assert trace.area == pytest.approx(0.5 * 2.5**2)


def test_replay_empty_script() -> None:
    """Test that an empty script gives an empty trace."""
    trace = replay(Thresholds([1.0, 1.0]), [], [])
    assert trace.events == ()
    assert trace.area == 0.0


@pytest.mark.parametrize("jumps", [[(2.0, 2), (1.0, 1)], [(1.0, 2), (1.0, 1)], [(-1.0, 2)]])
def test_replay_rejects_unordered_script(jumps: list[tuple[float, int]]) -> None:
    """Test that scripted times must be strictly increasing."""
    with pytest.raises(NonMonotoneScript):
        replay(Thresholds([1.0, 1.0]), jumps, [1.0])


def test_random_traces_are_consistent(q2: GeneratorMatrix) -> None:
    """Test AoII against synchronization on random replays."""
    rng = np.random.default_rng(5)
    for _ in range(10):
        jumps, services = random_script(q2, 1.0, 40.0, rng)
        trace = replay(Thresholds([0.3, 1.0, 0.0]), jumps, services, horizon=40.0)
        assert trace_is_consistent(trace)
        times = [e.time for e in trace.events]
        assert times == sorted(times)


def test_simulation_matches_analysis(q1: GeneratorMatrix) -> None:
    """Test simulated MAoII and rate against the synchronization chain."""
    policy = Thresholds([0.0, 0.0])
    chain = sync_chain(q1, 1.0, policy.policy)
    result = simulate(SimConfig(generator=q1, mu=1.0, policy=policy, cycles=20_000, seed=3))
    assert abs(result.maoii_hat - chain.maoii) <= BAND * result.stderr_maoii
    assert abs(result.rate_hat - chain.rate) <= BAND * result.stderr_rate
    assert result.cycles_run == 20_000
    assert diagnostics.get_diagnostics()["simulator"]["cycles"] == 20_000


def test_simulation_with_preemption(q2: GeneratorMatrix) -> None:
    """Test a ternary source, where preemption happens, against the analysis."""
    policy = Thresholds([1.0, 2.0, 1.5])
    chain = sync_chain(q2, 1.0, policy.policy)
    result = simulate(SimConfig(generator=q2, mu=1.0, policy=policy, cycles=20_000, seed=8))
    assert result.preemptions > 0
    assert abs(result.maoii_hat - chain.maoii) <= BAND * result.stderr_maoii
    assert abs(result.rate_hat - chain.rate) <= BAND * result.stderr_rate


def test_poisson_simulation_matches_analysis(q2: GeneratorMatrix) -> None:
    """Test the Poisson baseline against its analytical model."""
    chain = poisson_sync_chain(q2, 1.0, 1.0)
    result = simulate(
        SimConfig(generator=q2, mu=1.0, policy=Poisson(1.0), cycles=20_000, seed=4)
    )
    assert abs(result.maoii_hat - chain.maoii) <= BAND * result.stderr_maoii
    assert abs(result.rate_hat - chain.rate) <= BAND * result.stderr_rate


def test_no_sampling_drift_only(q1: GeneratorMatrix) -> None:
    """Test that without sampling the monitor only syncs by drift."""
    result = simulate(
        SimConfig(generator=q1, mu=1.0, policy=Poisson(0.0), cycles=20_000, seed=9)
    )
    assert result.rate_hat == 0.0
    assert result.transmissions == 0
    # Every cycle returns to S_1: hold at 1, then drift back from 2.
    expected = (1.0 / 0.75**2) / (1.0 / 0.6 + 1.0 / 0.75)
    assert abs(result.maoii_hat - expected) <= BAND * result.stderr_maoii


def test_seed_determinism(q2: GeneratorMatrix) -> None:
    """Test that identical configs give identical results."""
    cfg = SimConfig(generator=q2, mu=1.0, policy=Thresholds([1.0, 1.0, 1.0]), cycles=500, seed=7)
    assert simulate(cfg) == simulate(cfg)
    other = simulate(SimConfig(generator=q2, mu=1.0, policy=cfg.policy, cycles=500, seed=8))
    assert other.maoii_hat != simulate(cfg).maoii_hat


def test_replications_and_merge(q1: GeneratorMatrix) -> None:
    """Test pooled replications."""
    cfg = SimConfig(
        generator=q1, mu=1.0, policy=Thresholds([0.5, 0.5]), cycles=1000, seed=1, replications=3
    )
    result = simulate(cfg)
    assert result.cycles_run == 3000
    assert len(result.batch_time) == 150
    merged = result.merge(simulate(cfg))
    assert merged.cycles_run == 6000
    assert merged.maoii_hat == pytest.approx(result.maoii_hat)


def test_merge_is_order_independent() -> None:
    """Test that merging sums areas, times and counts."""
    first = SimResult.from_batches([1.0, 2.0], [2.0, 2.0], [1.0, 1.0], 10, 1)
    second = SimResult.from_batches([3.0, 3.0], [4.0, 2.0], [2.0, 0.0], 10, 2)
    forward, backward = first.merge(second), second.merge(first)
    assert forward.maoii_hat == pytest.approx(9.0 / 10.0)
    assert forward.maoii_hat == pytest.approx(backward.maoii_hat)
    assert forward.rate_hat == pytest.approx(backward.rate_hat)
    assert forward.preemptions == 3
    assert forward.transmissions == 4


def test_confidence_interval(q1: GeneratorMatrix) -> None:
    """Test Student-t half widths over the batch means."""
    result = simulate(SimConfig(generator=q1, mu=1.0, policy=Thresholds([0.0, 0.0]), cycles=500))
    ci_maoii, ci_rate = result.confidence_interval(0.95)
    assert ci_maoii == pytest.approx(2.0096 * result.stderr_maoii, rel=1e-3)
    assert ci_rate > result.stderr_rate
    record = result.as_dict()
    assert record["ci95_maoii"] == pytest.approx(ci_maoii)
    assert record["cycles_run"] == 500


def test_sim_config_validation(q1: GeneratorMatrix) -> None:
    """Test rejected simulation parameters."""
    policy = Thresholds([0.0, 0.0])
    with pytest.raises(ConfigError):
        SimConfig(generator=q1, mu=0.0, policy=policy)
    with pytest.raises(ConfigError):
        SimConfig(generator=q1, mu=1.0, policy=policy, cycles=0)
    with pytest.raises(ConfigError):
        Poisson(-1.0)


def test_sample_path_and_trace_file(q2: GeneratorMatrix, tmp_path: Path) -> None:
    """Test a random trace and its line-delimited export."""
    cfg = SimConfig(generator=q2, mu=1.0, policy=Thresholds([0.5, 0.5, 0.5]), seed=2)
    trace = sample_path(cfg, 30.0)
    assert trace_is_consistent(trace)
    path = tmp_path / "trace.jsonl"
    write_trace(trace, path)
    lines = path.read_text().splitlines()
    assert len(lines) == len(trace.events)
    first = json.loads(lines[0])
    assert set(first) == {"time", "kind", "detail", "aoii_after"}
    assert first["kind"] == "SourceJump"


def test_calibrate_poisson(q2: GeneratorMatrix) -> None:
    """Test the intensity that meets a budget."""
    calibration = calibrate_poisson(q2, 1.0, 0.5)
    assert calibration.rate == pytest.approx(0.5, abs=1e-2)
    assert poisson_sync_chain(q2, 1.0, calibration.gamma).rate == pytest.approx(calibration.rate)
    ordered = sorted(calibration.trajectory)
    assert all(a[1] <= b[1] for a, b in zip(ordered, ordered[1:]))

    result = simulate(
        SimConfig(generator=q2, mu=1.0, policy=Poisson(calibration.gamma), cycles=20_000, seed=6)
    )
    assert abs(result.rate_hat - 0.5) <= 1e-2 + BAND * result.stderr_rate


def test_calibrate_small_budget(q2: GeneratorMatrix) -> None:
    """Test that a vanishing budget calls for a vanishing intensity."""
    small = calibrate_poisson(q2, 1.0, 0.02, eps=1e-3)
    large = calibrate_poisson(q2, 1.0, 0.3, eps=1e-3)
    assert small.gamma < large.gamma
    assert small.gamma < 0.2


def test_calibrate_slack_budget(q1: GeneratorMatrix) -> None:
    """Test that an unreachable budget saturates the intensity."""
    calibration = calibrate_poisson(q1, 5.0, 100.0)
    assert calibration.rate < 100.0
    assert calibration.gamma >= 1e6


def test_thresholds_policy_delay() -> None:
    """Test the wait until AoII reaches the estimate's threshold."""
    policy = Thresholds(ThresholdPolicy.of([1.0, 3.0]))
    assert policy.sample_delay(2, 1.0, lambda rate: 0.0) == pytest.approx(2.0)
    assert policy.sample_delay(1, 2.0, lambda rate: 0.0) == 0.0
