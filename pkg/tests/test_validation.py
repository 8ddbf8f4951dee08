from __future__ import annotations

from aoii_csmdp.markov import GeneratorMatrix
from aoii_csmdp.simulator import EventKind, EventTrace, TraceEvent
from aoii_csmdp.validation import (
    check_cost_forms,
    check_kappa_monotone,
    check_replay,
    check_row_sums,
    run_suites,
    trace_is_consistent,
)


def test_deterministic_suites_pass() -> None:
    """Test every analytical suite on the reference sources."""
    checks = run_suites(simulation=False)
    failed = [check for check in checks if not check.passed]
    assert not failed
    assert {check.suite for check in checks} >= {
        "generator",
        "phase_type",
        "semigroup",
        "row_sums",
        "cost_forms",
        "kappa_monotone",
        "trace",
        "replay",
        "symmetry",
    }


def test_model_suites(q2: GeneratorMatrix) -> None:
    """Test the per-source model suites directly."""
    assert all(check.passed for check in check_row_sums("Q2", q2, 5.0))
    assert all(check.passed for check in check_cost_forms("Q2", q2, 5.0))
    assert all(check.passed for check in check_kappa_monotone("Q2", q2, 5.0))


def test_replay_suite() -> None:
    """Test the scripted replays."""
    assert all(check.passed for check in check_replay())


def test_corrupted_generator_reported() -> None:
    """Test that an invalid generator is reported, not raised."""
    checks = run_suites({"bad": [[-1.0, -1.0], [1.0, -1.0]]}, simulation=False)
    assert [check.passed for check in checks if check.suite == "generator"] == [False]


def test_inconsistent_trace_detected() -> None:
    """Test that a nonzero AoII at synchronization is caught."""
    trace = EventTrace(
        events=(
            TraceEvent(1.0, EventKind.SOURCE_JUMP, 0.0, "1->2"),
            TraceEvent(2.0, EventKind.SOURCE_JUMP, 1.0, "2->1"),
            TraceEvent(2.0, EventKind.SYNC_BY_DRIFT, 0.5, "1"),
        ),
        area=0.5,
        horizon=2.0,
    )
    assert not trace_is_consistent(trace)
