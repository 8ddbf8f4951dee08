"""Self-checks of the analytical model, the solver and the simulator.

Each suite returns a list of Check records; `run_suites` collects them into
a report. Nothing here raises on a failed check, failures are reported.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.integrate
from numpy.typing import ArrayLike

from . import phasetype
from .exceptions import AoIIError
from .markov import (
    REFERENCE_SOURCES,
    GeneratorMatrix,
    symmetric_generator,
    validate_generator,
)
from .model import CsmdpModel, build_y1, build_y2, cycle_costs, sync_chain
from .policies import Thresholds
from .simulator import EventKind, EventTrace, SimConfig, replay, simulate
from .solver import policy_iteration

_LOGGER = logging.getLogger(__name__)

PH_TOLERANCE = 1e-6
EXACT_TOLERANCE = 1e-9
STDERR_BAND = 3.0
SYNC_KINDS = (EventKind.SYNC_BY_DRIFT, EventKind.SYNC_BY_DELIVERY)

# Thresholds checked by the per-state suites.
PROBE_TAUS = (0.0, 0.25, 1.0, 2.5, 6.0)


@dataclass(frozen=True)
class Check:
    """Outcome of one validation check."""

    suite: str
    name: str
    passed: bool
    detail: str = ""

    def as_dict(self) -> dict[str, Any]:
        """Return the check as a JSON-compatible record."""
        return {
            "suite": self.suite,
            "name": self.name,
            "passed": self.passed,
            "detail": self.detail,
        }


def _close(got: float, want: float, tol: float) -> bool:
    return abs(got - want) <= tol * max(1.0, abs(want))


def check_generator(name: str, q: ArrayLike) -> list[Check]:
    """Check that a matrix is a valid generator."""
    try:
        validate_generator(q)
    except AoIIError as err:
        return [Check("generator", name, False, f"{type(err).__name__}: {err}")]
    return [Check("generator", name, True)]


def check_phase_type(name: str, g: GeneratorMatrix, mu: float) -> list[Check]:
    """Check pdf normalization and moments of the cycle phase-type laws."""
    checks = []
    for j in range(1, g.n + 1):
        laws = {"Y1": build_y1(g, j).phase_type, "Y2": build_y2(g, j, mu, 1.0)[0].phase_type}
        for label, ph in laws.items():
            mean, second = phasetype.ph_moments(ph)
            mass, _ = scipy.integrate.quad(lambda t: phasetype.ph_pdf(ph, t), 0.0, math.inf)
            first, _ = scipy.integrate.quad(lambda t: t * phasetype.ph_pdf(ph, t), 0.0, math.inf)
            ok = _close(mass, 1.0, PH_TOLERANCE) and _close(first, mean, PH_TOLERANCE)
            checks.append(
                Check(
                    "phase_type",
                    f"{name}/{label}_{j}",
                    ok,
                    f"mass={mass:.9g} mean={first:.9g} expected={mean:.9g} second={second:.9g}",
                )
            )
    return checks


def check_semigroup(name: str, g: GeneratorMatrix) -> list[Check]:
    """Check e^{(s+t)A} = e^{sA} e^{tA} on the reduced generators."""
    checks = []
    for j in range(1, g.n + 1):
        A = build_y1(g, j).A
        combined = phasetype.mat_exp(A, 1.7)
        split = phasetype.mat_exp(A, 0.5) @ phasetype.mat_exp(A, 1.2)
        error = float(np.max(np.abs(combined - split)))
        checks.append(
            Check("semigroup", f"{name}/A1_{j}", error <= EXACT_TOLERANCE, f"max error {error:.3g}")
        )
    return checks


def check_row_sums(name: str, g: GeneratorMatrix, mu: float) -> list[Check]:
    """Check that absorption probabilities and transition rows are distributions."""
    model = CsmdpModel(g, mu)
    worst = 0.0
    for j in range(1, g.n + 1):
        for tau in PROBE_TAUS:
            row = model.state(j).cycle(tau).p_row
            worst = max(worst, abs(float(row.sum()) - 1.0))
            if np.any(row < 0):
                worst = math.inf
        y1 = build_y1(g, j)
        worst = max(worst, abs(float(phasetype.absorption_probs(y1).sum()) - 1.0))
    return [Check("row_sums", name, worst <= EXACT_TOLERANCE, f"max deviation {worst:.3g}")]


def check_cost_forms(name: str, g: GeneratorMatrix, mu: float) -> list[Check]:
    """Check compact cycle costs against the conditional decomposition."""
    checks = []
    for j in range(1, g.n + 1):
        for tau in PROBE_TAUS[1:]:
            try:
                cycle_costs(g, j, mu, tau, cross_check=True)
            except AoIIError as err:
                checks.append(Check("cost_forms", f"{name}/S{j}/tau={tau}", False, str(err)))
                continue
            checks.append(Check("cost_forms", f"{name}/S{j}/tau={tau}", True))
    return checks


def check_kappa_monotone(name: str, g: GeneratorMatrix, mu: float) -> list[Check]:
    """Check that the drift probability grows with the threshold."""
    grid = np.linspace(0.0, 10.0, 101)
    checks = []
    for j in range(1, g.n + 1):
        kappa = np.array([cycle.kappa for cycle in CsmdpModel(g, mu).state(j).cycles_on_grid(grid)])
        ok = bool(np.all(np.diff(kappa) >= -EXACT_TOLERANCE))
        checks.append(Check("kappa_monotone", f"{name}/S{j}", ok))
    return checks


def trace_is_consistent(
    trace: EventTrace, initial_state: int = 1, initial_estimate: int = 1
) -> bool:
    """Check that AoII is zero exactly when source and monitor agree.

    Simultaneous events are checked as a group, after the last of them.
    While out of sync AoII must equal the time since the mismatch began.
    """
    state, estimate = initial_state, initial_estimate
    mismatch_since: float | None = None if state == estimate else 0.0
    events = trace.events
    for index, event in enumerate(events):
        if event.kind == EventKind.SOURCE_JUMP:
            state = int(event.detail.split("->")[1])
            if mismatch_since is None:
                mismatch_since = event.time
        elif event.kind == EventKind.TX_DELIVER:
            estimate = int(event.detail)
        if index + 1 < len(events) and events[index + 1].time == event.time:
            continue
        if state == estimate:
            mismatch_since = None
            if event.aoii_after != 0.0:
                return False
        elif mismatch_since is None or not math.isclose(
            event.aoii_after, event.time - mismatch_since, abs_tol=EXACT_TOLERANCE
        ):
            return False
        if event.kind in SYNC_KINDS and event.aoii_after != 0.0:
            return False
    return True


def random_script(
    g: GeneratorMatrix, mu: float, horizon: float, rng: np.random.Generator
) -> tuple[list[tuple[float, int]], list[float]]:
    """Draw a source path and service durations for `replay` (states 1-based)."""
    jumps: list[tuple[float, int]] = []
    now, state = 0.0, 0
    while True:
        now += float(rng.exponential(1.0 / g.sigma[state]))
        if now > horizon:
            break
        weights = np.where(np.arange(g.n) == state, 0.0, g.q[state])
        state = int(rng.choice(g.n, p=weights / weights.sum()))
        jumps.append((now, state + 1))
    services = rng.exponential(1.0 / mu, size=len(jumps) + 1).tolist()
    return jumps, services


def check_replay() -> list[Check]:
    """Replay the reference binary sample path and a preemption scenario."""
    trace = replay(
        Thresholds([0.5, 0.0]),
        jumps=[(4.0, 2), (7.0, 1), (8.0, 2)],
        services=[2.0, 5.0, 0.5],
        initial_state=1,
        initial_estimate=2,
        horizon=11.0,
    )
    drift = [e.time for e in trace.of_kind(EventKind.SYNC_BY_DRIFT)]
    delivery = [e.time for e in trace.of_kind(EventKind.SYNC_BY_DELIVERY)]
    delivered_at_drift = [e for e in trace.of_kind(EventKind.TX_DELIVER) if e.time == 7.0]
    ok = drift == [7.0] and delivery == [2.0, 9.0] and not delivered_at_drift
    checks = [
        Check("replay", "binary_path", ok, f"drift={drift} delivery={delivery}"),
        Check(
            "replay",
            "binary_path_area",
            _close(trace.area, 7.0, EXACT_TOLERANCE),
            f"area={trace.area}",
        ),
        Check("replay", "binary_path_consistent", trace_is_consistent(trace, 1, 2)),
    ]

    preempt = replay(
        Thresholds([1.0, 1.0, 1.0]),
        jumps=[(1.0, 2), (3.0, 3)],
        services=[3.0, 0.5],
        horizon=4.0,
    )
    kinds = [(e.kind, e.detail) for e in preempt.events if e.time == 3.0]
    expected = [
        (EventKind.SOURCE_JUMP, "2->3"),
        (EventKind.TX_PREEMPT, "2"),
        (EventKind.TX_START, "3"),
    ]
    deliveries = preempt.of_kind(EventKind.SYNC_BY_DELIVERY)
    ok = kinds == expected and [e.detail for e in deliveries] == ["3"]
    checks.append(Check("replay", "preemption", ok, f"events at t=3: {kinds}"))
    return checks


def check_random_traces(name: str, g: GeneratorMatrix, mu: float, seed: int) -> list[Check]:
    """Replay random source paths and check AoII against synchronization."""
    rng = np.random.default_rng(seed)
    policy = Thresholds([0.5] * g.n)
    ok = True
    for _ in range(20):
        jumps, services = random_script(g, mu, 50.0, rng)
        ok = ok and trace_is_consistent(replay(policy, jumps, services, horizon=50.0))
    return [Check("trace", name, ok)]


def check_simulation(
    name: str, g: GeneratorMatrix, mu: float, tau: Sequence[float], cycles: int, seed: int
) -> list[Check]:
    """Check simulated MAoII and rate against the analytical chain."""
    policy = Thresholds(tau)
    chain = sync_chain(g, mu, policy.policy)
    result = simulate(SimConfig(generator=g, mu=mu, policy=policy, cycles=cycles, seed=seed))
    checks = []
    for label, got, want, stderr in (
        ("maoii", result.maoii_hat, chain.maoii, result.stderr_maoii),
        ("rate", result.rate_hat, chain.rate, result.stderr_rate),
    ):
        ok = abs(got - want) <= STDERR_BAND * stderr
        checks.append(
            Check(
                "simulation",
                f"{name}/tau={list(tau)}/{label}",
                ok,
                f"simulated {got:.6g} +- {stderr:.3g}, analytic {want:.6g}",
            )
        )
    return checks


def check_symmetry(n: int, lam: float, eps_tau: float) -> list[Check]:
    """Check that a symmetric source gets equal thresholds."""
    g = symmetric_generator(n)
    solution = policy_iteration(g, 1.0, lam)
    spread = float(np.ptp(solution.tau))
    return [
        Check(
            "symmetry",
            f"N={n}/lambda={lam}",
            spread <= 10 * eps_tau,
            f"tau={solution.policy.to_list()}",
        )
    ]


def _guarded(suite: str, name: str, run: Callable[[], list[Check]]) -> list[Check]:
    try:
        return run()
    except AoIIError as err:
        _LOGGER.debug("Suite %s/%s raised %s", suite, name, err)
        return [Check(suite, name, False, f"{type(err).__name__}: {err}")]


def run_suites(
    generators: dict[str, ArrayLike] | None = None,
    mu: float = 1.0,
    cycles: int = 100_000,
    seed: int = 0,
    simulation: bool = True,
) -> list[Check]:
    """Run every suite on the given sources (the reference sources by default)."""
    sources = generators if generators is not None else dict(REFERENCE_SOURCES)
    checks: list[Check] = []
    for name, q in sources.items():
        generator_checks = check_generator(name, q)
        checks.extend(generator_checks)
        if not generator_checks[0].passed:
            continue
        g = validate_generator(q)
        checks.extend(_guarded("phase_type", name, lambda: check_phase_type(name, g, mu)))
        checks.extend(_guarded("semigroup", name, lambda: check_semigroup(name, g)))
        checks.extend(_guarded("row_sums", name, lambda: check_row_sums(name, g, mu)))
        checks.extend(_guarded("cost_forms", name, lambda: check_cost_forms(name, g, mu)))
        checks.extend(_guarded("kappa_monotone", name, lambda: check_kappa_monotone(name, g, mu)))
        checks.extend(_guarded("trace", name, lambda: check_random_traces(name, g, mu, seed)))
        if simulation:
            tau = [1.0, 2.0, 1.5][: g.n] + [1.0] * max(0, g.n - 3)
            checks.extend(
                _guarded(
                    "simulation", name, lambda: check_simulation(name, g, mu, tau, cycles, seed)
                )
            )
    checks.extend(_guarded("replay", "scripts", check_replay))
    checks.extend(_guarded("symmetry", "N=3", lambda: check_symmetry(3, 1.0, 1e-4)))
    failed = [check for check in checks if not check.passed]
    _LOGGER.info("Validation: %d checks, %d failed", len(checks), len(failed))
    for check in failed:
        _LOGGER.warning("Check failed: %s/%s %s", check.suite, check.name, check.detail)
    return checks
