"""Average-cost policy iteration over thresholds with a Lagrangian rate constraint."""

from __future__ import annotations

import enum
import itertools
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from numpy.typing import NDArray

from . import phasetype
from .diagnostics import SOLVER_DIAGNOSTICS as DIAGNOSTICS
from .exceptions import (
    BisectionFailed,
    ConfigError,
    InfeasibleBudget,
    SingularChain,
    SingularMatrix,
    SingularSystem,
)
from .markov import GeneratorMatrix
from .model import (
    NEVER_TRANSMIT,
    CsmdpModel,
    CycleModel,
    ThresholdPolicy,
    chain_from_cycles,
    closed_classes,
)

_LOGGER = logging.getLogger(__name__)

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
IMPROVEMENT_SLACK = 1e-12
TIE_TOLERANCE = 1e-12
BRACKET_COLLAPSE = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and iteration caps of the solver."""

    eps_eta: float = 1e-2
    eps_lambda: float = 1e-2
    eps_tau: float = 1e-4
    max_policy_iters: int = 200
    max_bisect_iters: int = 60
    tau_search_expansion: float = 2.0
    prescan_points: int = 64

    def __post_init__(self) -> None:
        for name in ("eps_eta", "eps_lambda", "eps_tau"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_policy_iters < 1 or self.max_bisect_iters < 1:
            raise ConfigError("Iteration caps must be at least 1")
        if not self.tau_search_expansion > 1:
            raise ConfigError("tau_search_expansion must exceed 1")
        if self.prescan_points < 3:
            raise ConfigError("prescan_points must be at least 3")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SolverConfig:
        """Build a config from a JSON object, rejecting unknown keys."""
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown solver options: {sorted(unknown)}")
        return cls(**data)


class SolveStatus(enum.Enum):
    """Outcome of a solve."""

    CONVERGED = "Converged"
    ITERATION_CAP_HIT = "IterationCapHit"
    BUDGET_SLACK_AT_ZERO_LAMBDA = "BudgetSlackAtZeroLambda"


@dataclass(frozen=True)
class PolicySolution:
    """Thresholds found by the solver and their long-run performance."""

    policy: ThresholdPolicy
    lam: float
    eta: float
    v: NDArray[np.float64]
    maoii: float
    rate: float
    policy_iterations: int
    status: SolveStatus
    bisection_steps: int = 0
    eta_history: tuple[float, ...] = ()
    trajectory: tuple[tuple[float, float], ...] = field(default=(), repr=False)
    """(lambda, rate) pairs visited by the Lagrangian search."""

    @property
    def tau(self) -> NDArray[np.float64]:
        """The threshold vector."""
        return self.policy.tau

    def as_dict(self) -> dict[str, Any]:
        """Return the solution as a JSON-compatible record."""
        return {
            "tau": self.policy.to_list(),
            "lambda": self.lam,
            "maoii": self.maoii,
            "rate": self.rate,
            "eta": self.eta,
            "v": [float(x) for x in self.v],
            "iterations": {
                "policy": self.policy_iterations,
                "bisection": self.bisection_steps,
            },
            "status": self.status.value,
        }


@dataclass(frozen=True)
class GridOptimum:
    """Best feasible point of an exhaustive threshold search."""

    policy: ThresholdPolicy
    maoii: float
    rate: float


def _unichain_values(
    P: NDArray[np.float64], r: NDArray[np.float64], d: NDArray[np.float64]
) -> tuple[float, NDArray[np.float64]]:
    """Solve v = r - eta d + P v with the last v pinned to 0."""
    n = P.shape[0]
    system = np.eye(n) - P
    system[:, n - 1] = d
    try:
        solution = phasetype.right_solve(phasetype.lu(system), r)
    except SingularMatrix as err:
        raise SingularSystem(f"Value determination is singular: {err}") from err
    v = solution.copy()
    eta = float(v[n - 1])
    v[n - 1] = 0.0
    return eta, v


def policy_values(
    cycles: Sequence[CycleModel], lam: float
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Return the gain of every state and the relative values of a fixed policy.

    Each closed class of the synchronization chain gets its own gain, with
    the value of its last member pinned to 0. Transient states inherit the
    gain they are absorbed into.
    """
    n = len(cycles)
    P = np.vstack([cycle.p_row for cycle in cycles])
    r = np.array([cycle.a + lam * cycle.c for cycle in cycles])
    d = np.array([cycle.d for cycle in cycles])
    closed, transient = closed_classes(P)
    if len(closed) == 1:
        eta, v = _unichain_values(P, r, d)
        return np.full(n, eta), v

    gains, v = np.zeros(n), np.zeros(n)
    for members in closed:
        eta, local = _unichain_values(P[np.ix_(members, members)], r[members], d[members])
        gains[members] = eta
        v[members] = local
    if transient.size:
        recurrent = np.concatenate(closed)
        into = P[np.ix_(transient, recurrent)]
        try:
            factor = phasetype.lu(np.eye(transient.size) - P[np.ix_(transient, transient)])
        except SingularMatrix as err:
            raise SingularSystem(f"Transient value equations are singular: {err}") from err
        gains[transient] = phasetype.right_solve(factor, into @ gains[recurrent])
        v[transient] = phasetype.right_solve(
            factor, r[transient] - gains[transient] * d[transient] + into @ v[recurrent]
        )
    return gains, v


def value_determination(
    cycles: Sequence[CycleModel], lam: float
) -> tuple[float, NDArray[np.float64]]:
    """Solve the average-cost optimality equations of a fixed policy.

    Unknowns are (v_1..v_{N-1}, eta) with v_N = 0, from
    v_j = a_j + lam c_j - eta d_j + sum_i p_ji v_i. The returned eta is the
    gain seen from S_1.
    """
    gains, v = policy_values(cycles, lam)
    return float(gains[0]), v


def improvement_objective(
    cycle: CycleModel, v: NDArray[np.float64], eta: float, lam: float
) -> float:
    """Return h_j(tau) = a + lam c - eta d + sum_i p_ji v_i."""
    return cycle.a + lam * cycle.c - eta * cycle.d + float(cycle.p_row @ v)


def _golden_section(
    f: Callable[[float], float], lo: float, hi: float, tol: float
) -> tuple[float, float]:
    """Minimize f on [lo, hi]; the endpoints are candidates too."""
    x1 = hi - INVPHI * (hi - lo)
    x2 = lo + INVPHI * (hi - lo)
    f1, f2 = f(x1), f(x2)
    while hi - lo > tol:
        if f2 > f1:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - INVPHI * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + INVPHI * (hi - lo)
            f2 = f(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


def _pick(candidates: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Return the (tau, value) of least value, ties going to the smaller tau."""
    best = min(value for _, value in candidates)
    ties = [(tau, value) for tau, value in candidates if value <= best + TIE_TOLERANCE]
    return min(ties)


def improve_threshold(
    j: int,
    v: NDArray[np.float64],
    eta: float,
    lam: float,
    model: CsmdpModel,
    cfg: SolverConfig,
    current: float = 0.0,
) -> float:
    """Return the threshold of state j minimizing the improvement objective.

    The search grows an upper bracket until the objective turns up, scans
    the bracket on a coarse grid and refines the best cell by golden-section
    search. The current threshold is always a candidate, so the result never
    does worse than it.
    """
    state = model.state(j)
    cap = model.tau_cap

    def h(tau: float) -> float:
        return improvement_objective(state.cycle(tau), v, eta, lam)

    upper = min(cap, max(1.0 / float(model.generator.sigma.min()), cfg.eps_tau))
    h_upper = h(upper)
    while upper < cap:
        nxt = min(cap, upper * cfg.tau_search_expansion)
        h_next = h(nxt)
        if h_next >= h_upper:
            upper = nxt
            break
        upper, h_upper = nxt, h_next

    grid = np.linspace(0.0, upper, cfg.prescan_points)
    values = [improvement_objective(c, v, eta, lam) for c in state.cycles_on_grid(grid)]
    k = int(np.argmin(values))
    lo = float(grid[max(k - 1, 0)])
    hi = float(grid[min(k + 1, grid.size - 1)])
    refined = _golden_section(h, lo, hi, cfg.eps_tau)

    h_current = h(current)
    candidates = [refined, (float(grid[k]), values[k]), (current, h_current), (cap, h(cap))]
    tau, value = _pick(candidates)
    if value > h_current + IMPROVEMENT_SLACK:
        tau, value = current, h_current
    if state.cycle(tau).kappa >= 1.0 - NEVER_TRANSMIT:
        tau = cap
    DIAGNOSTICS.increment("improve_threshold")
    return tau


def policy_iteration(
    g: GeneratorMatrix,
    mu: float,
    lam: float,
    cfg: SolverConfig | None = None,
    model: CsmdpModel | None = None,
) -> PolicySolution:
    """Find the thresholds minimizing MAoII + lam * R by policy iteration."""
    cfg = cfg or SolverConfig()
    model = model or CsmdpModel(g, mu)
    if lam < 0:
        raise ConfigError(f"Lagrange multiplier must be nonnegative, got {lam}")
    policy = ThresholdPolicy.zeros(g.n)
    history: list[float] = []
    status = SolveStatus.ITERATION_CAP_HIT
    for iteration in range(1, cfg.max_policy_iters + 1):
        cycles = model.cycles(policy)
        gains, v = policy_values(cycles, lam)
        eta = float(gains[0])
        history.append(eta)
        DIAGNOSTICS.increment("policy_iteration.iteration")
        _LOGGER.debug(
            "lambda=%.6g iteration=%d eta=%.9g tau=%s", lam, iteration, eta, policy.to_list()
        )
        if len(history) > 1 and abs(history[-1] - history[-2]) <= cfg.eps_eta:
            status = SolveStatus.CONVERGED
            break
        improved = ThresholdPolicy.of(
            [
                improve_threshold(
                    j, v, float(gains[j - 1]), lam, model, cfg, current=float(policy.tau[j - 1])
                )
                for j in range(1, g.n + 1)
            ]
        )
        if np.array_equal(improved.tau, policy.tau):
            status = SolveStatus.CONVERGED
            break
        policy = improved
    else:
        DIAGNOSTICS.increment("policy_iteration.cap_hit")
        _LOGGER.warning("Policy iteration hit the cap of %d iterations", cfg.max_policy_iters)
        cycles = model.cycles(policy)
        eta, v = value_determination(cycles, lam)

    chain = chain_from_cycles(cycles)
    return PolicySolution(
        policy=policy,
        lam=lam,
        eta=eta,
        v=v,
        maoii=chain.maoii,
        rate=chain.rate,
        policy_iterations=len(history),
        status=status,
        eta_history=tuple(history),
    )


def lagrange_bisection(
    g: GeneratorMatrix,
    mu: float,
    b: float,
    cfg: SolverConfig | None = None,
) -> PolicySolution:
    """Find thresholds minimizing MAoII subject to a sampling rate budget b.

    The search stops at the first multiplier whose rate lies within
    eps_lambda * min(1, b) under the budget. When the rate jumps over that
    window the best feasible iterate is returned if it is within eps_lambda
    of b.
    """
    cfg = cfg or SolverConfig()
    if not b > 0:
        raise ConfigError(f"Budget must be positive, got {b}")
    model = CsmdpModel(g, mu)
    trajectory: list[tuple[float, float]] = []

    def solve(lam: float) -> PolicySolution:
        DIAGNOSTICS.increment("bisection.step")
        solution = policy_iteration(g, mu, lam, cfg, model)
        trajectory.append((lam, solution.rate))
        _LOGGER.debug("lambda=%.6g rate=%.6g budget=%.6g", lam, solution.rate, b)
        return solution

    def done(solution: PolicySolution, status: SolveStatus | None = None) -> PolicySolution:
        return replace(
            solution,
            status=status or solution.status,
            bisection_steps=len(trajectory),
            trajectory=tuple(trajectory),
        )

    unconstrained = solve(0.0)
    if unconstrained.rate <= b:
        return done(unconstrained, SolveStatus.BUDGET_SLACK_AT_ZERO_LAMBDA)

    target = cfg.eps_lambda * min(1.0, b)

    def meets(solution: PolicySolution) -> bool:
        return b - target <= solution.rate <= b

    lo, hi = 0.0, 1.0
    upper = solve(hi)
    while upper.rate > b:
        if len(trajectory) > cfg.max_bisect_iters:
            raise BisectionFailed(f"No multiplier up to {hi} meets budget {b}")
        lo, hi = hi, 2.0 * hi
        upper = solve(hi)
    if meets(upper):
        return done(upper)

    for _ in range(cfg.max_bisect_iters):
        if hi - lo <= BRACKET_COLLAPSE * hi:
            break
        mid = 0.5 * (lo + hi)
        solution = solve(mid)
        if meets(solution):
            return done(solution)
        if solution.rate > b:
            lo = mid
        else:
            hi, upper = mid, solution
    if b - upper.rate <= cfg.eps_lambda:
        _LOGGER.info(
            "Rate %.6g stayed more than %.3g under budget %.6g; keeping lambda=%.6g",
            upper.rate,
            target,
            b,
            hi,
        )
        return done(upper)
    DIAGNOSTICS.increment("bisection.failed")
    raise BisectionFailed(
        f"Budget {b} not met within {cfg.eps_lambda} after {len(trajectory)} solves "
        f"(best feasible rate {upper.rate} at lambda {hi})"
    )


def evaluate_grid(
    model: CsmdpModel, grid: NDArray[np.float64]
) -> list[tuple[tuple[float, ...], float, float]]:
    """Evaluate (MAoII, R) at every point of grid^N, in lexicographic order."""
    per_state = [model.state(j).cycles_on_grid(grid) for j in range(1, model.generator.n + 1)]
    points = []
    for index in itertools.product(range(grid.size), repeat=model.generator.n):
        cycles = [per_state[j][i] for j, i in enumerate(index)]
        try:
            chain = chain_from_cycles(cycles)
        except SingularChain:
            continue
        points.append((tuple(float(grid[i]) for i in index), chain.maoii, chain.rate))
    return points


def threshold_grid(step: float, hi: float, lo: float = 0.0) -> NDArray[np.float64]:
    """Return the evenly spaced grid lo, lo + step, ..., hi."""
    if not step > 0 or hi < lo:
        raise ConfigError(f"Invalid grid [{lo}, {hi}] with step {step}")
    count = int(round((hi - lo) / step)) + 1
    return np.linspace(lo, lo + step * (count - 1), count)


def best_feasible(
    points: Sequence[tuple[tuple[float, ...], float, float]], b: float
) -> GridOptimum:
    """Return the point of least MAoII among those with rate at most b.

    Ties go to the thresholds with the least spread, then lexicographically.
    """
    feasible = [point for point in points if point[2] <= b]
    if not feasible:
        raise InfeasibleBudget(f"No grid point meets budget {b}")
    least = min(maoii for _, maoii, _ in feasible)
    ties = [point for point in feasible if point[1] <= least + TIE_TOLERANCE * max(1.0, least)]
    tau, maoii, rate = min(ties, key=lambda point: (max(point[0]) - min(point[0]), point[0]))
    return GridOptimum(policy=ThresholdPolicy.of(tau), maoii=maoii, rate=rate)


def grid_search_oracle(
    g: GeneratorMatrix,
    mu: float,
    b: float,
    grid_step: float,
    tau_hi: float = 5.0,
    tau_lo: float = 0.0,
) -> GridOptimum:
    """Exhaustively search [tau_lo, tau_hi]^N for the best feasible thresholds."""
    if g.n > 4:
        raise ConfigError(f"Grid search is limited to N <= 4, got {g.n}")
    points = evaluate_grid(CsmdpModel(g, mu), threshold_grid(grid_step, tau_hi, tau_lo))
    return best_feasible(points, b)


def single_threshold_search(
    g: GeneratorMatrix, mu: float, b: float, grid: NDArray[np.float64]
) -> GridOptimum:
    """Find the best feasible policy among equal thresholds on a 1-D grid."""
    model = CsmdpModel(g, mu)
    per_state = [model.state(j).cycles_on_grid(grid) for j in range(1, g.n + 1)]
    points = []
    for i, tau in enumerate(grid):
        chain = chain_from_cycles([cycles[i] for cycles in per_state])
        points.append(((float(tau),) * g.n, chain.maoii, chain.rate))
    return best_feasible(points, b)
