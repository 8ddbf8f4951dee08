"""Experiment runners behind the command line modes.

Each runner takes an ExperimentConfig, writes its artifacts under
`cfg.output` and returns the record or rows it wrote. Independent points of
a sweep are dispatched to a worker pool and gathered in a fixed order.
"""

from __future__ import annotations

import asyncio
import csv
import json
import logging
import time
from collections.abc import Awaitable, Callable, Iterable, Sequence
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from functools import partial
from pathlib import Path
from typing import Any, TypeVar

import numpy as np

from . import diagnostics
from .config import ExperimentConfig, GridSpec
from .exceptions import NotBinary, ValidationFailure
from .interface import SamplingPolicy
from .markov import GeneratorMatrix, random_generator
from .model import CsmdpModel, poisson_sync_chain
from .policies import Poisson, SingleThreshold, Thresholds
from .simulator import SimConfig, SimResult, calibrate_poisson, sample_path, simulate, write_trace
from .solver import (
    SolverConfig,
    evaluate_grid,
    grid_search_oracle,
    lagrange_bisection,
    policy_iteration,
    single_threshold_search,
)
from .validation import run_suites

_LOGGER = logging.getLogger(__name__)

_T = TypeVar("_T")

SOLVE_FILE = "solve.json"
SIMULATE_FILE = "simulate.json"
CONTOUR_GRID_FILE = "contour_grid.csv"
CONTOUR_OPTIMA_FILE = "contour_optima.csv"
SWEEP_FILE = "sweep_budget.csv"
VALIDATE_FILE = "validate.json"
SCALING_FILE = "scaling.csv"

CONTOUR_GRID_HEADER = ("tau1", "tau2", "maoii", "rate")
CONTOUR_OPTIMA_HEADER = ("b", "method", "tau1", "tau2", "maoii", "rate")
SWEEP_HEADER = ("mu", "b", "policy", "maoii_analytic", "maoii_sim", "rate_sim")
SCALING_HEADER = (
    "N",
    "seconds_per_policy_iteration",
    "iterations",
    "ratio_to_previous",
    "local_exponent",
)

# Multiplier used for the timed policy iterations.
SCALING_LAMBDA = 1.0


def fmt(value: float) -> str:
    """Format a float with 9 significant digits."""
    return f"{value:.9g}"


def _executor(jobs: int) -> Executor:
    if jobs > 1:
        return ProcessPoolExecutor(max_workers=jobs)
    return ThreadPoolExecutor(max_workers=1)


async def _gather(jobs: int, tasks: Sequence[Callable[[], _T]]) -> list[_T]:
    """Run independent tasks on a worker pool, results in task order."""
    loop = asyncio.get_running_loop()
    with _executor(jobs) as pool:
        futures: list[Awaitable[_T]] = [loop.run_in_executor(pool, task) for task in tasks]
        return list(await asyncio.gather(*futures))


def _prepare(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path: Path, record: dict[str, Any]) -> None:
    """Write a JSON record."""
    _prepare(path).write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write a CSV file, formatting floats with 9 significant digits."""
    with _prepare(path).open("w", encoding="utf-8", newline="") as out:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(x) if isinstance(x, float) else x for x in row])


async def run_solve(cfg: ExperimentConfig) -> dict[str, Any]:
    """Solve the constrained problem and write the solution record."""
    g, mu, b = cfg.require_generator(), cfg.mu, cfg.require_budget()
    _LOGGER.info("Solving N=%d mu=%s b=%s", g.n, mu, b)
    [solution] = await _gather(1, [partial(lagrange_bisection, g, mu, b, cfg.solver)])
    record = solution.as_dict()
    record["diagnostics"] = diagnostics.get_diagnostics()
    write_json(cfg.output / SOLVE_FILE, record)
    return record


async def run_simulate(cfg: ExperimentConfig) -> dict[str, Any]:
    """Simulate the configured policy and write the estimates."""
    sim = SimConfig(
        generator=cfg.require_generator(),
        mu=cfg.mu,
        policy=cfg.require_policy(),
        cycles=cfg.cycles,
        seed=cfg.seed,
    )
    [result] = await _gather(1, [partial(simulate, sim)])
    record = result.as_dict()
    write_json(cfg.output / SIMULATE_FILE, record)
    if cfg.trace is not None:
        trace_path = cfg.trace if cfg.trace.is_absolute() else cfg.output / cfg.trace
        write_trace(sample_path(sim, cfg.trace_horizon), _prepare(trace_path))
        _LOGGER.info("Wrote trace to %s", trace_path)
    return record


def _contour_budget(
    g: GeneratorMatrix, mu: float, b: float, solver: SolverConfig, grid: GridSpec
) -> list[tuple[Any, ...]]:
    solution = lagrange_bisection(g, mu, b, solver)
    oracle = grid_search_oracle(g, mu, b, grid.step, grid.hi, grid.lo)
    _LOGGER.info("b=%s grid maoii=%.6g solver maoii=%.6g", b, oracle.maoii, solution.maoii)
    return [
        (b, "grid", *oracle.policy.to_list(), oracle.maoii, oracle.rate),
        (b, "csmdp", *solution.policy.to_list(), solution.maoii, solution.rate),
    ]


async def run_contour(cfg: ExperimentConfig) -> list[tuple[Any, ...]]:
    """Write MAoII and rate over a threshold grid, and per-budget optima.

    Each budget gets the grid optimum and the solver optimum, so the two can
    be compared directly.
    """
    g, mu = cfg.require_generator(), cfg.mu
    if g.n != 2:
        raise NotBinary(f"Contour mode needs a binary source, got N={g.n}")
    points = evaluate_grid(CsmdpModel(g, mu), cfg.grid.points())
    write_csv(
        cfg.output / CONTOUR_GRID_FILE,
        CONTOUR_GRID_HEADER,
        ((tau[0], tau[1], maoii, rate) for tau, maoii, rate in points),
    )

    solved = await _gather(
        cfg.jobs,
        [partial(_contour_budget, g, mu, b, cfg.solver, cfg.grid) for b in cfg.budgets],
    )
    rows = sorted(
        (row for pair in solved for row in pair), key=lambda row: (row[0], row[1])
    )
    write_csv(cfg.output / CONTOUR_OPTIMA_FILE, CONTOUR_OPTIMA_HEADER, rows)
    return rows


def _simulated(
    g: GeneratorMatrix, mu: float, policy: SamplingPolicy, cfg: ExperimentConfig
) -> SimResult:
    sim = SimConfig(generator=g, mu=mu, policy=policy, cycles=cfg.cycles, seed=cfg.seed)
    return simulate(sim)


def _sweep_point(cfg: ExperimentConfig, mu: float, b: float) -> list[tuple[Any, ...]]:
    """Compare the solver and both baselines at one (mu, b)."""
    g = cfg.require_generator()
    rows: list[tuple[Any, ...]] = []

    solution = lagrange_bisection(g, mu, b, cfg.solver)
    result = _simulated(g, mu, Thresholds(solution.policy), cfg)
    rows.append((mu, b, "csmdp", solution.maoii, result.maoii_hat, result.rate_hat))

    single = single_threshold_search(g, mu, b, cfg.grid.points())
    result = _simulated(g, mu, SingleThreshold(float(single.policy.tau[0])), cfg)
    rows.append((mu, b, "single_threshold", single.maoii, result.maoii_hat, result.rate_hat))

    calibration = calibrate_poisson(g, mu, b, eps=cfg.solver.eps_lambda)
    analytic = poisson_sync_chain(g, mu, calibration.gamma)
    result = _simulated(g, mu, Poisson(calibration.gamma), cfg)
    rows.append((mu, b, "poisson", analytic.maoii, result.maoii_hat, result.rate_hat))
    _LOGGER.debug("Sweep point mu=%s b=%s done", mu, b)
    return rows


async def run_sweep_budget(cfg: ExperimentConfig) -> list[tuple[Any, ...]]:
    """Compare the solver with the single threshold and Poisson baselines over budgets."""
    tasks = [partial(_sweep_point, cfg, mu, b) for mu in cfg.mus for b in cfg.budgets]
    rows = [row for point in await _gather(cfg.jobs, tasks) for row in point]
    rows.sort(key=lambda row: (row[0], row[1], row[2]))
    write_csv(cfg.output / SWEEP_FILE, SWEEP_HEADER, rows)
    return rows


async def run_validate(cfg: ExperimentConfig) -> dict[str, Any]:
    """Run the validation suites and write the report.

    Raises ValidationFailure after writing the report if any check failed.
    """
    mu = cfg.mus[0] if cfg.mus else 1.0
    [checks] = await _gather(
        1, [partial(run_suites, cfg.sources, mu=mu, cycles=cfg.cycles, seed=cfg.seed)]
    )
    failed = [check for check in checks if not check.passed]
    report = {
        "passed": not failed,
        "failed": len(failed),
        "checks": [check.as_dict() for check in checks],
    }
    write_json(cfg.output / VALIDATE_FILE, report)
    if failed:
        names = ", ".join(f"{check.suite}/{check.name}" for check in failed)
        raise ValidationFailure(f"{len(failed)} checks failed: {names}")
    return report


def time_policy_iteration(
    g: GeneratorMatrix, mu: float = 1.0, cfg: SolverConfig | None = None
) -> tuple[float, int]:
    """Return wall-clock seconds per policy iteration and the number of iterations."""
    model = CsmdpModel(g, mu)
    start = time.perf_counter()
    solution = policy_iteration(g, mu, SCALING_LAMBDA, cfg, model)
    elapsed = time.perf_counter() - start
    return elapsed / solution.policy_iterations, solution.policy_iterations


def growth_exponents(
    sizes: Sequence[int], seconds: Sequence[float]
) -> list[tuple[float | str, float | str]]:
    """Return the time ratio and the local exponent log(ratio) / log(N ratio) per size.

    The first size has no predecessor and gets empty entries.
    """
    growth: list[tuple[float | str, float | str]] = [("", "")]
    for k in range(1, len(sizes)):
        ratio = seconds[k] / seconds[k - 1]
        growth.append((ratio, float(np.log(ratio) / np.log(sizes[k] / sizes[k - 1]))))
    return growth


async def run_scaling(cfg: ExperimentConfig) -> list[tuple[Any, ...]]:
    """Time policy iterations on random sources of growing size.

    Sizes run one at a time so that timings do not compete for cores. Each
    row after the first carries the time ratio to the previous size and the
    local growth exponent, which approaches 4 once the N x N matrix
    exponentials of every state dominate.
    """
    rng = np.random.default_rng(cfg.seed)
    mu = cfg.mus[0] if cfg.mus else 1.0
    sizes = sorted(cfg.sizes)
    timings: list[tuple[float, int]] = []
    for n in sizes:
        g = random_generator(n, rng)
        [(seconds, iterations)] = await _gather(
            1, [partial(time_policy_iteration, g, mu, cfg.solver)]
        )
        _LOGGER.info("N=%d: %.4g s per policy iteration (%d iterations)", n, seconds, iterations)
        timings.append((seconds, iterations))
    growth = growth_exponents(sizes, [seconds for seconds, _ in timings])
    rows: list[tuple[Any, ...]] = [
        (n, seconds, iterations, ratio, exponent)
        for n, (seconds, iterations), (ratio, exponent) in zip(sizes, timings, growth)
    ]
    write_csv(cfg.output / SCALING_FILE, SCALING_HEADER, rows)
    return rows


RUNNERS: dict[str, Callable[[ExperimentConfig], Awaitable[Any]]] = {
    "solve": run_solve,
    "simulate": run_simulate,
    "sweep_budget": run_sweep_budget,
    "contour": run_contour,
    "validate": run_validate,
    "scaling": run_scaling,
}


async def run(cfg: ExperimentConfig) -> Any:
    """Run the experiment named by the config mode."""
    _LOGGER.debug("Running %s with output %s", cfg.mode, cfg.output)
    return await RUNNERS[cfg.mode](cfg)
