from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any

import pytest

from aoii_csmdp.config import ExperimentConfig
from aoii_csmdp.exceptions import NotBinary, ValidationFailure
from aoii_csmdp.experiments import (
    CONTOUR_GRID_HEADER,
    SCALING_HEADER,
    SWEEP_HEADER,
    fmt,
    growth_exponents,
    run,
    run_contour,
    run_scaling,
    run_simulate,
    run_solve,
    run_sweep_budget,
    run_validate,
)
from aoii_csmdp.markov import REFERENCE_SOURCES


def make_config(tmp_path: Path, **data: Any) -> ExperimentConfig:
    """Build a config writing under tmp_path."""
    return ExperimentConfig.from_dict({**data, "output": str(tmp_path)})


def read_csv(path: Path) -> list[list[str]]:
    """Read a CSV file as rows of strings."""
    with path.open(newline="") as f:
        return list(csv.reader(f))


def test_fmt() -> None:
    """Test nine significant digit formatting."""
    assert fmt(1.0 / 3.0) == "0.333333333"
    assert fmt(2.0) == "2"


async def test_run_solve(tmp_path: Path) -> None:
    """Test the solve record."""
    cfg = make_config(
        tmp_path, mode="solve", generator=REFERENCE_SOURCES["Q2"], mu=1.0, budget=0.5
    )
    record = await run_solve(cfg)
    written = json.loads((tmp_path / "solve.json").read_text())
    assert written["tau"] == record["tau"]
    assert {"tau", "lambda", "maoii", "rate", "eta", "iterations", "status"} <= set(written)
    if written["status"] != "BudgetSlackAtZeroLambda":
        assert abs(written["rate"] - 0.5) <= 1e-2
    assert written["diagnostics"]["solver"]["bisection.step"] >= 1


async def test_run_solve_generous_budget(tmp_path: Path) -> None:
    """Test that a generous budget transmits at once with zero multiplier."""
    cfg = make_config(
        tmp_path, mode="solve", generator=REFERENCE_SOURCES["Q2"], mu=1.0, budget=100.0
    )
    record = await run(cfg)
    assert record["lambda"] == 0.0
    assert record["tau"] == pytest.approx([0.0, 0.0, 0.0], abs=1e-6)
    assert record["status"] == "BudgetSlackAtZeroLambda"


async def test_run_contour(tmp_path: Path) -> None:
    """Test the contour grid and per-budget optima."""
    cfg = make_config(
        tmp_path,
        mode="contour",
        generator=REFERENCE_SOURCES["Q1"],
        mu=1.0,
        budgets=[0.3],
        grid={"lo": 0.0, "hi": 2.0, "step": 0.5},
    )
    rows = await run_contour(cfg)
    grid = read_csv(tmp_path / "contour_grid.csv")
    assert tuple(grid[0]) == CONTOUR_GRID_HEADER
    assert len(grid) == 26
    assert [row[1] for row in rows] == ["csmdp", "grid"]
    feasible = [float(row[2]) for row in grid[1:] if float(row[3]) <= 0.3]
    assert rows[1][4] == pytest.approx(min(feasible), rel=1e-8)
    assert rows[1][5] <= 0.3
    optima = read_csv(tmp_path / "contour_optima.csv")
    assert optima[0] == ["b", "method", "tau1", "tau2", "maoii", "rate"]
    assert len(optima) == 3


async def test_run_contour_worker_pool(tmp_path: Path) -> None:
    """Test that budgets solved on a process pool come back sorted."""
    cfg = make_config(
        tmp_path,
        mode="contour",
        generator=REFERENCE_SOURCES["Q1"],
        mu=1.0,
        budgets=[0.45, 0.3],
        grid={"lo": 0.0, "hi": 2.0, "step": 0.5},
        jobs=2,
    )
    rows = await run_contour(cfg)
    assert [(row[0], row[1]) for row in rows] == [
        (0.3, "csmdp"),
        (0.3, "grid"),
        (0.45, "csmdp"),
        (0.45, "grid"),
    ]
    assert all(row[5] <= row[0] + 1e-2 for row in rows)


async def test_run_contour_not_binary(tmp_path: Path) -> None:
    """Test that contours need a binary source."""
    cfg = make_config(
        tmp_path, mode="contour", generator=REFERENCE_SOURCES["Q2"], mu=1.0, budgets=[0.3]
    )
    with pytest.raises(NotBinary):
        await run_contour(cfg)


async def test_run_simulate(tmp_path: Path) -> None:
    """Test the simulation record and trace."""
    cfg = make_config(
        tmp_path,
        mode="simulate",
        generator=REFERENCE_SOURCES["Q1"],
        mu=1.0,
        policy={"kind": "thresholds", "tau": [1.0, 2.0]},
        cycles=2000,
        seed=3,
        trace="trace.jsonl",
        trace_horizon=10.0,
    )
    record = await run_simulate(cfg)
    assert record["cycles_run"] == 2000
    assert json.loads((tmp_path / "simulate.json").read_text()) == record
    lines = (tmp_path / "trace.jsonl").read_text().splitlines()
    assert lines
    assert all(json.loads(line)["time"] <= 10.0 for line in lines)


async def test_run_sweep_budget(tmp_path: Path) -> None:
    """Test the comparison of the solver with both baselines."""
    cfg = make_config(
        tmp_path,
        mode="sweep_budget",
        generator=REFERENCE_SOURCES["Q2"],
        mu=[5.0],
        budgets=[1.0],
        grid={"lo": 0.0, "hi": 20.0, "step": 0.5},
        cycles=2000,
    )
    rows = await run_sweep_budget(cfg)
    assert [row[2] for row in rows] == ["csmdp", "poisson", "single_threshold"]
    written = read_csv(tmp_path / "sweep_budget.csv")
    assert tuple(written[0]) == SWEEP_HEADER
    assert len(written) == 4
    by_policy = {row[2]: row for row in rows}
    assert by_policy["csmdp"][3] <= by_policy["single_threshold"][3] + 1e-6


async def test_run_scaling(tmp_path: Path) -> None:
    """Test per-iteration timings."""
    cfg = make_config(tmp_path, mode="scaling", sizes=[4, 2], seed=1)
    rows = await run_scaling(cfg)
    assert [row[0] for row in rows] == [2, 4]
    assert all(row[1] > 0 for row in rows)
    assert rows[0][3:] == ("", "")
    assert rows[1][3] == pytest.approx(rows[1][1] / rows[0][1])
    written = read_csv(tmp_path / "scaling.csv")
    assert tuple(written[0]) == SCALING_HEADER
    assert written[1][3:] == ["", ""]


def test_growth_exponents() -> None:
    """Test time ratios and local exponents between consecutive sizes."""
    growth = growth_exponents([2, 4, 8], [1.0, 16.0, 128.0])
    assert growth[0] == ("", "")
    assert growth[1] == pytest.approx((16.0, 4.0))
    assert growth[2] == pytest.approx((8.0, 3.0))


async def test_run_validate_corrupted(tmp_path: Path) -> None:
    """Test that a corrupted generator fails validation with a report."""
    cfg = make_config(
        tmp_path,
        mode="validate",
        generator=[[-0.5, 0.6, -0.1], [0.3, -0.3, 0.0], [0.2, 0.2, -0.4]],
        cycles=1000,
    )
    with pytest.raises(ValidationFailure):
        await run_validate(cfg)
    report = json.loads((tmp_path / "validate.json").read_text())
    assert report["passed"] is False
    [failed] = [check for check in report["checks"] if not check["passed"]]
    assert failed["suite"] == "generator"
    assert "NegativeOffDiagonal" in failed["detail"]
