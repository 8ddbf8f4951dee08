"""Experiment configuration documents."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .exceptions import ConfigError
from .interface import SamplingPolicy
from .markov import GeneratorMatrix, validate_generator
from .policies import policy_from_dict
from .simulator import DEFAULT_CYCLES
from .solver import SolverConfig, threshold_grid

_LOGGER = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "AOII_OUTPUT_DIR"
DEFAULT_OUTPUT = "results"

MODES = ("solve", "simulate", "sweep_budget", "contour", "validate", "scaling")

_REQUIRED: dict[str, tuple[str, ...]] = {
    "solve": ("generator", "mu", "budget"),
    "simulate": ("generator", "mu", "policy"),
    "sweep_budget": ("generator", "mu", "budgets"),
    "contour": ("generator", "mu", "budgets"),
    "validate": (),
    "scaling": ("sizes",),
}

_KEYS = {
    "mode",
    "generator",
    "mu",
    "budget",
    "budgets",
    "policy",
    "grid",
    "solver",
    "seed",
    "cycles",
    "sizes",
    "output",
    "trace",
    "trace_horizon",
    "jobs",
}


@dataclass(frozen=True)
class GridSpec:
    """An evenly spaced threshold grid lo, lo + step, ..., hi."""

    lo: float = 0.0
    hi: float = 5.0
    step: float = 0.05

    def __post_init__(self) -> None:
        if not self.step > 0 or self.hi < self.lo or self.lo < 0:
            raise ConfigError(f"Empty or invalid grid: {self}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> GridSpec:
        """Build a grid from its JSON object."""
        unknown = set(data) - {"lo", "hi", "step"}
        if unknown:
            raise ConfigError(f"Unknown grid options: {sorted(unknown)}")
        return cls(**{key: float(value) for key, value in data.items()})

    def points(self) -> NDArray[np.float64]:
        """Return the grid points."""
        return threshold_grid(self.step, self.hi, self.lo)


@dataclass(frozen=True)
class ExperimentConfig:
    """One reproducible experiment."""

    mode: str
    generator: GeneratorMatrix | None = None
    mus: tuple[float, ...] = ()
    budget: float | None = None
    budgets: tuple[float, ...] = ()
    policy: SamplingPolicy | None = None
    grid: GridSpec = field(default_factory=GridSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    cycles: int = DEFAULT_CYCLES
    sizes: tuple[int, ...] = ()
    output: Path = Path(DEFAULT_OUTPUT)
    trace: Path | None = None
    trace_horizon: float = 50.0
    jobs: int = 1
    sources: dict[str, Any] | None = None
    """Unvalidated matrices checked by the validate mode."""

    @property
    def mu(self) -> float:
        """The service rate of single-rate modes."""
        if not self.mus:
            raise ConfigError(f"Mode {self.mode} needs a service rate")
        return self.mus[0]

    def require_generator(self) -> GeneratorMatrix:
        """Return the generator, which the mode requires."""
        if self.generator is None:
            raise ConfigError(f"Mode {self.mode} needs a generator")
        return self.generator

    def require_budget(self) -> float:
        """Return the budget, which the mode requires."""
        if self.budget is None:
            raise ConfigError(f"Mode {self.mode} needs a budget")
        return self.budget

    def require_policy(self) -> SamplingPolicy:
        """Return the sampling policy, which the mode requires."""
        if self.policy is None:
            raise ConfigError(f"Mode {self.mode} needs a policy")
        return self.policy

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExperimentConfig:
        """Parse and validate an experiment document."""
        mode = str(data.get("mode", "")).replace("-", "_")
        if mode not in MODES:
            raise ConfigError(f"Unknown mode {data.get('mode')!r}, expected one of {MODES}")
        unknown = set(data) - _KEYS
        if unknown:
            raise ConfigError(f"Unknown config keys: {sorted(unknown)}")
        missing = [key for key in _REQUIRED[mode] if key not in data]
        if missing:
            raise ConfigError(f"Mode {mode} requires {missing}")
        try:
            return cls._parse(mode, data)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"Malformed {mode} config: {err}") from err

    @classmethod
    def _parse(cls, mode: str, data: dict[str, Any]) -> ExperimentConfig:
        raw_mu = data.get("mu", [])
        mus = tuple(float(mu) for mu in (raw_mu if isinstance(raw_mu, list) else [raw_mu]))
        if any(not mu > 0 for mu in mus):
            raise ConfigError(f"Service rates must be positive, got {list(mus)}")
        budget = float(data["budget"]) if "budget" in data else None
        budgets = tuple(float(b) for b in data.get("budgets", ()))
        if any(not b > 0 for b in (*budgets, *([budget] if budget is not None else []))):
            raise ConfigError("Budgets must be positive")
        if "budgets" in data and not budgets:
            raise ConfigError("Budget list is empty")
        sizes = tuple(int(n) for n in data.get("sizes", ()))
        if "sizes" in data and (not sizes or min(sizes) < 2):
            raise ConfigError(f"Sizes must be a nonempty list of integers >= 2, got {sizes}")
        cycles = int(data.get("cycles", DEFAULT_CYCLES))
        if cycles < 1:
            raise ConfigError(f"cycles must be at least 1, got {cycles}")
        jobs = int(data.get("jobs", 1))
        if jobs < 1:
            raise ConfigError(f"jobs must be at least 1, got {jobs}")

        return cls(
            mode=mode,
            generator=(
                validate_generator(data["generator"])
                if "generator" in data and mode != "validate"
                else None
            ),
            mus=mus,
            budget=budget,
            budgets=budgets,
            policy=policy_from_dict(data["policy"]) if "policy" in data else None,
            grid=GridSpec.from_dict(data["grid"]) if "grid" in data else GridSpec(),
            solver=SolverConfig.from_dict(data.get("solver", {})),
            seed=int(data.get("seed", 0)),
            cycles=cycles,
            sizes=sizes,
            output=_output_dir(data.get("output")),
            trace=Path(data["trace"]) if "trace" in data else None,
            trace_horizon=float(data.get("trace_horizon", 50.0)),
            jobs=jobs,
            sources=(
                {"generator": data["generator"]}
                if mode == "validate" and "generator" in data
                else None
            ),
        )

    def with_overrides(
        self,
        seed: int | None = None,
        output: Path | None = None,
        jobs: int | None = None,
    ) -> ExperimentConfig:
        """Return a copy with command line overrides applied."""
        changes: dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = seed
        if output is not None:
            changes["output"] = output
        if jobs is not None:
            if jobs < 1:
                raise ConfigError(f"jobs must be at least 1, got {jobs}")
            changes["jobs"] = jobs
        return replace(self, **changes)


def _output_dir(configured: str | None) -> Path:
    override = os.environ.get(OUTPUT_DIR_ENV)
    if override:
        _LOGGER.debug("Output directory overridden by %s=%s", OUTPUT_DIR_ENV, override)
        return Path(override)
    return Path(configured or DEFAULT_OUTPUT)


def load_config(path: Path) -> ExperimentConfig:
    """Load an experiment document from a JSON file."""
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigError(f"Cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"Config {path} is not valid JSON: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must hold a JSON object")
    _LOGGER.debug("Loaded %s config from %s", data.get("mode"), path)
    return ExperimentConfig.from_dict(data)
