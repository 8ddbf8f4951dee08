from __future__ import annotations

import logging
from collections.abc import Generator

import pytest

from aoii_csmdp import diagnostics
from aoii_csmdp.config import OUTPUT_DIR_ENV
from aoii_csmdp.markov import (
    REFERENCE_SOURCES,
    GeneratorMatrix,
    symmetric_generator,
    validate_generator,
)

_LOGGER = logging.getLogger(__name__)


@pytest.fixture
def q1() -> GeneratorMatrix:
    """Binary reference source."""
    return validate_generator(REFERENCE_SOURCES["Q1"])


@pytest.fixture
def q2() -> GeneratorMatrix:
    """Ternary reference source."""
    return validate_generator(REFERENCE_SOURCES["Q2"])


@pytest.fixture
def symmetric3() -> GeneratorMatrix:
    """Symmetric 3-state source with unit holding rates."""
    return symmetric_generator(3)


@pytest.fixture(autouse=True)
def reset_diagnostics() -> Generator[None, None, None]:
    yield
    diagnostics.reset()


@pytest.fixture(autouse=True)
def clear_output_override(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
