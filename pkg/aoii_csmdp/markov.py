"""Validated CTMC generators and the submatrix extractions used by the cycle model.

States are indexed 1..N at every public boundary and 0..N-1 internally.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.sparse.csgraph import connected_components

from .exceptions import (
    AbsorbingState,
    GeneratorError,
    IndexOutOfRange,
    NegativeOffDiagonal,
    NonzeroRowSum,
    Reducible,
)

_LOGGER = logging.getLogger(__name__)

ROW_SUM_TOLERANCE = 1e-9


def _frozen(values: ArrayLike) -> NDArray[np.float64]:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class GeneratorMatrix:
    """A validated, irreducible generator of an N-state CTMC.

    Use `validate_generator` to build one.
    """

    q: NDArray[np.float64]
    sigma: NDArray[np.float64] = field(repr=False)

    @property
    def n(self) -> int:
        """Number of source states."""
        return int(self.q.shape[0])

    def to_list(self) -> list[list[float]]:
        """Return the rates as nested lists, for JSON records."""
        return [[float(x) for x in row] for row in self.q]


@dataclass(frozen=True)
class StateRemoval:
    """Blocks of a generator around one removed state j."""

    reduced: NDArray[np.float64]
    """Q with row and column j deleted."""

    col_to_j: NDArray[np.float64]
    """Rates from the retained states into j."""

    row_from_j: NDArray[np.float64]
    """Rates out of j into the retained states."""

    removed_index: int
    """The removed state, 1-based."""

    def restore(self) -> NDArray[np.float64]:
        """Re-insert row and column j, reconstructing the full generator."""
        k = self.removed_index - 1
        n = self.reduced.shape[0] + 1
        keep = [i for i in range(n) if i != k]
        q = np.zeros((n, n))
        q[np.ix_(keep, keep)] = self.reduced
        q[keep, k] = self.col_to_j
        q[k, keep] = self.row_from_j
        q[k, k] = -float(self.row_from_j.sum())
        return q


def validate_generator(q: ArrayLike) -> GeneratorMatrix:
    """Validate a rate matrix and return it as a GeneratorMatrix.

    Rows whose sum is off by less than ROW_SUM_TOLERANCE are renormalized
    through the diagonal so that every row sums to exactly zero.
    """
    rates = np.array(q, dtype=float)
    if rates.ndim != 2 or rates.shape[0] != rates.shape[1]:
        raise GeneratorError(f"Generator must be a square matrix, got shape {rates.shape}")
    n = rates.shape[0]
    if n < 2:
        raise GeneratorError(f"Generator needs at least 2 states, got {n}")
    if not np.all(np.isfinite(rates)):
        raise GeneratorError("Generator has non-finite entries")

    off_diagonal = ~np.eye(n, dtype=bool)
    if np.any(rates[off_diagonal] < 0):
        i, j = np.argwhere((rates < 0) & off_diagonal)[0]
        raise NegativeOffDiagonal(
            f"Negative rate q[{i + 1},{j + 1}]={rates[i, j]}"
        )
    diagonal = np.diag(rates)
    if np.any(diagonal >= 0):
        i = int(np.argmax(diagonal >= 0))
        raise AbsorbingState(f"State {i + 1} has holding rate {-diagonal[i]}")

    residual = np.abs(rates.sum(axis=1))
    if np.any(residual >= ROW_SUM_TOLERANCE):
        i = int(np.argmax(residual))
        raise NonzeroRowSum(f"Row {i + 1} sums to {rates[i].sum()}")
    outgoing = np.where(off_diagonal, rates, 0.0).sum(axis=1)
    np.fill_diagonal(rates, -outgoing)

    n_components, _ = connected_components(
        (rates * off_diagonal > 0).astype(float), directed=True, connection="strong"
    )
    if n_components != 1:
        raise Reducible(f"Generator has {n_components} communicating classes")

    _LOGGER.debug("Validated %d-state generator", n)
    return GeneratorMatrix(q=_frozen(rates), sigma=_frozen(outgoing))


def holding_and_jump(
    g: GeneratorMatrix,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Return the holding rates and the embedded jump chain of the source."""
    jump = g.q / g.sigma[:, np.newaxis]
    np.fill_diagonal(jump, 0.0)
    return g.sigma.copy(), jump


def remove_state(g: GeneratorMatrix, j: int) -> StateRemoval:
    """Split the generator around state j (1-based)."""
    if not 1 <= j <= g.n:
        raise IndexOutOfRange(f"State {j} is outside 1..{g.n}")
    k = j - 1
    keep = [i for i in range(g.n) if i != k]
    return StateRemoval(
        reduced=_frozen(g.q[np.ix_(keep, keep)]),
        col_to_j=_frozen(g.q[keep, k]),
        row_from_j=_frozen(g.q[k, keep]),
        removed_index=j,
    )


def symmetric_generator(n: int, sigma: float = 1.0) -> GeneratorMatrix:
    """Return the symmetric source with q_ij = sigma / (n - 1)."""
    q = np.full((n, n), sigma / (n - 1))
    np.fill_diagonal(q, -sigma)
    return validate_generator(q)


def random_generator(n: int, rng: np.random.Generator) -> GeneratorMatrix:
    """Draw an irreducible generator with uniform off-diagonal rates.

    Rates are drawn from U(0, 1) and each row is rescaled to unit holding
    rate, so every state has the same time scale regardless of n.
    """
    q = rng.uniform(0.0, 1.0, size=(n, n))
    np.fill_diagonal(q, 0.0)
    q /= q.sum(axis=1, keepdims=True)
    np.fill_diagonal(q, -1.0)
    return validate_generator(q)


REFERENCE_SOURCES: dict[str, list[list[float]]] = {
    "Q1": [[-0.6, 0.6], [0.75, -0.75]],
    "Q2": [[-1.025, 1.0, 0.025], [0.05, -0.75, 0.7], [0.4, 0.01, -0.41]],
}
"""Reference binary and ternary sources used by the validation suites and configs."""
