r"""Absorbing CTMCs and phase-type distributions.

An absorbing chain with K transient and L absorbing states has generator

    [ A  B ]
    [ 0  0 ]

and starts in transient state i with probability beta_i. The time to
absorption T follows the phase-type distribution PH(A, beta) with

    F_T(t) = 1 - beta e^{tA} 1,        f_T(t) = -beta e^{tA} A 1.

Row vectors are multiplied by A^{-1} through an LU factorization of A
rather than an explicit inverse.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .exceptions import (
    ConditioningOnNull,
    ConfigError,
    NonFinite,
    NumericalError,
    SingularMatrix,
    ZeroDiagonal,
)

_LOGGER = logging.getLogger(__name__)

STRUCTURE_TOLERANCE = 1e-12
CONDITION_WARNING = 1e12
NULL_PROBABILITY = 1e-14

LUFactor = tuple[NDArray[np.float64], NDArray[np.int32]]


@dataclass(frozen=True)
class PhaseType:
    """Distribution of the time to absorption, characterized by (A, beta)."""

    A: NDArray[np.float64]
    beta: NDArray[np.float64]

    def __post_init__(self) -> None:
        _check_subgenerator(self.A)
        _check_initial(self.A, self.beta)

    @property
    def k(self) -> int:
        """Number of transient phases."""
        return int(self.A.shape[0])


@dataclass(frozen=True)
class AbsorbingChain:
    """An absorbing CTMC characterized by the triple (A, B, beta)."""

    A: NDArray[np.float64]
    B: NDArray[np.float64]
    beta: NDArray[np.float64]

    def __post_init__(self) -> None:
        if self.B.ndim != 2 or self.B.shape[0] != self.A.shape[0]:
            raise ConfigError(f"Absorption block has shape {self.B.shape}")
        if np.any(self.B < 0):
            raise ConfigError("Absorption rates must be nonnegative")
        scale = max(1.0, float(np.max(np.abs(self.A))))
        residual = np.abs(self.A.sum(axis=1) + self.B.sum(axis=1))
        if np.any(residual > STRUCTURE_TOLERANCE * scale):
            raise ConfigError(f"Rows of [A | B] do not sum to zero: {residual}")
        _check_subgenerator(self.A)
        _check_initial(self.A, self.beta)

    @classmethod
    def from_arrays(cls, A: ArrayLike, B: ArrayLike, beta: ArrayLike) -> AbsorbingChain:
        """Build a chain from nested lists or arrays."""
        b = np.array(B, dtype=float)
        if b.ndim == 1:
            b = b[:, np.newaxis]
        return cls(
            A=np.atleast_2d(np.array(A, dtype=float)),
            B=b,
            beta=np.atleast_1d(np.array(beta, dtype=float)),
        )

    @property
    def phase_type(self) -> PhaseType:
        """The distribution of the time to absorption."""
        return PhaseType(A=self.A, beta=self.beta)

    @property
    def k(self) -> int:
        """Number of transient states."""
        return int(self.A.shape[0])

    @property
    def n_absorbing(self) -> int:
        """Number of absorbing states."""
        return int(self.B.shape[1])


def phase_type(A: ArrayLike, beta: ArrayLike) -> PhaseType:
    """Build a PhaseType from nested lists or arrays."""
    return PhaseType(
        A=np.atleast_2d(np.array(A, dtype=float)),
        beta=np.atleast_1d(np.array(beta, dtype=float)),
    )


def _check_subgenerator(A: NDArray[np.float64]) -> None:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigError(f"Subgenerator must be square, got shape {A.shape}")
    off_diagonal = ~np.eye(A.shape[0], dtype=bool)
    if np.any(A[off_diagonal] < 0):
        raise ConfigError("Subgenerator has negative off-diagonal rates")
    if np.any(np.diag(A) >= 0):
        raise ZeroDiagonal("Subgenerator diagonal must be strictly negative")


def _check_initial(A: NDArray[np.float64], beta: NDArray[np.float64]) -> None:
    if beta.shape != (A.shape[0],):
        raise ConfigError(f"Initial vector has shape {beta.shape}, expected ({A.shape[0]},)")
    if np.any(beta < -STRUCTURE_TOLERANCE) or abs(beta.sum() - 1.0) > 1e-10:
        raise ConfigError(f"Initial vector is not a distribution: {beta}")


def lu(A: NDArray[np.float64]) -> LUFactor:
    """LU-factorize A with partial pivoting, rejecting singular matrices."""
    if not np.all(np.isfinite(A)):
        raise NonFinite("Matrix has non-finite entries")
    try:
        factor = scipy.linalg.lu_factor(A, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as err:
        raise SingularMatrix(f"LU factorization failed: {err}") from err
    pivots = np.abs(np.diag(factor[0]))
    if np.any(pivots == 0.0):
        raise SingularMatrix("Matrix is singular")
    condition = float(np.linalg.cond(A))
    if not np.isfinite(condition):
        raise SingularMatrix("Matrix is singular")
    if condition > CONDITION_WARNING:
        _LOGGER.warning("Ill-conditioned matrix inversion (cond=%.3g)", condition)
    return factor


def left_solve(factor: LUFactor, row: NDArray[np.float64]) -> NDArray[np.float64]:
    """Return row @ inv(A) for the factorized A."""
    result: NDArray[np.float64] = scipy.linalg.lu_solve(factor, row, trans=1, check_finite=False)
    return result


def right_solve(factor: LUFactor, col: NDArray[np.float64]) -> NDArray[np.float64]:
    """Return inv(A) @ col for the factorized A."""
    result: NDArray[np.float64] = scipy.linalg.lu_solve(factor, col, check_finite=False)
    return result


def mat_exp(A: ArrayLike, t: float) -> NDArray[np.float64]:
    """Return e^{tA} for a subgenerator A and t >= 0.

    Computed by scaling and squaring; tiny negative round-off is clipped.
    """
    if t < 0:
        raise ConfigError(f"Time must be nonnegative, got {t}")
    matrix = np.atleast_2d(np.array(A, dtype=float))
    with np.errstate(over="raise", invalid="raise"):
        try:
            result = scipy.linalg.expm(t * matrix)
        except FloatingPointError as err:
            raise NonFinite(f"Matrix exponential overflow at t={t}") from err
    if not np.all(np.isfinite(result)):
        raise NonFinite(f"Matrix exponential is not finite at t={t}")
    clipped: NDArray[np.float64] = np.clip(result, 0.0, None)
    return clipped


def survival_weights(ph: PhaseType, t: float) -> NDArray[np.float64]:
    """Return beta e^{tA}, the defective phase distribution at time t."""
    result: NDArray[np.float64] = ph.beta @ mat_exp(ph.A, t)
    return result


def ph_cdf(ph: PhaseType, t: float) -> float:
    """Return F_T(t) = 1 - beta e^{tA} 1."""
    if t <= 0:
        return 0.0
    return float(min(1.0, max(0.0, 1.0 - survival_weights(ph, t).sum())))


def ph_pdf(ph: PhaseType, t: float) -> float:
    """Return f_T(t) = -beta e^{tA} A 1."""
    if t < 0:
        return 0.0
    exit_rates = -ph.A.sum(axis=1)
    return float(max(0.0, survival_weights(ph, t) @ exit_rates))


def ph_moments(ph: PhaseType) -> tuple[float, float]:
    """Return E[T] = -beta A^{-1} 1 and E[T^2] = 2 beta A^{-2} 1."""
    factor = lu(ph.A)
    beta_u = left_solve(factor, ph.beta)
    beta_v = left_solve(factor, beta_u)
    return -float(beta_u.sum()), 2.0 * float(beta_v.sum())


def ph_conditional_moments(ph: PhaseType, tau: float) -> tuple[float, float]:
    """Return E[T | T < tau] and E[T^2 | T < tau]."""
    if tau <= 0:
        raise ConditioningOnNull(f"Conditioning on T < {tau}")
    factor = lu(ph.A)
    w = survival_weights(ph, tau)
    cdf = 1.0 - float(w.sum())
    if cdf < NULL_PROBABILITY:
        raise ConditioningOnNull(f"P[T < {tau}] = {cdf} is numerically zero")
    beta_u = left_solve(factor, ph.beta)
    beta_v = left_solve(factor, beta_u)
    w_u = left_solve(factor, w)
    w_v = left_solve(factor, w_u)
    survival = float(w.sum())
    first = -tau * survival + float(w_u.sum()) - float(beta_u.sum())
    second = (
        -tau * tau * survival
        + 2.0 * tau * float(w_u.sum())
        - 2.0 * float(w_v.sum())
        + 2.0 * float(beta_v.sum())
    )
    return first / cdf, second / cdf


def ph_tail_mean(ph: PhaseType, tau: float) -> float:
    """Return E[T | T >= tau]."""
    w = survival_weights(ph, tau)
    survival = float(w.sum())
    if survival < NULL_PROBABILITY:
        raise ConditioningOnNull(f"P[T >= {tau}] = {survival} is numerically zero")
    w_u = left_solve(lu(ph.A), w)
    return tau - float(w_u.sum()) / survival


def absorption_probs(amc: AbsorbingChain) -> NDArray[np.float64]:
    """Return the probability of absorption into each absorbing state."""
    beta_u = left_solve(lu(amc.A), amc.beta)
    probs: NDArray[np.float64] = np.clip(-beta_u @ amc.B, 0.0, 1.0)
    return probs


def embedded_dtmc(A: ArrayLike) -> NDArray[np.float64]:
    """Return the jump chain among transient states of the subgenerator A.

    Entry (i, j) is a_ij / (-a_ii): each row is divided by its own exit
    rate, so the rows sum to the probability of staying transient.
    """
    matrix = np.atleast_2d(np.array(A, dtype=float))
    diagonal = np.diag(matrix)
    if np.any(diagonal >= 0):
        raise ZeroDiagonal("Subgenerator diagonal must be strictly negative")
    jump = matrix / (-diagonal)[:, np.newaxis]
    np.fill_diagonal(jump, 0.0)
    return jump


def fundamental_matrix(A: ArrayLike) -> NDArray[np.float64]:
    """Return (I - D)^{-1} for the embedded jump chain D of A."""
    jump = embedded_dtmc(A)
    factor = lu(np.eye(jump.shape[0]) - jump)
    result: NDArray[np.float64] = scipy.linalg.lu_solve(factor, np.eye(jump.shape[0]))
    return result


def expected_visits(amc: AbsorbingChain) -> float:
    """Return the expected number of transient-state visits before absorption."""
    jump = embedded_dtmc(amc.A)
    factor = lu(np.eye(amc.k) - jump)
    return float(amc.beta @ right_solve(factor, np.ones(amc.k)))


@dataclass(frozen=True)
class AbsorptionSample:
    """Monte Carlo sample paths of an absorbing chain."""

    times: NDArray[np.float64]
    absorbed_into: NDArray[np.int64]
    visits: NDArray[np.int64]

    def summary(self) -> dict[str, Any]:
        """Return sample means and standard errors, for debugging."""
        n = self.times.size
        return {
            "paths": n,
            "mean_time": float(self.times.mean()),
            "stderr_time": float(self.times.std(ddof=1) / np.sqrt(n)),
            "mean_visits": float(self.visits.mean()),
        }


def sample_absorption(
    amc: AbsorbingChain,
    size: int,
    rng: np.random.Generator,
    max_steps: int = 100_000,
) -> AbsorptionSample:
    """Simulate `size` independent paths of the chain until absorption."""
    k = amc.k
    exit_rates = -np.diag(amc.A)
    targets = np.hstack([amc.A, amc.B]) / exit_rates[:, np.newaxis]
    targets[np.arange(k), np.arange(k)] = 0.0
    cumulative = np.cumsum(targets, axis=1)
    cumulative[:, -1] = 1.0

    state = rng.choice(k, size=size, p=amc.beta / amc.beta.sum())
    times = np.zeros(size)
    visits = np.zeros(size, dtype=np.int64)
    absorbed = np.full(size, -1, dtype=np.int64)
    active = np.arange(size)
    for _ in range(max_steps):
        if active.size == 0:
            break
        current = state[active]
        times[active] += rng.standard_exponential(active.size) / exit_rates[current]
        visits[active] += 1
        u = rng.random(active.size)
        target = (cumulative[current] < u[:, np.newaxis]).sum(axis=1)
        done = target >= k
        absorbed[active[done]] = target[done] - k
        state[active[~done]] = target[~done]
        active = active[~done]
    if active.size:
        raise NumericalError(f"{active.size} paths still transient after {max_steps} steps")
    return AbsorptionSample(times=times, absorbed_into=absorbed, visits=visits)
