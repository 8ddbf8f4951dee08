"""Semi-Markov model of the synchronization cycles under threshold sampling.

A cycle starts at a synchronization state S_j (source and monitor both at
j) and ends at the next one. After the in-sync holding time H_j the source
leaves j and two absorbing chains describe the rest of the cycle:

  Y1: waiting phase while AoII < tau_j, absorbed only by drift back to j.
  Y2: transmission phase once AoII reached tau_j, absorbed by drift back
      to j or by a delivery (rate mu) of the current source state i,
      ending at S_i.

Everything about Y1 and Y2 except the threshold is fixed by (Q, j, mu), so
`SyncStateModel` factorizes those blocks once; evaluating a threshold costs
one matrix exponential and a few vector products.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.sparse.csgraph import connected_components

from . import phasetype
from .diagnostics import MODEL_DIAGNOSTICS as DIAGNOSTICS
from .exceptions import (
    ConfigError,
    NumericalError,
    SingularChain,
    SingularMatrix,
    ThresholdAbsorbsAll,
)
from .markov import GeneratorMatrix, remove_state
from .phasetype import AbsorbingChain

_LOGGER = logging.getLogger(__name__)

TAU_CAP_SCALE = 1e4
NEVER_TRANSMIT = 1e-14
CROSS_CHECK_TOLERANCE = 1e-9


def tau_cap(g: GeneratorMatrix) -> float:
    """Largest meaningful threshold; beyond it the source never transmits."""
    return TAU_CAP_SCALE / float(g.sigma.min())


@dataclass(frozen=True)
class ThresholdPolicy:
    """Per-estimate transmission thresholds tau_1..tau_N."""

    tau: NDArray[np.float64]

    def __post_init__(self) -> None:
        if self.tau.ndim != 1 or self.tau.size < 1:
            raise ConfigError(f"Thresholds must be a nonempty vector, got {self.tau}")
        if not np.all(np.isfinite(self.tau)) or np.any(self.tau < 0):
            raise ConfigError(f"Thresholds must be finite and nonnegative: {self.tau}")

    @classmethod
    def of(cls, tau: ArrayLike) -> ThresholdPolicy:
        """Build a policy from a sequence of thresholds."""
        values = np.array(tau, dtype=float).ravel()
        values.setflags(write=False)
        return cls(tau=values)

    @classmethod
    def zeros(cls, n: int) -> ThresholdPolicy:
        """Transmit as soon as the monitor is out of sync."""
        return cls.of(np.zeros(n))

    @classmethod
    def uniform(cls, n: int, tau: float) -> ThresholdPolicy:
        """The same threshold for every estimate."""
        return cls.of(np.full(n, tau))

    def capped(self, g: GeneratorMatrix) -> ThresholdPolicy:
        """Return the policy with thresholds clipped to tau_cap(g)."""
        return ThresholdPolicy.of(np.minimum(self.tau, tau_cap(g)))

    def to_list(self) -> list[float]:
        """Return the thresholds as floats, for JSON records."""
        return [float(x) for x in self.tau]


@dataclass(frozen=True)
class CycleModel:
    """Expected costs of one cycle started at S_j under threshold tau_j."""

    j: int
    tau: float
    kappa: float
    """Probability of drifting back to j before the threshold."""

    a: float
    """Expected area under the AoII curve."""

    c: float
    """Expected number of initiated transmissions."""

    d: float
    """Expected cycle length, including the in-sync holding time."""

    p_row: NDArray[np.float64]
    """Probabilities of the next synchronization state."""


@dataclass(frozen=True)
class SyncChain:
    """Embedded chain of synchronization states and its long-run averages."""

    P: NDArray[np.float64]
    pi: NDArray[np.float64]
    maoii: float
    rate: float
    cycles: tuple[CycleModel, ...]


def build_y1(g: GeneratorMatrix, j: int) -> AbsorbingChain:
    """Return the waiting-phase chain of a cycle started at S_j."""
    removal = remove_state(g, j)
    return AbsorbingChain(
        A=np.array(removal.reduced),
        B=np.array(removal.col_to_j)[:, np.newaxis],
        beta=removal.row_from_j / g.sigma[j - 1],
    )


def build_y2(
    g: GeneratorMatrix, j: int, mu: float, tau_j: float
) -> tuple[AbsorbingChain, float]:
    """Return the transmission-phase chain and the drift probability kappa_j.

    Column 0 of B absorbs into S_j; column 1 + k absorbs into the k-th
    retained state in ascending order.
    """
    _check_rate(mu)
    y1 = build_y1(g, j)
    survival = phasetype.survival_weights(y1.phase_type, tau_j)
    reach = float(survival.sum())
    if reach < NEVER_TRANSMIT:
        raise ThresholdAbsorbsAll(
            f"Waiting phase of S_{j} absorbs before tau={tau_j} (1-kappa={reach})"
        )
    k = y1.k
    y2 = AbsorbingChain(
        A=y1.A - mu * np.eye(k),
        B=np.hstack([y1.B, mu * np.eye(k)]),
        beta=survival / reach,
    )
    return y2, 1.0 - reach


def _check_rate(mu: float) -> None:
    if not mu > 0 or not np.isfinite(mu):
        raise ConfigError(f"Service rate must be positive, got {mu}")


class SyncStateModel:
    """Threshold-independent blocks of the cycle started at S_j."""

    def __init__(self, g: GeneratorMatrix, j: int, mu: float) -> None:
        """Initialize SyncStateModel."""
        _check_rate(mu)
        removal = remove_state(g, j)
        self._j = j
        self._n = g.n
        self._holding = 1.0 / float(g.sigma[j - 1])
        self._a1 = np.array(removal.reduced)
        self._beta1 = removal.row_from_j / g.sigma[j - 1]
        k = self._a1.shape[0]
        ones = np.ones(k)

        a2 = self._a1 - mu * np.eye(k)
        lu1 = phasetype.lu(self._a1)
        lu2 = phasetype.lu(a2)
        # U_k 1 and V_k 1 = U_k^2 1 as column vectors.
        self._u1 = phasetype.right_solve(lu1, ones)
        self._v1 = phasetype.right_solve(lu1, self._u1)
        self._u2 = phasetype.right_solve(lu2, ones)
        self._v2 = phasetype.right_solve(lu2, self._u2)
        self._mean_t1 = -float(self._beta1 @ self._u1)
        self._half_second_t1 = float(self._beta1 @ self._v1)

        visits_factor = phasetype.lu(np.eye(k) - phasetype.embedded_dtmc(a2))
        self._visits = phasetype.right_solve(visits_factor, ones)

        b2 = np.hstack([np.array(removal.col_to_j)[:, np.newaxis], mu * np.eye(k)])
        absorb = -phasetype.right_solve(lu2, b2)
        keep = [i for i in range(g.n) if i != j - 1]
        self._absorb = np.zeros((k, g.n))
        self._absorb[:, j - 1] = absorb[:, 0]
        self._absorb[:, keep] = absorb[:, 1:]

    @property
    def j(self) -> int:
        """The synchronization state, 1-based."""
        return self._j

    def weights(self, tau: float) -> NDArray[np.float64]:
        """Return beta_1 e^{tau A_1}, the waiting-phase mass left at tau."""
        if tau == 0:
            return self._beta1.copy()
        result: NDArray[np.float64] = self._beta1 @ phasetype.mat_exp(self._a1, tau)
        return result

    def cycle(self, tau: float) -> CycleModel:
        """Return the cycle costs for threshold tau."""
        return self._from_weights(tau, self.weights(tau))

    def cycles_on_grid(self, taus: NDArray[np.float64]) -> list[CycleModel]:
        """Return cycle costs on an evenly spaced, increasing grid of thresholds."""
        if taus.size == 0:
            return []
        weights = self.weights(float(taus[0]))
        result = [self._from_weights(float(taus[0]), weights)]
        if taus.size > 1:
            step = phasetype.mat_exp(self._a1, float(taus[1] - taus[0]))
            for tau in taus[1:]:
                weights = weights @ step
                result.append(self._from_weights(float(tau), weights))
        return result

    def _from_weights(self, tau: float, w: NDArray[np.float64]) -> CycleModel:
        DIAGNOSTICS.increment("cycle.evaluate")
        reach = float(w.sum())
        kappa = min(1.0, max(0.0, 1.0 - reach))
        if reach < NEVER_TRANSMIT:
            DIAGNOSTICS.increment("cycle.never_transmit")
            p_row = np.zeros(self._n)
            p_row[self._j - 1] = 1.0
            return CycleModel(
                j=self._j,
                tau=tau,
                kappa=1.0,
                a=self._half_second_t1,
                c=0.0,
                d=self._mean_t1 + self._holding,
                p_row=p_row,
            )
        du = self._u1 - self._u2
        d = float(w @ du) + self._mean_t1 + self._holding
        a = tau * float(w @ du) + self._half_second_t1 + float(w @ (self._v2 - self._v1))
        c = float(w @ self._visits)
        p_row = np.clip(w @ self._absorb, 0.0, 1.0)
        p_row[self._j - 1] += kappa
        return CycleModel(j=self._j, tau=tau, kappa=kappa, a=a, c=c, d=d, p_row=p_row)


class CsmdpModel:
    """Cycle models of all N synchronization states for a source and channel."""

    def __init__(self, g: GeneratorMatrix, mu: float) -> None:
        """Initialize CsmdpModel."""
        self._g = g
        self._mu = mu
        self._states = [SyncStateModel(g, j, mu) for j in range(1, g.n + 1)]

    @property
    def generator(self) -> GeneratorMatrix:
        """The source generator."""
        return self._g

    @property
    def mu(self) -> float:
        """The channel service rate."""
        return self._mu

    @property
    def tau_cap(self) -> float:
        """Largest meaningful threshold for this source."""
        return tau_cap(self._g)

    def state(self, j: int) -> SyncStateModel:
        """Return the model of synchronization state j (1-based)."""
        return self._states[j - 1]

    def cycles(self, policy: ThresholdPolicy) -> list[CycleModel]:
        """Return the cycle models of every state under the policy."""
        if policy.tau.size != self._g.n:
            raise ConfigError(f"Policy has {policy.tau.size} thresholds for {self._g.n} states")
        capped = policy.capped(self._g)
        return [s.cycle(float(t)) for s, t in zip(self._states, capped.tau)]

    def sync_chain(self, policy: ThresholdPolicy) -> SyncChain:
        """Return the synchronization chain under the policy."""
        return chain_from_cycles(self.cycles(policy))


def closed_classes(P: NDArray[np.float64]) -> tuple[list[NDArray[np.intp]], NDArray[np.intp]]:
    """Return the closed communicating classes of P and its transient states."""
    n = P.shape[0]
    edges = P > 0.0
    n_components, labels = connected_components(
        edges.astype(float), directed=True, connection="strong"
    )
    closed: list[NDArray[np.intp]] = []
    for label in range(n_components):
        members = np.flatnonzero(labels == label)
        if not np.any(np.delete(edges[members], members, axis=1)):
            closed.append(members)
    transient = np.setdiff1d(np.arange(n), np.concatenate(closed))
    return closed, transient


def _stationary(P: NDArray[np.float64]) -> NDArray[np.float64]:
    """Return 1^T (P + 1 1^T - I)^{-1}, the stationary law of a unichain P."""
    n = P.shape[0]
    completed = P + np.ones((n, n)) - np.eye(n)
    try:
        factor = phasetype.lu(completed)
    except SingularMatrix as err:
        raise SingularChain(f"Synchronization chain has no unique stationary law: {err}") from err
    pi = np.clip(phasetype.left_solve(factor, np.ones(n)), 0.0, None)
    return pi / pi.sum()


def absorption_from_first(
    P: NDArray[np.float64], closed: Sequence[NDArray[np.intp]], transient: NDArray[np.intp]
) -> NDArray[np.float64]:
    """Return the probabilities that the chain started at S_1 ends in each closed class."""
    for k, members in enumerate(closed):
        if 0 in members:
            return np.eye(len(closed))[k]
    into = np.column_stack([P[np.ix_(transient, members)].sum(axis=1) for members in closed])
    try:
        factor = phasetype.lu(np.eye(transient.size) - P[np.ix_(transient, transient)])
    except SingularMatrix as err:
        raise SingularChain(f"Transient block of the synchronization chain: {err}") from err
    first = np.zeros(transient.size)
    first[int(np.flatnonzero(transient == 0)[0])] = 1.0
    return np.clip(phasetype.left_solve(factor, first) @ into, 0.0, None)


def chain_from_cycles(cycles: Sequence[CycleModel]) -> SyncChain:
    """Solve for the stationary distribution and the long-run averages.

    With a single recurrent class the stationary vector is
    1^T (P + 1 1^T - I)^{-1}. Policies that never transmit from some states
    make those states absorbing; the chain is then read from S_1, mixing the
    per-class averages by the probability of ending up in each class.
    """
    P = np.vstack([cycle.p_row for cycle in cycles])
    a = np.array([cycle.a for cycle in cycles])
    c = np.array([cycle.c for cycle in cycles])
    d = np.array([cycle.d for cycle in cycles])
    closed, transient = closed_classes(P)
    if len(closed) == 1:
        pi = _stationary(P)
        mean_length = float(pi @ d)
        maoii, rate = float(pi @ a) / mean_length, float(pi @ c) / mean_length
    else:
        _LOGGER.debug("Synchronization chain has %d closed classes", len(closed))
        weights = absorption_from_first(P, closed, transient)
        pi = np.zeros(P.shape[0])
        maoii, rate = 0.0, 0.0
        for weight, members in zip(weights, closed):
            local = _stationary(P[np.ix_(members, members)])
            mean_length = float(local @ d[members])
            pi[members] += weight * local
            maoii += weight * float(local @ a[members]) / mean_length
            rate += weight * float(local @ c[members]) / mean_length
    return SyncChain(P=P, pi=pi, maoii=maoii, rate=rate, cycles=tuple(cycles))


def cycle_costs(
    g: GeneratorMatrix, j: int, mu: float, tau_j: float, cross_check: bool = False
) -> CycleModel:
    """Return the cycle costs of S_j under threshold tau_j.

    With `cross_check` the compact matrix forms are compared against the
    conditional-moment decomposition from `conditional_cycle_costs`.
    """
    tau = min(tau_j, tau_cap(g))
    cycle = SyncStateModel(g, j, mu).cycle(tau)
    if cross_check:
        expected = conditional_cycle_costs(g, j, mu, tau)
        for name, got, want in zip("dac", (cycle.d, cycle.a, cycle.c), expected):
            if abs(got - want) > CROSS_CHECK_TOLERANCE * max(1.0, abs(want)):
                raise NumericalError(
                    f"Cycle cost {name}_{j}({tau}) disagrees: compact {got}, conditional {want}"
                )
    return cycle


def conditional_cycle_costs(
    g: GeneratorMatrix, j: int, mu: float, tau_j: float
) -> tuple[float, float, float]:
    """Return (d, a, c) from conditional phase-type moments of T1 and T2."""
    y1 = build_y1(g, j)
    holding = 1.0 / float(g.sigma[j - 1])
    drift = phasetype.ph_cdf(y1.phase_type, tau_j)
    first, second = 0.0, 0.0
    if drift >= phasetype.NULL_PROBABILITY:
        first, second = phasetype.ph_conditional_moments(y1.phase_type, tau_j)
    reach = 1.0 - drift
    if reach < NEVER_TRANSMIT:
        mean1, second1 = phasetype.ph_moments(y1.phase_type)
        return mean1 + holding, second1 / 2.0, 0.0
    y2, _ = build_y2(g, j, mu, tau_j)
    mean2, second2 = phasetype.ph_moments(y2.phase_type)
    d = drift * first + reach * (tau_j + mean2) + holding
    a = 0.5 * (drift * second + reach * (tau_j**2 + 2.0 * tau_j * mean2 + second2))
    c = reach * phasetype.expected_visits(y2)
    return d, a, c


def transition_row(g: GeneratorMatrix, j: int, mu: float, tau_j: float) -> NDArray[np.float64]:
    """Return the probabilities p_j. of the next synchronization state."""
    return cycle_costs(g, j, mu, tau_j).p_row


def sync_chain(g: GeneratorMatrix, mu: float, policy: ThresholdPolicy) -> SyncChain:
    """Return the synchronization chain, MAoII and sampling rate of a policy."""
    chain = CsmdpModel(g, mu).sync_chain(policy)
    _LOGGER.debug(
        "tau=%s maoii=%.6g rate=%.6g", policy.to_list(), chain.maoii, chain.rate
    )
    return chain


def poisson_sync_chain(g: GeneratorMatrix, mu: float, gamma: float) -> SyncChain:
    """Return the synchronization chain of the Poisson sampling baseline.

    While out of sync and idle the sensor samples at rate gamma. A source
    change during a transmission preempts it and the sensor returns to idle
    at the new state, waiting for the next sampling instant.
    """
    _check_rate(mu)
    if gamma < 0 or not np.isfinite(gamma):
        raise ConfigError(f"Sampling intensity must be nonnegative, got {gamma}")
    cycles = [_poisson_cycle(g, j, mu, gamma) for j in range(1, g.n + 1)]
    return chain_from_cycles(cycles)


def _poisson_cycle(g: GeneratorMatrix, j: int, mu: float, gamma: float) -> CycleModel:
    removal = remove_state(g, j)
    reduced = np.array(removal.reduced)
    k = reduced.shape[0]
    off = reduced - np.diag(np.diag(reduced))
    eye = np.eye(k)
    # Transient order: idle phases of retained states, then transmitting phases.
    A = np.block(
        [
            [off + np.diag(np.diag(reduced) - gamma), gamma * eye],
            [off, np.diag(np.diag(reduced) - mu)],
        ]
    )
    keep = [i for i in range(g.n) if i != j - 1]
    B = np.zeros((2 * k, g.n))
    B[:k, j - 1] = removal.col_to_j
    B[k:, j - 1] = removal.col_to_j
    B[k + np.arange(k), keep] = mu
    beta = np.concatenate([removal.row_from_j / g.sigma[j - 1], np.zeros(k)])
    chain = AbsorbingChain(A=A, B=B, beta=beta)

    factor = phasetype.lu(A)
    beta_u = phasetype.left_solve(factor, beta)
    beta_v = phasetype.left_solve(factor, beta_u)
    holding = 1.0 / float(g.sigma[j - 1])
    return CycleModel(
        j=j,
        tau=0.0,
        kappa=0.0,
        a=float(beta_v.sum()),
        c=-gamma * float(beta_u[:k].sum()),
        d=-float(beta_u.sum()) + holding,
        p_row=phasetype.absorption_probs(chain),
    )
