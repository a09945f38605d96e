"""Tabular RCMDP data model and exact evaluation by dense linear solves.

Kernels are plain ``(S, A, S)`` arrays; policies are either a
:class:`SoftmaxPolicy` or an ``(S, A)`` array of probabilities (the latter
is what the brute-force oracles use, since deterministic policies are not
representable with finite logits).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

ROW_TOL = 1e-10
LOAD_TOL = 1e-6


class ModelError(ValueError):
    """Invalid RCMDP data (dimensions, distributions, cost range)."""


@dataclass(frozen=True)
class RcmdpSpec:
    """Tabular RCMDP ``(S, A, rho, c_0, c_{1:m}, gamma)`` with a nominal kernel.

    ``cost0`` and each entry of ``costs`` are ``(S, A)`` or ``(S, A, S)``
    tables with entries in [-1, 1].
    """

    n_states: int
    n_actions: int
    rho: np.ndarray
    cost0: np.ndarray
    costs: tuple[np.ndarray, ...]
    gamma: float
    nominal: np.ndarray | None = None
    name: str = field(default="rcmdp", compare=False)

    def __post_init__(self):
        S, A = self.n_states, self.n_actions
        if S < 1 or A < 1:
            raise ModelError("n_states and n_actions must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ModelError(f"gamma must lie in (0, 1), got {self.gamma}")
        rho = np.asarray(self.rho, dtype=float)
        if rho.shape != (S,):
            raise ModelError(f"rho has shape {rho.shape}, expected ({S},)")
        if abs(rho.sum() - 1.0) > 1e-12 or np.any(rho <= 0):
            raise ModelError("rho must be a strictly positive distribution")
        object.__setattr__(self, "rho", rho)
        cost0 = _check_cost(self.cost0, S, A, "cost0")
        object.__setattr__(self, "cost0", cost0)
        costs = tuple(_check_cost(c, S, A, f"costs[{j}]") for j, c in enumerate(self.costs))
        object.__setattr__(self, "costs", costs)
        if self.nominal is not None:
            object.__setattr__(self, "nominal", check_kernel(self.nominal, S, A))

    @property
    def m(self) -> int:
        return len(self.costs)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_states, self.n_actions

    def lagrangian_cost(self, lam) -> np.ndarray:
        """``c_0 + sum_j lam_j c_j`` (broadcast to S x A x S if any table is)."""
        lam = np.asarray(lam, dtype=float).reshape(-1)
        if lam.shape != (self.m,):
            raise ModelError(f"expected {self.m} multipliers, got {lam.shape[0]}")
        out = self.cost0
        for lj, cj in zip(lam, self.costs):
            out = _add_costs(out, lj * cj)
        return out


def _check_cost(c, S, A, name):
    c = np.asarray(c, dtype=float)
    if c.shape not in ((S, A), (S, A, S)):
        raise ModelError(f"{name} has shape {c.shape}, expected ({S}, {A}) or ({S}, {A}, {S})")
    if np.any(np.abs(c) > 1.0 + 1e-12):
        raise ModelError(f"{name} has entries outside [-1, 1]")
    return c


def _add_costs(a, b):
    if a.ndim == b.ndim:
        return a + b
    if a.ndim == 2:
        return a[:, :, None] + b
    return a + b[:, :, None]


def check_kernel(p, S: int | None = None, A: int | None = None, tol: float = ROW_TOL) -> np.ndarray:
    """Validate a row-stochastic ``(S, A, S)`` kernel and return it as float array."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 3 or p.shape[0] != p.shape[2]:
        raise ModelError(f"kernel must have shape (S, A, S), got {p.shape}")
    if S is not None and p.shape != (S, A, S):
        raise ModelError(f"kernel has shape {p.shape}, expected ({S}, {A}, {S})")
    if np.any(p < -tol):
        raise ModelError("kernel has negative entries")
    dev = np.max(np.abs(p.sum(axis=-1) - 1.0))
    if dev > tol:
        raise ModelError(f"kernel rows deviate from 1 by {dev:.3g}")
    return p


def normalize_kernel(p, tol: float = LOAD_TOL) -> np.ndarray:
    """Renormalise rows of a loaded kernel; hard error if any row is off by more than ``tol``."""
    p = np.asarray(p, dtype=float)
    if np.any(p < -tol):
        raise ModelError("kernel has negative entries")
    sums = p.sum(axis=-1, keepdims=True)
    dev = np.max(np.abs(sums - 1.0))
    if dev > tol:
        raise ModelError(f"kernel rows deviate from 1 by {dev:.3g} (> {tol})")
    return np.clip(p, 0.0, None) / np.clip(p, 0.0, None).sum(axis=-1, keepdims=True)


class SoftmaxPolicy:
    """Per-state softmax over logits ``theta`` of shape (S, A)."""

    __slots__ = ("theta",)

    def __init__(self, theta):
        theta = np.array(theta, dtype=float)
        if theta.ndim != 2:
            raise ModelError("theta must be an (S, A) table")
        if not np.all(np.isfinite(theta)):
            raise ModelError("theta has non-finite entries")
        self.theta = theta

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "SoftmaxPolicy":
        return cls(np.zeros((n_states, n_actions)))

    @classmethod
    def from_probs(cls, probs) -> "SoftmaxPolicy":
        probs = np.asarray(probs, dtype=float)
        if np.any(probs <= 0):
            raise ModelError("softmax policies need strictly positive probabilities")
        return cls(np.log(probs))

    @property
    def shape(self):
        return self.theta.shape

    @property
    def log_probs(self) -> np.ndarray:
        return log_softmax(self.theta, axis=1)

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.theta, axis=1)

    def __repr__(self):
        return f"SoftmaxPolicy(shape={self.theta.shape})"


def as_probs(policy) -> np.ndarray:
    if isinstance(policy, SoftmaxPolicy):
        return policy.probs
    return np.asarray(policy, dtype=float)


class OccupancyPair(NamedTuple):
    d_state: np.ndarray
    d_state_action: np.ndarray


def policy_transition(policy, kernel) -> np.ndarray:
    """State-to-state matrix ``P_pi[s, s'] = sum_a pi(a|s) p(s'|s,a)``."""
    return np.einsum("sa,sat->st", as_probs(policy), kernel)


def expected_cost(policy, kernel, cost) -> np.ndarray:
    """Per-state one-step expected cost under ``policy``; accepts S x A or S x A x S costs."""
    pi = as_probs(policy)
    cost = np.asarray(cost, dtype=float)
    if cost.ndim == 3:
        cost = np.einsum("sat,sat->sa", kernel, cost)
    return np.einsum("sa,sa->s", pi, cost)


def _check_dims(policy, kernel, spec: RcmdpSpec):
    pi = as_probs(policy)
    if pi.shape != spec.shape:
        raise ModelError(f"policy shape {pi.shape} != {spec.shape}")
    if np.shape(kernel) != (spec.n_states, spec.n_actions, spec.n_states):
        raise ModelError(f"kernel shape {np.shape(kernel)} does not match spec")
    return pi


def occupancy(policy, kernel, spec: RcmdpSpec) -> OccupancyPair:
    """Discounted state / state-action visitation distributions from ``rho``."""
    pi = _check_dims(policy, kernel, spec)
    P = policy_transition(pi, kernel)
    S = spec.n_states
    d = np.linalg.solve(np.eye(S) - spec.gamma * P.T, (1.0 - spec.gamma) * spec.rho)
    d = np.clip(d, 0.0, None)
    d /= d.sum()
    return OccupancyPair(d, d[:, None] * pi)


def state_values(policy, kernel, cost, gamma: float) -> np.ndarray:
    """Solve ``(I - gamma P_pi) V = c_pi``."""
    P = policy_transition(policy, kernel)
    c_pi = expected_cost(policy, kernel, cost)
    return np.linalg.solve(np.eye(P.shape[0]) - gamma * P, c_pi)


def value(policy, kernel, cost, spec: RcmdpSpec) -> tuple[np.ndarray, float]:
    """Per-state values and ``V(rho)`` for an arbitrary cost table."""
    _check_dims(policy, kernel, spec)
    V = state_values(policy, kernel, cost, spec.gamma)
    return V, float(spec.rho @ V)


def q_values(policy, kernel, cost, spec: RcmdpSpec) -> np.ndarray:
    V, _ = value(policy, kernel, cost, spec)
    return np.einsum("sat,sat->sa", kernel, g_values(policy, kernel, cost, spec, V=V))


def g_values(policy, kernel, cost, spec: RcmdpSpec, V=None) -> np.ndarray:
    """Action next-state values ``G(s,a,s') = c(s,a,s') + gamma V(s')``."""
    if V is None:
        V, _ = value(policy, kernel, cost, spec)
    S, A = spec.shape
    cost = np.asarray(cost, dtype=float)
    if cost.ndim == 2:
        cost = np.broadcast_to(cost[:, :, None], (S, A, S))
    return cost + spec.gamma * V[None, None, :]


def _check_lambda(lam, m):
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.shape != (m,):
        raise ModelError(f"expected {m} multipliers, got {lam.size}")
    if np.any(lam < 0):
        raise ModelError("Lagrange multipliers must be nonnegative")
    return lam


def lagrangian_value(policy, kernel, lam, spec: RcmdpSpec) -> float:
    """``V(rho)`` of the combined cost ``c_0 + sum_j lam_j c_j``."""
    lam = _check_lambda(lam, spec.m)
    return value(policy, kernel, spec.lagrangian_cost(lam), spec)[1]


def lagrangian_value_by_parts(policy, kernel, lam, spec: RcmdpSpec) -> float:
    """Same quantity as :func:`lagrangian_value`, summed from the separate values."""
    lam = _check_lambda(lam, spec.m)
    total = value(policy, kernel, spec.cost0, spec)[1]
    for lj, cj in zip(lam, spec.costs):
        total += lj * value(policy, kernel, cj, spec)[1]
    return total


def all_values(policy, kernel, spec: RcmdpSpec) -> np.ndarray:
    """``[V_0(rho), V_1(rho), ..., V_m(rho)]``."""
    return np.array([value(policy, kernel, c, spec)[1] for c in (spec.cost0, *spec.costs)])


def perf_diff_terms(policy, kernel_p, kernel_q, cost, spec: RcmdpSpec, second: bool = False):
    """Both sides of the performance difference identity across kernels.

    Default form weights by the occupancy under ``q`` and uses ``G`` under ``p``;
    ``second=True`` swaps them (occupancy under ``p``, ``G`` under ``q``).
    """
    pi = as_probs(policy)
    lhs = value(pi, kernel_p, cost, spec)[1] - value(pi, kernel_q, cost, spec)[1]
    occ_kernel, g_kernel = (kernel_p, kernel_q) if second else (kernel_q, kernel_p)
    d = occupancy(pi, occ_kernel, spec).d_state
    G = g_values(pi, g_kernel, cost, spec)
    inner = np.einsum("sat,sat->sa", kernel_p - kernel_q, G)
    rhs = float(d @ np.einsum("sa,sa->s", pi, inner)) / (1.0 - spec.gamma)
    return lhs, rhs


def mismatch_coefficient(policy, kernel, spec: RcmdpSpec) -> float:
    """``max_s d(s) / rho(s)``."""
    d = occupancy(policy, kernel, spec).d_state
    return float(np.max(d / spec.rho))


def max_abs_cost(cost) -> float:
    return float(np.max(np.abs(cost)))


def stack_costs(spec: RcmdpSpec, tables: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Stack cost tables into a ``(C, S, A, S)`` array."""
    S, A = spec.shape
    tables = (spec.cost0, *spec.costs) if tables is None else tables
    out = np.empty((len(tables), S, A, S))
    for i, c in enumerate(tables):
        c = np.asarray(c, dtype=float)
        out[i] = c if c.ndim == 3 else c[:, :, None]
    return out
