"""Seeded Monte-Carlo estimators with their sample-size rules.

A ledger counts generative-model queries (one query = one transition).

Randomness comes from counter-based Philox streams keyed by
``(seed, purpose, k, t, replicate)``, so the sample sequence of a stream never
depends on how many other streams were used before it.  Uniforms are drawn
here and handed to the rollout kernel, which keeps the compiled and numpy
backends bit-identical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from . import kernels
from .model import RcmdpSpec, as_probs, stack_costs

PURPOSES = {"v": 1, "q": 2, "g": 3, "traj": 4, "sweep": 5, "init": 6}


def stream(seed: int, purpose: str, k: int = 0, t: int = 0, replicate: int = 0) -> np.random.Generator:
    """Independent generator for one ``(purpose, k, t, replicate)`` key."""
    key = (PURPOSES[purpose], int(k), int(t), int(replicate))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def build_cdf(probs: np.ndarray) -> np.ndarray:
    """Cumulative table along the last axis with exact 1.0 past the last positive entry.

    Sampling picks the first index whose cdf exceeds ``u``; pinning the tail
    to 1.0 means zero-probability trailing outcomes are never drawn.
    """
    probs = np.asarray(probs, dtype=float)
    cdf = np.cumsum(probs, axis=-1)
    tail = np.zeros_like(probs)
    tail[..., :-1] = np.cumsum(probs[..., ::-1], axis=-1)[..., ::-1][..., 1:]
    cdf[tail <= 0.0] = 1.0
    return np.ascontiguousarray(cdf)


@dataclass
class BudgetLedger:
    """Generative-model queries (one query = one simulated transition)."""

    v: int = 0
    q: int = 0
    g: int = 0

    @property
    def total(self) -> int:
        return self.v + self.q + self.g

    def charge(self, kind: str, n: int):
        if n < 0:
            raise ValueError("cannot charge a negative number of queries")
        setattr(self, kind, getattr(self, kind) + int(n))


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.actions)


# --------------------------------------------------------------------------
# sample-size rules


def n_v(gamma: float, eps: float) -> int:
    """Horizon with truncation bias ``2 gamma^N / (1-gamma) <= eps`` for unit costs."""
    return max(1, math.ceil(math.log((1 - gamma) * eps / 2.0) / math.log(gamma)))


def m_v(gamma: float, eps: float, delta: float) -> int:
    """Rollouts for a Hoeffding deviation of ``eps`` on returns bounded by ``1/(1-gamma)``."""
    return hoeffding_count(1.0 / (1 - gamma), eps, delta)


def hoeffding_count(bound: float, eps: float, delta: float) -> int:
    """``M`` such that the mean of ``M`` draws in ``[-bound, bound]`` is within ``eps`` w.p. ``1-delta``."""
    return max(1, math.ceil(2.0 * bound**2 * math.log(2.0 / delta) / eps**2))


def n_q(gamma: float, eps: float, scale: float) -> int:
    """Horizon with truncation bias ``scale * gamma^N / (1-gamma) <= eps/2``."""
    return max(1, math.ceil(math.log((1 - gamma) * eps / (2.0 * scale)) / math.log(gamma)))


def m_q(gamma: float, eps: float, delta: float, scale: float, n_pairs: int = 1) -> int:
    """Rollouts per ``(s, a)`` for sup-norm error ``eps/2`` w.p. ``1-delta`` (union over pairs)."""
    return hoeffding_count(scale / (1 - gamma), eps / 2.0, delta / n_pairs)


def m_g(gamma: float, horizon: int, S: int, A: int, t_prime: int, delta: float) -> int:
    """Rollouts per ``(s, a, s')`` triple for the action next-state value estimate."""
    return math.ceil(2.0 * gamma ** (-2 * horizon) / (1 - gamma) ** 2 * math.log(2.0 * S * S * A * t_prime / delta))


def n_g(gamma: float, mismatch: float, cost_bound: float, eps_prime: float) -> int:
    """Horizon ``log_{1/gamma}(16 M C / ((1-gamma)^2 eps'))``."""
    arg = 16.0 * mismatch * cost_bound / ((1 - gamma) ** 2 * eps_prime)
    return max(1, math.ceil(math.log(arg) / math.log(1.0 / gamma)))


def g_error_bound(gamma: float, horizon: int, cost_bound: float) -> float:
    return 2.0 * cost_bound * gamma**horizon / (1 - gamma)


# --------------------------------------------------------------------------
# simulation


def sample_trajectory(policy, kernel, start, horizon: int, rng, spec: RcmdpSpec | None = None) -> Trajectory:
    """One rollout of ``horizon`` transitions.

    ``start`` is a state index or an ``(s, a, s')`` triple fixing the first
    transition.  Costs ``(horizon, 1+m)`` are recorded when ``spec`` is given.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    pol_cdf = build_cdf(as_probs(policy))
    ker_cdf = build_cdf(kernel)
    if np.ndim(start) == 0:
        s, a0, s1 = int(start), -1, -1
    else:
        s, a0, s1 = (int(v) for v in start)
    u = rng.random((horizon, 2))
    states = np.empty(horizon + 1, dtype=np.int64)
    actions = np.empty(horizon, dtype=np.int64)
    states[0] = s
    for l in range(horizon):
        a = a0 if (l == 0 and a0 >= 0) else int(np.searchsorted(pol_cdf[s], u[l, 0], side="right"))
        nxt = s1 if (l == 0 and s1 >= 0) else int(np.searchsorted(ker_cdf[s, a], u[l, 1], side="right"))
        actions[l] = a
        states[l + 1] = nxt
        s = nxt
    costs = None
    if spec is not None:
        tab = stack_costs(spec)
        costs = tab[:, states[:-1], actions, states[1:]].T
    return Trajectory(states, actions, costs)


def rollouts(policy, kernel, cost, s0, horizon, gamma, u, a0=None, s1=None, first_cost=None):
    """Discounted truncated returns; ``cost`` is ``(C, S, A, S)``."""
    n = len(s0)
    neg = np.full(n, -1, dtype=np.int64)
    a0 = neg if a0 is None else np.ascontiguousarray(a0, dtype=np.int64)
    s1 = neg if s1 is None else np.ascontiguousarray(s1, dtype=np.int64)
    cost = np.ascontiguousarray(cost, dtype=float)
    first_cost = cost if first_cost is None else np.ascontiguousarray(first_cost, dtype=float)
    return kernels.rollout_returns(
        np.ascontiguousarray(s0, dtype=np.int64), a0, s1, int(horizon),
        build_cdf(as_probs(policy)), build_cdf(kernel), cost, first_cost,
        float(gamma), np.ascontiguousarray(u, dtype=float),
    )


def estimate_v(policy, kernel, cost_tables, M_V: int, N_V: int, spec: RcmdpSpec, rng,
               ledger: BudgetLedger | None = None) -> np.ndarray:
    """Mean truncated return from ``s_0 ~ rho`` for each cost table."""
    if M_V < 1 or N_V < 1:
        raise ValueError("M_V and N_V must be positive")
    cost = stack_costs(spec, cost_tables)
    s0 = np.searchsorted(build_cdf(spec.rho), rng.random(M_V), side="right")
    u = rng.random((M_V, N_V, 2))
    ret = rollouts(policy, kernel, cost, s0, N_V, spec.gamma, u)
    if ledger is not None:
        ledger.charge("v", M_V * N_V)
    return ret.mean(axis=0)


def _per_key_uniforms(seed, purpose, k, t, n_keys, M, N):
    return np.concatenate([stream(seed, purpose, k, t, i).random((M, N, 2)) for i in range(n_keys)])


def estimate_q_reg(policy_t, anchor_policy, kernel, c_tilde, alpha: float, M_Q: int, N_Q: int,
                   spec: RcmdpSpec, seed: int, k: int = 0, t: int = 0,
                   ledger: BudgetLedger | None = None) -> np.ndarray:
    """Monte-Carlo regularised Q-values.

    The head term ``c~(s,a) + alpha log(1/pi_k(a|s))`` is exact; later steps
    accrue ``c~(s_l, a_l) + alpha KL(pi_t(.|s_l) || pi_k(.|s_l))``.  Each
    ``(s, a)`` pair uses its own stream.
    """
    if M_Q < 1 or N_Q < 1:
        raise ValueError("M_Q and N_Q must be positive")
    S, A = spec.shape
    pt = as_probs(policy_t)
    log_pk = _log_probs(anchor_policy)
    kl = np.sum(xlogy(pt, pt) - pt * log_pk, axis=1)
    c_tilde = np.asarray(c_tilde, dtype=float)
    step = np.broadcast_to((c_tilde + alpha * kl[:, None])[:, :, None], (S, A, S))[None]
    head = np.broadcast_to((c_tilde - alpha * log_pk)[:, :, None], (S, A, S))[None]
    pairs = np.arange(S * A)
    s0 = np.repeat(pairs // A, M_Q)
    a0 = np.repeat(pairs % A, M_Q)
    u = _per_key_uniforms(seed, "q", k, t, S * A, M_Q, N_Q)
    ret = rollouts(pt, kernel, step, s0, N_Q, spec.gamma, u, a0=a0, first_cost=head)
    if ledger is not None:
        ledger.charge("q", S * A * M_Q * N_Q)
    return ret[:, 0].reshape(S * A, M_Q).mean(axis=1).reshape(S, A)


def estimate_g(policy, kernel, cost_table, M_G: int, N_G: int, spec: RcmdpSpec, seed: int,
               k: int = 0, t: int = 0, ledger: BudgetLedger | None = None) -> np.ndarray:
    """Monte-Carlo action next-state values, one stream per ``(s, a, s')`` triple."""
    if M_G < 1 or N_G < 1:
        raise ValueError("M_G and N_G must be positive")
    S, A = spec.shape
    cost = stack_costs(spec, [cost_table])
    triples = np.arange(S * A * S)
    s0 = np.repeat(triples // (A * S), M_G)
    a0 = np.repeat((triples // S) % A, M_G)
    s1 = np.repeat(triples % S, M_G)
    u = _per_key_uniforms(seed, "g", k, t, S * A * S, M_G, N_G)
    ret = rollouts(policy, kernel, cost, s0, N_G, spec.gamma, u, a0=a0, s1=s1)
    if ledger is not None:
        ledger.charge("g", S * A * S * M_G * N_G)
    return ret[:, 0].reshape(S * A * S, M_G).mean(axis=1).reshape(S, A, S)


def _log_probs(policy):
    if hasattr(policy, "log_probs"):
        return policy.log_probs
    p = as_probs(policy)
    if np.any(p <= 0):
        raise ValueError("anchor policy must be strictly positive")
    return np.log(p)
