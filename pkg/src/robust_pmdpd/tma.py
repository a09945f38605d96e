"""Adversarial transition-kernel optimisation.

Transition mirror ascent with a squared-Euclidean Bregman term is projected
gradient ascent on the kernel, one row ``(s, a)`` at a time.  Conservative
policy iteration over kernels (a Frank-Wolfe method with a conservative step)
covers non-rectangular sets, where per-row ascent loses its guarantee.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import sampling
from .model import RcmdpSpec, as_probs, g_values, max_abs_cost, mismatch_coefficient, occupancy, value
from .uncertainty import NonRectSet, contains, linear_maximize, project

SCHEDULES = ("fixed", "geometric")
ESTIMATORS = ("exact", "monte_carlo")


class TmaError(RuntimeError):
    pass


@dataclass
class TmaConfig:
    """Step schedule and estimator for approximate TMA.

    The geometric schedule uses ``eta_p(t) = eta_p0 / gamma**t``, capped at
    ``eta_max`` so the ascent step stays representable.
    """

    eta_p0: float = 1.0
    alpha_p: float = 1.0
    schedule: str = "geometric"
    t_prime: int = 20
    estimator: str = "exact"
    M_G: int = 100
    N_G: int = 10
    eta_max: float = 1e6

    def __post_init__(self):
        if self.eta_p0 <= 0 or self.alpha_p <= 0:
            raise ValueError("eta_p0 and alpha_p must be positive")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.t_prime < 1:
            raise ValueError("t_prime must be at least 1")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.M_G < 1 or self.N_G < 1:
            raise ValueError("M_G and N_G must be positive")

    def step_size(self, t: int, gamma: float) -> float:
        if self.schedule == "fixed":
            return self.eta_p0
        # log-space keeps large t from overflowing before the cap applies
        log_eta = math.log(self.eta_p0) - t * math.log(gamma)
        return min(self.eta_max, math.exp(min(log_eta, 700.0)))


@dataclass
class CpiConfig:
    eps_prime: float = 1e-3
    max_iters: int = 100_000

    def __post_init__(self):
        if self.eps_prime <= 0:
            raise ValueError("eps_prime must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


# --------------------------------------------------------------------------
# gradients


def value_gradient(policy, kernel, cost, spec: RcmdpSpec) -> np.ndarray:
    """``d(s) pi(a|s) G(s,a,s') / (1 - gamma)``: gradient of ``V(rho)`` in the kernel entries."""
    pi = as_probs(policy)
    d = occupancy(pi, kernel, spec).d_state
    G = g_values(pi, kernel, cost, spec)
    return (d[:, None] * pi)[:, :, None] * G / (1.0 - spec.gamma)


def transition_gradient(policy, kernel, lam, spec: RcmdpSpec) -> np.ndarray:
    """Kernel gradient of the Lagrangian value with cost ``c_0 + sum_j lam_j c_j``."""
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if np.any(lam < 0):
        raise ValueError("Lagrange multipliers must be nonnegative")
    return value_gradient(policy, kernel, spec.lagrangian_cost(lam), spec)


# --------------------------------------------------------------------------
# approximate TMA


def tma_step(kernel_t, g_hat, occ, cfg: TmaConfig, uset, t: int = 0, gamma: float | None = None) -> np.ndarray:
    """``project(p + (eta_p(t)/alpha_p) d(s,a)/(1-gamma) G(s,a,.))``."""
    g_hat = np.asarray(g_hat, dtype=float)
    if not np.all(np.isfinite(g_hat)):
        raise TmaError("G estimate contains NaN or inf")
    if gamma is None:
        raise ValueError("tma_step needs the discount factor")
    dsa = occ.d_state_action if hasattr(occ, "d_state_action") else np.asarray(occ)
    scale = cfg.step_size(t, gamma) / cfg.alpha_p / (1.0 - gamma)
    return project(kernel_t + scale * dsa[:, :, None] * g_hat, uset)


def tma_sample_sizes(spec: RcmdpSpec, cost_bound: float, eps_prime: float, delta: float,
                     mismatch: float, t_prime: int | None = None) -> tuple[int, int, int]:
    """``(t', M_G, N_G)`` from the approximate-TMA sample-complexity rules."""
    g = spec.gamma
    if t_prime is None:
        t_prime = tma_iterations(g, mismatch, cost_bound, eps_prime)
    N = sampling.n_g(g, mismatch, cost_bound, eps_prime)
    M = sampling.m_g(g, N, spec.n_states, spec.n_actions, t_prime, delta)
    return t_prime, M, N


def tma_iterations(gamma: float, mismatch: float, cost_bound: float, eps_prime: float) -> int:
    """``t' = log_{M/(M-1)}(6 C / (eps' (1-gamma)))`` (one step when ``M <= 1``)."""
    if mismatch <= 1.0:
        return 1
    arg = 6.0 * cost_bound / (eps_prime * (1 - gamma))
    return max(1, math.ceil(math.log(arg) / math.log(mismatch / (mismatch - 1.0))))


def approximate_tma(policy, cost_table, uset, cfg: TmaConfig, spec: RcmdpSpec, rng_seed: int = 0,
                    p0=None, k: int = 0, ledger: sampling.BudgetLedger | None = None,
                    trace: list | None = None,
                    perturb: Callable[[int, np.ndarray], np.ndarray] | None = None):
    """Run ``t_prime`` ascent steps on ``V(rho)`` of ``cost_table`` from ``p0`` (nominal by default).

    Returns ``(kernel, samples_used)``.  ``trace`` collects the exact value of
    every iterate; ``perturb(t, G)`` lets tests inject estimation error.
    """
    pi = as_probs(policy)
    p = uset.nominal.copy() if p0 is None else np.array(p0, dtype=float)
    used = 0
    if trace is not None:
        trace.append(value(pi, p, cost_table, spec)[1])
    for t in range(cfg.t_prime):
        occ = occupancy(pi, p, spec)
        if cfg.estimator == "exact":
            G = g_values(pi, p, cost_table, spec)
        else:
            G = sampling.estimate_g(pi, p, cost_table, cfg.M_G, cfg.N_G, spec, rng_seed, k=k, t=t, ledger=ledger)
            used += spec.n_states**2 * spec.n_actions * cfg.M_G * cfg.N_G
        if perturb is not None:
            G = perturb(t, G)
        p = tma_step(p, G, occ, cfg, uset, t=t, gamma=spec.gamma)
        if trace is not None:
            trace.append(value(pi, p, cost_table, spec)[1])
    return p, used


def cost_bound(cost_table) -> float:
    return max(max_abs_cost(cost_table), 1e-12)


def auto_tma_config(policy, kernel, cost_table, spec, eps_prime: float, delta: float, **kw) -> TmaConfig:
    """Monte-Carlo TMA sized by the sample-complexity rules at the current ``(policy, kernel)``."""
    M = mismatch_coefficient(policy, kernel, spec)
    t_prime, M_G, N_G = tma_sample_sizes(spec, cost_bound(cost_table), eps_prime, delta, M)
    return TmaConfig(t_prime=t_prime, estimator="monte_carlo", M_G=M_G, N_G=N_G, **kw)


# --------------------------------------------------------------------------
# conservative policy iteration over kernels


@dataclass
class CpiResult:
    kernel: np.ndarray
    status: str
    iterations: int
    gaps: list = field(default_factory=list)

    @property
    def gap(self) -> float:
        return self.gaps[-1] if self.gaps else math.nan


def cpi_step_size(gap: float, gamma: float) -> float:
    """``beta = gap (1-gamma)^3 / (4 gamma^2)``, clipped to [0, 1]."""
    return float(min(1.0, max(0.0, gap * (1 - gamma) ** 3 / (4 * gamma**2))))


def cpi(policy, cost_table, uset, cfg: CpiConfig, spec: RcmdpSpec, p0=None) -> CpiResult:
    """Frank-Wolfe ascent on ``V(rho)`` over the set with the conservative step size.

    Stops once the Frank-Wolfe gap is at most ``eps_prime``; otherwise
    reports ``status="max_iters"`` with the final gap.
    """
    pi = as_probs(policy)
    p = uset.nominal.copy() if p0 is None else np.array(p0, dtype=float)
    gaps = []
    for it in range(cfg.max_iters):
        grad = value_gradient(pi, p, cost_table, spec)
        target = linear_maximize(grad, uset)
        gap = float(np.sum(grad * (target - p)))
        gaps.append(gap)
        if gap <= cfg.eps_prime:
            return CpiResult(p, "converged", it, gaps)
        beta = cpi_step_size(gap, spec.gamma)
        p = (1.0 - beta) * p + beta * target
    return CpiResult(p, "max_iters", cfg.max_iters, gaps)


def feasible(kernel, uset) -> bool:
    return contains(kernel, uset).inside


def is_rectangular(uset) -> bool:
    return not isinstance(uset, NonRectSet)
