"""Softmax policy mirror descent on the regularised augmented Lagrangian,
plus the augmented dual update.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import log_softmax, xlogy

from . import sampling
from .model import RcmdpSpec, SoftmaxPolicy, as_probs, policy_transition

DUAL_MODES = ("augmented", "clipped")
_MULT_TOL = 1e-12


class DualError(RuntimeError):
    """A multiplier invariant was violated."""


class MdError(RuntimeError):
    """Invalid mirror-descent input (NaN estimates, bad step sizes)."""


@dataclass(frozen=True)
class DualState:
    """Multipliers ``lam`` and the constraint estimates of the last macro-iteration.

    In ``augmented`` mode the policy sees ``lam + eta_lambda * last_vhat``;
    in ``clipped`` mode it sees ``lam`` and updates clip to ``[0, lambda_max]``.
    """

    lam: np.ndarray
    eta_lambda: float = 1.0
    last_vhat: np.ndarray | None = None
    mode: str = "augmented"
    lambda_max: float | None = None

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float).reshape(-1)
        object.__setattr__(self, "lam", lam)
        vhat = np.zeros_like(lam) if self.last_vhat is None else np.array(self.last_vhat, dtype=float).reshape(-1)
        if vhat.shape != lam.shape:
            raise ValueError("last_vhat must have one entry per multiplier")
        object.__setattr__(self, "last_vhat", vhat)
        if self.eta_lambda <= 0:
            raise ValueError("eta_lambda must be positive")
        if self.mode not in DUAL_MODES:
            raise ValueError(f"dual mode must be one of {DUAL_MODES}")
        if self.mode == "clipped" and self.lambda_max is None:
            raise ValueError("clipped mode needs lambda_max")
        if np.any(lam < 0):
            raise DualError("multipliers must be nonnegative")

    @property
    def m(self) -> int:
        return self.lam.size

    @property
    def tilde(self) -> np.ndarray:
        """Multipliers weighting the constraint costs in the policy objective."""
        if self.mode == "clipped":
            return self.lam.copy()
        return self.lam + self.eta_lambda * self.last_vhat


def init_dual(vhat0, eta_lambda: float = 1.0, mode: str = "augmented", lambda_max=None) -> DualState:
    """``lam_0 = max(0, -eta_lambda * vhat_0)`` (zero in clipped mode)."""
    vhat0 = np.asarray(vhat0, dtype=float).reshape(-1)
    lam0 = np.maximum(0.0, -eta_lambda * vhat0) if mode == "augmented" else np.zeros_like(vhat0)
    dual = DualState(lam0, eta_lambda, vhat0, mode, lambda_max)
    check_multipliers(dual, initial=True)
    return dual


def dual_update(dual: DualState, vhat) -> DualState:
    """``lam' = max(-eta v, lam + eta v)``, or ``clip(lam + eta v, 0, lambda_max)`` in clipped mode."""
    vhat = np.asarray(vhat, dtype=float).reshape(-1)
    if vhat.shape != dual.lam.shape:
        raise ValueError(f"expected {dual.m} constraint estimates, got {vhat.size}")
    step = dual.eta_lambda * vhat
    if dual.mode == "clipped":
        lam = np.clip(dual.lam + step, 0.0, dual.lambda_max)
    else:
        lam = np.maximum(-step, dual.lam + step)
    new = replace(dual, lam=lam, last_vhat=vhat)
    check_multipliers(new)
    return new


def check_multipliers(dual: DualState, initial: bool = False):
    """Assert the multiplier bounds; raises :class:`DualError` on violation."""
    lam, step = dual.lam, dual.eta_lambda * dual.last_vhat
    if np.any(lam < 0):
        raise DualError(f"negative multiplier {lam.min():.3g}")
    if dual.mode == "clipped":
        if np.any(lam > dual.lambda_max + _MULT_TOL):
            raise DualError("multiplier exceeds lambda_max")
        return
    if np.any(lam + step < -_MULT_TOL):
        raise DualError("augmented multiplier is negative")
    if initial and np.any(lam**2 > step**2 + _MULT_TOL):
        raise DualError("initial multiplier exceeds |eta_lambda * vhat|")
    if not initial and np.any(lam**2 < step**2 - _MULT_TOL):
        raise DualError("multiplier smaller than |eta_lambda * vhat|")


def augmented_cost(spec: RcmdpSpec, dual: DualState) -> np.ndarray:
    """``c_0 + sum_j lam~_j c_j`` with ``lam~`` from :attr:`DualState.tilde`."""
    out = spec.cost0
    for w, c in zip(dual.tilde, spec.costs):
        out = out + w * c if out.ndim == c.ndim else _bcast(out) + w * _bcast(c)
    return out


def _bcast(c):
    return c if c.ndim == 3 else c[:, :, None]


def f_lambda(dual: DualState, gamma: float) -> float:
    """Bound on the augmented cost: ``1 + sum lam + eta_lambda m / (1 - gamma)``."""
    return 1.0 + float(dual.lam.sum()) + dual.eta_lambda * dual.m / (1 - gamma)


@dataclass
class MdConfig:
    """Policy step ``eta``, KL weight ``alpha``, inner iterations ``t_k``.

    ``t_k_rule="adaptive"`` replaces the constant with the multiplier-dependent
    count from :func:`inner_iterations`.
    """

    eta: float
    alpha: float
    t_k: int = 10
    gamma: float = 0.9
    t_k_rule: str = "fixed"

    def __post_init__(self):
        if self.eta <= 0 or self.alpha < 0:
            raise ValueError("need eta > 0 and alpha >= 0")
        if self.alpha > 0 and self.eta * self.alpha / (1 - self.gamma) > 1 + 1e-12:
            raise ValueError("eta * alpha / (1 - gamma) must not exceed 1")
        if self.t_k < 0:
            raise ValueError("t_k must be nonnegative")
        if self.t_k_rule not in ("fixed", "adaptive"):
            raise ValueError("t_k_rule must be 'fixed' or 'adaptive'")

    @classmethod
    def theory(cls, gamma: float, m: int, eta_lambda: float = 1.0, t_k: int = 10, **kw) -> "MdConfig":
        """``alpha = 2 gamma^2 m eta_lambda / (1-gamma)^3`` and ``eta = (1-gamma)/alpha``."""
        if m < 1:
            raise ValueError("the default step sizes need at least one constraint")
        alpha = 2.0 * gamma**2 * m * eta_lambda / (1 - gamma) ** 3
        return cls(eta=(1 - gamma) / alpha, alpha=alpha, t_k=t_k, gamma=gamma, **kw)


def inner_iterations(cfg: MdConfig, dual: DualState, K: int) -> int:
    """``t_k = log(3 C_k K) / (eta alpha)`` with ``C_k = 2 gamma((1+sum lam)/(1-gamma) + m eta_lambda/(1-gamma)^2)``."""
    if cfg.t_k_rule == "fixed":
        return cfg.t_k
    g = cfg.gamma
    C = 2 * g * ((1 + dual.lam.sum()) / (1 - g) + dual.m * dual.eta_lambda / (1 - g) ** 2)
    return max(1, math.ceil(math.log(3 * C * K) / (cfg.eta * cfg.alpha)))


# --------------------------------------------------------------------------
# regularised values


def _log_probs(policy) -> np.ndarray:
    if isinstance(policy, SoftmaxPolicy):
        return policy.log_probs
    p = as_probs(policy)
    if np.any(p <= 0):
        raise MdError("policy must be strictly positive")
    return np.log(p)


def _sa_cost(c, kernel):
    c = np.asarray(c, dtype=float)
    return np.einsum("sat,sat->sa", kernel, c) if c.ndim == 3 else c


def regularized_v(policy_t, anchor_policy, kernel, c_tilde, alpha: float, spec: RcmdpSpec) -> np.ndarray:
    """Per-state values of the cost ``c~ + alpha log(pi_t / pi_k)`` under ``pi_t``."""
    pt, lk = as_probs(policy_t), _log_probs(anchor_policy)
    c = _sa_cost(c_tilde, kernel)
    per_state = np.sum(pt * c + alpha * (xlogy(pt, pt) - pt * lk), axis=1)
    P = policy_transition(pt, kernel)
    return np.linalg.solve(np.eye(spec.n_states) - spec.gamma * P, per_state)


def regularized_q(policy_t, anchor_policy, kernel, c_tilde, alpha: float, spec: RcmdpSpec) -> np.ndarray:
    """``Q~(s,a) = c~(s,a) + alpha log(1/pi_k(a|s)) + gamma E_{s'} V~(s')``."""
    V = regularized_v(policy_t, anchor_policy, kernel, c_tilde, alpha, spec)
    return _sa_cost(c_tilde, kernel) - alpha * _log_probs(anchor_policy) + spec.gamma * kernel @ V


def regularized_objective(policy_t, anchor_policy, kernel, c_tilde, alpha, spec) -> float:
    """``V~(rho)``: augmented Lagrangian plus ``alpha/(1-gamma)`` times the weighted KL to the anchor."""
    return float(spec.rho @ regularized_v(policy_t, anchor_policy, kernel, c_tilde, alpha, spec))


# --------------------------------------------------------------------------
# updates


def md_update(policy_t, anchor_policy, q_hat, eta: float, alpha: float, gamma: float) -> SoftmaxPolicy:
    """Closed-form softmax step ``pi' ∝ pi_t^(1 - eta alpha/(1-gamma)) exp(-eta q/(1-gamma))``.

    The anchor enters only through ``q_hat`` (its ``alpha log(1/pi_k)`` term);
    it is accepted here so call sites read like the update they perform.
    """
    q = np.asarray(q_hat, dtype=float)
    if not np.all(np.isfinite(q)):
        raise MdError("q_hat contains NaN or inf")
    keep = 1.0 - eta * alpha / (1.0 - gamma)
    if keep < -1e-12:
        raise MdError("eta * alpha / (1 - gamma) must not exceed 1")
    theta = -eta * q / (1.0 - gamma)
    if keep > 0:
        theta = theta + keep * _log_probs(policy_t)
    return SoftmaxPolicy(log_softmax(theta, axis=1))


def pseudo_kl(policy_a, policy_b, occ) -> float:
    """``sum_s d(s) KL(pi_a(.|s) || pi_b(.|s))`` with ``d`` the occupancy of ``policy_a``."""
    pa = as_probs(policy_a)
    per_state = np.sum(xlogy(pa, pa) - pa * _log_probs(policy_b), axis=1)
    d = occ.d_state if hasattr(occ, "d_state") else np.asarray(occ)
    return float(d @ per_state)


@dataclass
class QSampler:
    """Monte-Carlo settings for the inner loop."""

    M_Q: int
    N_Q: int
    seed: int = 0
    ledger: sampling.BudgetLedger | None = field(default=None)


def policy_inner_loop(anchor_policy, kernel, dual: DualState, cfg: MdConfig, spec: RcmdpSpec,
                      estimator="exact", sampler: QSampler | None = None, k: int = 0,
                      t_k: int | None = None, history: list | None = None) -> SoftmaxPolicy:
    """Run ``t_k`` regularised mirror-descent steps from the anchor and return the last iterate.

    ``estimator`` is ``"exact"`` (linear solves) or ``"sampled"`` (needs
    ``sampler``).  When ``history`` is a list, the exact regularised objective
    of every iterate is appended to it.
    """
    if estimator not in ("exact", "sampled"):
        raise ValueError("estimator must be 'exact' or 'sampled'")
    if estimator == "sampled" and sampler is None:
        raise ValueError("sampled estimator needs a QSampler")
    n_iter = cfg.t_k if t_k is None else t_k
    anchor = anchor_policy if isinstance(anchor_policy, SoftmaxPolicy) else SoftmaxPolicy.from_probs(anchor_policy)
    c_tilde = augmented_cost(spec, dual)
    pol = anchor
    if history is not None:
        history.append(regularized_objective(pol, anchor, kernel, c_tilde, cfg.alpha, spec))
    for t in range(n_iter):
        if estimator == "exact":
            q = regularized_q(pol, anchor, kernel, c_tilde, cfg.alpha, spec)
        else:
            q = sampling.estimate_q_reg(pol, anchor, kernel, _sa_cost(c_tilde, kernel), cfg.alpha,
                                        sampler.M_Q, sampler.N_Q, spec, sampler.seed, k=k, t=t,
                                        ledger=sampler.ledger)
        pol = md_update(pol, anchor, q, cfg.eta, cfg.alpha, spec.gamma)
        if history is not None:
            history.append(regularized_objective(pol, anchor, kernel, c_tilde, cfg.alpha, spec))
    return pol


def soft_optimal_policy(anchor_policy, kernel, c_tilde, alpha: float, spec: RcmdpSpec,
                        tol: float = 1e-13, max_iter: int = 100_000) -> SoftmaxPolicy:
    """Minimiser of the KL-regularised objective by soft value iteration (reference solver)."""
    lk = _log_probs(anchor_policy)
    c = _sa_cost(c_tilde, kernel)
    V = np.zeros(spec.n_states)
    for _ in range(max_iter):
        Q = c + spec.gamma * kernel @ V
        z = lk - Q / alpha
        Vn = -alpha * np.logaddexp.reduce(z, axis=1)
        if np.max(np.abs(Vn - V)) <= tol:
            V = Vn
            break
        V = Vn
    Q = c + spec.gamma * kernel @ V
    return SoftmaxPolicy(log_softmax(lk - Q / alpha, axis=1))

