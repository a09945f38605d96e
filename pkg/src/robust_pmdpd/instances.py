"""Built-in RCMDP instances: seeded random ones and two small hand-built chains."""
from __future__ import annotations

import numpy as np

from .model import RcmdpSpec


def random_kernel(rng, S: int, A: int, concentration: float = 1.0) -> np.ndarray:
    return rng.dirichlet(np.full(S, concentration), size=(S, A))


def random_rcmdp(S: int, A: int, m: int = 1, gamma: float = 0.9, seed: int = 0,
                 next_state_costs: bool = False, name: str | None = None) -> RcmdpSpec:
    """Dirichlet kernel and start distribution, uniform costs in [-1, 1]."""
    rng = np.random.default_rng(seed)
    shape = (S, A, S) if next_state_costs else (S, A)
    rho = rng.dirichlet(np.ones(S)) + 1e-3
    rho /= rho.sum()
    return RcmdpSpec(
        n_states=S, n_actions=A, rho=rho,
        cost0=rng.uniform(-1, 1, shape),
        costs=tuple(rng.uniform(-1, 1, shape) for _ in range(m)),
        gamma=gamma, nominal=random_kernel(rng, S, A),
        name=name or f"random-{S}x{A}-m{m}-seed{seed}",
    )


def slater_rcmdp(S: int = 5, A: int = 3, gamma: float = 0.5, seed: int = 0, safe_cost: float = -0.2) -> RcmdpSpec:
    """Random instance whose action 0 is safe everywhere.

    ``c_1(s, 0) = safe_cost < 0`` so the always-0 policy has constraint value
    ``safe_cost / (1 - gamma)`` under every kernel.  Action 0 is also the
    costliest for ``c_0``, which makes the constraint bind.
    """
    rng = np.random.default_rng(seed)
    rho = rng.dirichlet(np.ones(S)) + 1e-2
    rho /= rho.sum()
    c0 = rng.uniform(-1.0, 0.5, (S, A))
    c0[:, 0] = rng.uniform(0.5, 1.0, S)
    c1 = rng.uniform(0.0, 1.0, (S, A))
    c1[:, 0] = safe_cost
    return RcmdpSpec(S, A, rho, c0, (c1,), gamma, random_kernel(rng, S, A), name=f"slater-{S}x{A}-seed{seed}")


def tension_chain(gamma: float = 0.9, safe_cost: float = -0.1) -> RcmdpSpec:
    """Two states.  In state 0 action 1 is cheap but unsafe and leads to state 1."""
    c0 = np.array([[0.5, -0.5], [0.0, 0.0]])
    c1 = np.array([[safe_cost, 0.8], [0.2, safe_cost]])
    P = np.array([
        [[0.9, 0.1], [0.2, 0.8]],
        [[0.7, 0.3], [0.5, 0.5]],
    ])
    return RcmdpSpec(2, 2, np.array([0.5, 0.5]), c0, (c1,), gamma, P, name="tension-chain")


def inventory_chain(gamma: float = 0.9, capacity: int = 4) -> RcmdpSpec:
    """Stock levels ``0..capacity``; actions keep, order one, order two.

    Demand takes one unit with probability 0.6.  ``c_0`` charges ordering and
    holding, the constraint charges stock-outs against a small allowance.
    """
    S, A = capacity + 1, 3
    P = np.zeros((S, A, S))
    c0 = np.zeros((S, A))
    c1 = np.zeros((S, A))
    for s in range(S):
        for a in range(A):
            stock = min(capacity, s + a)
            P[s, a, max(stock - 1, 0)] += 0.6
            P[s, a, stock] += 0.4
            c0[s, a] = 0.3 * a + 0.1 * stock - 0.5
            c1[s, a] = (0.6 if stock == 0 else 0.0) - 0.15
    rho = np.full(S, 1.0 / S)
    return RcmdpSpec(S, A, rho, np.clip(c0, -1, 1), (c1,), gamma, P, name="inventory-chain")


BUILTIN = {
    "tension_chain": tension_chain,
    "inventory": inventory_chain,
}
