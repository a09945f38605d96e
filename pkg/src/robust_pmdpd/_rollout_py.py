"""Numpy rollout kernel; reference for, and fallback to, the compiled ``_rollout``.

Both implementations consume the same pre-drawn uniforms and perform the
same floating-point operations in the same order, so they agree bit for bit.
"""
import numpy as np


def rollout_returns(s0, a0, s1, horizon, pol_cdf, ker_cdf, cost, first_cost, gamma, u):
    """Discounted truncated returns of ``n`` conditioned rollouts.

    Parameters
    ----------
    s0, a0, s1 : int64 arrays (n,)
        Start state; ``a0`` and ``s1`` pin the first action and successor,
        with ``-1`` meaning "sample it".
    horizon : int
        Number of transitions per rollout (terms ``l = 0 .. horizon-1``).
    pol_cdf : (S, A) cumulative policy table.
    ker_cdf : (S, A, S) cumulative kernel table.
    cost, first_cost : (C, S, A, S) cost channels; ``first_cost`` is used for ``l = 0``.
    gamma : float
    u : (n, horizon, 2) uniforms in [0, 1).

    Returns
    -------
    (n, C) array of ``sum_l gamma^l c(s_l, a_l, s_{l+1})``.
    """
    n = s0.shape[0]
    C = cost.shape[0]
    ret = np.zeros((n, C))
    s = s0.astype(np.int64).copy()
    disc = 1.0
    for l in range(horizon):
        a = (pol_cdf[s] <= u[:, l, 0][:, None]).sum(axis=1)
        if l == 0:
            a = np.where(a0 >= 0, a0, a)
        nxt = (ker_cdf[s, a] <= u[:, l, 1][:, None]).sum(axis=1)
        if l == 0:
            nxt = np.where(s1 >= 0, s1, nxt)
            c = first_cost[:, s, a, nxt].T
        else:
            c = cost[:, s, a, nxt].T
        ret += disc * c
        disc *= gamma
        s = nxt
    return ret
