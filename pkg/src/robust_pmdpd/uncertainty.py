"""Uncertainty sets over transition kernels.

Rectangular sets constrain every ``(s, a)`` row independently to a norm ball
around the nominal row; the non-rectangular set bounds the Frobenius
distance of the whole kernel.  Every set is intersected with the product of
probability simplices.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .model import check_kernel

CONTAINS_TOL = 1e-8
_BISECT_ITERS = 200

NORMS = ("l1", "l2", "linf")


class ProjectionError(RuntimeError):
    def __init__(self, msg, residual):
        super().__init__(f"{msg} (residual {residual:.3g})")
        self.residual = residual


@dataclass
class RectSet:
    """(s,a)-rectangular ball ``{p : ||p(.|s,a) - nominal(.|s,a)|| <= radius[s,a]}``.

    ``groups`` partitions the states into row groups; each group is one
    +/- dimension of the distortion sweep.  ``directions`` optionally fixes the
    zero-sum displacement used by :func:`distort` for every row.
    """

    nominal: np.ndarray
    norm: str = "linf"
    radius: np.ndarray | float = 0.05
    groups: Sequence[Sequence[int]] | None = None
    directions: np.ndarray | None = None

    def __post_init__(self):
        self.nominal = check_kernel(self.nominal)
        S, A, _ = self.nominal.shape
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}, got {self.norm!r}")
        r = np.broadcast_to(np.asarray(self.radius, dtype=float), (S, A)).copy()
        if np.any(r < 0):
            raise ValueError("radii must be nonnegative")
        self.radius = r
        if self.groups is None:
            self.groups = [list(range(S))]
        seen = sorted(s for g in self.groups for s in g)
        if seen != list(range(S)):
            raise ValueError("groups must partition the state indices")
        if self.directions is None:
            self.directions = ramp_directions(S, A)
        else:
            self.directions = np.asarray(self.directions, dtype=float)
            if self.directions.shape != self.nominal.shape:
                raise ValueError("directions must have the kernel's shape")
            if np.max(np.abs(self.directions.sum(-1))) > 1e-12:
                raise ValueError("distortion directions must sum to zero per row")

    @property
    def delta(self) -> float:
        return float(self.radius.max())

    @property
    def dimension(self) -> int:
        return len(self.groups)


@dataclass
class NonRectSet:
    """``{p : ||p - nominal||_2 <= budget}`` over the flattened kernel."""

    nominal: np.ndarray
    budget: float = 0.1
    q: int = 2

    def __post_init__(self):
        self.nominal = check_kernel(self.nominal)
        if self.q != 2:
            raise NotImplementedError("only q = 2 is implemented for non-rectangular sets")
        if self.budget <= 0:
            raise ValueError("budget must be positive")

    @property
    def delta(self) -> float:
        return float(self.budget)


def ramp_directions(S: int, A: int) -> np.ndarray:
    """Zero-sum displacement shifting mass toward higher-index successors."""
    if S == 1:
        return np.zeros((1, A, 1))
    u = np.arange(S, dtype=float) - (S - 1) / 2.0
    u /= np.abs(u).max()
    return np.broadcast_to(u, (S, A, S)).copy()


# --------------------------------------------------------------------------
# elementary projections (last axis)


def proj_simplex(y: np.ndarray, z: float | np.ndarray = 1.0) -> np.ndarray:
    """Euclidean projection of every row of ``y`` onto ``{x >= 0, sum x = z}``."""
    y = np.asarray(y, dtype=float)
    n = y.shape[-1]
    u = -np.sort(-y, axis=-1)
    z = np.asarray(z, dtype=float)[..., None] if np.ndim(z) else z
    css = np.cumsum(u, axis=-1) - z
    k = np.arange(1, n + 1)
    cond = u - css / k > 0
    rho = n - 1 - np.argmax(cond[..., ::-1], axis=-1)
    theta = np.take_along_axis(css, rho[..., None], axis=-1) / (rho[..., None] + 1)
    return np.maximum(y - theta, 0.0)


def _row_dist(x, n, norm):
    d = x - n
    if norm == "l1":
        return np.abs(d).sum(-1)
    if norm == "l2":
        return np.sqrt((d * d).sum(-1))
    return np.abs(d).max(-1)


def _shrink(x, n, r, norm):
    """Pull rows toward the nominal until they satisfy the radius; keeps rows stochastic."""
    dist = _row_dist(x, n, norm)
    scale = np.ones_like(dist)
    over = dist > r
    scale[over] = r[over] / dist[over]
    return n + (x - n) * scale[..., None]


def _knot_root(knots, sums):
    """Root of a non-increasing piecewise-linear row function given its values at sorted knots."""
    i = np.clip((sums >= 1.0).sum(1) - 1, 0, knots.shape[1] - 2)
    rows = np.arange(len(knots))
    t0, t1 = knots[rows, i], knots[rows, i + 1]
    f0, f1 = sums[rows, i], sums[rows, i + 1]
    frac = np.where(f0 > f1, (f0 - 1.0) / np.where(f0 > f1, f0 - f1, 1.0), 0.0)
    return t0 + np.clip(frac, 0.0, 1.0) * (t1 - t0)


def _proj_linf_rows(y, lo, hi):
    """Rows onto ``{lo <= x <= hi, sum x = 1}``: ``clip(y - tau, lo, hi)`` with ``tau`` from the knots."""
    shape = y.shape
    y, lo, hi = (a.reshape(-1, shape[-1]) for a in (y, lo, hi))
    knots = np.sort(np.concatenate([y - hi, y - lo], axis=1), axis=1)
    sums = np.clip(y[:, None, :] - knots[:, :, None], lo[:, None, :], hi[:, None, :]).sum(-1)
    tau = _knot_root(knots, sums)
    x = np.clip(y - tau[:, None], lo, hi)
    # exact sum on the free coordinates
    free = (x > lo) & (x < hi)
    nfree = free.sum(-1)
    corr = np.where(nfree > 0, (x.sum(-1) - 1.0) / np.maximum(nfree, 1), 0.0)
    x = np.where(free, np.clip(x - corr[:, None], lo, hi), x)
    return x.reshape(shape)


def _decreasing_root(f, lo, hi, f_lo, f_hi, ftol):
    """Row-wise root of decreasing ``f(t, rows)`` bracketed by ``f(lo) > 0 >= f(hi)``.

    Illinois-style regula falsi; returns the bracket end ``hi`` (where ``f <= 0``).
    """
    lo, hi, f_lo, f_hi = (np.array(a, dtype=float) for a in (lo, hi, f_lo, f_hi))
    w_lo, w_hi = f_lo.copy(), f_hi.copy()
    last = np.zeros(len(lo), dtype=int)
    active = np.arange(len(lo))
    for _ in range(_BISECT_ITERS):
        keep = (f_hi[active] < -ftol[active]) & (hi[active] - lo[active] > 1e-15 * (1.0 + np.abs(hi[active])))
        active = active[keep]
        if active.size == 0:
            break
        a, b, wa, wb = lo[active], hi[active], w_lo[active], w_hi[active]
        t = (a * wb - b * wa) / (wb - wa)
        bad = ~((t > a) & (t < b))
        t[bad] = 0.5 * (a[bad] + b[bad])
        ft = f(t, active)
        up = ft > 0
        i_up, i_dn = active[up], active[~up]
        lo[i_up], f_lo[i_up], w_lo[i_up] = t[up], ft[up], ft[up]
        w_hi[i_up] *= np.where(last[i_up] == 1, 0.5, 1.0)
        hi[i_dn], f_hi[i_dn], w_hi[i_dn] = t[~up], ft[~up], ft[~up]
        w_lo[i_dn] *= np.where(last[i_dn] == -1, 0.5, 1.0)
        last[i_up], last[i_dn] = 1, -1
    return hi


def _ball_root(x_of, dist_of, n, r, lo, hi, power):
    """Multiplier in ``[lo, hi]`` where ``dist(x(t), n)**power`` meets ``r**power``."""
    def f(t, rows):
        return dist_of(x_of(t, rows), n[rows]) ** power - r[rows] ** power

    rows = np.arange(len(r))
    f_lo = f(lo, rows)
    return _decreasing_root(f, lo, hi, f_lo, np.minimum(f(hi, rows), 0.0), 1e-14 * np.maximum(r, 1e-300) ** power)


def _proj_l2_rows(y, n, r):
    """Rows onto ``simplex & {||x - n||_2 <= r}``: ``proj_simplex((1-t) y + t n)`` with ``t`` set by the radius."""
    x = proj_simplex(y)
    bad = _row_dist(x, n, "l2") > r
    if np.any(bad):
        yb, nb, rb = y[bad], n[bad], r[bad]

        def x_of(t, rows):
            return proj_simplex((1 - t)[:, None] * yb[rows] + t[:, None] * nb[rows])

        t = _ball_root(x_of, lambda x, m: _row_dist(x, m, "l2"), nb, rb, np.zeros(len(rb)), np.ones(len(rb)), 2)
        x[bad] = x_of(t, np.arange(len(rb)))
    return _shrink(x, n, r, "l2")


def _l1_candidate(z, n, mu, tau):
    """``max(0, n + soft(z - tau, mu))`` row-wise."""
    w = z - tau[..., None]
    return np.maximum(0.0, n + np.sign(w) * np.maximum(np.abs(w) - mu[..., None], 0.0))


def _l1_shift(z, n, mu):
    """Exact ``tau`` with ``sum x(mu, tau) = 1``; the sum is piecewise linear and non-increasing in ``tau``."""
    m = mu[:, None]
    knots = np.sort(np.concatenate([z - m, z + m, z + m + n], axis=1), axis=1)
    sums = _l1_candidate(z[:, None, :], n[:, None, :], np.broadcast_to(m, knots.shape),
                         knots).sum(-1)
    return _knot_root(knots, sums)


def _proj_l1_rows(y, n, r):
    """Rows onto ``simplex & {||x - n||_1 <= r}``.

    For a ball multiplier ``mu`` the minimiser is ``max(0, n + soft(y - n - tau, mu))``
    with ``tau`` fixing the row sum; ``mu`` is then chosen to meet the radius.
    """
    x = proj_simplex(y)
    bad = _row_dist(x, n, "l1") > r
    if np.any(bad):
        z, nb, rb = (y - n)[bad], n[bad], r[bad]

        def x_of(mu, rows):
            return _l1_candidate(z[rows], nb[rows], mu, _l1_shift(z[rows], nb[rows], mu))

        hi = 0.5 * (z.max(1) - z.min(1)) + 1.0
        mu = _ball_root(x_of, lambda x, m: _row_dist(x, m, "l1"), nb, rb, np.zeros(len(rb)), hi, 1)
        x[bad] = proj_simplex(x_of(mu, np.arange(len(rb))))
    return _shrink(x, n, r, "l1")


def _proj_nonrect(y, nominal, budget):
    x = proj_simplex(y)
    if np.linalg.norm(x - nominal) <= budget:
        return x

    def x_of(t, rows):
        return proj_simplex((1 - t[0]) * y + t[0] * nominal)[None]

    t = _ball_root(x_of, lambda x, m: np.linalg.norm((x - m).reshape(1, -1), axis=1), nominal[None],
                   np.array([budget]), np.zeros(1), np.ones(1), 2)
    x = x_of(t, None)[0]
    dist = np.linalg.norm(x - nominal)
    if dist > budget:
        x = nominal + (x - nominal) * (budget / dist)
    return x


def project(candidate, uset) -> np.ndarray:
    """Euclidean projection of a kernel (rowwise for rectangular sets) onto the set."""
    y = np.asarray(candidate, dtype=float)
    if y.shape != uset.nominal.shape:
        raise ValueError(f"candidate shape {y.shape} != {uset.nominal.shape}")
    if contains(y, uset, tol=1e-15).inside:
        return y.copy()
    n = uset.nominal
    if isinstance(uset, NonRectSet):
        out = _proj_nonrect(y, n, uset.budget)
    elif uset.norm == "linf":
        lo = np.clip(n - uset.radius[..., None], 0.0, 1.0)
        hi = np.clip(n + uset.radius[..., None], 0.0, 1.0)
        out = _proj_linf_rows(y, lo, hi)
    elif uset.norm == "l2":
        out = _proj_l2_rows(y, n, uset.radius)
    else:
        out = _proj_l1_rows(y, n, uset.radius)
    check = contains(out, uset)
    if not check.inside:
        raise ProjectionError("projection left the set", check.violation)
    return out


class Containment(NamedTuple):
    inside: bool
    slack: float
    violation: float


def contains(kernel, uset, tol: float = CONTAINS_TOL) -> Containment:
    """Membership test; ``slack`` is the smallest remaining radius, ``violation`` the worst breach."""
    p = np.asarray(kernel, dtype=float)
    n = uset.nominal
    simplex_viol = max(float(np.max(-p, initial=0.0)), float(np.max(np.abs(p.sum(-1) - 1.0))))
    if isinstance(uset, NonRectSet):
        slack = uset.budget - float(np.linalg.norm(p - n))
    else:
        slack = float(np.min(uset.radius - _row_dist(p, n, uset.norm)))
    violation = max(simplex_viol, -slack, 0.0)
    return Containment(violation <= tol, slack, violation)


# --------------------------------------------------------------------------
# linear maximisation oracles


def _lmo_linf_rows(g, lo, hi, n):
    S, A, T = g.shape
    order = np.argsort(-g, axis=-1, kind="stable")
    lo_s = np.take_along_axis(lo, order, -1)
    cap = np.take_along_axis(hi, order, -1) - lo_s
    rem = 1.0 - lo.sum(-1, keepdims=True)
    before = np.cumsum(cap, -1) - cap
    add = np.clip(rem - before, 0.0, cap)
    x = np.empty_like(g)
    np.put_along_axis(x, order, lo_s + add, -1)
    flat = np.ptp(g, axis=-1) <= 1e-15 * (1.0 + np.abs(g).max(-1))
    x[flat] = n[flat]
    return x


def _lmo_l1_row(g, n, r):
    x = n.copy()
    budget = r / 2.0
    if budget <= 0 or np.ptp(g) <= 1e-15 * (1.0 + np.abs(g).max()):
        return x
    inc = list(np.argsort(-g, kind="stable"))
    dec = list(np.argsort(g, kind="stable"))
    i = j = 0
    while budget > 0 and i < len(inc) and j < len(dec):
        a, b = inc[i], dec[j]
        if g[a] <= g[b]:
            break
        room = 1.0 - x[a]
        avail = x[b]
        if room <= 0:
            i += 1
            continue
        if avail <= 0:
            j += 1
            continue
        t = min(budget, room, avail)
        x[a] += t
        x[b] -= t
        budget -= t
    return x


def _lmo_ball_by_step(g, n, r, rowwise: bool):
    """Maximise <g, x> over simplex rows & l2 ball: ``x(s) = proj(n + s g)`` at the largest feasible step.

    ``x(s) - n`` is piecewise affine in ``s``, so the step solving
    ``||x(s) - n|| = r`` is found by a bracketed root search on the local
    quadratic model, which is exact once the active set stops changing.
    ``g`` must be nonconstant on every row (rowwise) or somewhere (global).
    """
    agg = (lambda v: v.sum(-1)) if rowwise else (lambda v: v.sum())
    r2 = np.asarray(r, dtype=float) ** 2

    def point(step):
        return proj_simplex(n + (step[..., None] if rowwise else step) * g)

    def affine(x):
        # x - n = a + s b on the current active set
        act = x > 0
        k = act.sum(-1, keepdims=True)
        shift = ((n * act).sum(-1, keepdims=True) - 1.0) / k
        gbar = (g * act).sum(-1, keepdims=True) / k
        a = np.where(act, -shift, -n)
        b = np.where(act, g - gbar, 0.0)
        return a, b

    # proj is nonexpansive, so ||x(s) - n|| <= s ||g|| and s = r/||g|| is feasible
    lo = np.sqrt(r2 / agg(g * g))
    hi = 2.0 * lo
    for _ in range(200):
        grow = agg((point(hi) - n) ** 2) < r2
        if not np.any(grow):
            break
        lo = np.where(grow, hi, lo)
        hi = np.where(grow, hi * 2.0, hi)
    else:
        # the whole ray stays inside the ball: the simplex vertex is optimal
        return point(hi)
    s = lo
    for _ in range(_BISECT_ITERS):
        a, b = affine(point(s))
        B, C, D = agg(b * b), agg(a * b), agg(a * a) - r2
        disc = np.maximum(C * C - B * D, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            root = np.where(B > 0, (-C + np.sqrt(disc)) / B, np.nan)
        inside = (root >= lo) & (root <= hi)
        s = np.where(inside, root, 0.5 * (lo + hi))
        d2 = agg((point(s) - n) ** 2)
        if np.all(np.abs(d2 - r2) <= 1e-12 * r2):
            break
        far = d2 > r2
        lo = np.where(far, lo, s)
        hi = np.where(far, s, hi)
        s = lo
        if np.all(hi - lo <= 1e-15 * hi):
            break
    x = point(s)
    if rowwise:
        return _shrink(x, n, np.sqrt(r2), "l2")
    d = np.linalg.norm(x - n)
    return x if d <= r else n + (x - n) * (r / d)


def linear_maximize(direction, uset) -> np.ndarray:
    """A maximiser of ``<direction, p>`` over the set.

    Rows with a constant direction return the nominal row; ties between
    vertices go to the lowest successor index.
    """
    g = np.asarray(direction, dtype=float)
    if not np.all(np.isfinite(g)):
        raise ValueError("direction must be finite")
    n = uset.nominal
    if isinstance(uset, NonRectSet):
        gc = g - g.mean(-1, keepdims=True)
        if np.abs(gc).max() <= 1e-15 * (1.0 + np.abs(g).max()):
            return n.copy()
        return _lmo_ball_by_step(gc, n, uset.budget, rowwise=False)
    r = uset.radius
    if uset.norm == "linf":
        lo = np.clip(n - r[..., None], 0.0, 1.0)
        hi = np.clip(n + r[..., None], 0.0, 1.0)
        return _lmo_linf_rows(g, lo, hi, n)
    if uset.norm == "l1":
        S, A, _ = g.shape
        out = np.empty_like(n)
        for s in range(S):
            for a in range(A):
                out[s, a] = _lmo_l1_row(g[s, a], n[s, a], r[s, a])
        return out
    gc = g - g.mean(-1, keepdims=True)
    flat = np.abs(gc).max(-1) <= 1e-15 * (1.0 + np.abs(g).max(-1))
    flat |= r <= 0
    x = n.copy()
    move = ~flat
    if np.any(move):
        x[move] = _lmo_ball_by_step(gc[move], n[move], r[move], rowwise=True)
    return x


# --------------------------------------------------------------------------
# distortion sweep


def _max_step(n, u, r, norm):
    """Largest t with ``n + t u`` a distribution inside the row ball."""
    with np.errstate(divide="ignore", invalid="ignore"):
        if norm == "linf":
            scale = np.abs(u).max(-1)
        elif norm == "l1":
            scale = np.abs(u).sum(-1)
        else:
            scale = np.sqrt((u * u).sum(-1))
        t = np.where(scale > 0, r / scale, 0.0)
        neg = np.where(u < 0, n / -u, np.inf).min(-1)
        pos = np.where(u > 0, (1.0 - n) / u, np.inf).min(-1)
    return np.minimum(t, np.minimum(neg, pos))


def boundary_kernel(uset: RectSet, signs) -> np.ndarray:
    """Kernel at distortion level 1 for the given sign vector."""
    return distort(uset, 1.0, signs)


def distort(uset: RectSet, x: float, signs) -> np.ndarray:
    """Move each row group a fraction ``x**2`` of the way to its +/- boundary."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"distortion level must lie in [0, 1], got {x}")
    signs = np.asarray(signs, dtype=float).reshape(-1)
    if signs.shape != (uset.dimension,):
        raise ValueError(f"expected {uset.dimension} signs, got {signs.size}")
    if np.any(np.abs(signs) != 1):
        raise ValueError("signs must be +1 or -1")
    n = uset.nominal
    if x == 0.0:
        return n.copy()
    sigma = np.empty(n.shape[0])
    for g, sg in zip(uset.groups, signs):
        sigma[list(g)] = sg
    u = sigma[:, None, None] * uset.directions
    t = _max_step(n, u, uset.radius, uset.norm)
    p = n + (x * x) * t[..., None] * u
    if np.any(p < 0):
        p = np.clip(p, 0.0, None)
        p /= p.sum(-1, keepdims=True)
    return p


def sign_vectors(dimension: int):
    """All +/- vectors in a fixed order (all-plus first)."""
    return [np.array(s, dtype=float) for s in itertools.product((1.0, -1.0), repeat=dimension)]
