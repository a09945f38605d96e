import cvxpy as cp
import numpy as np
import pytest
from scipy.optimize import linprog

from robust_pmdpd import uncertainty as U
from robust_pmdpd.instances import random_kernel
from robust_pmdpd.uncertainty import (NonRectSet, ProjectionError, RectSet, contains, distort, linear_maximize,
                                      proj_simplex, project, sign_vectors)


def row_set(nominal_row, norm, radius):
    """Set whose rows all equal ``nominal_row``; tests read row (0, 0)."""
    row = np.asarray(nominal_row, dtype=float)
    return RectSet(np.tile(row, (row.size, 1, 1)), norm, radius)


def on_rows(x, n):
    return np.tile(np.asarray(x, dtype=float), (n, 1, 1))


def simplex_grid(step=1e-3):
    a = np.arange(0, 1 + step / 2, step)
    x1, x2 = np.meshgrid(a, a, indexing="ij")
    keep = x1 + x2 <= 1 + 1e-12
    x1, x2 = x1[keep], x2[keep]
    return np.stack([x1, x2, np.clip(1 - x1 - x2, 0, None)], axis=1)


def all_sets(rng, S=3, A=2):
    n = random_kernel(rng, S, A)
    return [RectSet(n, "linf", 0.05), RectSet(n, "l1", 0.2), RectSet(n, "l2", 0.1), NonRectSet(n, 0.1)]


def cvx_projection(y, uset):
    S, A, _ = y.shape
    X = cp.Variable((S * A, S))
    N = uset.nominal.reshape(S * A, S)
    cons = [X >= 0, cp.sum(X, axis=1) == 1]
    if isinstance(uset, NonRectSet):
        cons.append(cp.norm(cp.vec(X - N, order="C")) <= uset.budget)
    else:
        r = uset.radius.reshape(-1)
        for i in range(S * A):
            order = {"l1": 1, "l2": 2, "linf": "inf"}[uset.norm]
            cons.append(cp.norm(X[i] - N[i], order) <= r[i])
    cp.Problem(cp.Minimize(cp.sum_squares(X - y.reshape(S * A, S))), cons).solve(solver=cp.CLARABEL)
    return X.value.reshape(S, A, S)


class TestSimplexProjection:
    def test_known(self):
        assert proj_simplex(np.array([0.7, 0.7])) == pytest.approx([0.5, 0.5])
        assert proj_simplex(np.array([2.0, 0.0, -1.0])) == pytest.approx([1.0, 0.0, 0.0])

    def test_rows_sum_to_one(self, rng):
        x = proj_simplex(rng.normal(size=(50, 7)) * 3)
        assert np.all(x >= 0) and np.allclose(x.sum(-1), 1.0)


class TestProject:
    def test_feasible_unchanged(self, rng):
        for uset in all_sets(rng):
            x = project(uset.nominal, uset)
            assert np.array_equal(x, uset.nominal)

    def test_linf_two_outcomes(self):
        s = row_set([0.5, 0.5], "linf", 0.1)
        x = project(on_rows([0.7, 0.3], 2), s)
        assert x[0, 0] == pytest.approx([0.6, 0.4], abs=1e-12)

    def test_l1_grid_oracle(self, rng):
        grid = simplex_grid()
        for _ in range(5):
            n = rng.dirichlet(np.ones(3))
            y = n + rng.normal(scale=0.3, size=3)
            s = row_set(n, "l1", 0.2)
            x = project(on_rows(y, 3), s)[0, 0]
            ok = np.abs(grid - n).sum(1) <= 0.2
            best = grid[ok][np.argmin(((grid[ok] - y) ** 2).sum(1))]
            assert np.abs(x - best).max() <= 2e-3

    def test_matches_cvxpy(self, rng):
        for uset in all_sets(rng):
            y = uset.nominal + rng.normal(scale=0.2, size=uset.nominal.shape)
            x = project(y, uset)
            ref = cvx_projection(y, uset)
            assert np.abs(x - ref).max() <= 1e-5
            assert np.sum((x - y) ** 2) <= np.sum((ref - y) ** 2) + 1e-8

    def test_idempotent_nonexpansive_feasible(self, rng):
        for uset in all_sets(rng):
            n = uset.nominal
            for _ in range(100):
                a = n + rng.normal(scale=0.3, size=n.shape)
                b = n + rng.normal(scale=0.3, size=n.shape)
                pa, pb = project(a, uset), project(b, uset)
                assert contains(pa, uset).inside
                assert np.abs(project(pa, uset) - pa).max() <= 1e-9
                assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-8

    def test_invalid_output_reports_violation(self, rng, monkeypatch):
        monkeypatch.setattr(U, "_proj_l1_rows", lambda y, n, r: y)
        s = RectSet(random_kernel(rng, 3, 2), "l1", 0.05)
        with pytest.raises(ProjectionError) as err:
            project(s.nominal + rng.normal(scale=0.5, size=s.nominal.shape), s)
        assert err.value.residual > 0

    def test_far_candidates(self, rng):
        for norm in ("l1", "l2", "linf"):
            s = RectSet(random_kernel(rng, 3, 2), norm, 0.1)
            g = rng.normal(size=s.nominal.shape)
            x = project(s.nominal + 1e9 * g, s)
            assert contains(x, s).inside
            assert np.abs(x - linear_maximize(g, s)).max() <= 1e-6

    def test_shape_mismatch(self, rng):
        s = RectSet(random_kernel(rng, 3, 2), "linf", 0.1)
        with pytest.raises(ValueError):
            project(np.zeros((2, 2, 2)), s)


class TestContains:
    def test_nominal_slack_is_radius(self, rng):
        s = RectSet(random_kernel(rng, 3, 2), "linf", 0.07)
        c = contains(s.nominal, s)
        assert c.inside and c.slack == pytest.approx(0.07) and c.violation <= 1e-12

    def test_violation_reported(self):
        s = row_set([0.5, 0.5], "linf", 0.1)
        c = contains(on_rows([0.61, 0.39], 2), s)
        assert not c.inside and c.violation == pytest.approx(0.01, abs=1e-12)

    def test_nonstochastic_row(self):
        s = row_set([0.5, 0.5], "linf", 0.1)
        assert not contains(on_rows([0.55, 0.5], 2), s).inside


class TestLinearMaximize:
    def test_zero_direction_gives_nominal(self, rng):
        for uset in all_sets(rng):
            assert np.array_equal(linear_maximize(np.zeros_like(uset.nominal), uset), uset.nominal)

    def test_linf_greedy(self):
        s = row_set([0.5, 0.5], "linf", 0.1)
        assert linear_maximize(on_rows([1.0, 0.0], 2), s)[0, 0] == pytest.approx([0.6, 0.4])

    def test_l1_mass_transfer(self):
        s = row_set([1 / 3] * 3, "l1", 0.2)
        x = linear_maximize(on_rows([3.0, 1.0, 2.0], 3), s)[0, 0]
        assert x == pytest.approx([1 / 3 + 0.1, 1 / 3 - 0.1, 1 / 3], abs=1e-12)

    def test_l1_matches_lp(self, rng):
        # x = n + u - w, u, w >= 0, sum u = sum w <= r / 2, x >= 0
        for _ in range(20):
            n = rng.dirichlet(np.ones(4))
            g = rng.normal(size=4)
            s = row_set(n, "l1", 0.3)
            c = np.concatenate([-g, g])
            A_ub = np.vstack([np.concatenate([np.ones(4), np.ones(4)]), np.hstack([-np.eye(4), np.eye(4)])])
            b_ub = np.concatenate([[0.3], n])
            A_eq = np.concatenate([np.ones(4), -np.ones(4)])[None]
            res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[0.0], bounds=(0, None))
            best = g @ n - res.fun
            assert (g * linear_maximize(on_rows(g, 4), s)[0, 0]).sum() == pytest.approx(best, abs=1e-9)

    def test_optimality_witness(self, rng):
        for uset in all_sets(rng):
            pts = np.stack([project(uset.nominal + rng.normal(scale=0.3, size=uset.nominal.shape), uset)
                            for _ in range(50)])
            for _ in range(10):
                g = rng.normal(size=uset.nominal.shape)
                x = linear_maximize(g, uset)
                assert contains(x, uset).inside
                val = (g * x).sum()
                assert val >= (g * uset.nominal).sum() - 1e-12
                assert val >= (pts * g).sum(axis=(1, 2, 3)).max() - 1e-8

    def test_rectangular_decomposes(self, rng):
        n = random_kernel(rng, 3, 2)
        for norm, r in (("linf", 0.05), ("l1", 0.2), ("l2", 0.1)):
            s = RectSet(n, norm, r)
            g = rng.normal(size=n.shape)
            joint = linear_maximize(g, s)
            for i in range(3):
                for a in range(2):
                    row = linear_maximize(on_rows(g[i, a], 3), row_set(n[i, a], norm, r))
                    assert np.allclose(row[0, 0], joint[i, a], atol=1e-10)

    def test_objective_monotone_in_budget(self, rng):
        n = random_kernel(rng, 3, 2)
        g = rng.normal(size=n.shape)
        for make in (lambda r: RectSet(n, "linf", r), lambda r: RectSet(n, "l1", r),
                     lambda r: RectSet(n, "l2", r), lambda r: NonRectSet(n, r)):
            vals = [(g * linear_maximize(g, make(r))).sum() for r in (0.01, 0.05, 0.1, 0.2)]
            assert np.all(np.diff(vals) >= -1e-10)

    def test_matches_cvxpy_for_balls(self, rng):
        for uset in all_sets(rng)[2:]:
            g = rng.normal(size=uset.nominal.shape)
            S, A, _ = g.shape
            X = cp.Variable((S * A, S))
            N = uset.nominal.reshape(S * A, S)
            cons = [X >= 0, cp.sum(X, axis=1) == 1]
            if isinstance(uset, NonRectSet):
                cons.append(cp.norm(cp.vec(X - N, order="C")) <= uset.budget)
            else:
                cons += [cp.norm(X[i] - N[i]) <= 0.1 for i in range(S * A)]
            prob = cp.Problem(cp.Maximize(cp.sum(cp.multiply(g.reshape(S * A, S), X))), cons)
            prob.solve(solver=cp.CLARABEL)
            assert (g * linear_maximize(g, uset)).sum() >= prob.value - 1e-6


class TestDistort:
    def test_zero_level_is_nominal(self, rng):
        s = RectSet(random_kernel(rng, 4, 2), "linf", 0.05, groups=[[0, 1], [2, 3]])
        for signs in sign_vectors(2):
            assert np.array_equal(distort(s, 0.0, signs), s.nominal)

    def test_full_level_reaches_boundary(self):
        n = np.full((2, 1, 2), 0.5)
        s = RectSet(n, "linf", 0.1)
        p = distort(s, 1.0, [1.0])
        assert p[0, 0] == pytest.approx([0.4, 0.6])
        assert contains(p, s).inside and contains(p, s).slack == pytest.approx(0.0, abs=1e-15)
        assert distort(s, 1.0, [-1.0])[0, 0] == pytest.approx([0.6, 0.4])

    def test_quadratic_rule(self, rng):
        s = RectSet(random_kernel(rng, 3, 2, concentration=5.0), "l2", 0.05)
        full = distort(s, 1.0, [1.0]) - s.nominal
        half = distort(s, 0.5, [1.0]) - s.nominal
        assert np.allclose(half, 0.25 * full, atol=1e-15)

    def test_bad_arguments(self, rng):
        s = RectSet(random_kernel(rng, 3, 2), "linf", 0.05)
        with pytest.raises(ValueError):
            distort(s, 1.5, [1.0])
        with pytest.raises(ValueError):
            distort(s, 0.5, [1.0, 1.0])
        with pytest.raises(ValueError):
            distort(s, 0.5, [0.5])

    def test_sign_vectors(self):
        v = sign_vectors(3)
        assert len(v) == 8 and np.array_equal(v[0], [1, 1, 1])
        assert len({tuple(x) for x in v}) == 8
