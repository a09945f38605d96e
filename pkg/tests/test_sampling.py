import numpy as np
import pytest

from robust_pmdpd import sampling
from robust_pmdpd.instances import random_rcmdp
from robust_pmdpd.model import RcmdpSpec, SoftmaxPolicy, g_values, policy_transition, expected_cost, value
from robust_pmdpd.policy_md import regularized_q
from robust_pmdpd.sampling import (BudgetLedger, estimate_g, estimate_q_reg, estimate_v, rollouts,
                                   sample_trajectory, stream)


def cycle_spec(S=3, A=2, gamma=0.5):
    """Action a moves s to s + a + 1 (mod S) deterministically."""
    P = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            P[s, a, (s + a + 1) % S] = 1.0
    c0 = np.linspace(-1, 1, S * A).reshape(S, A)
    return RcmdpSpec(S, A, np.full(S, 1.0 / S), c0, (-c0,), gamma, P, name="cycle")


def det_policy(S, A, action=0):
    pi = np.zeros((S, A))
    pi[:, action] = 1.0
    return pi


def truncated_value(pi, P, cost, rho, gamma, N):
    Ppi, c = policy_transition(pi, P), expected_cost(pi, P, cost)
    d, total = rho.copy(), 0.0
    for l in range(N):
        total += gamma**l * d @ c
        d = d @ Ppi
    return total


class TestSizes:
    def test_n_v_example(self):
        assert sampling.n_v(0.5, 0.1) == 6

    def test_m_g_example(self):
        assert sampling.m_g(0.5, 2, 2, 2, 1, 0.1) == 650

    def test_hoeffding(self):
        assert sampling.hoeffding_count(1.0, 1.0, 2.0 / np.e) == 2
        assert sampling.m_v(0.5, 0.2, 0.1) == sampling.hoeffding_count(2.0, 0.2, 0.1)

    def test_truncation_bounds_hold(self):
        for g in (0.5, 0.9, 0.99):
            for eps in (0.01, 0.1, 1.0):
                N = sampling.n_v(g, eps)
                assert 2 * g**N / (1 - g) <= eps + 1e-12
                assert N == 1 or 2 * g ** (N - 1) / (1 - g) > eps
                Nq = sampling.n_q(g, eps, 3.0)
                assert 3.0 * g**Nq / (1 - g) <= eps / 2 + 1e-12

    def test_g_error_bound(self):
        assert sampling.g_error_bound(0.5, 2, 1.0) == pytest.approx(1.0)


class TestTrajectory:
    def test_deterministic_path(self):
        spec = cycle_spec(4, 2)
        tr = sample_trajectory(det_policy(4, 2, 1), spec.nominal, 0, 5, np.random.default_rng(0), spec)
        assert list(tr.states) == [0, 2, 0, 2, 0, 2]
        assert list(tr.actions) == [1] * 5
        assert tr.costs.shape == (5, 2)
        assert tr.costs[0, 0] == spec.cost0[0, 1] and tr.costs[0, 1] == spec.costs[0][0, 1]

    def test_horizon_one(self, rng):
        spec = random_rcmdp(3, 2, seed=1)
        tr = sample_trajectory(SoftmaxPolicy.uniform(3, 2), spec.nominal, 1, 1, rng)
        assert len(tr) == 1 and len(tr.states) == 2

    def test_horizon_zero_rejected(self, rng):
        spec = random_rcmdp(3, 2, seed=1)
        with pytest.raises(ValueError):
            sample_trajectory(SoftmaxPolicy.uniform(3, 2), spec.nominal, 0, 0, rng)

    def test_conditioned_start(self, rng):
        spec = random_rcmdp(3, 2, seed=1)
        tr = sample_trajectory(SoftmaxPolicy.uniform(3, 2), spec.nominal, (2, 1, 0), 4, rng)
        assert tr.states[0] == 2 and tr.actions[0] == 1 and tr.states[1] == 0

    def test_support_respected(self, rng):
        spec = random_rcmdp(5, 2, seed=2)
        P = spec.nominal.copy()
        P[P < 0.15] = 0.0
        P[:, :, 0] += 1e-3
        P /= P.sum(-1, keepdims=True)
        tr = sample_trajectory(SoftmaxPolicy.uniform(5, 2), P, 0, 2000, rng)
        assert np.all(P[tr.states[:-1], tr.actions, tr.states[1:]] > 0)

    def test_next_state_frequencies(self):
        spec = random_rcmdp(4, 2, seed=3)
        S, n = 4, 100_000
        # cost table c equals the indicator of next state c, so one-step returns count visits
        ind = np.zeros((S, S, 2, S))
        for c in range(S):
            ind[c, :, :, c] = 1.0
        u = stream(7, "traj").random((n, 1, 2))
        ret = rollouts(SoftmaxPolicy.uniform(S, 2), spec.nominal, ind, np.full(n, 2), 1, 0.5, u,
                       a0=np.full(n, 1))
        freq = ret.mean(axis=0)
        assert np.all(np.abs(freq - spec.nominal[2, 1]) <= 3 / np.sqrt(n))


class TestEstimateV:
    def test_zero_costs(self, rng):
        spec = random_rcmdp(4, 2, seed=0)
        z = np.zeros((4, 2))
        est = estimate_v(SoftmaxPolicy.uniform(4, 2), spec.nominal, [z, z], 50, 10, spec, rng)
        assert np.array_equal(est, [0.0, 0.0])

    def test_coverage(self):
        spec = random_rcmdp(4, 2, gamma=0.5, seed=4)
        eps, delta = 0.2, 0.1
        M, N = sampling.m_v(0.5, eps, delta), sampling.n_v(0.5, eps)
        pi = SoftmaxPolicy(np.random.default_rng(0).normal(size=(4, 2)))
        V = value(pi, spec.nominal, spec.cost0, spec)[1]
        hits = [abs(estimate_v(pi, spec.nominal, [spec.cost0], M, N, spec, stream(s, "v"))[0] - V) <= eps
                for s in range(500)]
        assert np.mean(hits) >= 1 - delta - 3 * np.sqrt(delta * (1 - delta) / 500)

    def test_unbiased_up_to_truncation(self):
        spec = random_rcmdp(4, 2, gamma=0.7, seed=5)
        pi = SoftmaxPolicy(np.random.default_rng(1).normal(size=(4, 2)))
        N = 6
        target = truncated_value(pi.probs, spec.nominal, spec.cost0, spec.rho, 0.7, N)
        est = np.array([estimate_v(pi, spec.nominal, [spec.cost0], 1, N, spec, stream(s, "v"))[0]
                        for s in range(10_000)])
        se = est.std(ddof=1) / np.sqrt(len(est))
        assert abs(est.mean() - target) <= 4 * se

    def test_ledger_charge(self, rng):
        spec = random_rcmdp(3, 2, seed=0)
        led = BudgetLedger()
        estimate_v(SoftmaxPolicy.uniform(3, 2), spec.nominal, None, 7, 5, spec, rng, ledger=led)
        assert led.v == 35 and led.total == 35


class TestEstimateQ:
    def test_alpha_zero_deterministic_is_exact(self):
        spec = cycle_spec(3, 2)
        pi = det_policy(3, 2, 0)
        q = estimate_q_reg(pi, np.full((3, 2), 0.5), spec.nominal, spec.cost0, 0.0, 1, 60, spec, seed=0)
        exact = regularized_q(pi, np.full((3, 2), 0.5), spec.nominal, spec.cost0, 0.0, spec)
        assert np.allclose(q, exact, atol=1e-12)

    def test_anchor_equal_current_policy(self):
        spec = cycle_spec(3, 2)
        pi = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
        pi = 0.999999 * pi + 0.000001 * (1 - pi)
        q = estimate_q_reg(pi, pi, spec.nominal, spec.cost0, 0.3, 1, 60, spec, seed=0)
        # KL(pi || pi) = 0 inside rollouts; only the head carries alpha log(1/pi_k)
        plain = regularized_q(pi, pi, spec.nominal, spec.cost0, 0.0, spec)
        assert np.allclose(q, plain - 0.3 * np.log(pi), atol=1e-4)
        assert np.allclose(q, regularized_q(pi, pi, spec.nominal, spec.cost0, 0.3, spec), atol=1e-4)

    def test_coverage(self):
        spec = random_rcmdp(4, 2, gamma=0.5, seed=6)
        r = np.random.default_rng(2)
        anchor = SoftmaxPolicy(r.normal(size=(4, 2)))
        pt = SoftmaxPolicy(anchor.theta + 0.3 * r.normal(size=(4, 2)))
        alpha, eps, delta = 0.1, 0.5, 0.1
        kl = np.sum(pt.probs * (pt.log_probs - anchor.log_probs), axis=1)
        scale = 1.0 + alpha * kl.max()
        M = sampling.m_q(0.5, eps, delta, scale, n_pairs=8)
        N = sampling.n_q(0.5, eps, scale)
        exact = regularized_q(pt, anchor, spec.nominal, spec.cost0, alpha, spec)
        hits = [np.abs(estimate_q_reg(pt, anchor, spec.nominal, spec.cost0, alpha, M, N, spec, seed=s)
                       - exact).max() <= eps for s in range(200)]
        assert np.mean(hits) >= 1 - delta - 3 * np.sqrt(delta * (1 - delta) / 200)

    def test_ledger_and_reproducibility(self):
        spec = random_rcmdp(3, 2, seed=0)
        pi = SoftmaxPolicy.uniform(3, 2)
        a, b = BudgetLedger(), BudgetLedger()
        qa = estimate_q_reg(pi, pi, spec.nominal, spec.cost0, 0.1, 11, 4, spec, seed=9, k=2, t=3, ledger=a)
        qb = estimate_q_reg(pi, pi, spec.nominal, spec.cost0, 0.1, 11, 4, spec, seed=9, k=2, t=3, ledger=b)
        assert np.array_equal(qa, qb) and a == b and a.q == 3 * 2 * 11 * 4
        qc = estimate_q_reg(pi, pi, spec.nominal, spec.cost0, 0.1, 11, 4, spec, seed=9, k=2, t=4)
        assert not np.array_equal(qa, qc)

    def test_bad_sizes(self):
        spec = random_rcmdp(3, 2, seed=0)
        pi = SoftmaxPolicy.uniform(3, 2)
        with pytest.raises(ValueError):
            estimate_q_reg(pi, pi, spec.nominal, spec.cost0, 0.1, 0, 4, spec, seed=0)


class TestEstimateG:
    def test_deterministic_is_exact(self):
        spec = cycle_spec(3, 2)
        pi = det_policy(3, 2, 1)
        G = estimate_g(pi, spec.nominal, spec.cost0, 1, 80, spec, seed=0)
        assert np.allclose(G, g_values(pi, spec.nominal, spec.cost0, spec), atol=1e-12)

    def test_error_bound_with_rule_sizes(self):
        spec = random_rcmdp(2, 2, gamma=0.5, seed=7)
        pi = SoftmaxPolicy(np.random.default_rng(3).normal(size=(2, 2)))
        N = 2
        M = sampling.m_g(0.5, N, 2, 2, 1, 0.1)
        exact = g_values(pi, spec.nominal, spec.cost0, spec)
        bound = sampling.g_error_bound(0.5, N, np.abs(spec.cost0).max())
        hits = [np.abs(estimate_g(pi, spec.nominal, spec.cost0, M, N, spec, seed=s) - exact).max() <= bound
                for s in range(50)]
        assert np.mean(hits) >= 0.9

    def test_ledger(self):
        spec = random_rcmdp(3, 2, seed=0)
        led = BudgetLedger()
        estimate_g(SoftmaxPolicy.uniform(3, 2), spec.nominal, spec.cost0, 5, 3, spec, seed=0, ledger=led)
        assert led.g == 3 * 2 * 3 * 5 * 3


class TestLedger:
    def test_total_is_sum(self):
        led = BudgetLedger()
        led.charge("v", 3)
        led.charge("q", 4)
        led.charge("g", 5)
        assert led.total == 12

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            BudgetLedger().charge("v", -1)


def test_streams_are_keyed():
    a = stream(1, "q", 0, 0, 0).random(4)
    assert np.array_equal(a, stream(1, "q", 0, 0, 0).random(4))
    for other in (stream(2, "q"), stream(1, "g"), stream(1, "q", 1), stream(1, "q", 0, 1), stream(1, "q", 0, 0, 1)):
        assert not np.array_equal(a, other.random(4))
