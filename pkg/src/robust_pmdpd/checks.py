"""Invariant suite run by ``robust-pmdpd check`` on a configured instance."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .model import (OccupancyPair, RcmdpSpec, SoftmaxPolicy, lagrangian_value, lagrangian_value_by_parts,
                    max_abs_cost, mismatch_coefficient, occupancy, perf_diff_terms, policy_transition, value)
from .policy_md import md_update
from .tma import TmaConfig, approximate_tma
from .uncertainty import contains, linear_maximize, project


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def _random_policy(rng, S, A):
    return SoftmaxPolicy(rng.normal(size=(S, A)))


def _random_member(rng, uset):
    """A feasible kernel: nominal pushed in a random direction, then projected."""
    noise = rng.normal(scale=0.2, size=uset.nominal.shape)
    return project(uset.nominal + noise, uset)


def run_checks(spec: RcmdpSpec, uset, n_trials: int = 20, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    S, A = spec.shape
    g = spec.gamma
    worst = {k: 0.0 for k in ("occ", "vbound", "lagr", "pd1", "pd2", "proj", "lmo", "shift")}
    mismatch_ok = True
    for _ in range(n_trials):
        pi = _random_policy(rng, S, A)
        p = _random_member(rng, uset)
        q = _random_member(rng, uset)
        occ: OccupancyPair = occupancy(pi, p, spec)
        P = policy_transition(pi, p)
        resid = occ.d_state - ((1 - g) * spec.rho + g * P.T @ occ.d_state)
        worst["occ"] = max(worst["occ"], float(np.abs(resid).max()))
        V, _ = value(pi, p, spec.cost0, spec)
        worst["vbound"] = max(worst["vbound"], float(np.abs(V).max() - max_abs_cost(spec.cost0) / (1 - g)))
        lam = rng.uniform(0, 2, spec.m)
        worst["lagr"] = max(worst["lagr"], abs(lagrangian_value(pi, p, lam, spec)
                                               - lagrangian_value_by_parts(pi, p, lam, spec)))
        lhs, rhs = perf_diff_terms(pi, p, q, spec.cost0, spec)
        worst["pd1"] = max(worst["pd1"], abs(lhs - rhs))
        lhs, rhs = perf_diff_terms(pi, p, q, spec.cost0, spec, second=True)
        worst["pd2"] = max(worst["pd2"], abs(lhs - rhs))
        mm = mismatch_coefficient(pi, p, spec)
        mismatch_ok &= bool(np.isfinite(mm) and mm >= 1.0 - 1e-12)
        y = uset.nominal + rng.normal(scale=0.3, size=uset.nominal.shape)
        x = project(y, uset)
        worst["proj"] = max(worst["proj"], contains(x, uset).violation,
                            float(np.abs(project(x, uset) - x).max()))
        direction = rng.normal(size=uset.nominal.shape)
        best = linear_maximize(direction, uset)
        gap = float(np.sum(direction * p) - np.sum(direction * best))
        worst["lmo"] = max(worst["lmo"], gap, float(np.sum(direction * uset.nominal) - np.sum(direction * best)))
        qh = rng.normal(size=(S, A))
        shift = rng.normal(size=(S, 1))
        a = md_update(pi, pi, qh, 0.1, 0.5, g).probs
        b = md_update(pi, pi, qh + shift, 0.1, 0.5, g).probs
        worst["shift"] = max(worst["shift"], float(np.abs(a - b).max()))

    trace: list = []
    pi = _random_policy(rng, S, A)
    approximate_tma(pi, spec.cost0, uset, TmaConfig(t_prime=20), spec, trace=trace)
    ascent = float(np.min(np.diff(trace), initial=0.0))

    return [
        CheckResult("occupancy fixed point", worst["occ"] <= 1e-10, f"max residual {worst['occ']:.2e}"),
        CheckResult("value bound", worst["vbound"] <= 1e-9, f"max excess {worst['vbound']:.2e}"),
        CheckResult("lagrangian routes agree", worst["lagr"] <= 1e-10, f"max gap {worst['lagr']:.2e}"),
        CheckResult("performance difference (q occupancy)", worst["pd1"] <= 1e-9, f"max gap {worst['pd1']:.2e}"),
        CheckResult("performance difference (p occupancy)", worst["pd2"] <= 1e-9, f"max gap {worst['pd2']:.2e}"),
        CheckResult("mismatch coefficient >= 1", mismatch_ok, ""),
        CheckResult("projection feasible and idempotent", worst["proj"] <= 1e-8, f"worst {worst['proj']:.2e}"),
        CheckResult("LMO beats feasible points", worst["lmo"] <= 1e-8, f"worst shortfall {worst['lmo']:.2e}"),
        CheckResult("MD update shift invariance", worst["shift"] <= 1e-12, f"max change {worst['shift']:.2e}"),
        CheckResult("exact TMA ascent", ascent >= -1e-10, f"largest decrease {-ascent:.2e}"),
    ]
