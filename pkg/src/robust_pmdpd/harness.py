"""Experiment driver for training runs and the distortion sweep."""
from __future__ import annotations

import copy
import csv
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import instances, sampling
from .model import ModelError, RcmdpSpec, SoftmaxPolicy, all_values, normalize_kernel, occupancy, value
from .policy_md import (DualState, MdConfig, QSampler, check_multipliers, dual_update, init_dual,
                        inner_iterations, policy_inner_loop, pseudo_kl)
from .tma import CpiConfig, TmaConfig, approximate_tma, cpi
from .uncertainty import NonRectSet, RectSet, contains, distort, sign_vectors

MODES = ("exact_oracle", "sample_based")
SOLVERS = ("tma", "cpi")
FLOAT_FMT = "%.12g"


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, k, cause):
        super().__init__(f"macro-iteration {k}: {type(cause).__name__}: {cause}")
        self.k = k
        self.cause = cause


DEFAULTS = {
    "seed": 0,
    "K": 50,
    "mode": "exact_oracle",
    "inner_solver": "tma",
    "rcmdp": {"source": "builtin:slater", "n_states": 5, "n_actions": 3, "m": 1, "gamma": 0.5, "seed": 0},
    "uncertainty": {"type": "rect", "norm": "linf", "radius": 0.05, "groups": None, "budget": 0.1},
    "md": {"eta": None, "alpha": None, "t_k": 10, "t_k_rule": "fixed"},
    "dual": {"eta_lambda": 1.0, "mode": "augmented", "lambda_max": None, "init": None, "freeze": False},
    "tma": {"eta_p0": 1.0, "alpha_p": 1.0, "schedule": "geometric", "t_prime": 20,
            "M_G": 100, "N_G": 10, "warm_start": True},
    "cpi": {"eps_prime": 1e-3, "max_iters": 100_000},
    "sampling": {"M_V": None, "N_V": None, "M_Q": 100, "N_Q": None, "eps": 0.1, "delta": 0.1},
    "sweep": {"levels": [0.0, 0.25, 0.5, 0.75, 1.0], "n_test": 100, "lambda_max": 10.0},
    "output": {"dir": "out", "run_log": "run_log.csv", "sweep": "sweep.csv"},
}


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for key, val in (over or {}).items():
        if key not in base:
            raise ConfigError(f"unknown config key {path}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{path}{key} must be a mapping")
            out[key] = _merge(base[key], val, f"{path}{key}.")
        else:
            out[key] = val
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment settings; blocks are plain dicts with defaults filled in."""

    seed: int = 0
    K: int = 50
    mode: str = "exact_oracle"
    inner_solver: str = "tma"
    rcmdp: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["rcmdp"]))
    uncertainty: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["uncertainty"]))
    md: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["md"]))
    dual: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["dual"]))
    tma: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["tma"]))
    cpi: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["cpi"]))
    sampling: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["sampling"]))
    sweep: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["sweep"]))
    output: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["output"]))
    base_dir: str = "."

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.inner_solver not in SOLVERS:
            raise ConfigError(f"inner_solver must be one of {SOLVERS}")
        if int(self.K) < 1:
            raise ConfigError("K must be at least 1")
        if self.uncertainty["type"] not in ("rect", "nonrect"):
            raise ConfigError("uncertainty.type must be 'rect' or 'nonrect'")
        levels = self.sweep["levels"]
        if any(not 0.0 <= float(x) <= 1.0 for x in levels):
            raise ConfigError("sweep levels must lie in [0, 1]")

    @classmethod
    def from_dict(cls, data: dict | None, base_dir: str = ".") -> "ExperimentConfig":
        merged = _merge(DEFAULTS, data or {})
        return cls(**merged, base_dir=base_dir)

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config file must contain a mapping")
        return cls.from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in DEFAULTS}

    # builders

    def build_spec(self) -> RcmdpSpec:
        r = self.rcmdp
        src = str(r["source"])
        try:
            if src == "builtin:random":
                return instances.random_rcmdp(int(r["n_states"]), int(r["n_actions"]), int(r["m"]),
                                              float(r["gamma"]), int(r["seed"]))
            if src == "builtin:slater":
                return instances.slater_rcmdp(int(r["n_states"]), int(r["n_actions"]), float(r["gamma"]),
                                              int(r["seed"]))
            if src.startswith("builtin:"):
                name = src.split(":", 1)[1]
                if name not in instances.BUILTIN:
                    raise ConfigError(f"unknown builtin instance {name!r}")
                return instances.BUILTIN[name](gamma=float(r["gamma"]))
            return load_rcmdp(os.path.join(self.base_dir, src))
        except ModelError as exc:
            raise ConfigError(f"invalid RCMDP: {exc}") from exc

    def build_set(self, spec: RcmdpSpec):
        u = self.uncertainty
        try:
            if u["type"] == "nonrect":
                return NonRectSet(spec.nominal, float(u["budget"]))
            radius = np.asarray(u["radius"], dtype=float)
            return RectSet(spec.nominal, u["norm"], radius, groups=u["groups"])
        except (ValueError, NotImplementedError) as exc:
            raise ConfigError(f"invalid uncertainty block: {exc}") from exc

    def md_config(self, spec: RcmdpSpec) -> MdConfig:
        md, eta_l = self.md, float(self.dual["eta_lambda"])
        try:
            if md["alpha"] is None and md["eta"] is None:
                return MdConfig.theory(spec.gamma, spec.m, eta_l, t_k=int(md["t_k"]), t_k_rule=md["t_k_rule"])
            if md["alpha"] is None or md["eta"] is None:
                raise ConfigError("md.eta and md.alpha must be given together")
            return MdConfig(float(md["eta"]), float(md["alpha"]), int(md["t_k"]), spec.gamma, md["t_k_rule"])
        except ValueError as exc:
            raise ConfigError(f"invalid md block: {exc}") from exc

    def tma_config(self) -> TmaConfig:
        t = {k: v for k, v in self.tma.items() if k != "warm_start"}
        t["estimator"] = "exact" if self.mode == "exact_oracle" else "monte_carlo"
        try:
            return TmaConfig(**t)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid tma block: {exc}") from exc

    def cpi_config(self) -> CpiConfig:
        try:
            return CpiConfig(float(self.cpi["eps_prime"]), int(self.cpi["max_iters"]))
        except ValueError as exc:
            raise ConfigError(f"invalid cpi block: {exc}") from exc

    def v_sizes(self, gamma: float) -> tuple[int, int]:
        s = self.sampling
        M = s["M_V"] or sampling.m_v(gamma, s["eps"], s["delta"])
        N = s["N_V"] or sampling.n_v(gamma, s["eps"])
        return int(M), int(N)

    def q_sizes(self, gamma: float, dual: DualState) -> tuple[int, int]:
        s = self.sampling
        scale = max(1.0, float(np.abs(dual.tilde).sum()))
        N = s["N_Q"] or sampling.n_q(gamma, s["eps"], scale)
        return int(s["M_Q"]), int(N)


def load_rcmdp(path: str) -> RcmdpSpec:
    """Read an RCMDP from YAML with keys n_states, n_actions, gamma, rho, cost0, costs, nominal."""
    try:
        with open(path) as fh:
            d = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read RCMDP file {path}: {exc}") from exc
    required = ("n_states", "n_actions", "gamma", "rho", "cost0", "costs", "nominal")
    missing = [k for k in required if k not in d]
    if missing:
        raise ConfigError(f"RCMDP file {path} lacks {missing}")
    rho = np.asarray(d["rho"], dtype=float)
    return RcmdpSpec(
        int(d["n_states"]), int(d["n_actions"]), rho / rho.sum(),
        np.asarray(d["cost0"], dtype=float), tuple(np.asarray(c, dtype=float) for c in d["costs"]),
        float(d["gamma"]), normalize_kernel(d["nominal"]), name=str(d.get("name", os.path.basename(path))),
    )


# --------------------------------------------------------------------------
# records


@dataclass
class RunLog:
    m: int
    rows: list = field(default_factory=list)
    policies: list = field(default_factory=list)
    kernels: list = field(default_factory=list)
    lambda0: np.ndarray | None = None

    @property
    def header(self):
        return (["k", "V"] + [f"V_{j + 1}" for j in range(self.m)] + ["lagrangian"]
                + [f"lambda_{j + 1}" for j in range(self.m)] + ["kernel_linf_dev", "pkl_step", "budget_T"])

    def column(self, name) -> np.ndarray:
        i = self.header.index(name)
        return np.array([r[i] for r in self.rows], dtype=float)


@dataclass
class SweepTable:
    m: int
    rows: list = field(default_factory=list)

    @property
    def header(self):
        return (["x", "signs", "return"] + [f"cost_{j + 1}" for j in range(self.m)]
                + ["r_pen", "r_pen_signed"])


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FMT % v


def emit(table, path: str):
    """Write a :class:`RunLog` or :class:`SweepTable` as CSV (floats with 12 significant digits)."""
    try:
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table.header)
            for row in table.rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_csv(path: str) -> tuple[list, list]:
    with open(path, newline="") as fh:
        r = list(csv.reader(fh))
    return r[0], r[1:]


# --------------------------------------------------------------------------
# training


def run_training(config: ExperimentConfig, keep_history: bool = False):
    """Robust PMD-PD: policy mirror descent, adversarial kernel update, dual update; ``K`` times.

    Returns ``(policy, kernel, dual, run_log)``.  With ``keep_history`` the
    log also stores every ``pi_k`` and ``p_k``.
    """
    spec = config.build_spec()
    uset = config.build_set(spec)
    md_cfg = config.md_config(spec)
    tma_cfg = config.tma_config()
    cpi_cfg = config.cpi_config() if config.inner_solver == "cpi" else None
    exact = config.mode == "exact_oracle"
    seed = int(config.seed)
    ledger = sampling.BudgetLedger()
    K = int(config.K)
    d = config.dual

    policy = SoftmaxPolicy.uniform(spec.n_states, spec.n_actions)
    kernel = spec.nominal.copy()
    M_V, N_V = config.v_sizes(spec.gamma)

    def constraint_values(pol, ker, k):
        if exact:
            return all_values(pol, ker, spec)[1:]
        return sampling.estimate_v(pol, ker, spec.costs, M_V, N_V, spec, sampling.stream(seed, "v", k),
                                   ledger=ledger)

    try:
        vhat = constraint_values(policy, kernel, 0)
        if d["init"] is not None:
            dual = DualState(np.asarray(d["init"], dtype=float), float(d["eta_lambda"]), vhat,
                             d["mode"], d["lambda_max"])
        else:
            dual = init_dual(vhat, float(d["eta_lambda"]), d["mode"], d["lambda_max"])
    except (ValueError, RuntimeError) as exc:
        raise TrainingError(0, exc) from exc

    log = RunLog(spec.m, lambda0=dual.lam.copy())
    for k in range(1, K + 1):
        try:
            t_k = inner_iterations(md_cfg, dual, K)
            sampler = None
            if not exact:
                M_Q, N_Q = config.q_sizes(spec.gamma, dual)
                sampler = QSampler(M_Q, N_Q, seed, ledger)
            new_policy = policy_inner_loop(policy, kernel, dual, md_cfg, spec,
                                           estimator="exact" if exact else "sampled",
                                           sampler=sampler, k=k, t_k=t_k)
            pkl = pseudo_kl(new_policy, policy, occupancy(new_policy, kernel, spec))
            lam_cost = spec.lagrangian_cost(dual.lam)
            start = kernel if config.tma["warm_start"] else spec.nominal
            if cpi_cfg is not None:
                new_kernel = cpi(new_policy, lam_cost, uset, cpi_cfg, spec, p0=start).kernel
            else:
                new_kernel, _ = approximate_tma(new_policy, lam_cost, uset, tma_cfg, spec, seed,
                                                p0=start, k=k, ledger=ledger)
            if not contains(new_kernel, uset).inside:
                raise RuntimeError("adversarial kernel left the uncertainty set")
            vals = all_values(new_policy, new_kernel, spec)
            lagr = value(new_policy, new_kernel, lam_cost, spec)[1]
            lam_used = dual.lam
            vhat = vals[1:] if exact else constraint_values(new_policy, new_kernel, k)
            if d["freeze"]:
                dual = DualState(lam_used, dual.eta_lambda, vhat, dual.mode, dual.lambda_max)
            else:
                dual = dual_update(dual, vhat)
                check_multipliers(dual)
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            raise TrainingError(k, exc) from exc
        policy, kernel = new_policy, new_kernel
        dev = float(np.max(np.abs(kernel - spec.nominal)))
        log.rows.append([k, vals[0], *vals[1:], lagr, *dual.lam, dev, pkl, ledger.total])
        if keep_history:
            log.policies.append(policy)
            log.kernels.append(kernel)
    return policy, kernel, dual, log


# --------------------------------------------------------------------------
# evaluation protocol


def penalized_return(v: float, c, lambda_max: float) -> tuple[float, float]:
    """``(v - lambda_max sum max(0, c_j), v - lambda_max sum c_j)``."""
    if lambda_max < 0:
        raise ValueError("lambda_max must be nonnegative")
    c = np.asarray(c, dtype=float).reshape(-1)
    return float(v - lambda_max * np.maximum(c, 0.0).sum()), float(v - lambda_max * c.sum())


def _sign_label(signs) -> str:
    return "".join("+" if s > 0 else "-" for s in signs)


def robustness_sweep(policy, uset: RectSet, levels, n_test: int, spec: RcmdpSpec, seed: int = 0,
                     lambda_max: float = 10.0, exact: bool = True, horizon: int | None = None) -> SweepTable:
    """Evaluate ``policy`` on every distorted kernel (level ``x``, sign vector).

    The return is the negated cost value; constraint columns are the
    constraint-cost values.  Exact evaluation by default; otherwise each row
    averages ``n_test`` sampled episodes.
    """
    table = SweepTable(spec.m)
    if n_test < 1:
        raise ValueError("n_test must be at least 1")
    H = horizon or sampling.n_v(spec.gamma, 1e-3)
    row = 0
    for x in levels:
        for signs in sign_vectors(uset.dimension):
            p = distort(uset, float(x), signs)
            if exact:
                vals = all_values(policy, p, spec)
            else:
                vals = sampling.estimate_v(policy, p, (spec.cost0, *spec.costs), n_test, H, spec,
                                           sampling.stream(seed, "sweep", 0, 0, row))
            ret = -float(vals[0])
            r_pen, r_signed = penalized_return(ret, vals[1:], lambda_max)
            table.rows.append([float(x), _sign_label(signs), ret, *vals[1:], r_pen, r_signed])
            row += 1
    return table


def sweep_from_config(config: ExperimentConfig, policy) -> SweepTable:
    spec = config.build_spec()
    uset = config.build_set(spec)
    if not isinstance(uset, RectSet):
        raise ConfigError("the distortion sweep needs a rectangular uncertainty set")
    s = config.sweep
    return robustness_sweep(policy, uset, s["levels"], int(s["n_test"]), spec, int(config.seed),
                            float(s["lambda_max"]), exact=config.mode == "exact_oracle")
