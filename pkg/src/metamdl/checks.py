"""Numerical self-checks used by the CLI and the acceptance tests.

The posterior-mode oracles here are brute-force grid searches over the
unnormalised log posterior; they never call the closed-form estimators.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff
from .autodiff import ModelSpec
from .data import DomainBatch
from .estimator import LambdaState, map_estimate_beta
from .losses import LossFn
from .trainer import ModelObjective, taylor_residual

TAYLOR_ETAS = (1e-2, 5e-3, 2.5e-3, 1.25e-3)


class BetaGridOracle:
    """Posterior mode of a Beta-Bernoulli model found on a uniform grid over [0, 1]."""

    def __init__(self, step: float = 1e-5):
        self.grid = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
        with np.errstate(divide="ignore"):
            self.log_p = np.log(self.grid)
            self.log_q = np.log1p(-self.grid)

    def mode(self, alpha: float, beta: float, n: int, hits: int) -> float:
        a = alpha + hits - 1.0
        b = beta + n - hits - 1.0
        with np.errstate(invalid="ignore"):
            logpost = a * self.log_p + b * self.log_q
        logpost = np.where(np.isnan(logpost), -np.inf, logpost)
        return float(self.grid[np.argmax(logpost)])


def dirichlet_grid_mode(alphas, counts, step: float = 1e-3) -> np.ndarray:
    """Mode of a 3-category Dirichlet-multinomial posterior on a simplex grid."""
    exps = np.asarray(alphas, dtype=np.float64) + np.asarray(counts, dtype=np.float64) - 1.0
    if exps.size != 3:
        raise ValueError("grid oracle supports three categories")
    m = int(round(1.0 / step))
    i, j = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
    keep = i + j <= m
    w1 = i[keep] / m
    w2 = j[keep] / m
    w3 = np.clip(1.0 - w1 - w2, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logpost = exps[0] * np.log(w1) + exps[1] * np.log(w2) + exps[2] * np.log(w3)
    logpost = np.where(np.isnan(logpost), -np.inf, logpost)
    best = int(np.argmax(logpost))
    return np.array([w1[best], w2[best], w3[best]])


@dataclass
class MapCheckResult:
    cases: int
    max_error: float
    seconds: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def map_check(cases: int = 500, seed: int = 0, step: float = 1e-5,
              tolerance: float = 1e-4) -> MapCheckResult:
    """Closed-form Beta MAP vs. grid search over random (alpha, beta, T, N)."""
    rng = np.random.default_rng(seed)
    oracle = BetaGridOracle(step)
    started = time.perf_counter()
    worst = 0.0
    for _ in range(cases):
        alpha, beta = 1.0 + 9.0 * (1.0 - rng.random(2))  # (1, 10]
        window = int(rng.integers(1, 201))
        hits = int(rng.integers(0, window + 1))
        history = tuple([1] * hits + [0] * (window - hits))
        lam = map_estimate_beta(LambdaState(alpha, beta, window, history))
        worst = max(worst, abs(lam - oracle.mode(alpha, beta, window, hits)))
    return MapCheckResult(cases, worst, time.perf_counter() - started, tolerance)


@dataclass
class TaylorInstance:
    objectives: list
    params: np.ndarray
    batches: list


def taylor_instance(seed: int) -> TaylorInstance:
    """A random small tanh MLP with two domains of differently scaled inputs."""
    rng = np.random.default_rng([seed, 0x7A7])
    spec = ModelSpec(n_in=5, n_out=3, hidden=(7,), activation="tanh")
    params = autodiff.init_params(spec, seed) + 0.1 * rng.standard_normal(spec.n_params)
    batches = []
    for k, scale in enumerate((1.0, rng.uniform(0.3, 2.0))):
        x = scale * rng.standard_normal((8, spec.n_in))
        y = (rng.random((8, spec.n_out)) < 0.4).astype(np.float64)
        batches.append(DomainBatch(x, y, k))
    objective = ModelObjective(spec, LossFn("bce_plus_dice"))
    return TaylorInstance([objective, objective], params, batches)


@dataclass
class TaylorRow:
    instance: int
    eta: float
    lhs: float
    rhs: float
    residual: float
    ratio: float | None


def taylor_sweep(etas=TAYLOR_ETAS, instances: int = 20, seed: int = 0) -> list[TaylorRow]:
    rows = []
    for i in range(instances):
        inst = taylor_instance(seed + i)
        prev = None
        for eta in etas:
            lhs, rhs = taylor_residual(inst.objectives, inst.params, inst.batches, eta)
            res = abs(lhs - rhs)
            rows.append(TaylorRow(i, eta, lhs, rhs, res, None if prev is None else prev / res))
            prev = res
    return rows


def taylor_summary(rows: list[TaylorRow], lo: float = 3.0, hi: float = 5.0) -> dict:
    """Counts of instances whose every halving ratio lies in [lo, hi] and whose smallest-eta signs agree."""
    by_inst: dict[int, list[TaylorRow]] = {}
    for r in rows:
        by_inst.setdefault(r.instance, []).append(r)
    ratio_ok = sign_ok = 0
    for inst_rows in by_inst.values():
        ratios = [r.ratio for r in inst_rows if r.ratio is not None]
        ratio_ok += all(lo <= q <= hi for q in ratios)
        last = inst_rows[-1]
        sign_ok += np.sign(last.lhs) == np.sign(last.rhs)
    return {"instances": len(by_inst), "ratio_ok": ratio_ok, "sign_ok": int(sign_ok)}
