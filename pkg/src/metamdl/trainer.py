"""Multi-domain training with inner-loop loss-weight estimation.

Each outer step:

1. draws one mini-batch per domain and splits it into meta-train / meta-test;
2. takes a hypothetical SGD step per domain on that domain's meta-train half;
3. scores each hypothetical parameter vector by the summed meta-test loss
   over all domains;
4. turns those hypothetical losses into loss weights (see ``estimator``);
5. takes one committed SGD step on the weighted sum of full-batch losses.

The trainer is model-agnostic: a domain objective is anything with
``value(params, batch)`` and ``value_and_grad(params, batch)``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import autodiff
from .autodiff import ModelSpec
from .data import Dataset, DomainBatch, batcher
from .errors import ConfigError, SplitError, TrainingDiverged
from .estimator import UpdateRule, Weighting
from .losses import LossFn

log = logging.getLogger(__name__)


class Objective(Protocol):
    def value(self, params: np.ndarray, batch: DomainBatch) -> float: ...

    def value_and_grad(self, params: np.ndarray, batch: DomainBatch) -> tuple[float, np.ndarray]: ...


@dataclass(frozen=True)
class ModelObjective:
    """Mean loss of an MLP on a batch."""

    spec: ModelSpec
    loss: LossFn = field(default_factory=LossFn)

    def value(self, params, batch):
        return autodiff.loss_value(self.spec, params, batch.inputs, batch.labels, self.loss)

    def value_and_grad(self, params, batch):
        return autodiff.loss_and_grad(self.spec, params, batch.inputs, batch.labels, self.loss)


@dataclass(frozen=True)
class MetaSplit:
    meta_train: DomainBatch
    meta_test: DomainBatch


@dataclass
class TrainConfig:
    eta: float = 0.01
    batch_size: int = 8
    steps: int = 1000
    rule: UpdateRule = field(default_factory=lambda: UpdateRule("conservative"))
    prior: tuple[float, ...] = (5.0, 5.0)
    window: int = 25
    seed: int = 0
    split_ratio: float = 0.5
    inner_eta: float | None = None
    use_dirichlet: bool | None = None

    def __post_init__(self):
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        if self.inner_eta is not None and self.inner_eta < 0:
            raise ConfigError("inner_eta must be non-negative")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 so it can be split")
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError("split_ratio must lie in (0, 1)")
        self.prior = tuple(float(a) for a in self.prior)

    @property
    def hypothetical_eta(self) -> float:
        return self.eta if self.inner_eta is None else self.inner_eta


@dataclass
class RunRecord:
    seed: int
    steps: list[dict] = field(default_factory=list)
    metrics: dict[str, float] = field(default_factory=dict)
    wall_time: float = 0.0
    diverged: str | None = None

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([s["lambda"] for s in self.steps])


def split_minibatch(batch: DomainBatch, ratio: float = 0.5, seed=0) -> MetaSplit:
    """Random disjoint meta-train / meta-test partition; meta-train gets round(ratio * n) rows."""
    n = len(batch)
    if n < 2:
        raise SplitError("a batch needs at least two rows to split")
    n_train = min(n - 1, max(1, int(round(ratio * n))))
    perm = np.random.default_rng(seed).permutation(n)
    return MetaSplit(batch.take(np.sort(perm[:n_train])), batch.take(np.sort(perm[n_train:])))


def _finite(x, step, what, params=None):
    if not np.all(np.isfinite(x)):
        raise TrainingDiverged(step, what, params)


def inner_step(objective: Objective, params: np.ndarray, split: MetaSplit, eta: float,
               step: int | None = None) -> np.ndarray:
    _, grad = objective.value_and_grad(params, split.meta_train)
    _finite(grad, step, "non-finite inner gradient")
    return autodiff.sgd_step(params, grad, eta)


def hypothetical_loss(objectives: Sequence[Objective], hyp_params: np.ndarray,
                      meta_tests: Sequence[DomainBatch]) -> float:
    if len(objectives) != len(meta_tests):
        raise ConfigError("one meta-test batch per domain required")
    return float(sum(obj.value(hyp_params, b) for obj, b in zip(objectives, meta_tests)))


def weighted_gradient(objectives: Sequence[Objective], params: np.ndarray, weights,
                      batches: Sequence[DomainBatch]) -> tuple[list[float], np.ndarray]:
    """Per-domain losses and the gradient of the weighted loss sum."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(objectives),) or len(batches) != len(objectives):
        raise ConfigError("need one weight and one batch per domain")
    if np.any(weights < 0) or not np.isclose(weights.sum(), 1.0, atol=1e-12):
        raise ConfigError(f"weights must lie on the simplex, got {weights}")
    losses = []
    total = None
    for w, obj, b in zip(weights, objectives, batches):
        value, g = obj.value_and_grad(params, b)
        losses.append(value)
        total = w * g if total is None else total + w * g
    return losses, total


def outer_step(objectives: Sequence[Objective], params: np.ndarray, weights,
               batches: Sequence[DomainBatch], eta: float) -> np.ndarray:
    _, grad = weighted_gradient(objectives, params, weights, batches)
    return autodiff.sgd_step(params, grad, eta)


def taylor_residual(objectives: Sequence[Objective], params: np.ndarray,
                    batches: Sequence[DomainBatch], eta: float) -> tuple[float, float]:
    """``(H_A - H_B, eta * (|g_B|^2 - |g_A|^2))`` with full batches as meta-train and meta-test."""
    if len(objectives) != 2:
        raise ConfigError("taylor_residual is defined for two domains")
    grads = [obj.value_and_grad(params, b)[1] for obj, b in zip(objectives, batches)]
    hyp = [hypothetical_loss(objectives, autodiff.sgd_step(params, g, eta), batches)
           for g in grads]
    lhs = hyp[0] - hyp[1]
    rhs = eta * (float(grads[1] @ grads[1]) - float(grads[0] @ grads[0]))
    return lhs, rhs


def domain_stream_seed(seed: int, k: int) -> tuple[int, int, int]:
    return (seed, 1, k)


def split_seed(seed: int, step: int, k: int) -> tuple[int, int, int, int]:
    return (seed, 2, step, k)


def train(config: TrainConfig, spec: ModelSpec | None, datasets: Sequence[Dataset],
          loss: LossFn | Sequence[LossFn] | None = None, *,
          objectives: Sequence[Objective] | None = None,
          params: np.ndarray | None = None) -> tuple[np.ndarray, RunRecord]:
    """Run ``config.steps`` outer steps and return final parameters and the per-step log.

    Pass ``objectives`` (and ``params``) to train something other than the
    built-in MLP. On divergence, raises ``TrainingDiverged`` carrying the
    parameters of the last completed step.
    """
    k = len(datasets)
    if k < 2:
        raise ConfigError("multi-domain training needs at least two datasets")
    if objectives is None:
        if spec is None:
            raise ConfigError("either spec or objectives is required")
        losses = list(loss) if isinstance(loss, (list, tuple)) else [loss or LossFn()] * k
        objectives = [ModelObjective(spec, lf) for lf in losses]
    if len(objectives) != k:
        raise ConfigError("one objective per dataset required")
    if params is None:
        if spec is None:
            raise ConfigError("initial params required when no spec is given")
        params = autodiff.init_params(spec, config.seed)
    theta = np.array(params, dtype=np.float64)

    weighting = Weighting(config.rule, k, config.prior, config.window, config.use_dirichlet)
    streams = [batcher(ds, config.batch_size, domain_stream_seed(config.seed, i))
               for i, ds in enumerate(datasets)]
    record = RunRecord(seed=config.seed)
    inner_eta = config.hypothetical_eta
    started = time.perf_counter()

    for t in range(config.steps):
        batches = [next(s) for s in streams]
        hyp = None
        try:
            if weighting.needs_hypothetical:
                splits = [split_minibatch(b, config.split_ratio, split_seed(config.seed, t, i))
                          for i, b in enumerate(batches)]
                meta_tests = [s.meta_test for s in splits]
                hyp = []
                for obj, split in zip(objectives, splits):
                    theta_k = inner_step(obj, theta, split, inner_eta, t)
                    hyp.append(hypothetical_loss(objectives, theta_k, meta_tests))
                _finite(hyp, t, "non-finite hypothetical loss")
            outcome, weights = weighting.step(hyp)
        except TrainingDiverged as exc:
            raise TrainingDiverged(t, str(exc), theta.copy()) from exc
        losses, grad = weighted_gradient(objectives, theta, weights, batches)
        _finite(losses, t, "non-finite training loss", theta.copy())
        _finite(grad, t, "non-finite gradient", theta.copy())
        theta = autodiff.sgd_step(theta, grad, config.eta)
        record.steps.append({"step": t, "lambda": float(weights[0]), "weights": weights,
                             "outcome": outcome, "hyp": hyp, "losses": losses})

    record.wall_time = time.perf_counter() - started
    return theta, record
