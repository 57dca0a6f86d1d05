"""Loss-weight estimation from hypothetical losses.

Two domains use a Beta prior over the weight of domain A and a windowed
Bernoulli history of "which domain's step was best" outcomes. K domains use a
Dirichlet prior over a windowed categorical history. The posterior mode is
closed form in both cases. Fixed weights and the proportional "Simple"
heuristic are provided as baselines.

Domain indices are zero-based: domain 0 is "A", so outcome 1 in the
two-domain history corresponds to category 0 in the K-domain history.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, TrainingDiverged

RULE_KINDS = ("greedy", "conservative", "simple_g", "simple_c", "fixed")
SIMPLE_GAMMA = {"simple_g": -0.1, "simple_c": 0.1}


@dataclass(frozen=True)
class UpdateRule:
    kind: str
    gamma: float | None = None
    weight: float = 0.5
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ConfigError(f"unknown rule {self.kind!r}; expected one of {RULE_KINDS}")
        if self.kind in SIMPLE_GAMMA and self.gamma is None:
            object.__setattr__(self, "gamma", SIMPLE_GAMMA[self.kind])
        if not 0.0 <= self.weight <= 1.0:
            raise ConfigError(f"fixed weight must lie in [0, 1], got {self.weight}")
        if self.weights is not None:
            w = tuple(float(v) for v in self.weights)
            if min(w) < 0 or not math.isclose(sum(w), 1.0, abs_tol=1e-12):
                raise ConfigError(f"fixed weights must lie on the simplex, got {w}")
            object.__setattr__(self, "weights", w)

    @property
    def uses_map(self) -> bool:
        return self.kind in ("greedy", "conservative")

    @property
    def is_simple(self) -> bool:
        return self.kind in SIMPLE_GAMMA


@dataclass(frozen=True)
class LambdaState:
    """Beta(alpha, beta) prior plus the last ``window`` binary outcomes."""

    alpha: float = 5.0
    beta: float = 5.0
    window: int = 25
    history: tuple[int, ...] = ()

    def __post_init__(self):
        if not (self.alpha > 1 and self.beta > 1):
            raise ConfigError("Beta prior needs alpha > 1 and beta > 1")
        if self.window < 1:
            raise ConfigError("window must be a positive integer")
        if len(self.history) > self.window:
            raise ConfigError("history longer than window")
        if any(h not in (0, 1) for h in self.history):
            raise ConfigError("outcomes must be 0 or 1")


@dataclass(frozen=True)
class DirichletState:
    """Dirichlet prior plus the last ``window`` category indices (0-based)."""

    alphas: tuple[float, ...] = (5.0, 5.0)
    window: int = 25
    history: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if len(self.alphas) < 2:
            raise ConfigError("need at least two domains")
        if any(a <= 1 for a in self.alphas):
            raise ConfigError("Dirichlet prior needs every alpha > 1")
        if self.window < 1:
            raise ConfigError("window must be a positive integer")
        if len(self.history) > self.window:
            raise ConfigError("history longer than window")
        if any(not 0 <= h < len(self.alphas) for h in self.history):
            raise ConfigError("category index out of range")

    @property
    def k(self) -> int:
        return len(self.alphas)


def _check_finite(values: Iterable[float]) -> None:
    for v in values:
        if not math.isfinite(v):
            raise TrainingDiverged(None, f"non-finite hypothetical loss {v}")


def choose_outcome(rule: UpdateRule, h_a: float, h_b: float) -> int:
    """1 when the step favouring domain A is judged best under ``rule``.

    greedy: 1 iff H_B > H_A. conservative: 1 iff H_A > H_B. Ties give 0.
    """
    _check_finite((h_a, h_b))
    if rule.kind == "greedy":
        return int(h_b > h_a)
    if rule.kind == "conservative":
        return int(h_a > h_b)
    raise ConfigError(f"rule {rule.kind!r} has no outcome definition")


def choose_outcome_k(rule: UpdateRule, hyp_losses: Sequence[float]) -> int:
    """Greedy picks the lowest hypothetical loss, conservative the highest; lowest index wins ties."""
    h = np.asarray(hyp_losses, dtype=np.float64)
    if h.size < 2:
        raise ConfigError("need at least two hypothetical losses")
    _check_finite(h.tolist())
    if rule.kind == "greedy":
        return int(np.argmin(h))
    if rule.kind == "conservative":
        return int(np.argmax(h))
    raise ConfigError(f"rule {rule.kind!r} has no outcome definition")


def record_outcome(state, outcome: int):
    """Append an outcome, dropping the oldest once the window is full."""
    history = (*state.history, int(outcome))[-state.window:]
    return replace(state, history=history)


def map_estimate_beta(state: LambdaState) -> float:
    # partial windows use the current history length in place of T
    n = len(state.history)
    hits = sum(state.history)
    lam = (state.alpha + hits - 1.0) / (state.alpha + state.beta + n - 2.0)
    return min(1.0, max(0.0, lam))


def map_estimate_dirichlet(state: DirichletState) -> np.ndarray:
    alphas = np.asarray(state.alphas)
    counts = np.bincount(np.asarray(state.history, dtype=np.int64), minlength=state.k)
    n = len(state.history)
    return (alphas + counts - 1.0) / (alphas.sum() + n - state.k)


def simple_update(rule: UpdateRule, lam: float, h_a: float, h_b: float) -> float:
    """lam + gamma * (H_A - H_B) / |H_A|, clamped to [0, 1]; skipped when H_A == 0."""
    if not rule.is_simple:
        raise ConfigError(f"simple_update called with rule {rule.kind!r}")
    _check_finite((h_a, h_b))
    if h_a == 0.0:
        return lam
    return min(1.0, max(0.0, lam + rule.gamma * (h_a - h_b) / abs(h_a)))


def current_lambda(rule: UpdateRule, state) -> float | np.ndarray:
    """Weight(s) in effect for ``rule``.

    ``state`` is a LambdaState / DirichletState for MAP rules and the
    running weight (a float) for the Simple rules; fixed rules ignore it.
    """
    if rule.kind == "fixed":
        return np.asarray(rule.weights) if rule.weights is not None else rule.weight
    if rule.is_simple:
        return float(state)
    if isinstance(state, DirichletState):
        return map_estimate_dirichlet(state)
    return map_estimate_beta(state)


class Weighting:
    """Stateful driver the trainer uses once per outer step.

    ``step(hyp_losses)`` returns ``(outcome, weights)`` where ``weights`` is the
    K-vector applied to this step's outer update. MAP rules record the
    current outcome first; Simple rules apply the weight they held coming
    into the step and then move it.
    """

    def __init__(self, rule: UpdateRule, n_domains: int = 2, prior: Sequence[float] = (5.0, 5.0),
                 window: int = 25, use_dirichlet: bool | None = None, initial: float = 0.5):
        if n_domains < 2:
            raise ConfigError("need at least two domains")
        self.rule = rule
        self.k = n_domains
        if use_dirichlet is None:
            use_dirichlet = n_domains > 2
        if n_domains > 2 and not use_dirichlet and rule.uses_map:
            raise ConfigError("more than two domains require the Dirichlet estimator")
        if rule.is_simple and n_domains != 2:
            raise ConfigError("Simple rules are defined for two domains only")
        if rule.kind == "fixed" and n_domains > 2 and rule.weights is None:
            raise ConfigError("fixed rule with more than two domains needs explicit weights")
        prior = tuple(float(a) for a in prior)
        if len(prior) != n_domains:
            raise ConfigError(f"prior has {len(prior)} entries for {n_domains} domains")
        self.use_dirichlet = use_dirichlet
        if use_dirichlet:
            self.state = DirichletState(prior, window)
        else:
            self.state = LambdaState(prior[0], prior[1], window)
        self.lam = float(initial)

    @property
    def needs_hypothetical(self) -> bool:
        return self.rule.kind != "fixed"

    def _as_vector(self, lam) -> np.ndarray:
        if np.ndim(lam) == 0:
            return np.array([lam, 1.0 - lam])
        return np.asarray(lam, dtype=np.float64)

    def weights(self) -> np.ndarray:
        if self.rule.is_simple:
            return self._as_vector(self.lam)
        return self._as_vector(current_lambda(self.rule, self.state))

    def step(self, hyp_losses: Sequence[float] | None) -> tuple[int | None, np.ndarray]:
        rule = self.rule
        if rule.kind == "fixed":
            return None, self.weights()
        if rule.is_simple:
            w = self.weights()
            self.lam = simple_update(rule, self.lam, hyp_losses[0], hyp_losses[1])
            return None, w
        if self.use_dirichlet:
            outcome = choose_outcome_k(rule, hyp_losses)
        else:
            outcome = choose_outcome(rule, hyp_losses[0], hyp_losses[1])
        self.state = record_outcome(self.state, outcome)
        return outcome, self.weights()


def write_trajectory(path: str | Path, rows: Sequence[dict], n_domains: int) -> None:
    """One CSV row per outer step: step, lambda, outcome, H per domain, train loss per domain."""
    names = [domain_name(k) for k in range(n_domains)]
    header = ["step", "lambda", "outcome", *(f"H_{n}" for n in names),
              *(f"loss_{n}" for n in names)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            hyp = r["hyp"] if r["hyp"] is not None else [None] * n_domains
            w.writerow([r["step"], _fmt(r["lambda"]),
                        "" if r["outcome"] is None else r["outcome"],
                        *(_fmt(h) for h in hyp), *(_fmt(v) for v in r["losses"])])


def domain_name(k: int) -> str:
    return chr(ord("A") + k) if k < 26 else f"D{k}"


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))
