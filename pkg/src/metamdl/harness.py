"""Experiment matrix runner: baselines vs. estimated loss weights on synthetic domains."""
from __future__ import annotations

import csv
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__, autodiff
from .autodiff import ModelSpec
from .data import Dataset, DomainSpec, downsample, gen_paired
from .errors import ConfigError, TrainingDiverged
from .estimator import UpdateRule, domain_name, write_trajectory
from .losses import LossFn, auc_metric, dsc_metric
from .trainer import RunRecord, TrainConfig, train

log = logging.getLogger(__name__)

BASELINE = "F50-T50"
METRICS = ("DSC", "AUC")
RESULT_COLUMNS = ["setup", "domain", "metric", "mean", "sd", "gain_mu", "gain_sigma", "n_runs"]

# name -> (rule, window)
SETUPS: dict[str, tuple[UpdateRule, int]] = {
    "F50-T50": (UpdateRule("fixed", weight=0.5), 25),
    "F10-T90": (UpdateRule("fixed", weight=0.1), 25),
    "F90-T10": (UpdateRule("fixed", weight=0.9), 25),
    "Simple-G": (UpdateRule("simple_g"), 25),
    "Simple-C": (UpdateRule("simple_c"), 25),
    "Ours-G-25": (UpdateRule("greedy"), 25),
    "Ours-G-100": (UpdateRule("greedy"), 100),
    "Ours-C-25": (UpdateRule("conservative"), 25),
    "Ours-C-100": (UpdateRule("conservative"), 100),
}


@dataclass
class ExperimentMatrix:
    setups: list[str] = field(default_factory=lambda: list(SETUPS))
    repeats: int = 5
    seed: int = 0
    scenario: str = "full"
    downsample_fraction: float = 2 / 3
    grid: int = 16
    n_train: int = 48
    n_test: int = 32
    domains: list[dict] = field(default_factory=lambda: [
        {"contrast": 3.0, "noise": 0.5},
        {"contrast": 0.75, "noise": 0.5},
    ])
    hidden: list[int] = field(default_factory=lambda: [16])
    activation: str = "tanh"
    loss: str = "bce_plus_dice"
    eta: float = 0.01
    steps: int = 1500
    batch_size: int = 8
    split_ratio: float = 0.5
    prior: list[float] = field(default_factory=lambda: [5.0, 5.0])
    threshold: float = 0.5
    save_checkpoints: bool = False

    def __post_init__(self):
        unknown = [s for s in self.setups if s not in SETUPS]
        if unknown:
            raise ConfigError(f"unknown setups {unknown}; known: {list(SETUPS)}")
        if self.scenario not in ("full", "downsampled"):
            raise ConfigError("scenario must be 'full' or 'downsampled'")
        if self.repeats < 1:
            raise ConfigError("repeats must be positive")
        if len(self.domains) != 2:
            raise ConfigError("the experiment matrix compares exactly two domains")
        if len(self.prior) != 2:
            raise ConfigError("prior must be [alpha, beta]")
        if self.steps > 0 and self.n_train * min(1.0, self.downsample_fraction) < self.batch_size:
            raise ConfigError("training set smaller than one batch")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ExperimentMatrix":
        known = set(cls.__dataclass_fields__)
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**dict(raw))

    def model_spec(self) -> ModelSpec:
        n = self.grid * self.grid
        return ModelSpec(n, n, tuple(self.hidden), self.activation, "sigmoid")

    def train_config(self, setup: str, seed: int) -> TrainConfig:
        rule, window = SETUPS[setup]
        return TrainConfig(eta=self.eta, batch_size=self.batch_size, steps=self.steps, rule=rule,
                           prior=tuple(self.prior), window=window, seed=seed,
                           split_ratio=self.split_ratio)


@dataclass
class ResultTable:
    """Long-format rows keyed by (setup, domain, metric) plus per-setup GAIN values."""

    rows: list[dict] = field(default_factory=list)
    gains: dict[str, tuple[float, float]] = field(default_factory=dict)

    def get(self, setup: str, domain: str, metric: str) -> dict:
        for r in self.rows:
            if (r["setup"], r["domain"], r["metric"]) == (setup, domain, metric):
                return r
        raise KeyError((setup, domain, metric))


@dataclass
class RunResult:
    setup: str
    seed: int
    record: RunRecord
    params: np.ndarray | None = None


def build_datasets(matrix: ExperimentMatrix, seed: int) -> tuple[list[Dataset], list[Dataset]]:
    """Paired train/test domains for one repeat; test masks are independent of train masks."""
    def specs(count, offset):
        return [DomainSpec(matrix.grid, d["contrast"], d["noise"], count,
                           seed=(seed + offset) * 1009 + k)
                for k, d in enumerate(matrix.domains)]

    train_sets = gen_paired(specs(matrix.n_train, 0), mask_seed=seed)
    test_sets = gen_paired(specs(matrix.n_test, 500_000), mask_seed=seed + 500_000)
    if matrix.scenario == "downsampled":
        train_sets[0] = downsample(train_sets[0], matrix.downsample_fraction, seed)
    return train_sets, test_sets


def evaluate(spec: ModelSpec, params: np.ndarray, datasets: Sequence[Dataset],
             threshold: float = 0.5) -> dict[str, float]:
    """Pooled per-pixel DSC and AUC on each domain's test set."""
    out = {}
    for k, ds in enumerate(datasets):
        p = autodiff.forward(spec, params, ds.inputs)
        name = domain_name(k)
        out[f"DSC-{name}"] = dsc_metric(p >= threshold, ds.labels)
        out[f"AUC-{name}"] = auc_metric(p, ds.labels)
    return out


def _mean_sd(values: Sequence[float]) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=np.float64)
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), sd


def compute_gain(means: Sequence[float], sds: Sequence[float], base_means: Sequence[float],
                 base_sds: Sequence[float]) -> tuple[float, float]:
    """(summed DSC mean increase, summed DSC s.d. decrease) relative to the baseline."""
    if not (len(means) == len(sds) == len(base_means) == len(base_sds)):
        raise ConfigError("gain inputs must cover the same domains")
    mu = sum(m - b for m, b in zip(means, base_means))
    sigma = sum(b - s for s, b in zip(sds, base_sds))
    return mu, sigma


def table_gains(table: ResultTable, domains: Sequence[str], baseline: str = BASELINE) -> None:
    setups = list(dict.fromkeys(r["setup"] for r in table.rows))
    if setups and baseline not in setups:
        raise ConfigError(f"baseline {baseline} missing; GAIN columns need it")

    def dsc(setup):
        rows = [table.get(setup, d, "DSC") for d in domains]
        return [r["mean"] for r in rows], [r["sd"] for r in rows]

    if not setups:
        return
    base_m, base_s = dsc(baseline)
    for s in setups:
        m, sd = dsc(s)
        table.gains[s] = (0.0, 0.0) if s == baseline else compute_gain(m, sd, base_m, base_s)
    for r in table.rows:
        r["gain_mu"], r["gain_sigma"] = table.gains[r["setup"]]


def aggregate(runs: Sequence[RunResult], setups: Sequence[str], n_domains: int) -> ResultTable:
    table = ResultTable()
    names = [domain_name(k) for k in range(n_domains)]
    for setup in setups:
        ok = [r for r in runs if r.setup == setup and r.record.diverged is None]
        for d in names:
            for metric in METRICS:
                mean, sd = _mean_sd([r.record.metrics[f"{metric}-{d}"] for r in ok])
                table.rows.append({"setup": setup, "domain": d, "metric": metric, "mean": mean,
                                   "sd": sd, "gain_mu": 0.0, "gain_sigma": 0.0,
                                   "n_runs": len(ok)})
    if BASELINE in setups:
        table_gains(table, names)
    return table


def run_matrix(matrix: ExperimentMatrix, progress=None) -> tuple[ResultTable, list[RunResult]]:
    """Run every setup ``repeats`` times (seeds ``seed + i``) and aggregate.

    Diverged runs are kept in the returned list with ``record.diverged`` set
    and excluded from the aggregates.
    """
    spec = matrix.model_spec()
    loss = LossFn(matrix.loss)
    seeds = [matrix.seed + i for i in range(matrix.repeats)]
    data = {s: build_datasets(matrix, s) for s in seeds}
    runs = []
    for setup in matrix.setups:
        for s in seeds:
            train_sets, test_sets = data[s]
            cfg = matrix.train_config(setup, s)
            try:
                params, record = train(cfg, spec, train_sets, loss)
                record.metrics = evaluate(spec, params, test_sets, matrix.threshold)
            except TrainingDiverged as exc:
                log.warning("%s seed %d: %s", setup, s, exc)
                params = exc.params
                record = RunRecord(seed=s, diverged=str(exc))
            runs.append(RunResult(setup, s, record, params))
            if progress:
                progress(setup, s, record)
    return aggregate(runs, matrix.setups, len(matrix.domains)), runs


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_results_csv(path: Path, table: ResultTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in table.rows:
            w.writerow([r["setup"], r["domain"], r["metric"], _fmt(r["mean"]), _fmt(r["sd"]),
                        _fmt(r["gain_mu"]), _fmt(r["gain_sigma"]), r["n_runs"]])


def read_results_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for key in ("mean", "sd", "gain_mu", "gain_sigma"):
            r[key] = float(r[key])
        r["n_runs"] = int(r["n_runs"])
    return rows


def emit_results(table: ResultTable, runs: Sequence[RunResult], out_dir: str | Path,
                 config: Mapping | None = None, save_checkpoints: bool = False) -> list[Path]:
    """Write results.csv, runs.csv, one λ trajectory CSV per run and manifest.json.

    Contents depend only on the inputs, so identical runs give identical bytes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "results.csv", out / "runs.csv"]
    write_results_csv(written[0], table)

    n_domains = len({r["domain"] for r in table.rows}) or 2
    with open(written[1], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setup", "seed", "metric", "value", "diverged"])
        for run in runs:
            for key in sorted(run.record.metrics):
                w.writerow([run.setup, run.seed, key, _fmt(run.record.metrics[key]), 0])
            if run.record.diverged is not None:
                w.writerow([run.setup, run.seed, "", "", 1])

    for run in runs:
        if run.record.steps:
            path = out / f"lambda_traj_{run.setup}_{run.seed}.csv"
            write_trajectory(path, run.record.steps, n_domains)
            written.append(path)
        if save_checkpoints and run.params is not None:
            path = out / f"params_{run.setup}_{run.seed}.bin"
            autodiff.save_params(path, run.params)
            written.append(path)

    manifest = {
        "config": dict(config or {}),
        "versions": {"metamdl": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "seeds": sorted({r.seed for r in runs}),
        "setups": list(dict.fromkeys(r.setup for r in runs)),
        "gains": {s: {"gain_mu": g[0], "gain_sigma": g[1]} for s, g in table.gains.items()},
        "diverged": [{"setup": r.setup, "seed": r.seed, "error": r.record.diverged}
                     for r in runs if r.record.diverged is not None],
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(path)
    return written


def matrix_config(matrix: ExperimentMatrix) -> dict:
    return asdict(matrix)
