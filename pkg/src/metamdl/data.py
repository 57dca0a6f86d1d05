"""Synthetic multi-domain segmentation tasks.

Every sample is a binary blob mask on a square grid. Domains share the mask
distribution and differ only in how the mask is rendered into an image:
``input = background + contrast * mask + noise * N(0, 1)`` where the
background is unit-variance Gaussian per pixel. Images are flattened.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError

DATASET_MAGIC = b"MDDS"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIQ")
_DIMS = struct.Struct("<QQQ")


@dataclass(frozen=True)
class DomainSpec:
    grid: int = 16
    contrast: float = 3.0
    noise: float = 0.5
    count: int = 64
    seed: int = 0
    mask_seed: int | None = None

    def __post_init__(self):
        if self.grid < 4:
            raise ConfigError("grid must be at least 4 pixels wide")
        if self.contrast < 0 or self.noise < 0:
            raise ConfigError("contrast and noise must be non-negative")
        if self.count < 1:
            raise ConfigError("count must be positive")


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    domain: int = 0

    def __post_init__(self):
        if self.inputs.shape != self.labels.shape or self.inputs.ndim != 2:
            raise ConfigError(f"inputs {self.inputs.shape} and labels {self.labels.shape} must match")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class DomainBatch:
    inputs: np.ndarray
    labels: np.ndarray
    domain: int = 0

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ConfigError("inputs and labels must have the same number of rows")
        if self.inputs.shape[0] == 0:
            raise ConfigError("empty batch")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def take(self, rows) -> "DomainBatch":
        return DomainBatch(self.inputs[rows], self.labels[rows], self.domain)


def blob_mask(grid: int, rng: np.random.Generator) -> np.ndarray:
    """Union of 1-3 random axis-aligned ellipses."""
    yy, xx = np.mgrid[0:grid, 0:grid].astype(np.float64)
    mask = np.zeros((grid, grid), dtype=bool)
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0.15 * grid, 0.85 * grid, size=2)
        ry, rx = rng.uniform(0.08 * grid, 0.25 * grid, size=2)
        mask |= ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return mask


def gen_masks(grid: int, count: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x4D41534B])
    return np.stack([blob_mask(grid, rng).ravel() for _ in range(count)]).astype(np.float64)


def render(masks: np.ndarray, contrast: float, noise: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x52454E44])
    background = rng.standard_normal(masks.shape)
    return background + contrast * masks + noise * rng.standard_normal(masks.shape)


def gen_domain(spec: DomainSpec, domain: int = 0) -> Dataset:
    """Generate one domain. ``mask_seed`` (default: ``seed``) fixes the labels."""
    mask_seed = spec.seed if spec.mask_seed is None else spec.mask_seed
    labels = gen_masks(spec.grid, spec.count, mask_seed)
    inputs = render(labels, spec.contrast, spec.noise, spec.seed)
    return Dataset(inputs, labels, domain)


def gen_paired(specs: list[DomainSpec], mask_seed: int) -> list[Dataset]:
    """Domains sharing one set of masks, each rendered with its own seed."""
    return [gen_domain(DomainSpec(s.grid, s.contrast, s.noise, s.count, s.seed, mask_seed), k)
            for k, s in enumerate(specs)]


def downsample(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    n = int(round(fraction * len(dataset)))
    if n < 1:
        raise ConfigError("down-sampling leaves no samples")
    if n == len(dataset):
        return dataset
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(len(dataset), size=n, replace=False))
    return Dataset(dataset.inputs[rows], dataset.labels[rows], dataset.domain)


def batcher(dataset: Dataset, batch_size: int, seed) -> Iterator[DomainBatch]:
    """Endless stream of batches; each epoch is a fresh permutation.

    Epoch ``e`` is shuffled with ``default_rng([*seed, e])``, so streams are
    reproducible. A trailing partial batch is dropped.
    """
    n = len(dataset)
    if not 1 <= batch_size <= n:
        raise ConfigError(f"batch size {batch_size} not in [1, {n}]")
    base = list(np.atleast_1d(seed).tolist())
    epoch = 0
    while True:
        order = np.random.default_rng([*base, epoch]).permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            rows = order[start:start + batch_size]
            yield DomainBatch(dataset.inputs[rows], dataset.labels[rows], dataset.domain)
        epoch += 1


def save_dataset(path: str | Path, dataset: Dataset) -> None:
    """16-byte header, three uint64 (samples, features, domain), inputs then labels as float64."""
    n, d = dataset.inputs.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, 2 * n * d))
        fh.write(_DIMS.pack(n, d, dataset.domain))
        fh.write(np.ascontiguousarray(dataset.inputs, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.labels, dtype="<f8").tobytes())


def load_dataset(path: str | Path) -> Dataset:
    data = Path(path).read_bytes()
    magic, version, length = _HEADER.unpack_from(data)
    if magic != DATASET_MAGIC or version != DATASET_VERSION:
        raise ValueError(f"{path}: not a dataset file")
    n, d, domain = _DIMS.unpack_from(data, _HEADER.size)
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size + _DIMS.size)
    if body.size != length or length != 2 * n * d:
        raise ValueError(f"{path}: truncated payload")
    body = body.astype(np.float64)
    return Dataset(body[:n * d].reshape(n, d), body[n * d:].reshape(n, d), int(domain))
