import numpy as np
import pytest

from metamdl.autodiff import ModelSpec, init_params, loss_and_grad
from metamdl.data import DomainSpec, batcher, gen_paired
from metamdl.losses import LossFn


def weighted_sgd_oracle(spec, datasets, lam, eta, steps, seed, batch_size, loss=LossFn()):
    """Plain two-domain weighted SGD with a constant weight; mirrors only the trainer's seeding contract."""
    theta = init_params(spec, seed)
    streams = [batcher(ds, batch_size, (seed, 1, k)) for k, ds in enumerate(datasets)]
    for _ in range(steps):
        ba, bb = next(streams[0]), next(streams[1])
        _, ga = loss_and_grad(spec, theta, ba.inputs, ba.labels, loss)
        _, gb = loss_and_grad(spec, theta, bb.inputs, bb.labels, loss)
        theta = theta - eta * (lam * ga + (1.0 - lam) * gb)
    return theta


class Quadratic:
    """Test double: L(theta) = 0.5 * |theta|^2 regardless of the batch."""

    def value(self, params, batch):
        return 0.5 * float(params @ params)

    def value_and_grad(self, params, batch):
        return self.value(params, batch), params.copy()


class Constant:
    def __init__(self, c):
        self.c = c

    def value(self, params, batch):
        return self.c

    def value_and_grad(self, params, batch):
        return self.c, np.zeros_like(params)


@pytest.fixture
def small_domains():
    specs = [DomainSpec(grid=6, contrast=3.0, noise=0.3, count=24, seed=11),
             DomainSpec(grid=6, contrast=0.6, noise=0.8, count=24, seed=12)]
    return gen_paired(specs, mask_seed=5)


@pytest.fixture
def small_spec():
    return ModelSpec(36, 36, (6,), "tanh")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
