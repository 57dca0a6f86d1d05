"""Multi-domain learning with inner-loop MAP estimation of loss weights."""

__version__ = "0.1.0"

from .autodiff import ModelSpec, forward, init_params, loss_and_grad, sgd_step  # noqa: E402
from .data import Dataset, DomainBatch, DomainSpec, gen_domain, gen_paired  # noqa: E402
from .estimator import DirichletState, LambdaState, UpdateRule, Weighting  # noqa: E402
from .losses import LossFn  # noqa: E402
from .trainer import TrainConfig, train  # noqa: E402

__all__ = [
    "Dataset", "DirichletState", "DomainBatch", "DomainSpec", "LambdaState", "LossFn",
    "ModelSpec", "TrainConfig", "UpdateRule", "Weighting", "forward", "gen_domain",
    "gen_paired", "init_params", "loss_and_grad", "sgd_step", "train",
]
