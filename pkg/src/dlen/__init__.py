"""DLEN: dual-branch low-light image enhancement on a minimal autodiff core.

The package is self-contained: its own reverse-mode tensor engine
(``dlen.tensor``), the light predictor / wavelet / attention modules, model
assembly and training (``dlen.model``), metrics, and a CLI (``dlen.cli``).
"""

from .model import DlenConfig, DlenModel, dlen_forward, init_params, mae_loss, train_step
from .tensor import Adam, Prng, Tensor, autocast64, no_grad

__all__ = [
    "Adam", "DlenConfig", "DlenModel", "Prng", "Tensor",
    "autocast64", "dlen_forward", "init_params", "mae_loss",
    "no_grad", "train_step",
]

__version__ = "0.1.0"
