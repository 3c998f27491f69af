"""Adam wrapper with explicit hyperparameters.

Thin shim over torch.optim.Adam so every training loop states its moment
coefficients instead of inheriting silent defaults (the adversarial loops run
with much lower first-moment decay than the reconstruction loops).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import torch

from ..errors import ConfigError


@dataclass(frozen=True)
class AdamConfig:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigError(f"adam lr must be non-negative, got {self.lr}")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"adam {name} must lie in [0, 1), got {b}")
        if not self.eps > 0:
            raise ConfigError(f"adam eps must be positive, got {self.eps}")


def make_adam(params: Iterable[torch.nn.Parameter], cfg: AdamConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
