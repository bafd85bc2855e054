"""Training hyperparameters."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError


@dataclass
class HyperParams:
    # ranking objective
    delta: float = 0.3  # margin between neighbouring variants
    tau: float = 64.0  # sort-loss scale
    alpha: float = 1.0  # generation strength
    n_generated: int = 5  # variants per family
    gamma: float = 0.05  # generation margin on latent cosine
    lambda_mix: float = 0.1  # weight of the ranking loss
    phi: float = 0.1  # anchor margin
    beta: float = 32.0  # anchor-loss scale; not given by the method, PA convention
    stop_grad_generation: bool = False
    # proxy-anchor baseline
    margin_pa: float = 0.1
    scale_pa: float = 32.0
    # optimizer
    lr: float = 1e-4
    proxy_lr_scale: float = 100.0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 1.0  # per-epoch multiplicative decay; 1.0 disables it
    # schedule
    epochs: int = 40
    classes_per_batch: int = 10
    samples_per_class: int = 6

    @property
    def batch_size(self) -> int:
        return self.classes_per_batch * self.samples_per_class

    def validate(self) -> "HyperParams":
        checks = [
            (self.tau > 0, "tau must be > 0"),
            (self.beta > 0, "beta must be > 0"),
            (self.scale_pa > 0, "scale_pa must be > 0"),
            (int(self.n_generated) == self.n_generated and self.n_generated >= 1, "n_generated must be an integer >= 1"),
            (self.lambda_mix >= 0, "lambda_mix must be >= 0"),
            (self.delta >= 0, "delta must be >= 0"),
            (self.alpha >= 0, "alpha must be >= 0"),
            (self.lr >= 0, "lr must be >= 0"),
            (self.weight_decay >= 0, "weight_decay must be >= 0"),
            (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "Adam betas must lie in [0, 1)"),
            (self.eps > 0, "eps must be > 0"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.classes_per_batch >= 1, "classes_per_batch must be >= 1"),
            (self.samples_per_class >= 2, "samples_per_class must be >= 2"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        self.n_generated = int(self.n_generated)
        return self

    def replace(self, **changes) -> "HyperParams":
        return dataclasses.replace(self, **changes).validate()
