"""AdamW with decoupled weight decay, operating on named numpy arrays in place."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    lr_scales: dict[str, float] = field(default_factory=dict)  # per-parameter lr multiplier
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_hparams(cls, hp, proxy_key: str = "proxies") -> "OptimizerState":
        return cls(
            lr=hp.lr,
            weight_decay=hp.weight_decay,
            beta1=hp.beta1,
            beta2=hp.beta2,
            eps=hp.eps,
            lr_scales={proxy_key: hp.proxy_lr_scale},
        )


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState) -> OptimizerState:
    """One AdamW update, mutating ``params`` and ``state``.

    ``w <- w - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * w`` with the decay
    term using the pre-update weight. Parameters missing from ``grads`` are
    treated as having zero gradient.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, w in params.items():
        g = grads.get(name)
        g = np.zeros_like(w) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != w.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        m = state.m.setdefault(name, np.zeros_like(w))
        v = state.v.setdefault(name, np.zeros_like(w))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        lr = state.lr * state.lr_scales.get(name, 1.0)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        w -= lr * update + lr * state.weight_decay * w
    return state
