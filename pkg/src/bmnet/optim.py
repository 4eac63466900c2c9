"""Adam optimizer with bias correction, updating parameters in place."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class _Slot:
    m: np.ndarray
    v: np.ndarray


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, cfg: AdamConfig) -> None:
    """One in-place Adam update; t is the 1-based step index."""
    m *= cfg.beta1
    m += (1 - cfg.beta1) * grad
    v *= cfg.beta2
    v += (1 - cfg.beta2) * grad * grad
    mhat = m / (1 - cfg.beta1**t)
    vhat = v / (1 - cfg.beta2**t)
    param -= cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)


@dataclass
class Adam:
    cfg: AdamConfig = field(default_factory=AdamConfig)
    t: int = 0
    slots: dict = field(default_factory=dict)

    def step(self, named_params: dict[str, np.ndarray], named_grads: dict[str, np.ndarray]) -> None:
        """Update every parameter; keys join layer path and parameter name.

        The time index advances once per call.  Parameters appearing for
        the first time get zeroed moment slots, so layers added mid-run
        (BM conversion) start fresh while existing slots persist.
        """
        self.t += 1
        for key in named_params:
            p = named_params[key]
            g = named_grads[key]
            slot = self.slots.get(key)
            if slot is None or slot.m.shape != p.shape:
                slot = _Slot(np.zeros_like(p), np.zeros_like(p))
                self.slots[key] = slot
            adam_step(p, g, slot.m, slot.v, self.t, self.cfg)
