"""Adam optimiser used for field parameters.

Plain Adam with bias correction; the epsilon sits outside the square root
(update = -lr * m_hat / (sqrt(v_hat) + eps)).  State lives next to the
parameter array it belongs to and is stepped in place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def like(cls, params: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Apply one Adam update to ``params`` in place."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise InputError("adam_step: parameter, gradient and state shapes must match")
    # lr = 0 is legal: it makes train() a fixed point, useful for dry runs
    if not (lr >= 0 and 0 <= beta1 < 1 and 0 <= beta2 < 1 and eps > 0):
        raise InputError("adam_step: hyper-parameters out of range")
    state.step += 1
    state.m += (1.0 - beta1) * (grads - state.m)
    state.v += (1.0 - beta2) * (grads * grads - state.v)
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    params -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(params.dtype)
