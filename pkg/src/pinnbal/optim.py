"""Adam with bias correction, usable on any flat parameter vector."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError


@dataclass
class AdamState:
    size: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)
    step: int = 0

    def __post_init__(self):
        self.m = np.zeros(self.size)
        self.v = np.zeros(self.size)


def adam_step(state: AdamState, params, grad, lr: float, step_index=None) -> np.ndarray:
    """Return updated parameters; ``state`` is advanced in place.

    A non-finite gradient aborts the step before any state is touched.
    """
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != (state.size,) or grad.shape != params.shape:
        raise ConfigurationError(
            f"shape mismatch: state {state.size}, params {params.shape}, grad {grad.shape}")
    if lr <= 0:
        raise ConfigurationError("learning rate must be positive")
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient", step=step_index)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
