"""Adam with bias correction over a named parameter dict."""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from mdpulse.autodiff.tensor import Tensor, check_finite
from mdpulse.errors import InvalidRange, ShapeMismatch

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidRange(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidRange(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")


def adam_step(
    params: Mapping[str, Tensor],
    grads: Optional[Mapping[str, np.ndarray]],
    state: AdamState,
) -> AdamState:
    """
    One bias-corrected Adam update, in place on each parameter's data.

    Args:
        params: Parameters by name
        grads: Gradients by name; None reads each parameter's `.grad`.
            A missing gradient counts as zero.
        state: Optimizer state, updated in place and returned
    """
    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for name, param in params.items():
        grad = param.grad if grads is None else grads.get(name)
        if grad is None:
            grad = np.zeros_like(param.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != param.shape:
            raise ShapeMismatch(f"gradient for {name} is {grad.shape}, parameter is {param.shape}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        elif m.shape != param.shape:
            raise ShapeMismatch(f"moment buffers for {name} are {m.shape}, parameter is {param.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v
        param.data -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        check_finite(param.data, f"Adam update of {name}")
    return state


class Adam:
    """Optimizer object holding parameters and their AdamState."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        adam_step(self.params, None, self.state)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
