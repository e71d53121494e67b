"""Central finite-difference gradient checks."""

from typing import Callable, Optional, Sequence

import numpy as np

from mdpulse.autodiff.tensor import Tensor


def numeric_grad(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    step: float = 1e-5,
    indices: Optional[Sequence[tuple]] = None,
) -> np.ndarray:
    """
    d fn() / d tensor by central differences, for a scalar-valued fn that
    reads tensor.data. Only `indices` are checked when given; other entries
    stay 0.
    """
    grad = np.zeros_like(tensor.data)
    positions = indices if indices is not None else list(np.ndindex(tensor.shape))
    for idx in positions:
        original = tensor.data[idx]
        tensor.data[idx] = original + step
        upper = float(fn().data)
        tensor.data[idx] = original - step
        lower = float(fn().data)
        tensor.data[idx] = original
        grad[idx] = (upper - lower) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the largest gradient magnitude involved."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)), 1e-8)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def gradcheck(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    step: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Worst relative error between backward() and central differences over
    all `tensors`. With max_entries, that many entries per tensor are
    sampled.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else np.array(t.grad) for t in tensors]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(tensors, analytic):
        indices = list(np.ndindex(t.shape))
        if max_entries is not None and len(indices) > max_entries:
            picks = rng.choice(len(indices), size=max_entries, replace=False)
            indices = [indices[i] for i in sorted(picks)]
        n = numeric_grad(fn, t, step, indices)
        mask = np.zeros(t.shape, dtype=bool)
        for idx in indices:
            mask[idx] = True
        worst = max(worst, relative_error(a[mask], n[mask]))
    return worst
