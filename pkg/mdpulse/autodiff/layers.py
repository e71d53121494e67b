"""
Differentiable layers built on Tensor: same-padded 3D convolution, spatial
pooling, inverted dropout, gated recurrent units and regression losses.

Frame tensors are channels-last, [..., T, H, W, C]; any leading dims are
treated as a batch.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np

from mdpulse.autodiff.tensor import Tensor, result_tensor, as_tensor, concat, linear, sigmoid, stack, tanh
from mdpulse.errors import InvalidConfig, InvalidRange, NonDivisibleDims, ShapeMismatch


def conv3d(x: Tensor, kernels: Tensor, bias: Tensor = None) -> Tensor:
    """
    Zero-padded "same" 3D cross-correlation.

    Args:
        x: [..., T, H, W, Cin]
        kernels: [kt, kh, kw, Cin, Cout], odd kernel sizes
        bias: [Cout] or None

    Returns:
        [..., T, H, W, Cout]
    """
    if x.ndim < 4:
        raise ShapeMismatch(f"conv3d input must be [..., T, H, W, C], got {x.shape}")
    if kernels.ndim != 5:
        raise ShapeMismatch(f"conv3d kernels must be 5-D, got {kernels.shape}")
    kt, kh, kw, cin, cout = kernels.shape
    if kt % 2 == 0 or kh % 2 == 0 or kw % 2 == 0:
        raise ShapeMismatch(f"conv3d kernel sizes must be odd, got {(kt, kh, kw)}")
    if x.shape[-1] != cin:
        raise ShapeMismatch(f"input has {x.shape[-1]} channels, kernels expect {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeMismatch(f"bias {bias.shape} does not match {cout} output channels")

    T, H, W = x.shape[-4:-1]
    out_shape = x.shape[:-1] + (cout,)
    pt, ph, pw = kt // 2, kh // 2, kw // 2
    xs = x.data.reshape(-1, T, H, W, cin)
    xp = np.pad(xs, ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)))
    k = kernels.data
    offsets = [(a, b, c) for a in range(kt) for b in range(kh) for c in range(kw)]

    out = np.zeros(xs.shape[:-1] + (cout,))
    for a, b, c in offsets:
        out += np.tensordot(xp[:, a : a + T, b : b + H, c : c + W, :], k[a, b, c], axes=([4], [0]))
    if bias is not None:
        out += bias.data
    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def _backward(g):
        g = g.reshape(out.shape)
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gk = np.zeros_like(k) if kernels.requires_grad else None
        for a, b, c in offsets:
            if gk is not None:
                patch = xp[:, a : a + T, b : b + H, c : c + W, :]
                gk[a, b, c] = np.tensordot(patch, g, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
            if gxp is not None:
                gxp[:, a : a + T, b : b + H, c : c + W, :] += np.tensordot(
                    g, k[a, b, c], axes=([4], [1])
                )
        if gxp is not None:
            x._accumulate(gxp[:, pt : pt + T, ph : ph + H, pw : pw + W, :].reshape(x.shape))
        if gk is not None:
            kernels._accumulate(gk)
        if bias is not None:
            bias._accumulate(g.reshape(-1, cout).sum(axis=0))

    return result_tensor(out.reshape(out_shape), parents, _backward, "conv3d")


def avg_pool_spatial(x: Tensor, factor: int) -> Tensor:
    """Mean over non-overlapping factor x factor spatial blocks."""
    if x.ndim < 4:
        raise ShapeMismatch(f"pooling input must be [..., T, H, W, C], got {x.shape}")
    H, W, C = x.shape[-3:]
    if factor < 1 or H % factor or W % factor:
        raise NonDivisibleDims(f"{H}x{W} is not divisible by pooling factor {factor}")
    lead = x.shape[:-3]
    blocks = x.data.reshape(lead + (H // factor, factor, W // factor, factor, C))
    data = blocks.mean(axis=(-4, -2))

    def _backward(g):
        spread = np.broadcast_to(
            g[..., :, None, :, None, :] / (factor * factor), blocks.shape
        )
        x._accumulate(spread.reshape(x.shape))

    return result_tensor(data, (x,), _backward, "avg_pool_spatial")


def global_pool_spatial(x: Tensor) -> Tensor:
    """[..., T, H, W, C] -> [..., T, C]."""
    if x.ndim < 4:
        raise ShapeMismatch(f"pooling input must be [..., T, H, W, C], got {x.shape}")
    H, W = x.shape[-3:-1]
    data = x.data.mean(axis=(-3, -2))

    def _backward(g):
        x._accumulate(np.broadcast_to(g[..., None, None, :] / (H * W), x.shape).copy())

    return result_tensor(data, (x,), _backward, "global_pool_spatial")


def dropout(
    x: Tensor,
    rate: float = 0.25,
    mode: str = "train",
    seed: Union[int, np.random.Generator, None] = None,
) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate); eval mode is identity."""
    if not 0 <= rate < 1:
        raise InvalidRange(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise InvalidConfig(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0:
        return x
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


@dataclass
class GruParams:
    """
    W: [F, 3U], U: [U, 3U], b: [3U]; column blocks are ordered
    update gate, reset gate, candidate.
    """

    W: Tensor
    U: Tensor
    b: Tensor

    @property
    def units(self) -> int:
        return int(self.U.shape[0])

    def validate(self, n_features: int) -> None:
        units = self.units
        if self.U.shape != (units, 3 * units):
            raise ShapeMismatch(f"recurrent weights must be [U, 3U], got {self.U.shape}")
        if self.W.shape != (n_features, 3 * units):
            raise ShapeMismatch(f"input weights must be [{n_features}, {3 * units}], got {self.W.shape}")
        if self.b.shape != (3 * units,):
            raise ShapeMismatch(f"bias must be [{3 * units}], got {self.b.shape}")


def gru_layer(
    x: Tensor,
    params: GruParams,
    direction: str = "forward",
    activation: str = "tanh",
) -> Tensor:
    """
    Gated recurrent layer over [T, F] or [N, T, F], zero initial state.

        z = sigmoid(x W_z + h U_z + b_z)
        r = sigmoid(x W_r + h U_r + b_r)
        n = act(x W_n + (r * h) U_n + b_n)
        h = (1 - z) * n + z * h

    A "backward" layer runs from the last step to the first; its outputs
    are stored at their own time index, so both directions line up.
    """
    if direction not in ("forward", "backward"):
        raise InvalidConfig(f"direction must be 'forward' or 'backward', got {direction!r}")
    if activation not in ("tanh", "identity"):
        raise InvalidConfig(f"activation must be 'tanh' or 'identity', got {activation!r}")
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3:
        raise ShapeMismatch(f"gru_layer input must be [T, F] or [N, T, F], got {x.shape}")
    n_batch, n_steps, n_features = x.shape
    if n_steps < 1:
        raise ShapeMismatch("gru_layer needs at least one time step")
    params.validate(n_features)
    units = params.units

    projected = linear(x, params.W, params.b)
    u_gates = params.U[:, : 2 * units]
    u_cand = params.U[:, 2 * units :]
    h = Tensor(np.zeros((n_batch, units)))
    steps = range(n_steps) if direction == "forward" else reversed(range(n_steps))
    outputs = [None] * n_steps
    for t in steps:
        xt = projected[:, t, :]
        gates = sigmoid(xt[:, : 2 * units] + h @ u_gates)
        z = gates[:, :units]
        r = gates[:, units:]
        cand = xt[:, 2 * units :] + (r * h) @ u_cand
        if activation == "tanh":
            cand = tanh(cand)
        h = (1.0 - z) * cand + z * h
        outputs[t] = h
    out = stack(outputs, axis=1)
    return out.reshape(n_steps, units) if squeeze else out


def bidirectional_gru(
    x: Tensor, forward_params: GruParams, backward_params: GruParams, activation: str = "tanh"
) -> Tensor:
    """Forward and time-aligned backward outputs concatenated to width 2U."""
    return concat(
        [
            gru_layer(x, forward_params, "forward", activation),
            gru_layer(x, backward_params, "backward", activation),
        ],
        axis=-1,
    )


def _check_pair(pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} and target {target.shape} differ")


def mse(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    _check_pair(pred, target)
    diff = pred.data - target.data
    n = diff.size

    def _backward(g):
        pred._accumulate(g * 2.0 * diff / n)
        target._accumulate(-g * 2.0 * diff / n)

    return result_tensor(np.asarray(np.mean(diff * diff)), (pred, target), _backward, "mse")


def mae(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    _check_pair(pred, target)
    diff = pred.data - target.data
    n = diff.size

    def _backward(g):
        pred._accumulate(g * np.sign(diff) / n)
        target._accumulate(-g * np.sign(diff) / n)

    return result_tensor(np.asarray(np.mean(np.abs(diff))), (pred, target), _backward, "mae")


LOSSES = {"mse": mse, "mae": mae}
