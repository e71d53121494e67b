"""
Derivative-branch networks for mdpulse

Features:
- One convolutional branch per enabled input stream (FD and/or SD frames)
- Optional attention stack on raw frames; its per-step sigmoid mask is
  shared by every branch
- One recurrent head per enabled target (FD and/or SD waveform)
- Weighted multi-target MSE/MAE loss
- Checkpointing with the ModelConfig recorded in the header

Branch (per input stream):
    conv3x3x3 -> tanh -> conv3x3x3 -> tanh -> (x attention mask)
    -> 2x2 avg pool -> dropout
    -> conv3x3x3 -> tanh -> conv3x3x3 -> tanh
    -> global spatial pool -> dropout                          [N, T, filters[1]]

Head (per target), over the branch features concatenated per step:
    bidirectional GRU (tanh, gru_units per direction) -> GRU (identity, 1 unit)
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from mdpulse.autodiff.checkpoint import load_checkpoint, save_checkpoint
from mdpulse.autodiff.layers import (
    LOSSES,
    GruParams,
    avg_pool_spatial,
    bidirectional_gru,
    conv3d,
    dropout,
    global_pool_spatial,
    gru_layer,
)
from mdpulse.autodiff.tensor import Tensor, concat, sigmoid, tanh
from mdpulse.errors import IoError, MissingTarget, NonDivisibleDims, ShapeMismatch
from mdpulse.models.config import ModelConfig
from mdpulse.preprocess.frames import TrainingExample, WindowBatch

logger = logging.getLogger(__name__)

MODEL_FORMAT = "mdpulse-model/1"
KERNEL = 3


class Model:
    """
    Parameters by name plus the layer wiring described in the module docstring.

    Parameter names:
        branch_<fd|sd>.conv<1-4>.kernel / .bias
        attention.conv<1-2>.kernel / .bias, attention.mask.kernel / .bias
        head_<fd|sd>.gru_fwd / gru_bwd / gru_out .W / .U / .b
    """

    def __init__(self, config: ModelConfig, input_hw: int, window_T: int, params: Dict[str, Tensor]):
        self.config = config
        self.input_hw = int(input_hw)
        self.window_T = int(window_T)
        self.params = params

    def parameters(self) -> Dict[str, Tensor]:
        return {name: self.params[name] for name in sorted(self.params)}

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            raise ShapeMismatch("parameter names do not match the model")
        for name, value in state.items():
            if value.shape != self.params[name].shape:
                raise ShapeMismatch(f"{name}: {value.shape} != {self.params[name].shape}")
            self.params[name].data = np.array(value, dtype=np.float64)

    def _conv(self, prefix: str, x: Tensor) -> Tensor:
        return conv3d(x, self.params[f"{prefix}.kernel"], self.params[f"{prefix}.bias"])

    def _gru(self, prefix: str) -> GruParams:
        return GruParams(self.params[f"{prefix}.W"], self.params[f"{prefix}.U"], self.params[f"{prefix}.b"])

    def attention_mask(self, raw: Tensor) -> Tensor:
        """[N, T, H, W, 3] raw frames -> [N, T, H, W, 1] mask in (0, 1)."""
        h = tanh(self._conv("attention.conv1", raw))
        h = tanh(self._conv("attention.conv2", h))
        return sigmoid(self._conv("attention.mask", h))

    def gated_features(self, branch: str, frames: Tensor, mask: Optional[Tensor]) -> Tensor:
        """First conv pair of a branch, multiplied by the attention mask if given."""
        h = tanh(self._conv(f"branch_{branch}.conv1", frames))
        h = tanh(self._conv(f"branch_{branch}.conv2", h))
        return h if mask is None else h * mask

    def branch_features(
        self,
        branch: str,
        frames: Tensor,
        mask: Optional[Tensor],
        mode: str,
        rng: np.random.Generator,
    ) -> Tensor:
        rate = self.config.dropout_rate
        h = self.gated_features(branch, frames, mask)
        h = dropout(avg_pool_spatial(h, 2), rate, mode, rng)
        h = tanh(self._conv(f"branch_{branch}.conv3", h))
        h = tanh(self._conv(f"branch_{branch}.conv4", h))
        return dropout(global_pool_spatial(h), rate, mode, rng)

    def head(self, target: str, features: Tensor) -> Tensor:
        """[N, T, F] -> [N, T]."""
        prefix = f"head_{target}"
        h = bidirectional_gru(features, self._gru(f"{prefix}.gru_fwd"), self._gru(f"{prefix}.gru_bwd"))
        out = gru_layer(h, self._gru(f"{prefix}.gru_out"), "forward", "identity")
        return out.reshape(*out.shape[:-1])


def _uniform(rng: np.random.Generator, shape, fan_in: int, name: str) -> Tensor:
    limit = np.sqrt(3.0 / fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True, name=name)


def _zeros(shape, name: str) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def build_model(cfg: ModelConfig, input_hw: int, T: int, seed: int = 0) -> Model:
    """
    Build and initialize a model.

    Weights are drawn from U(-sqrt(3/fan_in), sqrt(3/fan_in)) in a fixed
    order from default_rng(seed); biases start at zero.
    """
    cfg.validate()
    if input_hw % 2:
        raise NonDivisibleDims(f"input size {input_hw} must be even for 2x2 pooling")
    if T < 2:
        raise ShapeMismatch(f"window length must be at least 2, got {T}")
    rng = np.random.default_rng(seed)
    f1, f2 = cfg.filters
    params: Dict[str, Tensor] = {}

    def conv(prefix, cin, cout, size=KERNEL):
        shape = (size, size, size, cin, cout)
        params[f"{prefix}.kernel"] = _uniform(rng, shape, size**3 * cin, f"{prefix}.kernel")
        params[f"{prefix}.bias"] = _zeros((cout,), f"{prefix}.bias")

    def gru(prefix, n_in, units):
        params[f"{prefix}.W"] = _uniform(rng, (n_in, 3 * units), n_in, f"{prefix}.W")
        params[f"{prefix}.U"] = _uniform(rng, (units, 3 * units), units, f"{prefix}.U")
        params[f"{prefix}.b"] = _zeros((3 * units,), f"{prefix}.b")

    for branch in cfg.inputs:
        conv(f"branch_{branch}.conv1", 3, f1)
        conv(f"branch_{branch}.conv2", f1, f1)
        conv(f"branch_{branch}.conv3", f1, f2)
        conv(f"branch_{branch}.conv4", f2, f2)
    if cfg.arch == "attention":
        conv("attention.conv1", 3, f1)
        conv("attention.conv2", f1, f1)
        conv("attention.mask", f1, 1, size=1)
    n_features = f2 * len(cfg.inputs)
    for target in cfg.targets:
        gru(f"head_{target}.gru_fwd", n_features, cfg.gru_units)
        gru(f"head_{target}.gru_bwd", n_features, cfg.gru_units)
        gru(f"head_{target}.gru_out", 2 * cfg.gru_units, 1)

    logger.debug(
        "Built %s model: inputs=%s targets=%s, %d parameter tensors",
        cfg.arch,
        cfg.inputs,
        cfg.targets,
        len(params),
    )
    return Model(cfg, input_hw, T, params)


def _frames_for(batch: WindowBatch, branch: str) -> np.ndarray:
    return batch.fd_frames if branch == "fd" else batch.sd_frames


def forward(
    model: Model,
    example: Union[TrainingExample, WindowBatch],
    mode: str = "eval",
    seed: int = 0,
) -> Dict[str, Tensor]:
    """
    Predict every enabled target.

    Returns:
        {"fd": Tensor, "sd": Tensor} for the enabled targets; each is [T]
        for a single TrainingExample and [N, T] for a WindowBatch
    """
    single = isinstance(example, TrainingExample)
    batch = example.as_batch() if single else example
    expected = (model.window_T, model.input_hw, model.input_hw, 3)
    if tuple(batch.fd_frames.shape[1:]) != expected:
        raise ShapeMismatch(f"model expects windows of {expected}, got {batch.fd_frames.shape[1:]}")

    rng = np.random.default_rng(seed)
    mask = None
    if model.config.arch == "attention":
        mask = model.attention_mask(Tensor(batch.raw_frames))
    features = concat(
        [
            model.branch_features(b, Tensor(_frames_for(batch, b)), mask, mode, rng)
            for b in model.config.inputs
        ],
        axis=-1,
    )
    predictions = {}
    for target in model.config.targets:
        out = model.head(target, features)
        predictions[target] = out.reshape(model.window_T) if single else out
    return predictions


def compute_loss(predictions: Dict[str, Tensor], example, cfg: ModelConfig) -> Tensor:
    """Sum over enabled targets of weight x loss_kind(prediction, target)."""
    loss_fn = LOSSES[cfg.loss_kind]
    total = None
    for target in cfg.targets:
        if target not in predictions:
            raise MissingTarget(f"no prediction for enabled target {target!r}")
        truth = example.fd_target if target == "fd" else example.sd_target
        term = loss_fn(predictions[target], np.asarray(truth, dtype=np.float64)) * cfg.weight(target)
        total = term if total is None else total + term
    return total


def model_header(model: Model) -> dict:
    return {
        "format": MODEL_FORMAT,
        "config": model.config.to_dict(),
        "input_hw": model.input_hw,
        "window_T": model.window_T,
    }


def save_model(path, model: Model, state: Dict[str, np.ndarray] = None) -> Path:
    """Write the model (or the given parameter snapshot of it) to a checkpoint."""
    return save_checkpoint(path, state if state is not None else model.state_dict(), model_header(model))


def load_model(path) -> Model:
    tensors, header = load_checkpoint(path)
    if header.get("format") != MODEL_FORMAT:
        raise IoError(path, f"expected format {MODEL_FORMAT}, got {header.get('format')!r}")
    cfg = ModelConfig.from_dict(header["config"])
    model = build_model(cfg, header["input_hw"], header["window_T"], seed=0)
    model.load_state_dict(tensors)
    return model
