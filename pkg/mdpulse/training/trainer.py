"""
Training Loop for mdpulse

Deterministic minibatch training of a Model on sliding windows.

Features:
- Per-epoch shuffle from a seeded generator; last partial batch kept
- Adam updates (bias-corrected) after every batch
- Dropout masks derived from (seed, epoch, batch) so reruns are bit-identical
- Window-weighted mean training loss per epoch
- Best (lowest epoch loss) and final parameter snapshots, optional checkpoints
"""

import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from mdpulse.atomic import atomic_write_csv
from mdpulse.autodiff.optim import AdamState, adam_step
from mdpulse.errors import EmptyDataset, InvalidConfig, NonFiniteLoss, NonFiniteValue
from mdpulse.models.network import Model, compute_loss, forward, save_model
from mdpulse.optics.render import VideoClip
from mdpulse.preprocess.frames import WindowDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """
    Training regimen. loss_kind / target_weights, when set, replace the
    model config's values for this run.
    """

    epochs: int = 8
    batch_size: int = 16
    lr: float = 0.001
    window_T: int = 30
    window_stride: int = 15
    seed: int = 0
    standardize_targets: bool = True
    standardize_frames: bool = True
    epsilon: float = 1e-8
    loss_kind: Optional[str] = None
    target_weights: Optional[Tuple[float, float]] = None
    progress: bool = False
    checkpoint_dir: Optional[str] = None

    def validate(self) -> None:
        if self.epochs < 1:
            raise InvalidConfig(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be at least 1, got {self.batch_size}")
        if not self.lr > 0:
            raise InvalidConfig(f"lr must be positive, got {self.lr}")
        if self.window_stride < 1 or self.window_T < 2:
            raise InvalidConfig("window_T must be >= 2 and window_stride >= 1")


@dataclass(eq=False)
class TrainResult:
    model: Model
    loss_history: List[float]
    best_epoch: int
    best_loss: float
    steps: int
    best_state: Dict[str, np.ndarray] = field(repr=False)
    final_state: Dict[str, np.ndarray] = field(repr=False)
    checkpoints: Dict[str, Path] = field(default_factory=dict)


def _dropout_seed(seed: int, epoch: int, batch_index: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, batch_index]).generate_state(1)[0])


def train(
    model: Model,
    dataset: Union[WindowDataset, Sequence[VideoClip]],
    cfg: TrainConfig,
) -> TrainResult:
    """
    Train `model` in place.

    Args:
        model: Freshly built or partially trained model
        dataset: A WindowDataset, or clips to window with cfg's settings
        cfg: Training configuration

    Returns:
        TrainResult with the per-epoch loss history and parameter snapshots
    """
    cfg.validate()
    if not isinstance(dataset, WindowDataset):
        dataset = WindowDataset(
            dataset,
            cfg.window_T,
            cfg.window_stride,
            cfg.epsilon,
            cfg.standardize_frames,
            cfg.standardize_targets,
        )
    if len(dataset) == 0:
        raise EmptyDataset("training set yields no windows")

    overrides = {}
    if cfg.loss_kind is not None:
        overrides["loss_kind"] = cfg.loss_kind
    if cfg.target_weights is not None:
        overrides["target_weights"] = tuple(cfg.target_weights)
    if overrides:
        model.config = replace(model.config, **overrides)
        model.config.validate()

    params = model.parameters()
    state = AdamState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    n = len(dataset)
    history: List[float] = []
    best_loss, best_epoch, best_state = np.inf, 0, model.state_dict()

    logger.info("Training on %d windows for %d epochs (batch %d)", n, cfg.epochs, cfg.batch_size)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        batches = [order[i : i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        total = 0.0
        bar = tqdm(
            batches, desc=f"epoch {epoch + 1}/{cfg.epochs}", leave=False, disable=not cfg.progress, file=sys.stdout
        )
        for batch_index, indices in enumerate(bar):
            batch = dataset.batch(indices)
            for p in params.values():
                p.grad = None
            try:
                predictions = forward(model, batch, "train", _dropout_seed(cfg.seed, epoch, batch_index))
                loss = compute_loss(predictions, batch, model.config)
                value = float(loss.data)
                loss.backward()
                adam_step(params, None, state)
            except NonFiniteValue as exc:
                raise NonFiniteLoss(batch_index, epoch, float("nan")) from exc
            total += value * len(indices)
            bar.set_postfix(loss=f"{value:.4f}")
            logger.debug("epoch %d batch %d loss %.6f", epoch + 1, batch_index, value)

        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise NonFiniteLoss(len(batches) - 1, epoch, epoch_loss)
        history.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss, best_epoch, best_state = epoch_loss, epoch + 1, model.state_dict()
        logger.info("Epoch %d/%d: mean loss %.6f", epoch + 1, cfg.epochs, epoch_loss)

    result = TrainResult(
        model=model,
        loss_history=history,
        best_epoch=best_epoch,
        best_loss=float(best_loss),
        steps=state.step_count,
        best_state=best_state,
        final_state=model.state_dict(),
    )
    if cfg.checkpoint_dir is not None:
        directory = Path(cfg.checkpoint_dir)
        result.checkpoints["final"] = save_model(directory / "final.ckpt", model, result.final_state)
        result.checkpoints["best"] = save_model(directory / "best.ckpt", model, result.best_state)
        write_loss_history(directory / "loss_history.csv", history)
    return result


def write_loss_history(path, history: Sequence[float]) -> Path:
    frame = pd.DataFrame({"epoch": np.arange(1, len(history) + 1), "mean_loss": np.asarray(history, dtype=np.float64)})
    return atomic_write_csv(path, frame)
