"""Whole-clip inference: run every window in eval mode and stitch the outputs."""

from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from mdpulse.models.network import Model, forward
from mdpulse.optics.render import VideoClip
from mdpulse.preprocess.frames import make_windows, stack_examples, stitch_windows


@dataclass(eq=False)
class ClipPrediction:
    """
    Clip-level waveforms on the FD time axis (length n_frames - 1; index t
    pairs frames t and t+1). `truth` always holds both targets.
    """

    fs: float
    predicted: Dict[str, np.ndarray]
    truth: Dict[str, np.ndarray]
    starts: List[int]


def _stitch(target, values, starts, length):
    if target == "sd":
        # Leave each window's zero pad out of the average.
        return stitch_windows([v[1:] for v in values], [s + 1 for s in starts], length)
    return stitch_windows(values, starts, length)


def predict_clip(
    model: Model,
    clip: VideoClip,
    stride: int = None,
    epsilon: float = 1e-8,
    standardize_frames: bool = True,
    standardize_targets: bool = True,
    batch_size: int = 16,
) -> ClipPrediction:
    """
    Args:
        model: Trained model; windows use its window_T
        clip: Preprocessed clip at the model's input size
        stride: Window stride (default: half a window)
        batch_size: Windows per forward pass
    """
    T = model.window_T
    stride = stride or max(1, T // 2)
    windows = make_windows(clip, T, stride, epsilon, standardize_frames, standardize_targets)
    starts = [w.start for w in windows]
    length = clip.n_frames - 1

    outputs: Dict[str, List[np.ndarray]] = {t: [] for t in model.config.targets}
    for i in range(0, len(windows), batch_size):
        preds = forward(model, stack_examples(windows[i : i + batch_size]), mode="eval")
        for target, tensor in preds.items():
            outputs[target].extend(tensor.data)

    predicted = {t: _stitch(t, v, starts, length) for t, v in outputs.items()}
    truth = {
        "fd": _stitch("fd", [w.fd_target for w in windows], starts, length),
        "sd": _stitch("sd", [w.sd_target for w in windows], starts, length),
    }
    return ClipPrediction(clip.fs, predicted, truth, starts)
