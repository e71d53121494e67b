"""
Clip preprocessing for mdpulse

Turns rendered clips into model-ready windows.

Features:
- Center-crop + block-mean downsampling (e.g. 72x72 -> 36x36)
- Normalized difference frames (x(t+1) - x(t)) / (x(t+1) + x(t) + eps)
- Difference-of-difference frames
- Sliding windows with frame/target alignment, clip-level frame scaling
  and per-window target scaling
- Lazy WindowDataset batching and overlap-add stitching of window outputs

Alignment:
    A window starting at s consumes raw frames s..s+T. Index t of fd_frames
    and fd_target both come from the pair (s+t, s+t+1). The SD streams have
    T-1 real steps and are front-padded with one zero so that index t of
    sd_frames and sd_target is the difference between FD steps t-1 and t.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from mdpulse.errors import (
    ClipTooShort,
    ConstantInput,
    InvalidConfig,
    SequenceTooShort,
    ShapeMismatch,
    UpsampleRequested,
)
from mdpulse.optics.render import VideoClip
from mdpulse.signals.ppg import first_difference, second_difference, standardize


@dataclass(eq=False)
class WindowBatch:
    """Stacked windows: frames N x T x H x W x 3, targets N x T."""

    raw_frames: np.ndarray
    fd_frames: np.ndarray
    sd_frames: np.ndarray
    fd_target: np.ndarray
    sd_target: np.ndarray

    def __len__(self) -> int:
        return int(self.fd_target.shape[0])


@dataclass(eq=False)
class TrainingExample:
    raw_frames: np.ndarray
    fd_frames: np.ndarray
    sd_frames: np.ndarray
    fd_target: np.ndarray
    sd_target: np.ndarray
    start: int = 0
    clip_index: int = 0

    def __post_init__(self):
        shape = self.raw_frames.shape
        if self.fd_frames.shape != shape or self.sd_frames.shape != shape:
            raise ShapeMismatch("raw, FD and SD frame stacks must share T x H x W x 3")
        if self.fd_target.shape != (shape[0],) or self.sd_target.shape != (shape[0],):
            raise ShapeMismatch(f"targets must have length T={shape[0]}")
        if not (np.all(np.isfinite(self.fd_target)) and np.all(np.isfinite(self.sd_target))):
            raise ShapeMismatch("targets must be finite")

    @property
    def window_T(self) -> int:
        return int(self.raw_frames.shape[0])

    def as_batch(self) -> WindowBatch:
        return WindowBatch(
            self.raw_frames[None],
            self.fd_frames[None],
            self.sd_frames[None],
            self.fd_target[None],
            self.sd_target[None],
        )


def crop_downsample(clip: VideoClip, out_h: int, out_w: int) -> VideoClip:
    """Center-crop to a square, then block-mean down to out_h x out_w."""
    _, height, width, _ = clip.frames.shape
    if out_h > height or out_w > width:
        raise UpsampleRequested(f"cannot resize {height}x{width} up to {out_h}x{out_w}")
    if out_h < 1 or out_w < 1:
        raise InvalidConfig(f"output size must be positive, got {out_h}x{out_w}")
    side = min(height, width)
    bh, bw = side // out_h, side // out_w
    if bh == 0 or bw == 0:
        raise UpsampleRequested(f"square crop {side} is smaller than {out_h}x{out_w}")
    ch, cw = bh * out_h, bw * out_w
    top = (height - ch) // 2
    left = (width - cw) // 2
    crop = clip.frames[:, top : top + ch, left : left + cw, :]
    t, _, _, c = crop.shape
    blocks = crop.reshape(t, out_h, bh, out_w, bw, c).mean(axis=(2, 4))
    return VideoClip(blocks, clip.fs, clip.source_ppg, clip.saturated_fraction)


def _scale_frames(d: np.ndarray, standardize_frames: bool, clamp: float, std: Optional[float] = None) -> np.ndarray:
    if not standardize_frames:
        return d
    if std is None:
        std = d.std()
    if std < 1e-12:
        return d
    return np.clip(d / std, -clamp, clamp)


def _frames_of(clip_or_frames) -> np.ndarray:
    if isinstance(clip_or_frames, VideoClip):
        return clip_or_frames.frames
    return np.asarray(clip_or_frames, dtype=np.float64)


def normalized_diff_frames(
    clip: VideoClip,
    epsilon: float = 1e-8,
    standardize_frames: bool = True,
    clamp: float = 3.0,
) -> np.ndarray:
    """
    Per-pixel normalized frame differences, T-1 steps.

    When standardize_frames is set the result is divided by its clip-level
    standard deviation and clamped to [-clamp, clamp]; an all-zero result is
    returned unchanged.
    """
    x = _frames_of(clip)
    if x.shape[0] < 2:
        raise SequenceTooShort(f"need at least 2 frames, got {x.shape[0]}")
    if epsilon <= 0:
        raise InvalidConfig(f"epsilon must be positive, got {epsilon}")
    d = (x[1:] - x[:-1]) / (x[1:] + x[:-1] + epsilon)
    return _scale_frames(d, standardize_frames, clamp)


def diff_of_diff_frames(
    fd: np.ndarray, standardize_frames: bool = True, clamp: float = 3.0, std: Optional[float] = None
) -> np.ndarray:
    """Differences of consecutive FD frames; `std` overrides the scale computed from them."""
    fd = np.asarray(fd, dtype=np.float64)
    if fd.shape[0] < 2:
        raise SequenceTooShort(f"need at least 2 difference frames, got {fd.shape[0]}")
    return _scale_frames(fd[1:] - fd[:-1], standardize_frames, clamp, std)


def frame_scales(clip: VideoClip, epsilon: float = 1e-8) -> Tuple[float, float]:
    """Clip-level standard deviations of the unscaled FD frames and of their differences."""
    fd = normalized_diff_frames(clip, epsilon, standardize_frames=False)
    sd = fd[1:] - fd[:-1] if fd.shape[0] > 1 else np.zeros_like(fd)
    return float(fd.std()), float(sd.std())


def _scale_target(x: np.ndarray) -> np.ndarray:
    try:
        return standardize(x)
    except ConstantInput:
        return x - x.mean()


def window_starts(n_frames: int, T: int, stride: int) -> range:
    if T < 2:
        raise InvalidConfig(f"window length T must be at least 2, got {T}")
    if stride < 1:
        raise InvalidConfig(f"stride must be at least 1, got {stride}")
    if n_frames < T + 1:
        raise ClipTooShort(f"clip has {n_frames} frames, a window needs T+1={T + 1}")
    return range(0, n_frames - (T + 1) + 1, stride)


def make_window(
    clip: VideoClip,
    start: int,
    T: int,
    epsilon: float = 1e-8,
    standardize_frames: bool = True,
    standardize_targets: bool = True,
    clamp: float = 3.0,
    clip_index: int = 0,
    scales: Optional[Tuple[float, float]] = None,
) -> TrainingExample:
    """
    Cut one training window out of a clip.

    FD and SD frames are divided by the clip-level standard deviations in
    `scales` (computed with frame_scales when omitted) and clamped to
    [-clamp, clamp].
    """
    if start < 0 or start + T + 1 > clip.n_frames:
        raise ClipTooShort(f"window [{start}, {start + T + 1}) exceeds {clip.n_frames} frames")
    if standardize_frames and scales is None:
        scales = frame_scales(clip, epsilon)
    fd_std, sd_std = scales if scales is not None else (None, None)
    raw = clip.frames[start : start + T + 1]
    fd_raw = normalized_diff_frames(raw, epsilon, standardize_frames=False)
    fd = _scale_frames(fd_raw, standardize_frames, clamp, fd_std)
    sd = diff_of_diff_frames(fd_raw, standardize_frames, clamp, sd_std)
    sd = np.concatenate([np.zeros_like(sd[:1]), sd])

    segment = clip.source_ppg.samples[start : start + T + 1]
    fd_target = first_difference(segment)
    sd_real = second_difference(segment)
    if standardize_targets:
        fd_target = _scale_target(fd_target)
        sd_real = _scale_target(sd_real)
    sd_target = np.concatenate([[0.0], sd_real])
    return TrainingExample(raw[:T].copy(), fd, sd, fd_target, sd_target, start, clip_index)


def make_windows(
    clip: VideoClip,
    T: int,
    stride: int,
    epsilon: float = 1e-8,
    standardize_frames: bool = True,
    standardize_targets: bool = True,
    clamp: float = 3.0,
) -> List[TrainingExample]:
    starts = window_starts(clip.n_frames, T, stride)
    scales = frame_scales(clip, epsilon) if standardize_frames else None
    return [
        make_window(clip, s, T, epsilon, standardize_frames, standardize_targets, clamp, scales=scales)
        for s in starts
    ]


def stack_examples(examples: Sequence[TrainingExample]) -> WindowBatch:
    return WindowBatch(
        np.stack([e.raw_frames for e in examples]),
        np.stack([e.fd_frames for e in examples]),
        np.stack([e.sd_frames for e in examples]),
        np.stack([e.fd_target for e in examples]),
        np.stack([e.sd_target for e in examples]),
    )


class WindowDataset:
    """
    Every (clip index, window start) pair over a list of clips, in that
    order. Windows are only materialized when a batch asks for them.
    """

    def __init__(
        self,
        clips: Sequence[VideoClip],
        T: int,
        stride: int,
        epsilon: float = 1e-8,
        standardize_frames: bool = True,
        standardize_targets: bool = True,
        clamp: float = 3.0,
    ):
        self.clips = list(clips)
        self.T = T
        self.stride = stride
        self.epsilon = epsilon
        self.standardize_frames = standardize_frames
        self.standardize_targets = standardize_targets
        self.clamp = clamp
        self._scales: Dict[int, Tuple[float, float]] = {}
        self.index = [
            (ci, s)
            for ci, clip in enumerate(self.clips)
            for s in window_starts(clip.n_frames, T, stride)
        ]

    def __len__(self) -> int:
        return len(self.index)

    @property
    def frame_hw(self) -> Optional[int]:
        return self.clips[0].height if self.clips else None

    def scales(self, ci: int) -> Optional[Tuple[float, float]]:
        """Clip-level frame scales of clip ci, computed on first use."""
        if not self.standardize_frames:
            return None
        if ci not in self._scales:
            self._scales[ci] = frame_scales(self.clips[ci], self.epsilon)
        return self._scales[ci]

    def example(self, i: int) -> TrainingExample:
        ci, start = self.index[i]
        return make_window(
            self.clips[ci],
            start,
            self.T,
            self.epsilon,
            self.standardize_frames,
            self.standardize_targets,
            self.clamp,
            clip_index=ci,
            scales=self.scales(ci),
        )

    def batch(self, indices: Sequence[int]) -> WindowBatch:
        return stack_examples([self.example(int(i)) for i in indices])


def stitch_windows(values: Sequence[np.ndarray], starts: Sequence[int], length: Optional[int] = None) -> np.ndarray:
    """
    Overlap-add average of per-window vectors placed at their start
    offsets. Samples no window covers are 0.
    """
    if len(values) != len(starts) or not values:
        raise ShapeMismatch("need one start offset per window and at least one window")
    T = len(values[0])
    if length is None:
        length = max(starts) + T
    total = np.zeros(length)
    count = np.zeros(length)
    for v, s in zip(values, starts):
        total[s : s + T] += v
        count[s : s + T] += 1
    covered = count > 0
    total[covered] /= count[covered]
    return total
