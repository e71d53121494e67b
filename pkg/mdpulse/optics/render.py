"""
Skin-Patch Video Renderer for mdpulse

Synthesizes RGB clips of a pulsing skin rectangle under the dichromatic
reflection model. For a skin pixel and channel k:

    C_k(t) = I * (v_s(t) + u_d[k] * d0 + u_p[k] * p(t)) + v_n(t)

and background pixels are I * u_bg[k] * d0 + v_n(t). With constant
illumination and no noise, specular term, motion or clamping, the second
temporal difference of a skin pixel is exactly I * u_p[k] times the second
difference of p.

Features:
- Optional specular flicker, Gaussian sensor noise and sinusoidal patch motion
- Bilinear fractional coverage for sub-pixel patch translation
- Clamp-then-flag saturation policy (SaturationWarning above 1% of skin pixels)
- Seeded dataset sampler with one independent sub-seed per clip
"""

import logging
import warnings
from dataclasses import dataclass, field, fields
from typing import List, Optional, Tuple

import numpy as np

from mdpulse.errors import (
    InvalidConfig,
    InvalidRange,
    RegionOutOfBounds,
    SaturationWarning,
    ShapeMismatch,
)
from mdpulse.signals.ppg import BeatTemplateParams, PpgSignal, synth_ppg

logger = logging.getLogger(__name__)

SATURATION_LIMIT = 0.01


def unit(vector) -> Tuple[float, float, float]:
    v = np.asarray(vector, dtype=np.float64).reshape(3)
    norm = float(np.linalg.norm(v))
    if norm == 0:
        raise InvalidRange("cannot normalize a zero color vector")
    return tuple(float(c) for c in v / norm)


SKIN_TONE = unit((0.82, 0.55, 0.42))
BACKGROUND_TONE = unit((0.35, 0.45, 0.62))
# Blood volume changes modulate green most strongly.
PULSE_TINT = unit((0.33, 0.87, 0.36))


@dataclass(frozen=True)
class DrmParams:
    """
    Dichromatic-reflection parameters for one clip.

    skin_region is (row0, col0, row1, col1) with exclusive ends; None means
    the central half of the frame.
    """

    illumination: float = 1.0
    skin_color: Tuple[float, float, float] = SKIN_TONE
    stationary_strength: float = 0.5
    pulsatile_color: Tuple[float, float, float] = tuple(0.06 * c for c in PULSE_TINT)
    noise_sigma: float = 0.0
    specular_amp: float = 0.0
    specular_freq: float = 0.3
    motion_amp: float = 0.0
    motion_freq: float = 0.5
    skin_region: Optional[Tuple[int, int, int, int]] = None
    background_color: Tuple[float, float, float] = BACKGROUND_TONE

    def region(self, height: int, width: int) -> Tuple[int, int, int, int]:
        if self.skin_region is None:
            return (height // 4, width // 4, height - height // 4, width - width // 4)
        r0, c0, r1, c1 = (int(v) for v in self.skin_region)
        if not (0 <= r0 < r1 <= height and 0 <= c0 < c1 <= width):
            raise RegionOutOfBounds(
                f"skin_region {self.skin_region} does not fit a {height}x{width} frame"
            )
        return r0, c0, r1, c1

    def validate(self, height: int, width: int) -> None:
        if self.illumination <= 0:
            raise InvalidRange(f"illumination must be positive, got {self.illumination}")
        for name in ("skin_color", "background_color"):
            norm = float(np.linalg.norm(getattr(self, name)))
            if abs(norm - 1.0) > 1e-9:
                raise InvalidConfig(f"{name} must be a unit vector, |v| = {norm!r}")
        for name in ("noise_sigma", "specular_amp", "motion_amp", "stationary_strength"):
            if getattr(self, name) < 0:
                raise InvalidRange(f"{name} must be non-negative, got {getattr(self, name)}")
        self.region(height, width)


@dataclass(frozen=True, eq=False)
class VideoClip:
    """T x H x W x 3 frames in [0, 1] with the PPG that drove them."""

    frames: np.ndarray
    fs: float
    source_ppg: PpgSignal
    saturated_fraction: float = 0.0

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ShapeMismatch(f"frames must be T x H x W x 3, got {self.frames.shape}")
        if self.frames.shape[0] != len(self.source_ppg):
            raise ShapeMismatch(
                f"{self.frames.shape[0]} frames but {len(self.source_ppg)} PPG samples"
            )
        if self.source_ppg.fs != self.fs:
            raise ShapeMismatch(f"clip fs {self.fs} != PPG fs {self.source_ppg.fs}")

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def height(self) -> int:
        return int(self.frames.shape[1])

    @property
    def width(self) -> int:
        return int(self.frames.shape[2])


def _coverage(mask: np.ndarray, dy: float, dx: float) -> np.ndarray:
    """Bilinear sample of mask at (y - dy, x - dx), zero outside the frame."""
    height, width = mask.shape
    padded = np.pad(mask, 1)
    ys = np.arange(height) - dy
    xs = np.arange(width) - dx
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    # +1 for the pad, clipped so far-away samples land on the zero border.
    y0p = np.clip(y0 + 1, 0, height + 1)
    y1p = np.clip(y0 + 2, 0, height + 1)
    x0p = np.clip(x0 + 1, 0, width + 1)
    x1p = np.clip(x0 + 2, 0, width + 1)
    top = padded[np.ix_(y0p, x0p)] * (1 - wx) + padded[np.ix_(y0p, x1p)] * wx
    bottom = padded[np.ix_(y1p, x0p)] * (1 - wx) + padded[np.ix_(y1p, x1p)] * wx
    return top * (1 - wy) + bottom * wy


def render_clip(
    ppg: PpgSignal, params: DrmParams, height: int, width: int, seed: int = 0
) -> VideoClip:
    """
    Render the clip driven by an amplitude-normalized PPG.

    Args:
        ppg: Pulse waveform; one frame per sample
        params: Reflection, noise, specular and motion settings
        height: Frame height in pixels (>= 4)
        width: Frame width in pixels (>= 4)
        seed: Seed for the sensor noise

    Returns:
        VideoClip clamped to [0, 1]
    """
    if not ppg.normalized:
        raise InvalidConfig("render_clip needs an amplitude-normalized PPG")
    if height < 4 or width < 4:
        raise InvalidConfig(f"frames must be at least 4x4, got {height}x{width}")
    params.validate(height, width)
    r0, c0, r1, c1 = params.region(height, width)

    t = ppg.times
    intensity = params.illumination
    u_d = np.asarray(params.skin_color)
    u_p = np.asarray(params.pulsatile_color)
    u_bg = np.asarray(params.background_color)

    specular = np.zeros_like(t)
    if params.specular_amp > 0:
        specular = params.specular_amp * 0.5 * (1 + np.sin(2 * np.pi * params.specular_freq * t))

    skin = intensity * (
        specular[:, None] + u_d[None, :] * params.stationary_strength + u_p[None, :] * ppg.samples[:, None]
    )
    background = intensity * (u_bg * params.stationary_strength)

    mask = np.zeros((height, width))
    mask[r0:r1, c0:c1] = 1.0
    if params.motion_amp > 0:
        phase = 2 * np.pi * params.motion_freq * t
        # Circular sway: horizontal and vertical offsets a quarter period apart.
        alpha = np.stack(
            [
                _coverage(mask, params.motion_amp * np.cos(p), params.motion_amp * np.sin(p))
                for p in phase
            ]
        )
    else:
        alpha = np.broadcast_to(mask, (len(t), height, width))
    alpha = alpha[..., None]

    frames = alpha * skin[:, None, None, :] + (1.0 - alpha) * background
    if params.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        frames = frames + params.noise_sigma * rng.standard_normal(frames.shape)

    on_skin = np.broadcast_to(alpha > 0, frames.shape)
    clamped = ((frames < 0) | (frames > 1)) & on_skin
    n_skin = int(on_skin.sum())
    saturated = float(clamped.sum()) / n_skin if n_skin else 0.0
    if saturated > SATURATION_LIMIT:
        logger.warning("%.1f%% of skin pixel values clamped", 100 * saturated)
        warnings.warn(
            f"{100 * saturated:.1f}% of skin pixel values were clamped to [0, 1]",
            SaturationWarning,
            stacklevel=2,
        )
    frames = np.clip(frames, 0.0, 1.0)
    return VideoClip(frames, ppg.fs, ppg, saturated)


@dataclass(frozen=True)
class SamplerRanges:
    """Closed (lo, hi) intervals the dataset sampler draws from uniformly."""

    hr_bpm: Tuple[float, float] = (50.0, 120.0)
    hr_jitter: Tuple[float, float] = (0.0, 0.03)
    systolic_center: Tuple[float, float] = (0.18, 0.24)
    systolic_width: Tuple[float, float] = (0.07, 0.1)
    dicrotic_center: Tuple[float, float] = (0.45, 0.52)
    dicrotic_width: Tuple[float, float] = (0.07, 0.09)
    dicrotic_amp: Tuple[float, float] = (0.25, 0.4)
    illumination: Tuple[float, float] = (0.8, 1.0)
    stationary_strength: Tuple[float, float] = (0.45, 0.6)
    pulsatile_scale: Tuple[float, float] = (0.04, 0.08)
    skin_jitter: Tuple[float, float] = (0.0, 0.05)
    noise_sigma: Tuple[float, float] = (0.0, 0.005)
    specular_amp: Tuple[float, float] = (0.0, 0.02)
    specular_freq: Tuple[float, float] = (0.1, 0.5)
    motion_amp: Tuple[float, float] = (0.0, 0.5)
    motion_freq: Tuple[float, float] = (0.2, 0.6)
    skin_fraction: Tuple[float, float] = (0.4, 0.7)

    def validate(self) -> None:
        for f in fields(self):
            bounds = tuple(getattr(self, f.name))
            if len(bounds) != 2:
                raise InvalidRange(f"{f.name} needs exactly two bounds, got {bounds}")
            lo, hi = bounds
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise InvalidRange(f"{f.name} range ({lo}, {hi}) is empty")
        if not (0 < self.skin_fraction[0] and self.skin_fraction[1] <= 1):
            raise InvalidRange(f"skin_fraction must lie in (0, 1], got {self.skin_fraction}")


@dataclass(eq=False)
class ClipRecord:
    """One generated clip together with everything that produced it."""

    clip_id: int
    seed: int
    hr_bpm: float
    hr_jitter: float
    template: BeatTemplateParams
    drm: DrmParams
    clip: VideoClip = field(repr=False)


def _sample_clip_params(
    ranges: SamplerRanges, rng: np.random.Generator, height: int, width: int
):
    def draw(name):
        lo, hi = getattr(ranges, name)
        return float(rng.uniform(lo, hi))

    hr_bpm = draw("hr_bpm")
    hr_jitter = draw("hr_jitter")
    template = BeatTemplateParams(
        systolic_center=draw("systolic_center"),
        systolic_width=draw("systolic_width"),
        dicrotic_center=draw("dicrotic_center"),
        dicrotic_width=draw("dicrotic_width"),
        dicrotic_amp=draw("dicrotic_amp"),
    )
    skin = unit(np.abs(np.asarray(SKIN_TONE) + draw("skin_jitter") * rng.standard_normal(3)))
    frac = draw("skin_fraction")
    rh = min(height, max(2, int(round(frac * height))))
    rw = min(width, max(2, int(round(frac * width))))
    r0 = int(rng.integers(0, height - rh + 1))
    c0 = int(rng.integers(0, width - rw + 1))
    drm = DrmParams(
        illumination=draw("illumination"),
        skin_color=skin,
        stationary_strength=draw("stationary_strength"),
        pulsatile_color=tuple(draw("pulsatile_scale") * c for c in PULSE_TINT),
        noise_sigma=draw("noise_sigma"),
        specular_amp=draw("specular_amp"),
        specular_freq=draw("specular_freq"),
        motion_amp=draw("motion_amp"),
        motion_freq=draw("motion_freq"),
        skin_region=(r0, c0, r0 + rh, c0 + rw),
    )
    return hr_bpm, hr_jitter, template, drm


def clip_seeds(seed: int, n_clips: int) -> List[int]:
    return [
        int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(n_clips)
    ]


def make_clip(
    clip_id: int,
    clip_seed: int,
    ranges: SamplerRanges,
    height: int,
    width: int,
    fs: float,
    duration_s: float,
) -> ClipRecord:
    rng = np.random.default_rng(clip_seed)
    hr_bpm, hr_jitter, template, drm = _sample_clip_params(ranges, rng, height, width)
    ppg = synth_ppg(template, hr_bpm, fs, duration_s, seed=clip_seed, hr_jitter=hr_jitter)
    clip = render_clip(ppg, drm, height, width, seed=clip_seed + 1)
    return ClipRecord(clip_id, clip_seed, hr_bpm, hr_jitter, template, drm, clip)


def make_dataset(
    n_clips: int,
    sampler_ranges: SamplerRanges,
    height: int,
    width: int,
    fs: float,
    duration_s: float,
    seed: int,
) -> List[ClipRecord]:
    """
    Sample and render n_clips independent clips.

    Each clip's parameters come from its own SeedSequence child, so the
    result does not depend on the order clips are rendered in.
    """
    if n_clips < 1:
        raise InvalidRange(f"n_clips must be at least 1, got {n_clips}")
    sampler_ranges.validate()
    records = [
        make_clip(i, s, sampler_ranges, height, width, fs, duration_s)
        for i, s in enumerate(clip_seeds(seed, n_clips))
    ]
    logger.info("Rendered %d clips (%dx%d, %.1f s at %.1f fps)", n_clips, height, width, duration_s, fs)
    return records
