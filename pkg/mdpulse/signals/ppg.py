"""
Pulse Waveforms for mdpulse

Representation of contact/ground-truth PPG signals, the discrete derivative
operators used for both video frames and targets, and a parametric beat
generator whose fiducial points are known by construction.

Features:
- First and second differences (velocity / acceleration PPG)
- Z-score standardization of target windows
- Parametric synthetic PPG with per-beat period jitter
- Exhaustive-scan ground-truth fiducials (diastolic point, dicrotic notch, LVET)
- CSV ingestion of real contact PPG (time_s,ppg), resampled to a uniform rate

Beat template:
    Each beat is the sum of two bumps over a baseline, a systolic wave and a
    dicrotic wave, in one of three shapes:

    raised_cosine (default)
        A half-cosine rise from the onset to the peak (`center`, reached
        `width` periods after the onset), then a half-cosine fall that ends
        at the same wave's onset in the next beat.
    gaussian
        exp(-((t - center) / width)^2 / 2), width being the standard deviation.
    kinked
        A linear rise from the onset to the peak, then an exponential fall
        with time constant `decay`.

    raised_cosine and kinked beats concentrate curvature at the diastolic
    point and the notch, so both show up as positive peaks in the second
    difference. Gaussian beats spread it over the flanks.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from mdpulse.errors import (
    ConstantInput,
    InvalidRange,
    InvalidTemplate,
    IoError,
    SequenceTooShort,
)

logger = logging.getLogger(__name__)

# Earlier beats are rendered before t=0 until their tails fall below e^-8
# (kinked) or beyond 6 standard deviations (gaussian).
_HISTORY_DECAYS = 8.0
_HISTORY_WIDTHS = 6.0


@dataclass(frozen=True, eq=False)
class Fiducials:
    """
    Paired per-beat fiducial points, as sample indices into the PPG.

    Attributes:
        diastolic_idx: Diastolic point (beat onset) per beat
        notch_idx: Dicrotic notch per beat
        lvet_ms: Left-ventricle ejection time per beat in milliseconds
        fs: Sampling rate the indices refer to
    """

    diastolic_idx: np.ndarray
    notch_idx: np.ndarray
    lvet_ms: np.ndarray
    fs: float

    @classmethod
    def from_indices(cls, diastolic_idx, notch_idx, fs: float) -> "Fiducials":
        diastolic = np.asarray(diastolic_idx, dtype=np.int64).reshape(-1)
        notch = np.asarray(notch_idx, dtype=np.int64).reshape(-1)
        if diastolic.shape != notch.shape:
            raise InvalidRange(
                f"{len(diastolic)} diastolic points but {len(notch)} notches"
            )
        if np.any(notch <= diastolic):
            raise InvalidRange("every dicrotic notch must follow its diastolic point")
        if np.any(np.diff(diastolic) <= 0) or np.any(np.diff(notch) <= 0):
            raise InvalidRange("fiducial indices must be strictly increasing")
        lvet = (notch - diastolic) / float(fs) * 1000.0
        return cls(diastolic, notch, lvet, float(fs))

    def __len__(self) -> int:
        return int(self.diastolic_idx.shape[0])


@dataclass(frozen=True, eq=False)
class PpgSignal:
    """Uniformly sampled pulse waveform."""

    samples: np.ndarray
    fs: float
    fiducials: Optional[Fiducials] = None
    normalized: bool = False

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "samples", samples)
        if samples.shape[0] < 2:
            raise SequenceTooShort(f"a PPG needs at least 2 samples, got {samples.shape[0]}")
        if not self.fs > 0:
            raise InvalidRange(f"sampling rate must be positive, got {self.fs}")
        if self.normalized and (
            abs(samples.min()) > 1e-9 or abs(samples.max() - 1.0) > 1e-9
        ):
            raise InvalidRange("normalized PPG must span exactly [0, 1]")

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_s(self) -> float:
        return len(self) / self.fs

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) / self.fs


TEMPLATE_SHAPES = ("raised_cosine", "gaussian", "kinked")


@dataclass(frozen=True)
class BeatTemplateParams:
    """
    Shape of one synthetic heartbeat; centers, widths and decay are
    fractions of the beat period. `decay` only applies to kinked beats.
    """

    systolic_amp: float = 1.0
    systolic_center: float = 0.2
    systolic_width: float = 0.1
    dicrotic_amp: float = 0.35
    dicrotic_center: float = 0.5
    dicrotic_width: float = 0.08
    baseline: float = 0.0
    decay: float = 0.35
    shape: str = "raised_cosine"

    @property
    def systolic_onset(self) -> float:
        return self.systolic_center - self.systolic_width

    @property
    def dicrotic_onset(self) -> float:
        return self.dicrotic_center - self.dicrotic_width

    def validate(self) -> None:
        if self.shape not in TEMPLATE_SHAPES:
            raise InvalidTemplate(f"shape must be one of {TEMPLATE_SHAPES}, got {self.shape!r}")
        if not 0 < self.systolic_center < self.dicrotic_center < 1:
            raise InvalidTemplate(
                "need 0 < systolic_center < dicrotic_center < 1, got "
                f"{self.systolic_center}, {self.dicrotic_center}"
            )
        if self.systolic_width <= 0 or self.dicrotic_width <= 0 or self.decay <= 0:
            raise InvalidTemplate("widths and decay must be positive")
        if not 0 < self.dicrotic_amp < self.systolic_amp:
            raise InvalidTemplate(
                f"need 0 < dicrotic_amp < systolic_amp, got {self.dicrotic_amp}, "
                f"{self.systolic_amp}"
            )
        if self.shape == "gaussian":
            self._validate_gaussian()
            return
        if self.systolic_onset < 0:
            raise InvalidTemplate("systolic upstroke must start inside the beat")
        if self.dicrotic_onset <= self.systolic_center:
            raise InvalidTemplate("dicrotic upstroke must start after the systolic peak")
        if self.shape == "kinked":
            self._validate_kinked()
        else:
            self._validate_raised_cosine()

    def _validate_gaussian(self) -> None:
        # Closer bumps merge into a shoulder with no notch between them.
        if self.dicrotic_center - self.systolic_center < 3 * max(self.systolic_width, self.dicrotic_width):
            raise InvalidTemplate("gaussian bumps must be at least 3 widths apart")

    def _validate_raised_cosine(self) -> None:
        # Steepest rise of each wave against the steepest fall of the other.
        if self.dicrotic_amp / self.dicrotic_width <= self.systolic_amp / (1 - self.systolic_width):
            raise InvalidTemplate("dicrotic upstroke too shallow to form a notch")
        if self.systolic_amp / self.systolic_width <= self.dicrotic_amp / (1 - self.dicrotic_width):
            raise InvalidTemplate("systolic upstroke too shallow to form a diastolic point")
        if self.systolic_amp / self.systolic_width**2 <= self.dicrotic_amp / self.dicrotic_width**2:
            raise InvalidTemplate("systolic upstroke must curve more sharply than the dicrotic one")

    def _validate_kinked(self) -> None:
        # Upstrokes must outpace the summed exponential runoff, otherwise the
        # onsets are no longer minima.
        runoff = (self.systolic_amp + self.dicrotic_amp) / self.decay
        if self.dicrotic_amp / self.dicrotic_width <= runoff:
            raise InvalidTemplate("dicrotic upstroke too shallow to form a notch")
        if self.systolic_amp / self.systolic_width <= runoff:
            raise InvalidTemplate("systolic upstroke too shallow to form a diastolic point")

    def history_beats(self) -> int:
        """Beats rendered before t=0 so the first beat carries its predecessors' tails."""
        if self.shape == "kinked":
            return int(np.ceil(_HISTORY_DECAYS * self.decay)) + 1
        if self.shape == "gaussian":
            return int(np.ceil(_HISTORY_WIDTHS * max(self.systolic_width, self.dicrotic_width))) + 1
        return 1


def first_difference(p: Sequence[float]) -> np.ndarray:
    """p'(t) = p(t) - p(t-1), aligned to the later sample; one sample shorter."""
    x = np.asarray(p, dtype=np.float64).reshape(-1)
    if x.shape[0] < 2:
        raise SequenceTooShort(f"first difference needs 2 samples, got {x.shape[0]}")
    return x[1:] - x[:-1]


def second_difference(p: Sequence[float]) -> np.ndarray:
    x = np.asarray(p, dtype=np.float64).reshape(-1)
    if x.shape[0] < 3:
        raise SequenceTooShort(f"second difference needs 3 samples, got {x.shape[0]}")
    return first_difference(first_difference(x))


def aligned_second_difference(p: Sequence[float]) -> np.ndarray:
    """
    Second difference front-padded with one zero, so index i holds the
    curvature around sample i (p[i+1] - 2p[i] + p[i-1]) for i >= 1.
    """
    return np.concatenate([[0.0], second_difference(p)])


def standardize(x: Sequence[float]) -> np.ndarray:
    """Zero mean, unit (population) standard deviation."""
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if arr.shape[0] < 2:
        raise SequenceTooShort("standardize needs at least 2 samples")
    centered = arr - arr.mean()
    std = centered.std()
    if std < 1e-12:
        raise ConstantInput("cannot standardize a constant sequence")
    return centered / std


def min_max_normalize(x: Sequence[float]) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    if hi - lo < 1e-12:
        raise ConstantInput("cannot amplitude-normalize a constant sequence")
    out = (arr - lo) / (hi - lo)
    # Pin the extremes so the [0, 1] invariant holds exactly.
    out[arr == lo] = 0.0
    out[arr == hi] = 1.0
    return out


def _kinked_pulse(t: np.ndarray, onset: float, peak: float, amp: float, tau: float) -> np.ndarray:
    out = np.zeros_like(t)
    rising = (t >= onset) & (t < peak)
    out[rising] = amp * (t[rising] - onset) / (peak - onset)
    falling = t >= peak
    out[falling] = amp * np.exp(-(t[falling] - peak) / tau)
    return out


def _raised_cosine_pulse(t: np.ndarray, onset: float, peak: float, end: float, amp: float) -> np.ndarray:
    out = np.zeros_like(t)
    rising = (t >= onset) & (t < peak)
    out[rising] = 0.5 * amp * (1.0 - np.cos(np.pi * (t[rising] - onset) / (peak - onset)))
    falling = (t >= peak) & (t < end)
    out[falling] = 0.5 * amp * (1.0 + np.cos(np.pi * (t[falling] - peak) / (end - peak)))
    return out


def _gaussian_pulse(t: np.ndarray, center: float, width: float, amp: float) -> np.ndarray:
    return amp * np.exp(-0.5 * ((t - center) / width) ** 2)


def _render_beats(
    t: np.ndarray, template: BeatTemplateParams, starts: Sequence[float], periods: Sequence[float]
) -> np.ndarray:
    signal = np.full(t.shape, template.baseline, dtype=np.float64)
    waves = (
        (template.systolic_amp, template.systolic_center, template.systolic_width),
        (template.dicrotic_amp, template.dicrotic_center, template.dicrotic_width),
    )
    for k, (start, period) in enumerate(zip(starts, periods)):
        if k + 1 < len(starts):
            next_start, next_period = starts[k + 1], periods[k + 1]
        else:
            next_start, next_period = start + period, period
        for amp, center, width in waves:
            peak = start + center * period
            if template.shape == "gaussian":
                signal += _gaussian_pulse(t, peak, width * period, amp)
            elif template.shape == "kinked":
                signal += _kinked_pulse(t, peak - width * period, peak, amp, template.decay * period)
            else:
                # The fall ends where the same wave rises again in the next beat.
                end = next_start + (center - width) * next_period
                signal += _raised_cosine_pulse(t, peak - width * period, peak, end, amp)
    return signal


def _argmin_in(samples: np.ndarray, t_lo: float, t_hi: float, fs: float) -> Optional[int]:
    lo = max(int(np.ceil(t_lo * fs)), 0)
    hi = min(int(np.floor(t_hi * fs)), samples.shape[0] - 1)
    if hi < lo:
        return None
    return lo + int(np.argmin(samples[lo : hi + 1]))


def synth_ppg(
    template: BeatTemplateParams,
    hr_bpm: float,
    fs: float,
    duration_s: float,
    seed: int = 0,
    hr_jitter: float = 0.0,
) -> PpgSignal:
    """
    Render an amplitude-normalized synthetic PPG with ground-truth fiducials.

    Args:
        template: Beat shape
        hr_bpm: Mean heart rate, 30-240 BPM
        fs: Sampling rate in Hz (>= 20)
        duration_s: Record length in seconds
        seed: Seed for the per-beat period jitter
        hr_jitter: Each beat period is scaled by 1 + U(-hr_jitter, hr_jitter)

    Returns:
        PpgSignal with normalized samples and Fiducials from an exhaustive
        scan of the noiseless waveform: the diastolic point is the minimum
        between the previous dicrotic peak and the systolic peak, the notch
        the minimum between the systolic and dicrotic peaks
    """
    template.validate()
    if not 30 <= hr_bpm <= 240:
        raise InvalidRange(f"hr_bpm must lie in [30, 240], got {hr_bpm}")
    if fs < 20:
        raise InvalidRange(f"fs must be at least 20 Hz, got {fs}")
    if not 0 <= hr_jitter < 0.5:
        raise InvalidRange(f"hr_jitter must lie in [0, 0.5), got {hr_jitter}")
    n = int(round(duration_s * fs))
    if n < 3:
        raise SequenceTooShort(f"duration_s * fs must give at least 3 samples, got {n}")

    rng = np.random.default_rng(seed)
    base_period = 60.0 / hr_bpm
    n_history = template.history_beats()

    starts = [-(k + 1) * base_period for k in range(n_history)][::-1]
    periods = [base_period] * n_history
    start = 0.0
    while start < duration_s:
        period = base_period * (1.0 + rng.uniform(-hr_jitter, hr_jitter))
        starts.append(start)
        periods.append(period)
        start += period

    t = np.arange(n) / fs
    samples = min_max_normalize(_render_beats(t, template, starts, periods))

    diastolic, notch = [], []
    for k in range(n_history, len(starts)):
        prev_dicrotic_peak = starts[k - 1] + template.dicrotic_center * periods[k - 1]
        systolic_peak = starts[k] + template.systolic_center * periods[k]
        dicrotic_peak = starts[k] + template.dicrotic_center * periods[k]
        if dicrotic_peak * fs > n - 1:
            break
        d_idx = _argmin_in(samples, prev_dicrotic_peak, systolic_peak, fs)
        n_idx = _argmin_in(samples, systolic_peak, dicrotic_peak, fs)
        if d_idx is None or n_idx is None:
            continue
        diastolic.append(d_idx)
        notch.append(n_idx)

    fiducials = Fiducials.from_indices(diastolic, notch, fs)
    logger.debug(
        "synth_ppg: %d samples, %d %s beats at %.1f BPM", n, len(fiducials), template.shape, hr_bpm
    )
    return PpgSignal(samples, float(fs), fiducials, normalized=True)


def load_ppg_csv(path, fs: Optional[float] = None) -> PpgSignal:
    """
    Load a contact PPG from a `time_s,ppg` CSV and resample it linearly onto a
    uniform grid (default rate: median of the recorded sampling intervals).
    """
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as exc:
        raise IoError(path) from exc
    if list(frame.columns[:2]) != ["time_s", "ppg"]:
        raise IoError(path, "expected header 'time_s,ppg'")
    time_s = frame["time_s"].to_numpy(dtype=np.float64)
    values = frame["ppg"].to_numpy(dtype=np.float64)
    if time_s.shape[0] < 2 or np.any(np.diff(time_s) <= 0):
        raise IoError(path, "time_s must be strictly increasing")
    rate = float(fs) if fs is not None else 1.0 / float(np.median(np.diff(time_s)))
    n = int(np.floor((time_s[-1] - time_s[0]) * rate)) + 1
    grid = time_s[0] + np.arange(n) / rate
    resampled = np.interp(grid, time_s, values)
    return PpgSignal(min_max_normalize(resampled), rate, None, normalized=True)
