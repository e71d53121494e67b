"""
Clinical Metrics for mdpulse

Heart rate and left-ventricle ejection time (LVET) from predicted and
reference derivative waveforms, with agreement statistics.

Features:
- Periodogram heart rate restricted to a cardiac band (0.75-4.0 Hz)
- Diastolic point / dicrotic notch detection on the second derivative
- Per-beat LVET averaged over non-overlapping 10-second windows
- MAE (mean +/- std) and Bland-Altman limits of agreement
- Per-clip evaluation that records failures instead of aborting
- JSON report and CSV point files for external plotting
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import signal

from mdpulse.atomic import atomic_write_csv, atomic_write_text
from mdpulse.errors import (
    InvalidRange,
    LengthMismatch,
    MdPulseError,
    NoBeatsFound,
    NoPairedBeats,
    NoPowerInBand,
    SignalTooShort,
)
from mdpulse.signals.ppg import Fiducials

logger = logging.getLogger(__name__)

HR_BAND = (0.75, 4.0)
LIMIT_Z = 1.96


def estimate_hr(
    x: Sequence[float],
    fs: float,
    band: Tuple[float, float] = HR_BAND,
    nfft: Optional[int] = None,
) -> float:
    """
    Heart rate in BPM from the strongest periodogram bin inside `band`.

    Args:
        x: Signal, at least 4 seconds long
        fs: Sampling rate in Hz (> 8)
        band: (low, high) Hz
        nfft: FFT length; None uses the signal length

    Raises:
        SignalTooShort: fewer than 4*fs samples
        NoPowerInBand: total band power below 1e-12
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if fs <= 8:
        raise InvalidRange(f"fs must exceed 8 Hz, got {fs}")
    if x.shape[0] < 4 * fs:
        raise SignalTooShort(f"need at least {4 * fs:.0f} samples (4 s), got {x.shape[0]}")
    freqs, power = signal.periodogram(x - x.mean(), fs=fs, nfft=nfft, detrend=False)
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    if not np.any(in_band) or power[in_band].sum() < 1e-12:
        raise NoPowerInBand(f"no spectral power between {band[0]} and {band[1]} Hz")
    return float(60.0 * freqs[in_band][np.argmax(power[in_band])])


def pulse_from_first_difference(fd: Sequence[float]) -> np.ndarray:
    """Cumulative sum back to pulse level, linearly detrended."""
    return signal.detrend(np.cumsum(np.asarray(fd, dtype=np.float64)), type="linear")


def pulse_from_second_difference(sd: Sequence[float]) -> np.ndarray:
    velocity = signal.detrend(np.cumsum(np.asarray(sd, dtype=np.float64)), type="linear")
    return pulse_from_first_difference(velocity)


def aligned_difference(fd: Sequence[float]) -> np.ndarray:
    """SD derived from an FD waveform, front-padded like aligned_second_difference."""
    fd = np.asarray(fd, dtype=np.float64)
    return np.concatenate([[0.0], np.diff(fd)])


def detect_fiducials(
    sd: Sequence[float],
    fs: float,
    hr_hint_bpm: Optional[float] = None,
    prominence_frac: float = 0.3,
    refractory_frac: float = 0.08,
    notch_prominence_frac: float = 0.0,
    paired_anchors: bool = False,
    positive_only: bool = False,
) -> Fiducials:
    """
    Locate diastolic points and dicrotic notches on a second-derivative
    waveform whose index i is the curvature at PPG sample i.

    Beat anchors (diastolic points) are SD peaks at least half a beat period
    apart whose prominence is at least prominence_frac of the largest peak
    prominence. A beat's notch is the earliest SD local maximum that is at
    least refractory_frac periods after the anchor and before the next
    anchor. Beats without a notch are dropped.

    Args:
        sd: Second-derivative waveform
        fs: Sampling rate in Hz
        hr_hint_bpm: Heart rate used for the beat period; estimated from
            the double-integrated SD when omitted
        notch_prominence_frac: Notch candidates must be at least this
            fraction as prominent as their anchor (0 keeps every local max)
        paired_anchors: Rank anchors on the sum of two neighbouring samples
            and place each on the larger one; for beats whose onset kink
            falls between samples and splits its curvature
        positive_only: Only positive SD samples may be anchors or notches
    """
    sd = np.asarray(sd, dtype=np.float64).reshape(-1)
    if sd.shape[0] < 3 or np.ptp(sd) < 1e-12:
        raise NoBeatsFound("second-derivative signal is constant")
    if hr_hint_bpm is None:
        hr_hint_bpm = estimate_hr(pulse_from_second_difference(sd), fs)
    period = fs * 60.0 / hr_hint_bpm
    if sd.shape[0] < period:
        raise SignalTooShort(f"{sd.shape[0]} samples is shorter than one beat ({period:.1f})")

    ranked = sd
    if paired_anchors:
        ranked = sd.copy()
        ranked[:-1] += sd[1:]
    peaks, props = signal.find_peaks(ranked, distance=max(1, int(round(0.5 * period))), prominence=0)
    prominences = props["prominences"]
    if peaks.size == 0 or prominences.max() <= 0:
        raise NoBeatsFound("no peaks in second-derivative signal")
    anchors = peaks[prominences >= prominence_frac * prominences.max()]
    if paired_anchors:
        later = np.minimum(anchors + 1, sd.shape[0] - 1)
        anchors = np.unique(np.where(sd[later] > sd[anchors], later, anchors))
    if positive_only:
        anchors = anchors[sd[anchors] > 0]
    if anchors.size == 0:
        raise NoBeatsFound("no second-derivative peaks above the prominence floor")

    candidates, cand_props = signal.find_peaks(sd, prominence=0)
    keep = np.ones(candidates.size, dtype=bool)
    if positive_only:
        keep &= sd[candidates] > 0
    if notch_prominence_frac > 0:
        anchor_prom = signal.peak_prominences(sd, anchors)[0]
    diastolic, notch = [], []
    for i, anchor in enumerate(anchors):
        stop = anchors[i + 1] if i + 1 < anchors.size else sd.shape[0]
        ok = keep & (candidates >= anchor + refractory_frac * period) & (candidates < stop)
        if notch_prominence_frac > 0:
            ok &= cand_props["prominences"] >= notch_prominence_frac * anchor_prom[i]
        if np.any(ok):
            diastolic.append(int(anchor))
            notch.append(int(candidates[ok][0]))
    return Fiducials.from_indices(diastolic, notch, fs)


@dataclass(eq=False)
class LvetSeries:
    beat_time_s: np.ndarray
    beat_lvet_ms: np.ndarray
    window_start_s: np.ndarray
    window_lvet_ms: np.ndarray


def lvet_series(fid: Fiducials, fs: float, smooth_window_s: float = 10.0) -> LvetSeries:
    """Per-beat LVET and its mean inside consecutive non-overlapping windows."""
    if len(fid) == 0:
        raise NoPairedBeats("no beat has both a diastolic point and a dicrotic notch")
    if smooth_window_s <= 0:
        raise InvalidRange(f"smooth_window_s must be positive, got {smooth_window_s}")
    beat_time = fid.diastolic_idx / float(fs)
    beat_lvet = (fid.notch_idx - fid.diastolic_idx) / float(fs) * 1000.0
    window = np.floor(beat_time / smooth_window_s).astype(np.int64)
    keys, inverse = np.unique(window, return_inverse=True)
    sums = np.bincount(inverse, weights=beat_lvet)
    counts = np.bincount(inverse)
    return LvetSeries(beat_time, beat_lvet, keys * smooth_window_s, sums / counts)


@dataclass(frozen=True)
class MaeSummary:
    mean: float
    std: float
    n: int


def mae_summary(pred: Sequence[float], truth: Sequence[float]) -> MaeSummary:
    """Mean and population std of |pred - truth|."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape or pred.size == 0:
        raise LengthMismatch(f"need equal non-empty lengths, got {pred.size} and {truth.size}")
    err = np.abs(pred - truth)
    return MaeSummary(float(err.mean()), float(err.std()), int(err.size))


@dataclass(eq=False)
class BlandAltman:
    mean_diff: float
    lower_limit: float
    upper_limit: float
    truth: np.ndarray
    diff: np.ndarray

    def to_dict(self) -> dict:
        return {
            "mean_diff": self.mean_diff,
            "lower_limit": self.lower_limit,
            "upper_limit": self.upper_limit,
            "n": int(self.diff.size),
        }

    def points(self) -> pd.DataFrame:
        return pd.DataFrame({"truth": self.truth, "diff": self.diff})


def bland_altman(pred: Sequence[float], truth: Sequence[float]) -> BlandAltman:
    """Differences pred - truth with mean +/- 1.96 population std limits."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape or pred.size < 2:
        raise LengthMismatch(f"need equal lengths >= 2, got {pred.size} and {truth.size}")
    diff = pred - truth
    mean_diff = float(diff.mean())
    spread = LIMIT_Z * float(diff.std())
    return BlandAltman(mean_diff, mean_diff - spread, mean_diff + spread, truth, diff)


@dataclass(frozen=True)
class EvalConfig:
    hr_band: Tuple[float, float] = HR_BAND
    hr_nfft: int = 2048
    smooth_window_s: float = 10.0
    prominence_frac: float = 0.3
    refractory_frac: float = 0.08
    notch_prominence_frac: float = 0.0
    paired_anchors: bool = False
    positive_only: bool = False

    def detector_knobs(self) -> dict:
        return dict(
            prominence_frac=self.prominence_frac,
            refractory_frac=self.refractory_frac,
            notch_prominence_frac=self.notch_prominence_frac,
            paired_anchors=self.paired_anchors,
            positive_only=self.positive_only,
        )


@dataclass(eq=False)
class ClipSignals:
    """
    Reference and predicted derivative waveforms of one clip on the
    stitched window axis. At least one prediction must be present.
    """

    clip_id: int
    fs: float
    true_fd: np.ndarray
    true_sd: np.ndarray
    pred_fd: Optional[np.ndarray] = None
    pred_sd: Optional[np.ndarray] = None


@dataclass
class ClipResult:
    clip_id: int
    hr_true: Optional[float] = None
    hr_pred: Optional[float] = None
    n_beats_true: Optional[int] = None
    n_beats_pred: Optional[int] = None
    n_windows: int = 0
    error: str = ""


@dataclass(eq=False)
class EvalReport:
    clips: List[ClipResult]
    lvet_windows: pd.DataFrame
    hr_mae: Optional[MaeSummary] = None
    lvet_mae: Optional[MaeSummary] = None
    hr_bland_altman: Optional[BlandAltman] = None
    lvet_bland_altman: Optional[BlandAltman] = None
    config: EvalConfig = field(default_factory=EvalConfig)

    def hr_pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        rows = [c for c in self.clips if c.hr_true is not None and c.hr_pred is not None]
        return np.array([c.hr_pred for c in rows]), np.array([c.hr_true for c in rows])

    def to_dict(self) -> dict:
        def summary(s):
            return None if s is None else asdict(s)

        def limits(b):
            return None if b is None else b.to_dict()

        hr_pred, hr_true = self.hr_pairs()
        return {
            "hr_mae_bpm": summary(self.hr_mae),
            "lvet_mae_ms": summary(self.lvet_mae),
            "bland_altman": {"hr": limits(self.hr_bland_altman), "lvet": limits(self.lvet_bland_altman)},
            "hr_true": hr_true.tolist(),
            "hr_pred": hr_pred.tolist(),
            "lvet_true": self.lvet_windows["lvet_true_ms"].tolist(),
            "lvet_pred": self.lvet_windows["lvet_pred_ms"].tolist(),
            "clips": [asdict(c) for c in self.clips],
            "config": asdict(self.config),
        }


def _derived_signals(clip: ClipSignals):
    """(HR source true, HR source pred, SD true, SD pred) for one clip."""
    if clip.pred_fd is not None:
        hr_true = pulse_from_first_difference(clip.true_fd)
        hr_pred = pulse_from_first_difference(clip.pred_fd)
    else:
        hr_true = pulse_from_second_difference(clip.true_sd)
        hr_pred = pulse_from_second_difference(clip.pred_sd)
    if clip.pred_sd is not None:
        sd_pred = np.asarray(clip.pred_sd, dtype=np.float64)
    else:
        sd_pred = aligned_difference(clip.pred_fd)
    return hr_true, hr_pred, np.asarray(clip.true_sd, dtype=np.float64), sd_pred


def evaluate_clip(clip: ClipSignals, cfg: EvalConfig) -> Tuple[ClipResult, pd.DataFrame]:
    """Evaluate one clip; MdPulseError is recorded in the result's error text."""
    if clip.pred_fd is None and clip.pred_sd is None:
        raise LengthMismatch(f"clip {clip.clip_id} has no predicted waveform")
    result = ClipResult(clip.clip_id)
    windows = pd.DataFrame(columns=["clip_id", "window_start_s", "lvet_true_ms", "lvet_pred_ms"])
    try:
        hr_src_true, hr_src_pred, sd_true, sd_pred = _derived_signals(clip)
        result.hr_true = estimate_hr(hr_src_true, clip.fs, cfg.hr_band, cfg.hr_nfft)
        result.hr_pred = estimate_hr(hr_src_pred, clip.fs, cfg.hr_band, cfg.hr_nfft)
        knobs = cfg.detector_knobs()
        fid_true = detect_fiducials(sd_true, clip.fs, result.hr_true, **knobs)
        result.n_beats_true = len(fid_true)
        fid_pred = detect_fiducials(sd_pred, clip.fs, result.hr_pred, **knobs)
        result.n_beats_pred = len(fid_pred)
        lvet_true = lvet_series(fid_true, clip.fs, cfg.smooth_window_s)
        lvet_pred = lvet_series(fid_pred, clip.fs, cfg.smooth_window_s)
    except MdPulseError as exc:
        result.error = f"{type(exc).__name__}: {exc}"
        logger.warning("Clip %s: %s", clip.clip_id, result.error)
        return result, windows

    common, i_true, i_pred = np.intersect1d(
        lvet_true.window_start_s, lvet_pred.window_start_s, return_indices=True
    )
    windows = pd.DataFrame(
        {
            "clip_id": np.full(common.size, clip.clip_id, dtype=np.int64),
            "window_start_s": common,
            "lvet_true_ms": lvet_true.window_lvet_ms[i_true],
            "lvet_pred_ms": lvet_pred.window_lvet_ms[i_pred],
        }
    )
    result.n_windows = int(common.size)
    return result, windows


def evaluate_clips(clips: Sequence[ClipSignals], cfg: EvalConfig = EvalConfig()) -> EvalReport:
    results, frames = [], []
    for clip in clips:
        result, windows = evaluate_clip(clip, cfg)
        results.append(result)
        if len(windows):
            frames.append(windows)
    lvet_windows = (
        pd.concat(frames, ignore_index=True)
        if frames
        else pd.DataFrame(columns=["clip_id", "window_start_s", "lvet_true_ms", "lvet_pred_ms"])
    )
    report = EvalReport(results, lvet_windows, config=cfg)

    hr_pred, hr_true = report.hr_pairs()
    if hr_true.size:
        report.hr_mae = mae_summary(hr_pred, hr_true)
    if hr_true.size >= 2:
        report.hr_bland_altman = bland_altman(hr_pred, hr_true)
    lvet_pred = lvet_windows["lvet_pred_ms"].to_numpy(dtype=np.float64)
    lvet_true = lvet_windows["lvet_true_ms"].to_numpy(dtype=np.float64)
    if lvet_true.size:
        report.lvet_mae = mae_summary(lvet_pred, lvet_true)
    if lvet_true.size >= 2:
        report.lvet_bland_altman = bland_altman(lvet_pred, lvet_true)
    failed = sum(1 for r in results if r.error)
    logger.info("Evaluated %d clips (%d failed)", len(results), failed)
    return report


def write_report(report: EvalReport, directory) -> Dict[str, Path]:
    """report.json, per_clip.csv, lvet_series.csv, bland_altman_{hr,lvet}.csv."""
    directory = Path(directory)
    paths = {
        "report": atomic_write_text(
            directory / "report.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
        ),
        "per_clip": atomic_write_csv(
            directory / "per_clip.csv", pd.DataFrame([asdict(c) for c in report.clips])
        ),
        "lvet_series": atomic_write_csv(directory / "lvet_series.csv", report.lvet_windows),
    }
    for name, ba in (("hr", report.hr_bland_altman), ("lvet", report.lvet_bland_altman)):
        points = ba.points() if ba is not None else pd.DataFrame(columns=["truth", "diff"])
        paths[f"bland_altman_{name}"] = atomic_write_csv(directory / f"bland_altman_{name}.csv", points)
    return paths
