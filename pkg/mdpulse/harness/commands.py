"""
Commands behind the mdpulse CLI.

Output layout under RunConfig.out_dir:
    data/           clip_NNNN.bin + sidecars, manifest.csv
    train/          model.ckpt, final.ckpt, best.ckpt, loss_history.csv
    eval/           report.json, per_clip.csv, lvet_series.csv, bland_altman_*.csv
    ablate/         ablation_table.csv, cell_NN/ (checkpoints + eval files)
    plots/          waveforms_clip_NNNN.csv + the eval point files
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from mdpulse.atomic import atomic_write_csv
from mdpulse.errors import IoError, MdPulseError, ShapeMismatch
from mdpulse.harness.config import RunConfig
from mdpulse.metrics.evaluate import (
    ClipSignals,
    EvalReport,
    aligned_difference,
    detect_fiducials,
    evaluate_clips,
    pulse_from_first_difference,
    write_report,
)
from mdpulse.models.config import ModelConfig, ablation_grid, row_label
from mdpulse.models.inference import predict_clip
from mdpulse.models.network import Model, build_model, load_model, save_model
from mdpulse.optics.render import VideoClip, make_dataset
from mdpulse.optics.storage import load_clip, save_clip
from mdpulse.preprocess.frames import crop_downsample
from mdpulse.training.trainer import TrainResult, train

logger = logging.getLogger(__name__)

MANIFEST = "manifest.csv"
ABLATION_COLUMNS = [
    "cell",
    "arch",
    "fd_input",
    "sd_input",
    "fd_target",
    "sd_target",
    "label",
    "hr_mae_mean",
    "hr_mae_std",
    "lvet_mae_mean",
    "lvet_mae_std",
    "failure",
]


def split_clips(n_clips: int, test_fraction: float, seed: int) -> Tuple[List[int], List[int]]:
    """Seeded clip-level split; both sides keep at least one clip when n >= 2."""
    order = np.random.default_rng(seed).permutation(n_clips)
    n_test = int(round(n_clips * test_fraction))
    if test_fraction > 0 and n_clips >= 2:
        n_test = min(max(n_test, 1), n_clips - 1)
    test = sorted(int(i) for i in order[:n_test])
    train_ids = sorted(int(i) for i in order[n_test:])
    return train_ids, test


def cmd_gen_data(cfg: RunConfig) -> Path:
    """Render the dataset and write clips, sidecars and the manifest."""
    ds = cfg.dataset
    records = make_dataset(
        ds.n_clips, ds.ranges, ds.height, ds.width, ds.fs, ds.duration_s, cfg.dataset_seed
    )
    rows = []
    for record in records:
        name = f"clip_{record.clip_id:04d}"
        paths = save_clip(record.clip, cfg.data_dir, name)
        t, drm = record.template, record.drm
        rows.append(
            {
                "clip_id": record.clip_id,
                "seed": record.seed,
                "hr_bpm": record.hr_bpm,
                "hr_jitter": record.hr_jitter,
                "systolic_center": t.systolic_center,
                "systolic_width": t.systolic_width,
                "dicrotic_center": t.dicrotic_center,
                "dicrotic_width": t.dicrotic_width,
                "dicrotic_amp": t.dicrotic_amp,
                "template_shape": t.shape,
                "illumination": drm.illumination,
                "stationary_strength": drm.stationary_strength,
                "pulsatile_scale": float(np.linalg.norm(drm.pulsatile_color)),
                "noise_sigma": drm.noise_sigma,
                "specular_amp": drm.specular_amp,
                "specular_freq": drm.specular_freq,
                "motion_amp": drm.motion_amp,
                "motion_freq": drm.motion_freq,
                "skin_region": " ".join(str(v) for v in drm.skin_region),
                "saturated_fraction": record.clip.saturated_fraction,
                "n_frames": record.clip.n_frames,
                "frames_file": paths["frames"].name,
                "ppg_file": paths["ppg"].name,
                "fiducials_file": paths["fiducials"].name,
            }
        )
    manifest = atomic_write_csv(cfg.data_dir / MANIFEST, pd.DataFrame(rows))
    logger.info("Wrote %d clips to %s", len(rows), cfg.data_dir)
    return manifest


def load_manifest(data_dir) -> pd.DataFrame:
    path = Path(data_dir) / MANIFEST
    if not path.exists():
        raise IoError(path)
    return pd.read_csv(path, float_precision="round_trip")


def load_clips(data_dir, manifest: pd.DataFrame, ids: Sequence[int], input_hw: int) -> List[Tuple[int, VideoClip]]:
    """Load the clips with the given row positions, resized to input_hw."""
    clips = []
    for i in ids:
        row = manifest.iloc[i]
        clip = load_clip(Path(data_dir) / row["frames_file"])
        if clip.height != input_hw or clip.width != input_hw:
            clip = crop_downsample(clip, input_hw, input_hw)
        clips.append((int(row["clip_id"]), clip))
    return clips


def _split(cfg: RunConfig, data_dir) -> Tuple[pd.DataFrame, List[int], List[int]]:
    manifest = load_manifest(data_dir)
    train_ids, test_ids = split_clips(len(manifest), cfg.split.test_fraction, cfg.split_seed)
    return manifest, train_ids, test_ids


@dataclass(eq=False)
class TrainOutcome:
    result: TrainResult
    checkpoint: Path
    loss_history: Path


def _train_model(cfg: RunConfig, model_cfg: ModelConfig, clips: Sequence[VideoClip], out_dir: Path) -> TrainResult:
    model = build_model(model_cfg, cfg.preprocess.input_hw, cfg.training.window_T, seed=cfg.training.seed)
    return train(model, list(clips), replace(cfg.training, checkpoint_dir=str(out_dir)))


def cmd_train(cfg: RunConfig, data_dir=None) -> TrainOutcome:
    data_dir = Path(data_dir) if data_dir is not None else cfg.data_dir
    manifest, train_ids, _ = _split(cfg, data_dir)
    clips = [c for _, c in load_clips(data_dir, manifest, train_ids, cfg.preprocess.input_hw)]
    out_dir = cfg.out / "train"
    result = _train_model(cfg, cfg.model, clips, out_dir)
    checkpoint = save_model(out_dir / "model.ckpt", result.model)
    logger.info("Trained %d epochs; checkpoint at %s", len(result.loss_history), checkpoint)
    return TrainOutcome(result, checkpoint, out_dir / "loss_history.csv")


def _clip_signals(model: Model, cfg: RunConfig, clips: Sequence[Tuple[int, VideoClip]]) -> List[ClipSignals]:
    signals = []
    for clip_id, clip in clips:
        pred = predict_clip(
            model,
            clip,
            cfg.training.window_stride,
            cfg.training.epsilon,
            cfg.training.standardize_frames,
            cfg.training.standardize_targets,
        )
        signals.append(
            ClipSignals(
                clip_id,
                pred.fs,
                pred.truth["fd"],
                pred.truth["sd"],
                pred.predicted.get("fd"),
                pred.predicted.get("sd"),
            )
        )
    return signals


def _checked_model(cfg: RunConfig, checkpoint) -> Model:
    checkpoint = Path(checkpoint) if checkpoint is not None else cfg.out / "train" / "model.ckpt"
    model = load_model(checkpoint)
    if model.input_hw != cfg.preprocess.input_hw:
        raise ShapeMismatch(
            f"checkpoint expects {model.input_hw}x{model.input_hw} input, "
            f"config preprocesses to {cfg.preprocess.input_hw}"
        )
    return model


def cmd_eval(cfg: RunConfig, checkpoint=None, data_dir=None) -> EvalReport:
    """Evaluate a checkpoint on the held-out clips and write the report files."""
    data_dir = Path(data_dir) if data_dir is not None else cfg.data_dir
    model = _checked_model(cfg, checkpoint)
    manifest, _, test_ids = _split(cfg, data_dir)
    clips = load_clips(data_dir, manifest, test_ids, model.input_hw)
    report = evaluate_clips(_clip_signals(model, cfg, clips), cfg.eval)
    write_report(report, cfg.out / "eval")
    return report


@dataclass(frozen=True)
class AblationCell:
    index: int
    model: ModelConfig
    run: RunConfig
    data_dir: str


def run_ablation_cell(cell: AblationCell, clips=None) -> Dict:
    """Train and evaluate one grid cell; errors become the row's failure text."""
    cfg, model_cfg = cell.run, cell.model
    row = {
        "cell": cell.index,
        "arch": model_cfg.arch,
        "fd_input": model_cfg.use_fd_input,
        "sd_input": model_cfg.use_sd_input,
        "fd_target": model_cfg.use_fd_target,
        "sd_target": model_cfg.use_sd_target,
        "label": row_label(model_cfg),
        "hr_mae_mean": np.nan,
        "hr_mae_std": np.nan,
        "lvet_mae_mean": np.nan,
        "lvet_mae_std": np.nan,
        "failure": "",
    }
    cell_dir = cfg.out / "ablate" / f"cell_{cell.index:02d}"
    try:
        if clips is None:
            clips = _ablation_clips(cfg, cell.data_dir)
        train_clips, test_clips = clips
        result = _train_model(cfg, model_cfg, [c for _, c in train_clips], cell_dir)
        report = evaluate_clips(_clip_signals(result.model, cfg, test_clips), cfg.eval)
        write_report(report, cell_dir / "eval")
        if report.hr_mae is not None:
            row["hr_mae_mean"], row["hr_mae_std"] = report.hr_mae.mean, report.hr_mae.std
        if report.lvet_mae is not None:
            row["lvet_mae_mean"], row["lvet_mae_std"] = report.lvet_mae.mean, report.lvet_mae.std
    except MdPulseError as exc:
        row["failure"] = f"{type(exc).__name__}: {exc}"
        logger.warning("Ablation cell %d failed: %s", cell.index, row["failure"])
    logger.info("Ablation cell %d (%s %s) done", cell.index, model_cfg.arch, row["label"] or "")
    return row


def _ablation_clips(cfg: RunConfig, data_dir):
    manifest, train_ids, test_ids = _split(cfg, data_dir)
    hw = cfg.preprocess.input_hw
    return load_clips(data_dir, manifest, train_ids, hw), load_clips(data_dir, manifest, test_ids, hw)


def cmd_ablate(cfg: RunConfig, data_dir=None) -> pd.DataFrame:
    """
    Train and evaluate every (arch x input x target) cell on one shared
    split. Rows come out in grid order whatever order the cells finish in.
    """
    data_dir = Path(data_dir) if data_dir is not None else cfg.data_dir
    grid = ablation_grid(cfg.ablate.archs, cfg.ablate.include_sd_input_only, base=cfg.model)
    cells = [AblationCell(i, m, cfg, str(data_dir)) for i, m in enumerate(grid)]
    logger.info("Running %d ablation cells with %d worker(s)", len(cells), cfg.ablate.workers)
    if cfg.ablate.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.ablate.workers) as pool:
            rows = list(pool.map(run_ablation_cell, cells))
    else:
        clips = _ablation_clips(cfg, data_dir)
        rows = [run_ablation_cell(cell, clips) for cell in cells]
    table = pd.DataFrame(rows, columns=ABLATION_COLUMNS)
    atomic_write_csv(cfg.out / "ablate" / "ablation_table.csv", table)
    return table


def _fiducial_marks(sd: np.ndarray, fs: float, hr: Optional[float], cfg: RunConfig) -> Tuple[np.ndarray, np.ndarray]:
    marks_d = np.zeros(sd.shape[0], dtype=np.int64)
    marks_n = np.zeros(sd.shape[0], dtype=np.int64)
    try:
        fid = detect_fiducials(sd, fs, hr, **cfg.eval.detector_knobs())
    except MdPulseError:
        return marks_d, marks_n
    marks_d[fid.diastolic_idx] = 1
    marks_n[fid.notch_idx] = 1
    return marks_d, marks_n


def cmd_export_plots(cfg: RunConfig, checkpoint=None, data_dir=None) -> List[Path]:
    """
    Per test clip, write true vs predicted waveforms (integrated pulse, FD,
    SD) with detected fiducial marks; also writes the eval point files.
    """
    data_dir = Path(data_dir) if data_dir is not None else cfg.data_dir
    model = _checked_model(cfg, checkpoint)
    manifest, _, test_ids = _split(cfg, data_dir)
    clips = load_clips(data_dir, manifest, test_ids, model.input_hw)
    signals = _clip_signals(model, cfg, clips)
    report = evaluate_clips(signals, cfg.eval)
    plots_dir = cfg.out / "plots"
    write_report(report, plots_dir)

    written = []
    for (clip_id, clip), sig, result in zip(clips, signals, report.clips):
        n = sig.true_fd.shape[0]
        columns = {
            "time_s": np.arange(n) / sig.fs,
            "ppg": clip.source_ppg.samples[:n],
            "true_pulse": pulse_from_first_difference(sig.true_fd),
            "true_fd": sig.true_fd,
            "true_sd": sig.true_sd,
        }
        true_d, true_n = _fiducial_marks(sig.true_sd, sig.fs, result.hr_true, cfg)
        columns["true_diastolic"], columns["true_notch"] = true_d, true_n
        if sig.pred_fd is not None:
            columns["pred_pulse"] = pulse_from_first_difference(sig.pred_fd)
            columns["pred_fd"] = sig.pred_fd
        pred_sd = sig.pred_sd if sig.pred_sd is not None else aligned_difference(sig.pred_fd)
        columns["pred_sd"] = pred_sd
        pred_d, pred_n = _fiducial_marks(pred_sd, sig.fs, result.hr_pred, cfg)
        columns["pred_diastolic"], columns["pred_notch"] = pred_d, pred_n
        written.append(atomic_write_csv(plots_dir / f"waveforms_clip_{clip_id:04d}.csv", pd.DataFrame(columns)))
    logger.info("Exported %d waveform files to %s", len(written), plots_dir)
    return written
