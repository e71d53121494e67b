"""
Clip persistence.

<name>.bin             ASCII header "T H W C fs\\n", then little-endian float32 frames
<name>_ppg.csv         time_s,ppg
<name>_fiducials.csv   beat,diastolic_idx,notch_idx,lvet_ms
"""

from pathlib import Path
from typing import Dict

import numpy as np
import pandas as pd

from mdpulse.atomic import atomic_write_bytes, atomic_write_csv
from mdpulse.errors import IoError
from mdpulse.optics.render import VideoClip
from mdpulse.signals.ppg import Fiducials, PpgSignal


def save_clip(clip: VideoClip, directory, name: str) -> Dict[str, Path]:
    directory = Path(directory)
    t, h, w, c = clip.frames.shape
    header = f"{t} {h} {w} {c} {clip.fs!r}\n".encode("ascii")
    payload = np.ascontiguousarray(clip.frames, dtype="<f4").tobytes()
    frames_path = atomic_write_bytes(directory / f"{name}.bin", header + payload)

    ppg = clip.source_ppg
    ppg_path = atomic_write_csv(
        directory / f"{name}_ppg.csv",
        pd.DataFrame({"time_s": ppg.times, "ppg": ppg.samples}),
    )
    fid = ppg.fiducials
    if fid is None:
        fid_frame = pd.DataFrame(columns=["beat", "diastolic_idx", "notch_idx", "lvet_ms"])
    else:
        fid_frame = pd.DataFrame(
            {
                "beat": np.arange(len(fid)),
                "diastolic_idx": fid.diastolic_idx,
                "notch_idx": fid.notch_idx,
                "lvet_ms": fid.lvet_ms,
            }
        )
    fid_path = atomic_write_csv(directory / f"{name}_fiducials.csv", fid_frame)
    return {"frames": frames_path, "ppg": ppg_path, "fiducials": fid_path}


def _sidecar(frames_path: Path, suffix: str) -> Path:
    return frames_path.with_name(frames_path.stem + suffix)


def load_clip(frames_path) -> VideoClip:
    """Load a clip written by save_clip; sidecars are found next to the .bin file."""
    frames_path = Path(frames_path)
    if not frames_path.exists():
        raise IoError(frames_path)
    raw = frames_path.read_bytes()
    newline = raw.find(b"\n")
    try:
        t, h, w, c, fs = raw[:newline].decode("ascii").split()
        shape = (int(t), int(h), int(w), int(c))
        fs = float(fs)
    except ValueError as exc:
        raise IoError(frames_path, "malformed header") from exc
    payload = raw[newline + 1 :]
    if len(payload) != 4 * int(np.prod(shape)):
        raise IoError(frames_path, f"payload does not match header shape {shape}")
    frames = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)

    ppg_path = _sidecar(frames_path, "_ppg.csv")
    fid_path = _sidecar(frames_path, "_fiducials.csv")
    for path in (ppg_path, fid_path):
        if not path.exists():
            raise IoError(path)
    samples = pd.read_csv(ppg_path, float_precision="round_trip")["ppg"].to_numpy(np.float64)
    fid_frame = pd.read_csv(fid_path)
    fiducials = None
    if len(fid_frame):
        fiducials = Fiducials.from_indices(
            fid_frame["diastolic_idx"].to_numpy(), fid_frame["notch_idx"].to_numpy(), fs
        )
    ppg = PpgSignal(samples, fs, fiducials, normalized=True)
    return VideoClip(frames, fs, ppg)
