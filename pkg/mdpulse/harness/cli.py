"""
mdpulse command line

Usage:
    python scripts/mdpulse.py gen-data --config configs/desk.env
    python scripts/mdpulse.py train --config configs/desk.env
    python scripts/mdpulse.py eval --config configs/desk.env
    python scripts/mdpulse.py ablate --config configs/desk.env --set ablate.workers=4
    python scripts/mdpulse.py export-plots --config configs/desk.env

Exit codes: 0 success, 1 mdpulse error, 2 usage or unexpected error.
Progress and log records go to stdout; stderr carries nothing but the
failure, as one JSON object {"error": ..., "message": ...}.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

import numpy as np

from mdpulse.errors import MdPulseError
from mdpulse.harness.commands import cmd_ablate, cmd_eval, cmd_export_plots, cmd_gen_data, cmd_train
from mdpulse.harness.config import RunConfig, load_run_config, parse_overrides

logger = logging.getLogger("mdpulse")

COMMANDS = ("gen-data", "train", "eval", "ablate", "export-plots")


class UsageError(Exception):
    """Bad command-line arguments."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mdpulse", description="Synthetic rPPG training and evaluation")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="Config file of section.key=value lines")
    parser.add_argument("--seed", type=int, help="Master seed (run.seed)")
    parser.add_argument("--out", help="Output directory (run.out_dir)")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config key, e.g. training.epochs=2 (repeatable)",
    )
    parser.add_argument("--checkpoint", help="Model checkpoint for eval/export-plots")
    parser.add_argument("--data", help="Dataset directory (default: <out>/data)")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    return parser


def _banner(title: str) -> None:
    print("=" * 60)
    print(title)
    print("=" * 60)


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None or not np.isfinite(value) else f"{value:.3f}"


def run(command: str, cfg: RunConfig, checkpoint=None, data_dir=None) -> None:
    _banner(f"mdpulse {command}")
    print(f"Seed: {cfg.seed}")
    print(f"Output: {cfg.out}")

    if command == "gen-data":
        manifest = cmd_gen_data(cfg)
        print(f"\n✅ {cfg.dataset.n_clips} clips written")
        print(f"   Manifest: {manifest}")
    elif command == "train":
        outcome = cmd_train(cfg, data_dir)
        history = outcome.result.loss_history
        print(f"\n✅ Trained {len(history)} epochs (final loss {history[-1]:.6f})")
        print(f"   Best epoch: {outcome.result.best_epoch}")
        print(f"   Checkpoint: {outcome.checkpoint}")
    elif command == "eval":
        report = cmd_eval(cfg, checkpoint, data_dir)
        failed = [c for c in report.clips if c.error]
        print(f"\n✅ Evaluated {len(report.clips)} clips ({len(failed)} with errors)")
        if report.hr_mae is not None:
            print(f"   HR MAE:   {_fmt(report.hr_mae.mean)} ± {_fmt(report.hr_mae.std)} BPM")
        if report.lvet_mae is not None:
            print(f"   LVET MAE: {_fmt(report.lvet_mae.mean)} ± {_fmt(report.lvet_mae.std)} ms")
        for clip in failed:
            print(f"   ❌ clip {clip.clip_id}: {clip.error}")
    elif command == "ablate":
        table = cmd_ablate(cfg, data_dir)
        print("\n" + "-" * 60)
        print("Ablation")
        print("-" * 60)
        for row in table.itertuples(index=False):
            status = "❌" if row.failure else "✅"
            print(
                f"{status} {row.cell:2d} {row.arch:<9} in(fd={row.fd_input}, sd={row.sd_input}) "
                f"out(fd={row.fd_target}, sd={row.sd_target}) "
                f"HR {_fmt(row.hr_mae_mean)} LVET {_fmt(row.lvet_mae_mean)} {row.label}"
            )
    elif command == "export-plots":
        written = cmd_export_plots(cfg, checkpoint, data_dir)
        print(f"\n✅ Wrote {len(written)} waveform files to {cfg.out / 'plots'}")


def _report_error(exc: BaseException) -> None:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _report_error(exc)
        return 2
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stdout,
    )
    try:
        cfg = load_run_config(args.config, parse_overrides(args.set), args.seed, args.out)
        run(args.command, cfg, args.checkpoint, args.data)
    except MdPulseError as exc:
        logger.error("%s failed: %s", args.command, exc)
        _report_error(exc)
        return 1
    except Exception as exc:
        logger.exception("%s crashed", args.command)
        _report_error(exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
