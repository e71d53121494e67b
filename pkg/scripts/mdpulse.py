"""
mdpulse entry point

Run with: python scripts/mdpulse.py <command> --config configs/desk.env

Commands: gen-data, train, eval, ablate, export-plots
"""

import sys
from pathlib import Path

# Allow running from a checkout without installing
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from mdpulse.harness.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
