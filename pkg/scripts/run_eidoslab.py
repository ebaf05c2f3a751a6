"""
CLI entry point for eidoslab runs.

Usage:
    python scripts/run_eidoslab.py synth --kind sine+trend --count 256 --out runs/toy
    python scripts/run_eidoslab.py train --config config/toy.json --out runs/toy
    python scripts/run_eidoslab.py eval --out runs/toy
    python scripts/run_eidoslab.py noise --out runs/toy --kind impulse
"""
import sys
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from eidoslab.cli import main


if __name__ == "__main__":
    sys.exit(main())
