#!/usr/bin/env python3
"""
Command-line script for the DecAP lab.

    python scripts/decap_lab.py train-position --seed 0
    python scripts/decap_lab.py record-imitation --policy runs/position_hopper_seed0/policy.ckpt --out runs/hopper.imit
    python scripts/decap_lab.py train-torque --mode decap --imitation runs/hopper.imit
"""

import sys
import logging
from pathlib import Path

# ------------------------------------------------------------------
# Project root
# ------------------------------------------------------------------
PROJECT_ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(PROJECT_ROOT))

from src.config import settings
from src.cli import run

# ------------------------------------------------------------------
# Logging
# ------------------------------------------------------------------
logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
