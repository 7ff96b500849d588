"""
Configuration settings for the variance-reduced solver toolkit
This file contains environment-driven defaults and fixed numeric policy constants
"""

import os

import numpy as np
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


class Config:
    # Default base seed for runs and verification replays
    DEFAULT_SEED = int(os.environ.get("VRR_SEED", "0"))

    # Logging level applied by the command line entry point
    LOG_LEVEL = os.environ.get("VRR_LOG_LEVEL", "WARNING").upper()

    # Process fan-out for multi-seed runs (1 = run in-process)
    WORKERS = int(os.environ.get("VRR_WORKERS", "1"))

    # Reference minimizer settings
    REFERENCE_TOL = float(os.environ.get("VRR_REFERENCE_TOL", "1e-12"))
    REFERENCE_MAX_ITER = int(os.environ.get("VRR_REFERENCE_MAX_ITER", "100000"))

    # Statistical and numerical policy
    CHI_SQUARE_THRESHOLD = 1e-3
    TABLE_RESYNC_TOL = 1e-10
    EXCESS_RISK_FLOOR_FACTOR = 10.0
    ZERO_ENERGY_FLOOR = 1e3 * float(np.finfo(float).eps)
    DECAY_SLACK = 1.05
    ENVELOPE_SLACK = 1.10
    DECAY_MIN_SEEDS = 100
    LEMMA_MIN_TRIALS = 1000
    MOMENT_REL_TOL = 0.02
    EXACT_TOL = 1e-12
    RR_WIN_FRACTION = 0.8
