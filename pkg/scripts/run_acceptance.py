#!/usr/bin/env python3
"""
Acceptance Runner
Runs the full-scale verification suite through the command line and reports each outcome
"""

import os
import sys
import time
from datetime import datetime

# Add parent directory to path to import the toolkit modules
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

from app import main as cli_main

ACCEPTANCE_RUNS = [
    ("history distribution", ["verify", "lemma1", "--n", "8", "--i", "3", "--trials", "20000", "--seed", "7"]),
    ("history moment i=1", ["verify", "lemma2", "--n", "8", "--i", "1", "--trials", "50000"]),
    ("history moment i=4", ["verify", "lemma2", "--n", "8", "--i", "4", "--trials", "50000"]),
    ("history moment i=7", ["verify", "lemma2", "--n", "8", "--i", "7", "--trials", "50000"]),
    ("with-replacement moment", ["verify", "lemma2-wr", "--n", "6", "--i", "3", "--trials", "50000"]),
    ("bias identities", ["verify", "bias", "--n", "8", "--states", "50"]),
    ("gradient accounting", ["accounting", "--n", "10"]),
    ("SAGA decay", ["verify", "decay", "--solver", "saga", "--n", "50", "--m", "5", "--seeds", "100", "--epochs", "200"]),
    ("AVRG decay", ["verify", "decay", "--solver", "avrg", "--n", "50", "--m", "5", "--seeds", "100", "--epochs", "200"]),
    ("reshuffling advantage", ["verify", "rr-advantage", "--n", "200", "--m", "10", "--pairs", "20", "--epochs", "30"]),
]


def run_acceptance(selected=None):
    """
    Run every acceptance command (or the named subset) and print a summary

    Returns:
        bool: True if every command exited with status 0
    """
    print("\n" + "=" * 60)
    print("ACCEPTANCE RUN")
    print("=" * 60)
    print(f"Starting at: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")

    results = []
    for name, argv in ACCEPTANCE_RUNS:
        if selected and name not in selected:
            continue
        print(f"\n▶ {name}: vrr {' '.join(argv)}")
        started = time.perf_counter()
        code = cli_main(argv)
        elapsed = time.perf_counter() - started
        mark = "✓" if code == 0 else "✗"
        print(f"{mark} {name}: exit {code} in {elapsed:.1f}s")
        results.append((name, code, elapsed))

    print("\n" + "=" * 60)
    print("SUMMARY")
    print("=" * 60)
    for name, code, elapsed in results:
        print(f"   {'✓' if code == 0 else '✗'} {name:<28} exit {code}  {elapsed:7.1f}s")
    print("=" * 60 + "\n")
    return all(code == 0 for _, code, _ in results)


if __name__ == "__main__":
    success = run_acceptance(set(sys.argv[1:]) or None)
    sys.exit(0 if success else 1)
