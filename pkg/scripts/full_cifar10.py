#!/usr/bin/env python3
"""Plain CIFAR-10 runs plus the parameter-budget sweep.

Trains the (32,32,64) baseline and its parameter-matched maxmin partner,
then sweeps smaller and larger budgets; the maxmin column should win at
every budget. Hours of CPU; $DATA_DIR must hold the binary batches.
"""
import sys

from maxmin_cnn.cli import main

if __name__ == "__main__":
    code = main([
        "compare",
        "--budgets", "8-8-16,16-16-32,32-32-64,64-64-128",
        "--epochs", "60", "--lr", "0.01", "--weight-decay", "1e-4",
        "--seed", "1", "--out", "runs/cifar_budget_sweep.csv",
    ] + sys.argv[1:])
    sys.exit(code)
