#!/usr/bin/env python3
"""Boosted CIFAR-10 maxmin run: augmentation + ZCA + dropout + per-pool LRN.

Targets high-80s test accuracy with a single network; wall-clock depends
heavily on the host. $DATA_DIR must hold the binary batches.
"""
import sys

from maxmin_cnn.cli import main

if __name__ == "__main__":
    code = main([
        "train", "--dataset", "cifar10", "--arch", "maxmin", "--boost",
        "--epochs", "120", "--lr", "0.01", "--weight-decay", "1e-4",
        "--seed", "1", "--float32", "--out", "runs/cifar_boosted_maxmin",
    ] + sys.argv[1:])
    sys.exit(code)
