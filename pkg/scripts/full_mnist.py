#!/usr/bin/env python3
"""Full MNIST reproduction: baseline vs maxmin at 64 filters per layer.

Expected test accuracy after ~250 epochs: about 99.3% for the baseline
and slightly higher for the maxmin variant. Takes hours on CPU; point
$DATA_DIR at the decompressed IDX files first.
"""
import sys

from maxmin_cnn.cli import main

SEED = "1"

if __name__ == "__main__":
    for arch in ("baseline", "maxmin"):
        code = main([
            "train", "--dataset", "mnist", "--arch", arch,
            "--epochs", "250", "--lr", "0.01", "--weight-decay", "1e-3",
            "--seed", SEED, "--float32", "--out", f"runs/mnist_{arch}",
        ] + sys.argv[1:])
        if code != 0:
            sys.exit(code)
