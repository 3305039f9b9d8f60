#!/usr/bin/env python3
"""Synthetic-blobs pipeline: the MNIST-shaped protocol on generated Gaussian
clusters, with a BN hidden layer and dual-PCA compression exercised.

Usage: python scripts/run_blobs_pipeline.py [--out DIR] [--quick]
"""

import argparse
import os
import sys

from weightflow.cli import main as cli_main

CONFIG = """\
[run]
task = blobs
seed = 0

[data]
blobs_classes = 3
blobs_per_class = 100
blobs_dim = 8

[arch]
layer_dims = 8,16,16,3
bn = 1,1

[population]
size = {size}
base_seed = 200
epochs = 40

[canonicalize]
mode = rebasin

[pca]
mode = dual
exact_eigen = 1

[flow]
hidden_dim = 128
time_embed_dim = 4
dropout = 0.1
iterations = {iters}

[generate]
count = {count}
"""


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/blobs")
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    size, count, iters = (5, 5, 400) if args.quick else (25, 25, 15000)
    os.makedirs(args.out, exist_ok=True)
    cfg_path = os.path.join(args.out, "config.ini")
    with open(cfg_path, "w", encoding="utf-8") as f:
        f.write(CONFIG.format(size=size, count=count, iters=iters))
    rc = cli_main(["run", "--config", cfg_path, "--out", args.out])
    if rc == 0:
        with open(os.path.join(args.out, "report.txt"), encoding="utf-8") as f:
            print(f.read())
    return rc


if __name__ == "__main__":
    sys.exit(main())
