"""
MNIST, if you have it
=====================

Point ``DFKD_MNIST_DIR`` at a folder holding the four standard IDX files
(optionally gzipped).  This drives the command-line pipeline: teacher,
data-free distillation, evaluation.  Expect a CPU-hour or so.
"""

import os
import sys
from pathlib import Path

from dfkd.cli import main

root = Path(os.environ.get("DFKD_MNIST_DIR", "mnist"))
names = {
    "train_images": "train-images-idx3-ubyte", "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte", "test_labels": "t10k-labels-idx1-ubyte",
}
paths = {}
for key, stem in names.items():
    hits = [p for p in (root / stem, root / f"{stem}.gz") if p.exists()]
    if not hits:
        sys.exit(f"missing {stem} under {root}")
    paths[key] = hits[0]

cfg = Path("mnist-demo.cfg")
cfg.write_text("task = mnist\n" + "".join(f"mnist_{k} = {v}\n" for k, v in paths.items()))

for cmd in ("train-teacher", "distill", "eval"):
    code = main([cmd, "--config", str(cfg), "--out", "mnist-run"])
    if code:
        sys.exit(code)
