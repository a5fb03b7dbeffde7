"""
Distilling without data
=======================

The student never sees a moon point.  It only sees what the generator
produces, and the generator is rewarded for finding inputs where teacher
and student disagree.  Held-out points are used for scoring only.

Writes plot-ready CSVs to ``demo-out/`` (boundary grid and generated samples).
"""

from pathlib import Path

import numpy as np

from dfkd import data, nn
from dfkd.distill import DistillConfig, run_distillation
from dfkd.evaluation import (GRID_HEADER, boundary_report, generated_sample_dump, grid_rows,
                             write_csv, write_metrics_csv)

out = Path("demo-out")
out.mkdir(exist_ok=True)

train = data.make_two_moons(1000, 0.1, seed=0)
heldout = data.make_two_moons(1000, 0.1, seed=1)
teacher = nn.init_network("input(2), dense(2,64), relu, dense(64,64), relu, dense(64,2)",
                          "teacher", seed=0)
nn.train_classifier(teacher, train.inputs, train.labels, steps=2000)
teacher.requires_grad_(False)

cfg = DistillConfig(total_steps=1000)


def show(rec):
    if rec.eval_agreement is not None and rec.step % 200 == 0:
        print(f"step {rec.step:5d}  matcher {rec.loss_matcher:.4f}  agreement {rec.eval_agreement:.3f}")


student, generator, metrics = run_distillation(teacher, cfg, eval_points=heldout.inputs,
                                               eval_every=50, on_metrics=show)
write_metrics_csv(out / "metrics.csv", metrics)

rep = boundary_report(teacher, student, data.make_grid(resolution=100))
write_csv(out / "grid.csv", GRID_HEADER, grid_rows(rep))
print("grid agreement (all)", rep.agreement())
print("grid agreement (teacher confident)", rep.agreement(0.9))

header, rows = generated_sample_dump(generator, teacher, 500, np.random.default_rng(0))
write_csv(out / "samples.csv", header, rows)
xy = np.array([r[:2] for r in rows])
print("generated samples: mean", xy.mean(0), "spread", xy.std(0))
