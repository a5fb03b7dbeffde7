"""
A teacher for two moons
=======================

Train the reference MLP on two interleaving arcs and look at where it is
unsure.  The low-confidence band should sit between the arcs.
"""

import numpy as np

from dfkd import data, nn
from dfkd.evaluation import accuracy, boundary_report

train = data.make_two_moons(1000, noise_sd=0.1, seed=0)
test = data.make_two_moons(1000, noise_sd=0.1, seed=1)

arch = "input(2), dense(2,64), relu, dense(64,64), relu, dense(64,2)"
teacher = nn.init_network(arch, "teacher", seed=0)
nn.train_classifier(teacher, train.inputs, train.labels, steps=2000, batch_size=128, lr=1e-3)
print("train accuracy", accuracy(teacher, train))
print("test accuracy", accuracy(teacher, test))

rep = boundary_report(teacher, teacher, data.make_grid(resolution=60))
print("share of the square in the boundary band", rep.band_fraction)

# coarse text picture of the teacher's classes; '.' marks the band
cls = rep.teacher_class.reshape(60, 60)
band = (rep.teacher_confidence < 0.9).reshape(60, 60)
for row in range(59, -1, -4):
    print("".join("." if band[row, c] else "01"[cls[row, c]] for c in range(0, 60, 2)))
