"""Accuracy, agreement and decision-boundary diagnostics, plus CSV writers."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import EvalGrid, LabeledBatch
from .nn import Network, forward

BAND_CONFIDENCE = 0.9
METRIC_FIELDS = ("step", "loss_matcher", "loss_gen", "r_l", "r_m", "loss_mixup", "lambda",
                 "eval_agreement", "wall_clock")


@dataclass
class RunMetrics:
    step: int
    loss_matcher: float = float("nan")
    loss_gen: float = float("nan")
    r_l: float = float("nan")
    r_m: float = float("nan")
    loss_mixup: float = float("nan")
    lam: float = float("nan")
    eval_agreement: float | None = None
    wall_clock: float = 0.0

    def row(self, include_clock: bool = False) -> dict:
        r = {"step": self.step, "loss_matcher": self.loss_matcher, "loss_gen": self.loss_gen,
             "r_l": self.r_l, "r_m": self.r_m, "loss_mixup": self.loss_mixup, "lambda": self.lam,
             "eval_agreement": "" if self.eval_agreement is None else self.eval_agreement}
        if include_clock:
            r["wall_clock"] = self.wall_clock
        return r


@dataclass
class BoundaryGridReport:
    grid: EvalGrid
    teacher_class: np.ndarray
    student_class: np.ndarray
    teacher_confidence: np.ndarray
    band_threshold: float = BAND_CONFIDENCE

    @property
    def band_fraction(self) -> float:
        """Share of grid points where the teacher's top probability is below the threshold."""
        return float(np.mean(self.teacher_confidence < self.band_threshold))

    def agreement(self, min_confidence: float = 0.0) -> float:
        mask = self.teacher_confidence >= min_confidence
        if not mask.any():
            return float("nan")
        return float(np.mean(self.teacher_class[mask] == self.student_class[mask]))


def predict_logits(net: Network, points: Tensor, chunk: int = 4096) -> np.ndarray:
    if points.shape[0] == 0:
        raise ValueError("cannot evaluate an empty batch")
    out = []
    with ad.no_grad():
        for i in range(0, points.shape[0], chunk):
            out.append(forward(net, Tensor(points.data[i:i + chunk]))[0].data)
    return np.concatenate(out)


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def accuracy(net: Network, batch: LabeledBatch) -> float:
    logits = predict_logits(net, batch.inputs)
    if logits.shape[1] != batch.num_classes:
        raise ValueError(f"network has {logits.shape[1]} classes, batch has {batch.num_classes}")
    return float(np.mean(logits.argmax(axis=1) == batch.labels))


def agreement(student: Network, teacher: Network, points: Tensor) -> float:
    s, t = predict_logits(student, points), predict_logits(teacher, points)
    if s.shape != t.shape:
        raise ValueError(f"student logits {list(s.shape)} vs teacher logits {list(t.shape)}")
    return float(np.mean(s.argmax(axis=1) == t.argmax(axis=1)))


def boundary_report(teacher: Network, student: Network, grid: EvalGrid,
                    band_threshold: float = BAND_CONFIDENCE) -> BoundaryGridReport:
    for net in (teacher, student):
        if tuple(net.input_shape) != (2,):
            raise ValueError(f"boundary report needs 2-D inputs, {net.role} takes {list(net.input_shape)}")
    t = predict_logits(teacher, grid.points)
    s = predict_logits(student, grid.points)
    return BoundaryGridReport(grid, t.argmax(axis=1), s.argmax(axis=1),
                              _softmax(t).max(axis=1), band_threshold)


def generated_sample_dump(generator: Network, teacher: Network, n: int,
                          rng: np.random.Generator) -> tuple[list[str], list[list]]:
    """Fresh generator samples annotated with the teacher's class and confidence.

    Returns (header, rows).  2-D samples give columns ``x0, x1, ...``; image
    samples are flattened into ``p0 .. pK`` pixel columns.
    """
    z = Tensor(rng.standard_normal((n, generator.input_shape[0])))
    with ad.no_grad():
        x = forward(generator, z)[0].data
    t = predict_logits(teacher, Tensor(x))
    flat = x.reshape(n, -1)
    prefix = "x" if x.ndim == 2 else "p"
    header = [f"{prefix}{i}" for i in range(flat.shape[1])] + ["teacher_class", "teacher_conf"]
    cls, conf = t.argmax(axis=1), _softmax(t).max(axis=1)
    rows = [[*flat[i], int(cls[i]), conf[i]] for i in range(n)]
    return header, rows


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_csv(path, header: list[str], rows) -> None:
    """Write with ',' separators, LF line endings and a mandatory header."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def grid_rows(report: BoundaryGridReport):
    pts = report.grid.points.data
    for i in range(len(pts)):
        yield (pts[i, 0], pts[i, 1], int(report.teacher_class[i]), int(report.student_class[i]),
               report.teacher_confidence[i])


GRID_HEADER = ["x0", "x1", "teacher_class", "student_class", "teacher_conf"]


def write_metrics_csv(path, records: list[RunMetrics], extra: dict | None = None,
                      include_clock: bool = False) -> None:
    """One row per record; ``extra`` columns (e.g. variant, seed) are prepended."""
    extra = extra or {}
    header = list(extra) + [f for f in METRIC_FIELDS if include_clock or f != "wall_clock"]
    rows = ([*extra.values(), *r.row(include_clock).values()] for r in records)
    write_csv(path, header, rows)
