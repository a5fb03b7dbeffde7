"""Data-free adversarial distillation with activation regularizers and mixup.

The generator maps Gaussian noise to inputs on which teacher and student
disagree; the student is trained to close that gap.  Two regularizers on the
teacher's response steer the generator away from inputs that leave the
teacher's neurons inactive, and a mixup term asks the student to interpolate
the teacher's soft labels linearly between pairs of generated inputs.
"""
from __future__ import annotations

import contextlib
import math
import time
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import LatentBatch, sample_latent
from .evaluation import RunMetrics, agreement
from .nn import Network, copy_network, forward, init_network, make_optimizer

MATCHER_LOSSES = ("mae", "kl")


class DivergenceError(RuntimeError):
    def __init__(self, step: int, what: str):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


@dataclass
class DistillConfig:
    matcher_loss: str = "mae"
    temperature: float = 1.0
    w_logit_reg: float = 1.0
    w_feat_reg: float = 0.001
    w_mixup: float = 1.0
    mixup_alpha: float = 1.0
    student_steps_per_gen_step: int = 5
    batch_size: int = 256
    z_dim: int = 16
    total_steps: int = 4000
    seed: int = 0
    student_arch: str = "input(2), dense(2,32), relu, dense(32,32), relu, dense(32,2)"
    generator_arch: str = ("input(16), dense(16,128), relu, dense(128,128), relu, "
                           "dense(128,2), tanh")
    optimizer: str = "adam"
    student_lr: float = 1e-3
    generator_lr: float = 1e-4
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.matcher_loss not in MATCHER_LOSSES:
            raise ValueError(f"matcher_loss must be one of {MATCHER_LOSSES}")
        if self.matcher_loss == "kl" and not self.temperature > 0:
            raise ValueError("temperature must be > 0 for the kl matcher")
        for name in ("w_logit_reg", "w_feat_reg", "w_mixup"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        if not self.mixup_alpha > 0:
            raise ValueError("mixup_alpha must be > 0")
        for name in ("student_steps_per_gen_step", "batch_size", "z_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")

    def replace(self, **changes) -> "DistillConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return DistillConfig(**values)


@dataclass
class MixupDraw:
    lam: float
    x_v: Tensor
    y_v: Tensor


# ---------------------------------------------------------------------------
# losses


def _check_same(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ad.ShapeError(f"{name}: shapes {list(a.shape)} and {list(b.shape)} differ")


def matcher_loss(teacher_logits: Tensor, student_logits: Tensor,
                 cfg: DistillConfig | None = None) -> Tensor:
    """Teacher/student discrepancy: mean |l_T - l_S|, or temperature-scaled KL(p_T || p_S)."""
    _check_same("matcher_loss", teacher_logits, student_logits)
    mode = cfg.matcher_loss if cfg else "mae"
    if mode == "mae":
        return ad.mean(ad.abs(ad.add(student_logits, ad.scale(teacher_logits, -1.0))))
    tau = cfg.temperature
    log_pt = ad.log_softmax(ad.scale(teacher_logits, 1.0 / tau))
    log_ps = ad.log_softmax(ad.scale(student_logits, 1.0 / tau))
    pt = ad.softmax(ad.scale(teacher_logits, 1.0 / tau))
    kl = ad.sum(ad.mul(pt, ad.add(log_pt, ad.scale(log_ps, -1.0))), axis=-1)
    return ad.scale(ad.mean(kl), tau * tau)


def soft_cross_entropy(targets: Tensor, logits: Tensor) -> Tensor:
    """Mean over rows of -sum_k targets_k * log softmax(logits)_k."""
    _check_same("soft_cross_entropy", targets, logits)
    return ad.scale(ad.mean(ad.sum(ad.mul(targets, ad.log_softmax(logits)), axis=-1)), -1.0)


def logit_regularizer(teacher_logits: Tensor) -> Tensor:
    """Cross-entropy of the teacher's softmax against its own argmax label, batch-averaged."""
    if teacher_logits.ndim != 2 or teacher_logits.shape[0] < 1:
        raise ad.ShapeError(f"logit_regularizer expects [n, c] logits, got {list(teacher_logits.shape)}")
    n, c = teacher_logits.shape
    onehot = np.zeros((n, c), dtype=teacher_logits.dtype)
    onehot[np.arange(n), teacher_logits.data.argmax(axis=1)] = 1
    return soft_cross_entropy(Tensor(onehot, dtype=teacher_logits.dtype), teacher_logits)


def feature_regularizer(teacher_features: Tensor) -> Tensor:
    """Negative batch-mean L1 norm of the teacher's features."""
    if teacher_features.ndim < 2 or teacher_features.shape[0] < 1:
        raise ad.ShapeError(
            f"feature_regularizer expects [n, d] features, got {list(teacher_features.shape)}")
    flat = teacher_features
    if flat.ndim > 2:
        flat = ad.reshape(flat, (flat.shape[0], -1))
    return ad.scale(ad.mean(ad.sum(ad.abs(flat), axis=-1)), -1.0)


def _probs(net: Network, x: Tensor) -> Tensor:
    return ad.softmax(forward(net, x)[0])


def mixup_interpolate(x_i: Tensor, x_j: Tensor, lam: float, teacher: Network) -> MixupDraw:
    """Virtual inputs between two batches and the matching blend of teacher probabilities."""
    _check_same("mixup_interpolate", x_i, x_j)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    with ad.no_grad():
        x_v = ad.add(ad.scale(x_i, lam), ad.scale(x_j, 1.0 - lam))
        y_v = ad.add(ad.scale(_probs(teacher, x_i), lam), ad.scale(_probs(teacher, x_j), 1.0 - lam))
    return MixupDraw(float(lam), x_v, y_v)


def mixup_loss(student: Network, generator: Network, z_i: LatentBatch | Tensor,
               z_j: LatentBatch | Tensor, lam: float, teacher: Network) -> Tensor:
    """Soft-target cross-entropy of the student on mixed generated inputs.

    Generated samples are constants here: only the student receives gradients.
    """
    zi = z_i.z if isinstance(z_i, LatentBatch) else z_i
    zj = z_j.z if isinstance(z_j, LatentBatch) else z_j
    _check_same("mixup_loss", zi, zj)
    with ad.no_grad():
        x_i = forward(generator, zi)[0]
        x_j = forward(generator, zj)[0]
    draw = mixup_interpolate(x_i, x_j, lam, teacher)
    return soft_cross_entropy(draw.y_v, forward(student, draw.x_v)[0])


# ---------------------------------------------------------------------------
# objectives


@contextlib.contextmanager
def frozen(*nets: Network):
    """Stop the given networks' parameters from being recorded for gradients."""
    saved = [[p.requires_grad for p in net.parameters()] for net in nets]
    for net in nets:
        net.requires_grad_(False)
    try:
        yield
    finally:
        for net, flags in zip(nets, saved):
            for p, f in zip(net.parameters(), flags):
                p.requires_grad = f


def _check_roles(teacher: Network, student: Network, generator: Network) -> None:
    for net, role in ((teacher, "teacher"), (student, "student"), (generator, "generator")):
        if net.role != role:
            raise ValueError(f"expected a {role} network, got role {net.role!r}")


def generator_objective(teacher: Network, student: Network, generator: Network,
                        z: LatentBatch | Tensor, cfg: DistillConfig) -> tuple[Tensor, dict]:
    """Quantity the generator minimises: -discrepancy + w_l * R_l + w_m * R_m."""
    _check_roles(teacher, student, generator)
    z = z.z if isinstance(z, LatentBatch) else z
    with frozen(teacher, student):
        x = forward(generator, z)[0]
        t_logits, t_feats = forward(teacher, x)
        s_logits = forward(student, x)[0]
    disc = matcher_loss(t_logits, s_logits, cfg)
    obj = ad.scale(disc, -1.0)
    r_l = logit_regularizer(t_logits)
    r_m = feature_regularizer(t_feats)
    if cfg.w_logit_reg:
        obj = ad.add(obj, ad.scale(r_l, cfg.w_logit_reg))
    if cfg.w_feat_reg:
        obj = ad.add(obj, ad.scale(r_m, cfg.w_feat_reg))
    parts = {"matcher": disc.item(), "r_l": r_l.item(), "r_m": r_m.item()}
    return obj, parts


def student_objective(teacher: Network, student: Network, generator: Network,
                      z: LatentBatch | Tensor, z_i: LatentBatch | Tensor, z_j: LatentBatch | Tensor,
                      lam: float, cfg: DistillConfig) -> tuple[Tensor, dict]:
    """Quantity the student minimises: discrepancy + w_mixup * mixup loss."""
    _check_roles(teacher, student, generator)
    z = z.z if isinstance(z, LatentBatch) else z
    with frozen(teacher, generator):
        with ad.no_grad():
            x = forward(generator, z)[0]
            t_logits = forward(teacher, x)[0]
        disc = matcher_loss(t_logits, forward(student, x)[0], cfg)
        obj = disc
        parts = {"matcher": disc.item(), "mixup": float("nan")}
        if cfg.w_mixup:
            mix = mixup_loss(student, generator, z_i, z_j, lam, teacher)
            obj = ad.add(obj, ad.scale(mix, cfg.w_mixup))
            parts["mixup"] = mix.item()
    return obj, parts


# ---------------------------------------------------------------------------
# training loop


@dataclass
class DistillResult:
    student: Network
    generator: Network
    metrics: list[RunMetrics] = field(default_factory=list)

    def __iter__(self):
        return iter((self.student, self.generator, self.metrics))


def init_pair(cfg: DistillConfig) -> tuple[Network, Network]:
    student = init_network(cfg.student_arch, "student", seed=cfg.seed)
    generator = init_network(cfg.generator_arch, "generator", seed=cfg.seed + 1_000_003)
    if generator.input_shape != (cfg.z_dim,):
        raise ValueError(f"generator takes {list(generator.input_shape)}, z_dim is {cfg.z_dim}")
    return student, generator


def _optimizer(cfg: DistillConfig, net: Network, lr: float):
    return make_optimizer(cfg.optimizer, net, lr, momentum=cfg.momentum,
                          betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)


def _finite(step: int, **values) -> None:
    for name, v in values.items():
        if not math.isfinite(v):
            raise DivergenceError(step, name)


def run_distillation(teacher: Network, cfg: DistillConfig,
                     eval_points: Tensor | None = None, eval_every: int = 0,
                     on_metrics: Callable[[RunMetrics], None] | None = None,
                     student: Network | None = None,
                     generator: Network | None = None) -> DistillResult:
    """Alternate one generator step with ``cfg.student_steps_per_gen_step`` student steps.

    ``eval_points`` (optional, e.g. held-out real inputs) are only used for the
    agreement score logged every ``eval_every`` steps and at the last step.
    """
    if teacher.role != "teacher":
        raise ValueError("run_distillation needs a teacher network")
    if student is None or generator is None:
        s0, g0 = init_pair(cfg)
        student = student or s0
        generator = generator or g0
    if generator.output_shape != teacher.input_shape:
        raise ValueError(f"generator emits {list(generator.output_shape)}, "
                         f"teacher takes {list(teacher.input_shape)}")
    rng = np.random.default_rng([cfg.seed, 7])
    s_opt = _optimizer(cfg, student, cfg.student_lr)
    g_opt = _optimizer(cfg, generator, cfg.generator_lr)
    n = cfg.batch_size
    result = DistillResult(student, generator)
    t0 = time.perf_counter()

    with frozen(teacher):
        for step in range(1, cfg.total_steps + 1):
            with ad.new_tape():
                z = sample_latent(n, cfg.z_dim, rng)
                g_obj, g_parts = generator_objective(teacher, student, generator, z, cfg)
                _finite(step, loss_gen=g_obj.item())
                ad.backward(g_obj)
                g_opt.step()

                for _ in range(cfg.student_steps_per_gen_step):
                    z = sample_latent(n, cfg.z_dim, rng)
                    z_i = sample_latent(n, cfg.z_dim, rng)
                    z_j = sample_latent(n, cfg.z_dim, rng)
                    lam = float(rng.beta(cfg.mixup_alpha, cfg.mixup_alpha))
                    s_obj, s_parts = student_objective(teacher, student, generator,
                                                       z, z_i, z_j, lam, cfg)
                    _finite(step, loss_student=s_obj.item())
                    ad.backward(s_obj)
                    s_opt.step()

            rec = RunMetrics(step=step, loss_matcher=s_parts["matcher"], loss_gen=g_obj.item(),
                             r_l=g_parts["r_l"], r_m=g_parts["r_m"],
                             loss_mixup=s_parts["mixup"], lam=lam,
                             wall_clock=time.perf_counter() - t0)
            if eval_points is not None and (
                    (eval_every and step % eval_every == 0) or step == cfg.total_steps):
                rec.eval_agreement = agreement(student, teacher, eval_points)
            result.metrics.append(rec)
            if on_metrics:
                on_metrics(rec)
    return result


def steps_to_threshold(metrics: list[RunMetrics], threshold: float) -> int | None:
    """First logged step whose eval agreement reaches ``threshold``."""
    for rec in metrics:
        if rec.eval_agreement is not None and rec.eval_agreement >= threshold:
            return rec.step
    return None


def final_agreement(metrics: list[RunMetrics]) -> float | None:
    scored = [r.eval_agreement for r in metrics if r.eval_agreement is not None]
    return scored[-1] if scored else None


def teacher_as_student(teacher: Network) -> Network:
    return copy_network(teacher, role="student")
