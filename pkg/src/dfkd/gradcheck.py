"""Finite-difference verification of every autodiff op.

Each case pairs an autodiff expression with a plain-numpy reference of the
same function.  The numeric gradient is taken from the numpy reference by
central differences in float64, so the oracle never touches the tape.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad

EPS = 1e-3
RTOL = 1e-3
ATOL = 1e-5
KINK_MARGIN = 1e-2


@dataclass
class Case:
    name: str
    make: Callable[[np.random.Generator], list[np.ndarray]]
    expr: Callable[..., ad.Tensor]
    ref: Callable[..., np.ndarray]
    # smallest distance of any relu/abs input from its kink; inputs are redrawn until > KINK_MARGIN
    margin: Callable[..., float] | None = None


@dataclass
class CheckResult:
    name: str
    seeds: int
    failures: int
    max_rel_err: float
    max_abs_err: float

    @property
    def passed(self) -> bool:
        return self.failures == 0


def _away_from_zero(x: np.ndarray, gap: float = 0.05) -> np.ndarray:
    return x + np.where(x >= 0, gap, -gap)


def _np_softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _np_log_softmax(x):
    s = x - x.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def _np_conv2d(x, w):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, o, xp.shape[2] - k + 1, xp.shape[3] - k + 1))
    for i in range(out.shape[2]):
        for j in range(out.shape[3]):
            patch = xp[:, :, i:i + k, j:j + k]
            out[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3]))
    return out


def _g(rng, *shape):
    return rng.standard_normal(shape)


def _cases() -> list[Case]:
    cs = [
        Case("matmul", lambda r: [_g(r, 3, 4), _g(r, 4, 2)],
             lambda a, b: ad.matmul(a, b), lambda a, b: a @ b),
        Case("add", lambda r: [_g(r, 3, 4), _g(r, 3, 4)],
             lambda a, b: ad.add(a, b), lambda a, b: a + b),
        Case("add_bias", lambda r: [_g(r, 3, 4), _g(r, 4)],
             lambda a, b: ad.add(a, b), lambda a, b: a + b),
        Case("mul", lambda r: [_g(r, 3, 4), _g(r, 3, 4)],
             lambda a, b: ad.mul(a, b), lambda a, b: a * b),
        Case("mul_bias", lambda r: [_g(r, 2, 3, 4), _g(r, 3, 4)],
             lambda a, b: ad.mul(a, b), lambda a, b: a * b),
        Case("scale", lambda r: [_g(r, 3, 4)],
             lambda a: ad.scale(a, -2.5), lambda a: -2.5 * a),
        Case("relu", lambda r: [_away_from_zero(_g(r, 3, 4))],
             ad.relu, lambda a: np.maximum(a, 0)),
        Case("tanh", lambda r: [_g(r, 3, 4)], ad.tanh, np.tanh),
        Case("abs", lambda r: [_away_from_zero(_g(r, 3, 4))], ad.abs, np.abs),
        Case("log", lambda r: [r.uniform(0.5, 2.0, (3, 4))], ad.log, np.log),
        Case("softmax", lambda r: [_g(r, 3, 4)], ad.softmax, _np_softmax),
        Case("log_softmax", lambda r: [_g(r, 3, 4)], ad.log_softmax, _np_log_softmax),
        Case("sum", lambda r: [_g(r, 3, 4)], lambda a: ad.sum(a), np.sum),
        Case("sum_axis", lambda r: [_g(r, 3, 4)],
             lambda a: ad.sum(a, axis=-1), lambda a: a.sum(axis=-1)),
        Case("mean", lambda r: [_g(r, 3, 4)], lambda a: ad.mean(a), np.mean),
        Case("mean_axis", lambda r: [_g(r, 3, 4)],
             lambda a: ad.mean(a, axis=0), lambda a: a.mean(axis=0)),
        Case("concat", lambda r: [_g(r, 2, 3), _g(r, 4, 3)],
             lambda a, b: ad.concat([a, b], axis=0),
             lambda a, b: np.concatenate([a, b], axis=0)),
        Case("reshape", lambda r: [_g(r, 3, 4)],
             lambda a: ad.reshape(a, (2, 6)), lambda a: a.reshape(2, 6)),
        Case("conv2d", lambda r: [_g(r, 2, 2, 5, 5), _g(r, 3, 2, 3, 3)],
             ad.conv2d, _np_conv2d),
    ]
    return cs + _composition_cases()


def _composition_cases() -> list[Case]:
    # 1) relu MLP classifier with soft-target cross-entropy
    def mk_mlp(r):
        return [_g(r, 5, 3), _g(r, 3, 6), _g(r, 6), _g(r, 6, 4), _g(r, 4),
                _np_softmax(_g(r, 5, 4))]

    def ex_mlp(x, w1, b1, w2, b2, t):
        h = ad.relu(ad.add(ad.matmul(x, w1), b1))
        lp = ad.log_softmax(ad.add(ad.matmul(h, w2), b2))
        return ad.scale(ad.mean(ad.sum(ad.mul(t, lp), axis=-1)), -1.0)

    def rf_mlp(x, w1, b1, w2, b2, t):
        h = np.maximum(x @ w1 + b1, 0)
        return -np.mean(np.sum(t * _np_log_softmax(h @ w2 + b2), axis=-1))

    def mg_mlp(x, w1, b1, *_):
        return float(np.min(np.abs(x @ w1 + b1)))

    # 2) tanh generator feeding a relu classifier, logits L1 discrepancy
    def mk_gen(r):
        return [_g(r, 4, 3), _g(r, 3, 5), _g(r, 5, 2), _g(r, 2, 4), _g(r, 4, 3), _g(r, 4, 3)]

    def ex_gen(z, wg1, wg2, wt1, wt2, ref):
        x = ad.tanh(ad.matmul(ad.tanh(ad.matmul(z, wg1)), wg2))
        feats = ad.relu(ad.matmul(x, wt1))
        logits = ad.matmul(feats, wt2)
        gap = ad.mean(ad.abs(ad.add(logits, ad.scale(ref, -1.0))))
        return ad.add(ad.scale(gap, -1.0), ad.scale(ad.mean(ad.sum(feats, axis=-1)), -0.1))

    def rf_gen(z, wg1, wg2, wt1, wt2, ref):
        x = np.tanh(np.tanh(z @ wg1) @ wg2)
        feats = np.maximum(x @ wt1, 0)
        logits = feats @ wt2
        return -np.mean(np.abs(logits - ref)) - 0.1 * np.mean(feats.sum(axis=-1))

    def mg_gen(z, wg1, wg2, wt1, wt2, ref):
        x = np.tanh(np.tanh(z @ wg1) @ wg2)
        pre = x @ wt1
        return float(min(np.min(np.abs(pre)), np.min(np.abs(np.maximum(pre, 0) @ wt2 - ref))))

    # 3) conv -> relu -> flatten -> dense -> softmax -> log, plus a concat mixup-style batch
    def mk_conv(r):
        return [_g(r, 2, 1, 4, 4), _g(r, 2, 1, 3, 3), _g(r, 32, 3) * 0.3]

    def ex_conv(x, k, w):
        xx = ad.concat([x, ad.scale(x, 0.5)], axis=0)
        h = ad.relu(ad.conv2d(xx, k))
        flat = ad.reshape(h, (4, 32))
        p = ad.softmax(ad.matmul(flat, w))
        return ad.mean(ad.log(p))

    def rf_conv(x, k, w):
        xx = np.concatenate([x, 0.5 * x], axis=0)
        h = np.maximum(_np_conv2d(xx, k), 0)
        return np.mean(np.log(_np_softmax(h.reshape(4, 32) @ w)))

    def mg_conv(x, k, w):
        xx = np.concatenate([x, 0.5 * x], axis=0)
        return float(np.min(np.abs(_np_conv2d(xx, k))))

    return [
        Case("compose_mlp_ce", mk_mlp, ex_mlp, rf_mlp, mg_mlp),
        Case("compose_gen_l1", mk_gen, ex_gen, rf_gen, mg_gen),
        Case("compose_conv_softmax", mk_conv, ex_conv, rf_conv, mg_conv),
    ]


CASES = _cases()


def numeric_grad(f: Callable[..., np.ndarray], args: list[np.ndarray], k: int,
                 weights: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central-difference gradient of ``sum(weights * f(*args))`` w.r.t. ``args[k]``."""
    x = args[k]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        hi = np.sum(weights * f(*args))
        x[idx] = orig - eps
        lo = np.sum(weights * f(*args))
        x[idx] = orig
        g[idx] = (hi - lo) / (2 * eps)
    return g


def rel_errors(analytic: np.ndarray, numeric: np.ndarray, atol: float = ATOL) -> np.ndarray:
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.divide(diff, denom, out=np.zeros_like(diff), where=denom > 0)
    return np.where(diff <= atol, 0.0, rel)


def check_case(case: Case, seed: int) -> tuple[float, float]:
    """Return (largest relative error, largest absolute error) for one seeded draw."""
    rng = np.random.default_rng(seed)
    args = case.make(rng)
    while case.margin is not None and case.margin(*args) <= KINK_MARGIN:
        args = case.make(rng)
    args = [np.asarray(a, dtype=np.float64) for a in args]

    with ad.new_tape():
        tensors = [ad.Tensor(a, requires_grad=True, dtype=np.float64) for a in args]
        out = case.expr(*tensors)
        ref_out = np.asarray(case.ref(*args), dtype=np.float64)
        if out.shape != ref_out.shape or not np.allclose(out.data, ref_out, rtol=1e-9, atol=1e-9):
            return np.inf, np.inf
        weights = rng.standard_normal(out.shape)
        loss = ad.sum(ad.mul(out, ad.Tensor(weights, dtype=np.float64))) if out.shape else out
        if not out.shape:
            weights = np.float64(1.0)
        ad.backward(loss)

    worst_rel = worst_abs = 0.0
    for k, t in enumerate(tensors):
        num = numeric_grad(case.ref, args, k, weights)
        ana = t.grad if t.grad is not None else np.zeros_like(num)
        worst_rel = max(worst_rel, float(rel_errors(ana, num).max(initial=0.0)))
        worst_abs = max(worst_abs, float(np.abs(ana - num).max(initial=0.0)))
    return worst_rel, worst_abs


def run_gradcheck(seeds: int = 100, cases: list[Case] | None = None) -> list[CheckResult]:
    results = []
    for case in cases or CASES:
        errs = np.array([check_case(case, s) for s in range(seeds)])
        results.append(CheckResult(case.name, seeds, int(np.sum(errs[:, 0] >= RTOL)),
                                   float(errs[:, 0].max()), float(errs[:, 1].max())))
    return results


def format_report(results: list[CheckResult]) -> str:
    lines = [f"{'op':<22} {'seeds':>5} {'fail':>5} {'max_rel_err':>12} {'max_abs_err':>12}  status"]
    for r in results:
        lines.append(f"{r.name:<22} {r.seeds:>5d} {r.failures:>5d} {r.max_rel_err:>12.3e} "
                     f"{r.max_abs_err:>12.3e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
