import math

import numpy as np
import pytest

import oracles
from dfkd import autodiff as ad
from dfkd.autodiff import Tensor
from dfkd.data import sample_latent
from dfkd.distill import (DistillConfig, DivergenceError, feature_regularizer, frozen,
                          generator_objective, init_pair, logit_regularizer, matcher_loss,
                          mixup_interpolate, mixup_loss, run_distillation, soft_cross_entropy,
                          student_objective, teacher_as_student)
from dfkd.nn import copy_network, forward, init_network
from probes import generator_step_delta, student_step_delta

LIN_T = "input(2), dense(2,3)"
SMALL = DistillConfig(batch_size=32, total_steps=3, student_steps_per_gen_step=2)


def snapshot(net):
    return [p.data.copy() for p in net.parameters()]


def unchanged(net, snap):
    return all(np.array_equal(p.data, s) for p, s in zip(net.parameters(), snap))


@pytest.fixture(scope="module")
def teacher(moon_teacher):
    moon_teacher.requires_grad_(False)
    return moon_teacher


# --- matcher -------------------------------------------------------------


def test_matcher_mae_example():
    assert matcher_loss(Tensor([[1.0, 3.0]]), Tensor([[0.0, 1.0]])).item() == pytest.approx(1.5)


@pytest.mark.parametrize("mode", ["mae", "kl"])
@pytest.mark.parametrize("tau", [0.5, 1.0, 4.0])
def test_matcher_identity_is_zero(mode, tau, rng):
    cfg = DistillConfig(matcher_loss=mode, temperature=tau)
    logits = Tensor(rng.standard_normal((6, 4)) * 3)
    assert abs(matcher_loss(logits, logits, cfg).item()) < 1e-6


def test_matcher_matches_oracle_and_nonnegative(rng):
    for _ in range(50):
        t, s = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        got = matcher_loss(Tensor(t), Tensor(s)).item()
        assert got == pytest.approx(oracles.mae(t, s), abs=1e-5)
        assert got > 0


def test_matcher_shape_mismatch():
    with pytest.raises(ad.ShapeError, match=r"\[2, 3\].*\[2, 2\]"):
        matcher_loss(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_config_rejects_bad_values():
    with pytest.raises(ValueError, match="temperature"):
        DistillConfig(matcher_loss="kl", temperature=0.0)
    with pytest.raises(ValueError, match="w_mixup"):
        DistillConfig(w_mixup=float("inf"))
    with pytest.raises(ValueError, match="mixup_alpha"):
        DistillConfig(mixup_alpha=0.0)


# --- regularizers ----------------------------------------------------------


def test_logit_regularizer_examples():
    assert logit_regularizer(Tensor([[0.0, 0.0]])).item() == pytest.approx(math.log(2), abs=1e-6)
    assert logit_regularizer(Tensor([[100.0, 0.0]])).item() == pytest.approx(0.0, abs=1e-6)
    both = Tensor([[0.0, 0.0], [100.0, 0.0]])
    assert logit_regularizer(both).item() == pytest.approx(0.3466, abs=1e-4)


def test_logit_regularizer_oracle(rng):
    for _ in range(50):
        logits = rng.standard_normal((7, 4)) * 2
        got = logit_regularizer(Tensor(logits)).item()
        assert got == pytest.approx(oracles.logit_reg(logits), abs=1e-5)
        assert got >= 0


def test_feature_regularizer_examples(rng):
    assert feature_regularizer(Tensor([[1.0, -2.0], [3.0, 0.0]])).item() == pytest.approx(-3.0)
    assert feature_regularizer(Tensor(np.zeros((4, 5)))).item() == 0.0
    f = rng.standard_normal((6, 8))
    base = feature_regularizer(Tensor(f)).item()
    assert feature_regularizer(Tensor(2.5 * f)).item() == pytest.approx(2.5 * base, rel=1e-5)
    assert base == pytest.approx(oracles.feat_reg(f), abs=1e-5)


def test_feature_regularizer_nonpositive_on_relu_features(rng):
    assert feature_regularizer(Tensor(np.maximum(rng.standard_normal((5, 4)), 0))).item() <= 0


def test_regularizers_reject_empty_batch():
    with pytest.raises(ad.ShapeError):
        logit_regularizer(Tensor(np.zeros((0, 2))))
    with pytest.raises(ad.ShapeError):
        feature_regularizer(Tensor(np.zeros((0, 2))))


# --- mixup -------------------------------------------------------------------


def _probs(net, x):
    with ad.no_grad():
        return ad.softmax(forward(net, Tensor(x))[0]).data


def test_mixup_endpoint(teacher, rng):
    x_i, x_j = rng.uniform(-1, 1, (5, 2)), rng.uniform(-1, 1, (5, 2))
    d = mixup_interpolate(Tensor(x_i), Tensor(x_j), 1.0, teacher)
    np.testing.assert_allclose(d.x_v.data, x_i.astype(np.float32))
    np.testing.assert_allclose(d.y_v.data, _probs(teacher, x_i), atol=1e-6)


def test_mixup_midpoint(teacher):
    d = mixup_interpolate(Tensor([[0.0, 2.0]]), Tensor([[2.0, 0.0]]), 0.5, teacher)
    np.testing.assert_allclose(d.x_v.data, [[1.0, 1.0]])


def test_mixup_rows_sum_to_one_and_match_oracle(teacher, rng):
    for _ in range(20):
        lam = rng.uniform()
        x_i, x_j = rng.uniform(-1, 1, (8, 2)), rng.uniform(-1, 1, (8, 2))
        d = mixup_interpolate(Tensor(x_i), Tensor(x_j), lam, teacher)
        np.testing.assert_allclose(d.y_v.data.sum(axis=1), 1.0, atol=1e-5)
        x_v, y_v = oracles.mix(x_i, x_j, _probs(teacher, x_i), _probs(teacher, x_j), lam)
        np.testing.assert_allclose(d.x_v.data, x_v, atol=1e-6)
        np.testing.assert_allclose(d.y_v.data, y_v, atol=1e-6)


def test_mixup_rejects_bad_lambda_and_shapes(teacher):
    a = Tensor(np.zeros((2, 2)))
    with pytest.raises(ValueError, match="lambda"):
        mixup_interpolate(a, a, 1.5, teacher)
    with pytest.raises(ad.ShapeError):
        mixup_interpolate(a, Tensor(np.zeros((3, 2))), 0.5, teacher)


def test_mixup_self_match_is_entropy(teacher):
    cfg = DistillConfig()
    student, generator = init_pair(cfg)
    student = teacher_as_student(teacher)
    z_i, z_j = (sample_latent(16, cfg.z_dim, s) for s in (1, 2))
    got = mixup_loss(student, generator, z_i, z_j, 1.0, teacher).item()
    with ad.no_grad():
        p = _probs(teacher, forward(generator, z_i.z)[0].data)
    entropy = float(np.mean(-(p * np.log(p)).sum(axis=1)))
    assert got == pytest.approx(entropy, abs=1e-5)


def test_mixup_swap_symmetry(teacher, rng):
    cfg = DistillConfig()
    student, generator = init_pair(cfg)
    z_i, z_j = (sample_latent(16, cfg.z_dim, s) for s in (3, 4))
    a = mixup_loss(student, generator, z_i, z_j, 0.0, teacher).item()
    b = mixup_loss(student, generator, z_j, z_i, 1.0, teacher).item()
    assert a == pytest.approx(b, abs=1e-6)
    lam = rng.uniform()
    c = mixup_loss(student, generator, z_i, z_j, lam, teacher).item()
    d = mixup_loss(student, generator, z_j, z_i, 1.0 - lam, teacher).item()
    assert c == pytest.approx(d, abs=1e-5)


def test_mixup_loss_matches_oracle(teacher, rng):
    cfg = DistillConfig()
    student, generator = init_pair(cfg)
    z_i, z_j = (sample_latent(12, cfg.z_dim, s) for s in (5, 6))
    lam = 0.3
    with ad.no_grad():
        x_i = forward(generator, z_i.z)[0].data
        x_j = forward(generator, z_j.z)[0].data
        x_v, y_v = oracles.mix(x_i, x_j, _probs(teacher, x_i), _probs(teacher, x_j), lam)
        logits = forward(student, Tensor(x_v))[0].data
    got = mixup_loss(student, generator, z_i, z_j, lam, teacher).item()
    assert got == pytest.approx(oracles.soft_ce(y_v, logits), abs=1e-5)
    assert got >= 0


def test_linearity_certificate(rng):
    # a one-layer linear map commutes with the convex combination of its inputs
    for seed in range(20):
        student = init_network(LIN_T, "student", seed=seed)
        x_i, x_j = rng.standard_normal((10, 2)), rng.standard_normal((10, 2))
        lam = rng.uniform()
        x_v = lam * x_i + (1 - lam) * x_j
        with ad.no_grad():
            f = lambda x: forward(student, Tensor(x, dtype=np.float64))[0].data  # noqa: E731
            resid = np.abs(f(x_v) - (lam * f(x_i) + (1 - lam) * f(x_j))).max()
        assert resid < 1e-5


def test_linear_student_convex_bound_on_matched_targets(rng):
    # with one shared target row, soft CE is convex in the logits and a linear
    # student's logits are affine in lambda, so the mixed loss stays below
    # the worse endpoint
    for seed in range(50):
        student = init_network(LIN_T, "student", seed=seed)
        teacher = init_network(LIN_T, "teacher", seed=seed + 100)
        x_i, x_j = rng.standard_normal((8, 2)), rng.standard_normal((8, 2))
        target = Tensor(_probs(teacher, x_i))
        with ad.no_grad():
            def loss(lam):
                x_v = Tensor(lam * x_i + (1 - lam) * x_j)
                return soft_cross_entropy(target, forward(student, x_v)[0]).item()
            lam = rng.uniform()
            assert loss(lam) <= max(loss(0.0), loss(1.0)) + 1e-6


def test_unmatched_soft_targets_break_the_bound():
    # mixed teacher labels can exceed both endpoint losses: [10,0] and [0,10]
    # each self-match at ~0 but their midpoint gives ln 2
    logits = np.array([[10.0, 0.0], [0.0, 10.0]])
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    ends = [soft_cross_entropy(Tensor(p[k:k + 1]), Tensor(logits[k:k + 1])).item() for k in (0, 1)]
    mid = soft_cross_entropy(Tensor(p.mean(0, keepdims=True)),
                             Tensor(logits.mean(0, keepdims=True))).item()
    assert mid > max(ends) + 0.5


# --- objectives --------------------------------------------------------------


def test_generator_objective_zero_weights_is_negated_matcher(teacher):
    cfg = DistillConfig(w_logit_reg=0.0, w_feat_reg=0.0, w_mixup=0.0)
    student, generator = init_pair(cfg)
    z = sample_latent(32, cfg.z_dim, 9)
    obj, parts = generator_objective(teacher, student, generator, z, cfg)
    assert obj.item() == -parts["matcher"]
    with ad.no_grad():
        x = forward(generator, z.z)[0]
        ref = matcher_loss(forward(teacher, x)[0], forward(student, x)[0]).item()
    assert obj.item() == pytest.approx(-ref, abs=1e-7)


def test_generator_objective_teacher_as_student_is_regularizers_only(teacher):
    cfg = DistillConfig()
    _, generator = init_pair(cfg)
    student = teacher_as_student(teacher)
    obj, parts = generator_objective(teacher, student, generator, sample_latent(32, 16, 2), cfg)
    assert parts["matcher"] == 0.0
    expected = cfg.w_logit_reg * parts["r_l"] + cfg.w_feat_reg * parts["r_m"]
    assert obj.item() == pytest.approx(expected, abs=1e-6)
    assert parts["r_l"] >= 0 and parts["r_m"] <= 0


def test_student_objective_identity_is_zero(teacher):
    cfg = DistillConfig(w_mixup=0.0)
    _, generator = init_pair(cfg)
    student = teacher_as_student(teacher)
    zs = [sample_latent(16, 16, s) for s in range(3)]
    obj, _ = student_objective(teacher, student, generator, *zs, 0.4, cfg)
    assert obj.item() == 0.0


def test_student_objective_permutation_invariant(teacher, rng):
    cfg = DistillConfig()
    student, generator = init_pair(cfg)
    z, z_i, z_j = (sample_latent(32, 16, s) for s in range(3))
    perm = rng.permutation(32)
    a, _ = student_objective(teacher, student, generator, z, z_i, z_j, 0.6, cfg)
    b, _ = student_objective(teacher, student, generator, Tensor(z.z.data[perm]),
                             Tensor(z_i.z.data[perm]),
                             Tensor(z_j.z.data[perm]), 0.6, cfg)
    assert a.item() == pytest.approx(b.item(), rel=1e-5)


def test_role_mismatch_rejected(teacher):
    cfg = DistillConfig()
    student, generator = init_pair(cfg)
    z = sample_latent(4, 16, 0)
    with pytest.raises(ValueError, match="role"):
        generator_objective(teacher, generator, student, z, cfg)
    with pytest.raises(ValueError, match="role"):
        student_objective(student, student, generator, z, z, z, 0.5, cfg)


def test_gradient_isolation(teacher):
    cfg = DistillConfig()
    student, generator = init_pair(cfg)
    t_snap, s_snap, g_snap = snapshot(teacher), snapshot(student), snapshot(generator)
    z, z_i, z_j = (sample_latent(32, 16, s) for s in range(3))

    with ad.new_tape():
        obj, _ = generator_objective(teacher, student, generator, z, cfg)
        ad.backward(obj)
    assert all(p.grad is None for p in student.parameters())
    assert all(p.grad is None for p in teacher.parameters())
    assert all(p.grad is not None for p in generator.parameters())
    generator.zero_grad()

    with ad.new_tape():
        obj, _ = student_objective(teacher, student, generator, z, z_i, z_j, 0.5, cfg)
        ad.backward(obj)
    assert all(p.grad is None for p in generator.parameters())
    assert all(p.grad is None for p in teacher.parameters())
    assert all(p.grad is not None for p in student.parameters())
    student.zero_grad()

    assert unchanged(teacher, t_snap) and unchanged(student, s_snap) and unchanged(generator, g_snap)


def test_run_keeps_teacher_fixed_and_alternates(teacher):
    t_snap = snapshot(teacher)
    result = run_distillation(teacher, SMALL)
    assert unchanged(teacher, t_snap)
    assert [m.step for m in result.metrics] == [1, 2, 3]
    s0, g0 = init_pair(SMALL)
    assert not unchanged(result.student, snapshot(s0))
    assert not unchanged(result.generator, snapshot(g0))


def test_frozen_restores_flags(teacher):
    cfg = DistillConfig()
    student, _ = init_pair(cfg)
    with frozen(student):
        assert not any(p.requires_grad for p in student.parameters())
    assert all(p.requires_grad for p in student.parameters())


def test_generator_step_increases_discrepancy(teacher):
    deltas = [generator_step_delta(teacher, seed) for seed in range(10)]
    assert sum(d > 0 for d in deltas) >= 9


def test_student_step_decreases_discrepancy(teacher):
    deltas = [student_step_delta(teacher, seed) for seed in range(10)]
    assert sum(d < 0 for d in deltas) >= 9


# --- loop ----------------------------------------------------------------------


def test_zero_steps_returns_fresh_networks(teacher):
    cfg = SMALL.replace(total_steps=0)
    student, generator, metrics = run_distillation(teacher, cfg)
    s0, g0 = init_pair(cfg)
    assert metrics == []
    assert unchanged(student, snapshot(s0)) and unchanged(generator, snapshot(g0))


def test_run_is_deterministic(teacher, moons_heldout):
    a = run_distillation(teacher, SMALL, eval_points=moons_heldout.inputs, eval_every=2)
    b = run_distillation(teacher, SMALL, eval_points=moons_heldout.inputs, eval_every=2)
    assert [m.row() for m in a.metrics] == [m.row() for m in b.metrics]
    assert all(np.array_equal(p.data, q.data)
               for p, q in zip(a.student.parameters(), b.student.parameters()))
    assert [m.eval_agreement is not None for m in a.metrics] == [False, True, True]


def test_metrics_fields_and_lambda_range(teacher):
    seen = []
    result = run_distillation(teacher, SMALL, on_metrics=seen.append)
    assert seen == result.metrics
    for m in result.metrics:
        assert 0.0 <= m.lam <= 1.0
        assert m.r_l >= 0 and m.r_m <= 0
        assert all(math.isfinite(v) for v in (m.loss_matcher, m.loss_gen, m.loss_mixup))


def test_divergence_guard_reports_step(teacher):
    cfg = SMALL.replace(total_steps=5)
    student, generator = init_pair(cfg)
    generator.layers[0].weight.data[...] = np.nan
    with pytest.raises(DivergenceError, match="step 1") as info:
        run_distillation(teacher, cfg, student=student, generator=generator)
    assert info.value.step == 1


def test_losses_finite_over_random_parameters(teacher):
    rng = np.random.default_rng(0)
    cfg = DistillConfig()
    checked = 0
    for seed in range(100):
        student, generator = init_pair(cfg.replace(seed=seed))
        for p in generator.parameters():
            p.data *= rng.uniform(0.5, 5.0)
        z = sample_latent(100, 16, rng)
        with ad.no_grad():
            x = forward(generator, z.z)[0]
            t_logits, t_feats = forward(teacher, x)
            s_logits = forward(student, x)[0]
            vals = [matcher_loss(t_logits, s_logits).item(), logit_regularizer(t_logits).item(),
                    feature_regularizer(t_feats).item(),
                    mixup_loss(student, generator, z, sample_latent(100, 16, rng),
                               rng.uniform(), teacher).item()]
        assert all(math.isfinite(v) for v in vals)
        checked += 100
    assert checked == 10_000


def test_generator_output_shape_checked(teacher):
    cfg = SMALL.replace(generator_arch="input(16), dense(16,3), tanh")
    with pytest.raises(ValueError, match="generator emits"):
        run_distillation(teacher, cfg)


def test_copy_network_is_independent(teacher):
    c = copy_network(teacher, role="student")
    c.layers[0].weight.data += 1
    assert not np.array_equal(c.layers[0].weight.data, teacher.layers[0].weight.data)
