"""Command-line driver: ``dfkd {train-teacher,distill,eval,ablate,gradcheck}``.

Every run writes ``<out>/checkpoints``, ``<out>/csv`` and ``<out>/config-echo.txt``.
Exit codes: 0 ok, 1 gradcheck failure, 2 config error, 3 I/O error,
4 numerical divergence.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint, data, distill, evaluation, gradcheck, nn
from .config import ConfigError, RunConfig, defaults_text, load_config

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3, 4

ABLATION_VARIANTS = ("baseline", "+reg", "+mixup", "+both")


@dataclass
class Run:
    cfg: RunConfig
    out: Path
    args: argparse.Namespace

    @property
    def ckpt_dir(self) -> Path:
        return self.out / "checkpoints"

    @property
    def csv_dir(self) -> Path:
        return self.out / "csv"


def _setup(args) -> Run:
    cfg, text = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if getattr(args, "steps", None) is not None:
        cfg.total_steps = args.steps
        cfg.ablate_steps = args.steps
    cfg.resolve()
    out = Path(cfg.out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "csv").mkdir(parents=True, exist_ok=True)
    echo = f"# command: {args.command}\n# --- config file (verbatim) ---\n{text}"
    if text and not text.endswith("\n"):
        echo += "\n"
    echo += "# --- resolved ---\n" + cfg.dumps()
    (out / "config-echo.txt").write_text(echo, encoding="utf-8")
    return Run(cfg, out, args)


def _mnist_paths(cfg: RunConfig, split: str) -> tuple[str, str]:
    images = getattr(cfg, f"mnist_{split}_images")
    labels = getattr(cfg, f"mnist_{split}_labels")
    if not images or not labels:
        raise ConfigError(f"mnist task needs mnist_{split}_images and mnist_{split}_labels")
    return images, labels


def load_split(cfg: RunConfig, split: str) -> data.LabeledBatch:
    """Real data for teacher training or evaluation; never used by distillation itself."""
    if cfg.task == "two-moons":
        n = cfg.n_train if split == "train" else cfg.n_test
        return data.make_two_moons(n, cfg.noise_sd, seed=cfg.seed if split == "train" else cfg.seed + 1)
    return data.load_idx(*_mnist_paths(cfg, split))


def _teacher_path(run: Run) -> Path:
    given = run.args.teacher or run.cfg.teacher_checkpoint
    return Path(given) if given else run.ckpt_dir / "teacher.ckpt"


def load_teacher(run: Run) -> tuple[nn.Network, Path]:
    path = _teacher_path(run)
    net, _ = checkpoint.load(path)
    expected = nn.parse_arch(run.cfg.teacher_arch)
    if net.arch != expected:
        raise ConfigError(f"teacher checkpoint architecture {net.arch} does not match "
                          f"config teacher_arch {expected}")
    net.role = "teacher"
    return net, path


# ---------------------------------------------------------------------------
# subcommands


def cmd_train_teacher(run: Run) -> int:
    cfg = run.cfg
    train = load_split(cfg, "train")
    test = load_split(cfg, "test")
    teacher = nn.init_network(cfg.teacher_arch, "teacher", seed=cfg.seed)
    losses: list[tuple[int, float]] = []
    nn.train_classifier(teacher, train.inputs, train.labels, cfg.teacher_steps,
                        batch_size=cfg.teacher_batch_size, lr=cfg.teacher_lr, seed=cfg.seed,
                        on_step=lambda s, l: losses.append((s, l)))
    path = checkpoint.save(teacher, run.ckpt_dir / "teacher.ckpt", step=cfg.teacher_steps,
                           seed=cfg.seed)
    evaluation.write_csv(run.csv_dir / "metrics.csv", ["step", "loss"], losses)
    tr_acc, te_acc = evaluation.accuracy(teacher, train), evaluation.accuracy(teacher, test)
    print(f"teacher saved to {path}")
    print(f"train accuracy {tr_acc:.4f}")
    print(f"test accuracy {te_acc:.4f}")
    return EXIT_OK


def cmd_distill(run: Run) -> int:
    cfg = run.cfg
    teacher, _ = load_teacher(run)
    dcfg = cfg.distill_config()
    eval_points = None
    if run.args.eval_with_data:
        eval_points = load_split(cfg, "test").inputs
    result = distill.run_distillation(teacher, dcfg, eval_points=eval_points,
                                      eval_every=cfg.eval_every)
    checkpoint.save(result.student, run.ckpt_dir / "student.ckpt", step=cfg.total_steps, seed=cfg.seed)
    checkpoint.save(result.generator, run.ckpt_dir / "generator.ckpt", step=cfg.total_steps,
                    seed=cfg.seed)
    evaluation.write_metrics_csv(run.csv_dir / "metrics.csv", result.metrics)
    print(f"distilled {cfg.total_steps} steps; checkpoints in {run.ckpt_dir}")
    final = distill.final_agreement(result.metrics)
    if final is not None:
        print(f"final agreement {final:.4f}")
    return EXIT_OK


def cmd_eval(run: Run) -> int:
    cfg, args = run.cfg, run.args
    teacher, _ = load_teacher(run)
    student_path = Path(args.student) if args.student else run.ckpt_dir / "student.ckpt"
    student, _ = checkpoint.load(student_path)
    student.role = "student"
    test = load_split(cfg, "test")
    rows = [("teacher_accuracy", evaluation.accuracy(teacher, test)),
            ("student_accuracy", evaluation.accuracy(student, test)),
            ("agreement", evaluation.agreement(student, teacher, test.inputs))]

    if tuple(teacher.input_shape) == (2,):
        grid = data.make_grid((-1.0, 1.0), (-1.0, 1.0), cfg.grid_resolution)
        rep = evaluation.boundary_report(teacher, student, grid, cfg.band_threshold)
        evaluation.write_csv(run.csv_dir / "grid.csv", evaluation.GRID_HEADER,
                             evaluation.grid_rows(rep))
        rows += [("grid_agreement", rep.agreement()),
                 ("grid_agreement_confident", rep.agreement(cfg.band_threshold)),
                 ("band_fraction", rep.band_fraction)]
    else:
        print("notice: inputs are not 2-D, boundary grid skipped")

    gen_path = Path(args.generator) if args.generator else run.ckpt_dir / "generator.ckpt"
    if gen_path.exists():
        generator, _ = checkpoint.load(gen_path)
        header, samples = evaluation.generated_sample_dump(
            generator, teacher, cfg.n_samples_dump, np.random.default_rng([cfg.seed, 11]))
        evaluation.write_csv(run.csv_dir / "samples.csv", header, samples)

    evaluation.write_csv(run.csv_dir / "report.csv", ["metric", "value"], rows)
    for name, value in rows:
        print(f"{name} {value:.4f}")
    return EXIT_OK


def ablation_weights(cfg: RunConfig) -> dict[str, dict[str, float]]:
    reg = {"w_logit_reg": cfg.w_logit_reg, "w_feat_reg": cfg.w_feat_reg}
    off = {"w_logit_reg": 0.0, "w_feat_reg": 0.0}
    return {
        "baseline": {**off, "w_mixup": 0.0},
        "+reg": {**reg, "w_mixup": 0.0},
        "+mixup": {**off, "w_mixup": cfg.w_mixup},
        "+both": {**reg, "w_mixup": cfg.w_mixup},
    }


def cmd_ablate(run: Run) -> int:
    cfg = run.cfg
    path = _teacher_path(run)
    if not path.exists() and not (run.args.teacher or cfg.teacher_checkpoint):
        print("no teacher checkpoint given; training one")
        cmd_train_teacher(run)
    teacher, path = load_teacher(run)
    digest = checkpoint.file_hash(path)
    weights = ablation_weights(cfg)
    print(f"teacher {path} sha256 {digest}")
    print(f"{'variant':<10} {'w_logit_reg':>12} {'w_feat_reg':>12} {'w_mixup':>10}")
    for name, w in weights.items():
        print(f"{name:<10} {w['w_logit_reg']:>12g} {w['w_feat_reg']:>12g} {w['w_mixup']:>10g}")

    eval_points = load_split(cfg, "test").inputs
    seeds = [cfg.seed + k for k in range(cfg.ablate_seeds)]
    header = ["variant", "seed", "teacher_sha256"] + [
        f for f in evaluation.METRIC_FIELDS if f != "wall_clock"]
    rows, summary = [], []
    for seed in seeds:
        for name in ABLATION_VARIANTS:
            dcfg = cfg.distill_config(seed=seed, total_steps=cfg.ablate_steps, **weights[name])
            res = distill.run_distillation(teacher, dcfg, eval_points=eval_points,
                                           eval_every=cfg.eval_every)
            # identical checkpoint hash across variants is the controlled-experiment guarantee
            assert checkpoint.file_hash(path) == digest
            rows += [[name, seed, digest, *r.row().values()] for r in res.metrics]
            hit = distill.steps_to_threshold(res.metrics, cfg.agreement_threshold)
            summary.append([name, seed, "" if hit is None else hit,
                            distill.final_agreement(res.metrics)])
            print(f"seed {seed} {name:<8} steps_to_{cfg.agreement_threshold:g}="
                  f"{hit if hit is not None else 'never'} final={summary[-1][3]:.4f}", flush=True)
    evaluation.write_csv(run.csv_dir / "ablation.csv", header, rows)
    evaluation.write_csv(run.csv_dir / "ablation_summary.csv",
                         ["variant", "seed", "steps_to_threshold", "final_agreement"], summary)
    return EXIT_OK


def cmd_gradcheck(run_or_args) -> int:
    seeds = getattr(run_or_args, "seeds", None) or 100
    results = gradcheck.run_gradcheck(seeds)
    print(gradcheck.format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dfkd", description=__doc__.splitlines()[0])
    p.add_argument("--print-defaults", action="store_true", help="print every config key and exit")
    sub = p.add_subparsers(dest="command")

    def common(sp, steps=True):
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--teacher", metavar="CKPT", help="teacher checkpoint")
        if steps:
            sp.add_argument("--steps", type=int, help="override total_steps")
        sp.add_argument("--print-defaults", action="store_true")

    common(sub.add_parser("train-teacher", help="supervised teacher training"), steps=False)
    d = sub.add_parser("distill", help="data-free distillation from a teacher checkpoint")
    common(d)
    d.add_argument("--eval-with-data", action="store_true",
                   help="allow held-out real inputs for periodic agreement scores")
    e = sub.add_parser("eval", help="accuracy, agreement and boundary CSVs")
    common(e, steps=False)
    e.add_argument("--student", metavar="CKPT")
    e.add_argument("--generator", metavar="CKPT")
    common(sub.add_parser("ablate", help="baseline / +reg / +mixup / +both comparison"))
    g = sub.add_parser("gradcheck", help="finite-difference check of every autodiff op")
    g.add_argument("--seeds", type=int, default=100)
    g.add_argument("--print-defaults", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        sys.stdout.write(defaults_text())
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    if args.command == "gradcheck":
        return cmd_gradcheck(args)
    try:
        run = _setup(args)
        return COMMANDS[args.command](run)
    except (ConfigError, nn.ArchitectureError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, data.IdxError, checkpoint.CheckpointError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except (distill.DivergenceError, FloatingPointError) as e:
        print(f"diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
