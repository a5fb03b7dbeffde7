"""Flat ``key = value`` run configuration with per-task defaults."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path

from .distill import DistillConfig

TASKS = ("two-moons", "mnist")

# per-task defaults for keys left unset (None) in RunConfig
TASK_DEFAULTS = {
    "two-moons": {
        "teacher_arch": "input(2), dense(2,64), relu, dense(64,64), relu, dense(64,2)",
        "student_arch": "input(2), dense(2,32), relu, dense(32,32), relu, dense(32,2)",
        "generator_arch": "input(16), dense(16,128), relu, dense(128,128), relu, dense(128,2), tanh",
        "z_dim": 16,
        "batch_size": 256,
        "total_steps": 4000,
        "teacher_steps": 2000,
    },
    "mnist": {
        "teacher_arch": ("input(1,28,28), flatten, dense(784,256), relu, dense(256,128), relu, "
                         "dense(128,10)"),
        "student_arch": ("input(1,28,28), flatten, dense(784,128), relu, dense(128,64), relu, "
                         "dense(64,10)"),
        "generator_arch": ("input(64), dense(64,256), relu, dense(256,512), relu, dense(512,784), "
                           "tanh, reshape(1,28,28)"),
        "z_dim": 64,
        "batch_size": 128,
        "total_steps": 6000,
        "teacher_steps": 6000,
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    task: str = "two-moons"
    seed: int = 0
    out: str = "runs/default"
    # data
    n_train: int = 1000
    n_test: int = 1000
    noise_sd: float = 0.1
    mnist_train_images: str = ""
    mnist_train_labels: str = ""
    mnist_test_images: str = ""
    mnist_test_labels: str = ""
    # teacher training
    teacher_arch: str | None = None
    teacher_steps: int | None = None
    teacher_lr: float = 1e-3
    teacher_batch_size: int = 128
    teacher_checkpoint: str = ""
    # distillation
    student_arch: str | None = None
    generator_arch: str | None = None
    z_dim: int | None = None
    batch_size: int | None = None
    total_steps: int | None = None
    matcher_loss: str = "mae"
    temperature: float = 1.0
    w_logit_reg: float = 1.0
    w_feat_reg: float = 0.001
    w_mixup: float = 1.0
    mixup_alpha: float = 1.0
    student_steps_per_gen_step: int = 5
    optimizer: str = "adam"
    student_lr: float = 1e-3
    generator_lr: float = 1e-4
    momentum: float = 0.9
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # evaluation
    eval_every: int = 50
    agreement_threshold: float = 0.95
    band_threshold: float = 0.9
    grid_resolution: int = 100
    n_samples_dump: int = 500
    # ablation
    ablate_seeds: int = 3
    ablate_steps: int = 1000

    def resolve(self) -> "RunConfig":
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        for key, value in TASK_DEFAULTS[self.task].items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        return self

    def distill_config(self, **overrides) -> DistillConfig:
        names = {f.name for f in fields(DistillConfig)}
        values = {k: getattr(self, k) for k in names}
        values.update(overrides)
        try:
            return DistillConfig(**values)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def items(self) -> list[tuple[str, object]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())


def _coerce(name: str, raw: str):
    field_type = {f.name: f.type for f in fields(RunConfig)}[name]
    try:
        if "int" in field_type and "float" not in field_type:
            return int(raw)
        if "float" in field_type:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {field_type}") from None
    return raw


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       comment_prefixes=("#",), delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    cfg = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    for key, raw in parser["run"].items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, raw.strip()))
    return cfg


def load_config(path: str | Path | None) -> tuple[RunConfig, str]:
    """Return the parsed config and its verbatim text ('' when no file is given)."""
    if path is None:
        return RunConfig(), ""
    text = Path(path).read_text(encoding="utf-8")
    return parse_config(text), text


def defaults_text() -> str:
    lines = ["# defaults (keys marked per-task resolve from the task)"]
    for key, value in RunConfig().items():
        if value is None:
            per_task = "; ".join(f"{t}: {TASK_DEFAULTS[t][key]}" for t in TASKS)
            lines.append(f"# {key}: per-task ({per_task})")
            lines.append(f"{key} = {TASK_DEFAULTS['two-moons'][key]}")
        else:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
