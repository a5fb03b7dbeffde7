"""Layers, networks and first-order optimizers on top of :mod:`dfkd.autodiff`.

Architectures are written as compact strings, e.g.::

    input(2), dense(2,64), relu, dense(64,64), relu, dense(64,2)

The first token fixes the per-sample input shape; every later token is one
layer.  Shapes are chained at build time so a typo fails early.
"""
from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ROLES = ("teacher", "student", "generator")
_TOKEN = re.compile(r"\s*([a-z_0-9]+)\s*(?:\(([^)]*)\))?\s*(?:,|$)")


class ArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    args: tuple[int, ...] = ()

    def __str__(self) -> str:
        return f"{self.kind}({','.join(map(str, self.args))})" if self.args else self.kind


@dataclass(frozen=True)
class ArchSpec:
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]

    def __str__(self) -> str:
        head = f"input({','.join(map(str, self.input_shape))})"
        return ", ".join([head] + [str(layer) for layer in self.layers])


def parse_arch(text: str) -> ArchSpec:
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ArchitectureError(f"cannot parse architecture near {text[pos:]!r}")
        args = tuple(int(a) for a in m.group(2).split(",") if a.strip()) if m.group(2) else ()
        tokens.append(LayerSpec(m.group(1), args))
        pos = m.end()
    if not tokens or tokens[0].kind != "input":
        raise ArchitectureError("architecture must start with input(...)")
    return ArchSpec(tokens[0].args, tuple(tokens[1:]))


# ---------------------------------------------------------------------------
# layers


class Layer:
    kind = "layer"

    def params(self) -> dict[str, Tensor]:
        return {}

    def out_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return shape

    def __call__(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int):
        self.n_in, self.n_out = n_in, n_out
        self.weight = Tensor(np.zeros((n_in, n_out)), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def out_shape(self, shape):
        if len(shape) != 1 or shape[0] != self.n_in:
            raise ArchitectureError(f"dense({self.n_in},{self.n_out}) cannot take input {list(shape)}")
        return (self.n_out,)

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.weight), self.bias)


class Conv2d(Layer):
    """Stride-1, size-preserving convolution; no bias."""

    kind = "conv2d"

    def __init__(self, in_ch: int, out_ch: int, k: int):
        if k % 2 == 0:
            raise ArchitectureError(f"conv2d kernel size must be odd, got {k}")
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, k
        self.kernel = Tensor(np.zeros((out_ch, in_ch, k, k)), requires_grad=True)

    def params(self):
        return {"kernel": self.kernel}

    def out_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.in_ch:
            raise ArchitectureError(
                f"conv2d({self.in_ch},{self.out_ch},{self.k}) cannot take input {list(shape)}")
        return (self.out_ch, shape[1], shape[2])

    def __call__(self, x):
        return ad.conv2d(x, self.kernel)


class Affine(Layer):
    """Per-feature scale and shift (batchnorm without statistics)."""

    kind = "affine"

    def __init__(self, n: int):
        self.n = n
        self.scale = Tensor(np.ones(n), requires_grad=True)
        self.shift = Tensor(np.zeros(n), requires_grad=True)

    def params(self):
        return {"scale": self.scale, "shift": self.shift}

    def out_shape(self, shape):
        if shape[-1] != self.n:
            raise ArchitectureError(f"affine({self.n}) cannot take input {list(shape)}")
        return shape

    def __call__(self, x):
        return ad.add(ad.mul(x, self.scale), self.shift)


class Activation(Layer):
    _fns = {"relu": ad.relu, "tanh": ad.tanh, "softmax": ad.softmax}

    def __init__(self, kind: str):
        self.kind = kind
        self.fn = self._fns[kind]

    def __call__(self, x):
        return self.fn(x)


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, shape):
        return (int(np.prod(shape)),)

    def __call__(self, x):
        return ad.reshape(x, (x.shape[0], -1))


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, *shape: int):
        self.shape = tuple(shape)

    def out_shape(self, shape):
        if int(np.prod(shape)) != int(np.prod(self.shape)):
            raise ArchitectureError(f"reshape{self.shape} cannot take input {list(shape)}")
        return self.shape

    def __call__(self, x):
        return ad.reshape(x, (x.shape[0],) + self.shape)


def _build_layer(spec: LayerSpec) -> Layer:
    k, a = spec.kind, spec.args
    try:
        if k == "dense":
            return Dense(*a)
        if k == "conv2d":
            return Conv2d(*a)
        if k == "affine":
            return Affine(*a)
        if k in Activation._fns and not a:
            return Activation(k)
        if k == "flatten" and not a:
            return Flatten()
        if k == "reshape" and a:
            return Reshape(*a)
    except TypeError:
        pass
    raise ArchitectureError(f"unknown or malformed layer {spec}")


# ---------------------------------------------------------------------------
# networks


@dataclass
class Network:
    arch: ArchSpec
    layers: list[Layer]
    role: str
    feature_tap: int
    seed: int = 0
    shapes: list[tuple[int, ...]] = field(default_factory=list)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.arch.input_shape

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[-1]

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for i, layer in enumerate(self.layers):
            for name, t in layer.params().items():
                yield f"{i}.{layer.kind}.{name}", t

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.parameters())

    def requires_grad_(self, flag: bool) -> "Network":
        for t in self.parameters():
            t.requires_grad = flag
        return self

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def __call__(self, batch: Tensor) -> Tensor:
        return forward(self, batch)[0]


def _default_tap(layers: list[Layer]) -> int:
    trainable = [i for i, layer in enumerate(layers) if layer.params() and not isinstance(layer, Affine)]
    return trainable[-1] - 1 if trainable else len(layers) - 1


def _init_params(layers: list[Layer], rng: np.random.Generator) -> None:
    for i, layer in enumerate(layers):
        nxt = layers[i + 1].kind if i + 1 < len(layers) else None
        if isinstance(layer, Dense):
            fan_in, fan_out, shape = layer.n_in, layer.n_out, layer.weight.shape
            target = layer.weight
        elif isinstance(layer, Conv2d):
            fan_in = layer.in_ch * layer.k * layer.k
            fan_out = layer.out_ch * layer.k * layer.k
            shape, target = layer.kernel.shape, layer.kernel
        else:
            continue
        if nxt == "relu":
            bound = np.sqrt(6.0 / fan_in)
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
        target.data[...] = rng.uniform(-bound, bound, shape)


def init_network(arch: ArchSpec | str, role: str, seed: int = 0,
                 feature_tap: int | None = None) -> Network:
    """Build a network from an architecture and initialise it deterministically.

    Dense/conv layers followed by relu get He-uniform weights, everything else
    Xavier-uniform; biases start at zero.
    """
    if isinstance(arch, str):
        arch = parse_arch(arch)
    if role not in ROLES:
        raise ArchitectureError(f"role must be one of {ROLES}, got {role!r}")
    layers = [_build_layer(s) for s in arch.layers]
    shapes = [tuple(arch.input_shape)]
    prev = f"input({','.join(map(str, arch.input_shape))})"
    for spec, layer in zip(arch.layers, layers):
        try:
            shapes.append(layer.out_shape(shapes[-1]))
        except ArchitectureError as e:
            raise ArchitectureError(f"incompatible chain {prev} -> {spec}: {e}") from None
        prev = str(spec)
    if role != "generator" and len(shapes[-1]) != 1:
        raise ArchitectureError(f"{role} must end in a logits vector, got {list(shapes[-1])}")
    _init_params(layers, np.random.default_rng(seed))
    tap = _default_tap(layers) if feature_tap is None else feature_tap
    if not -1 <= tap < len(layers):
        raise ArchitectureError(f"feature_tap {tap} out of range")
    return Network(arch, layers, role, tap, seed, shapes)


def forward(net: Network, batch: Tensor) -> tuple[Tensor, Tensor]:
    """Return (output, features) where features is the tapped activation."""
    if tuple(batch.shape[1:]) != tuple(net.input_shape):
        raise ad.ShapeError(
            f"{net.role}: expected input [n, {', '.join(map(str, net.input_shape))}], "
            f"got {list(batch.shape)}")
    x = batch
    features = batch
    for i, layer in enumerate(net.layers):
        x = layer(x)
        if i == net.feature_tap:
            features = x
    return x, features


def copy_network(net: Network, role: str | None = None) -> Network:
    clone = copy.deepcopy(net)
    if role is not None:
        clone.role = role
    return clone


# ---------------------------------------------------------------------------
# optimizers


class Optimizer:
    def __init__(self, params: list[Tensor] | Network, lr: float):
        self.params = params.parameters() if isinstance(params, Network) else list(params)
        self.lr = lr
        self.t = 0

    def step(self) -> None:
        missing = [i for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise ValueError(f"optimizer step: parameters {missing} have no gradient")
        self.t += 1
        for i, p in enumerate(self.params):
            self._update(i, p)
            p.grad = None

    def _update(self, i: int, p: Tensor) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    kind = "sgd"

    def __init__(self, params, lr: float = 0.01, momentum: float = 0.0):
        super().__init__(params, lr)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, p):
        v = self.velocity[i]
        v *= self.momentum
        v += p.grad
        p.data -= p.data.dtype.type(self.lr) * v


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        super().__init__(params, lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _update(self, i, p):
        g = p.grad
        m, v = self.m[i], self.v[i]
        m *= self.b1
        m += (1 - self.b1) * g
        v *= self.b2
        v += (1 - self.b2) * g * g
        mhat = m / (1 - self.b1 ** self.t)
        vhat = v / (1 - self.b2 ** self.t)
        p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


def make_optimizer(kind: str, params, lr: float, momentum: float = 0.9,
                   betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> Optimizer:
    if kind == "adam":
        return Adam(params, lr, betas, eps)
    if kind in ("sgd", "sgd-momentum"):
        return SGD(params, lr, momentum)
    raise ValueError(f"unknown optimizer {kind!r}")


def optimizer_step(opt: Optimizer, net: Network | None = None) -> None:
    """Apply one update and clear gradients on the optimizer's parameters."""
    opt.step()
    if net is not None:
        net.zero_grad()


def train_classifier(net: Network, inputs: Tensor, labels: np.ndarray, steps: int,
                     batch_size: int = 128, lr: float = 1e-3, seed: int = 0,
                     optimizer: str = "adam", on_step=None) -> Network:
    """Plain supervised training with softmax cross-entropy on shuffled minibatches."""
    labels = np.asarray(labels)
    n = inputs.shape[0]
    c = net.output_shape[0]
    rng = np.random.default_rng([seed, 3])
    opt = make_optimizer(optimizer, net, lr)
    order = rng.permutation(n)
    pos = 0
    for step in range(1, steps + 1):
        if pos + batch_size > n:
            order, pos = rng.permutation(n), 0
        idx = order[pos:pos + batch_size]
        pos += batch_size
        onehot = np.zeros((len(idx), c), dtype=np.float32)
        onehot[np.arange(len(idx)), labels[idx]] = 1
        with ad.new_tape():
            logits = forward(net, Tensor(inputs.data[idx]))[0]
            loss = ad.scale(ad.mean(ad.sum(ad.mul(Tensor(onehot), ad.log_softmax(logits)),
                                           axis=-1)), -1.0)
            if not np.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite training loss at step {step}")
            ad.backward(loss)
            opt.step()
        if on_step:
            on_step(step, loss.item())
    return net
