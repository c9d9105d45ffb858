"""Encoders, the frozen linear classifier, parameter collections, and SGD.

The source and target encoders are plain MLPs built from the same config,
so their parameter lists are positionally aligned by construction. The
classifier is a single linear head that stays frozen throughout adaptation.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add_broadcast_row, matmul, relu

PARAMS_FORMAT_HEADER = "PRLPARAMS/1"


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 32)
    activation: str = "relu"
    bottleneck_dim: int | None = None
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        if self.input_dim <= 0 or not self.hidden_dims:
            raise ValueError("encoder needs a positive input_dim and at least one hidden layer")
        if any(d <= 0 for d in self.hidden_dims):
            raise ValueError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if self.bottleneck_dim is not None and self.bottleneck_dim <= 0:
            raise ValueError(f"bottleneck_dim must be positive, got {self.bottleneck_dim}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def feature_dim(self) -> int:
        return self.bottleneck_dim if self.bottleneck_dim is not None else self.hidden_dims[-1]


class ParamSet:
    """Ordered, named collection of trainable tensors.

    Positional order is deterministic given the config that built it, which
    is what makes the source/target parameter correspondence well defined.
    """

    def __init__(self, entries: list[tuple[str, Tensor]], frozen: bool = False):
        names = [n for n, _ in entries]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.entries = list(entries)
        self.frozen = frozen

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.entries]

    def names(self) -> list[str]:
        return [n for n, _ in self.entries]

    def n_scalars(self) -> int:
        return sum(t.size for _, t in self.entries)

    def zero_grads(self) -> None:
        for _, t in self.entries:
            t.zero_grad()

    def check_aligned(self, other: "ParamSet") -> None:
        if len(self.entries) != len(other.entries):
            raise ValueError(
                f"param sets differ in length: {len(self.entries)} vs {len(other.entries)}"
            )
        for (na, ta), (nb, tb) in zip(self.entries, other.entries):
            if na != nb or ta.shape != tb.shape:
                raise ValueError(
                    f"param sets misaligned at {na!r} {ta.shape} vs {nb!r} {tb.shape}"
                )


def clone_params(src: ParamSet) -> ParamSet:
    """Deep copy with independent storage; gradients are not copied."""
    entries = []
    for name, t in src.entries:
        c = Tensor(t.data.copy(), requires_grad=t.requires_grad)
        entries.append((name, c))
    return ParamSet(entries)


def save_paramset(ps: ParamSet) -> str:
    """Serialize to the versioned text format (17 significant digits, which
    round-trips float64 exactly)."""
    buf = io.StringIO()
    buf.write(PARAMS_FORMAT_HEADER + "\n")
    for name, t in ps.entries:
        shape = ",".join(str(d) for d in t.shape) or "scalar"
        buf.write(f"{name} {shape}\n")
        buf.write(" ".join(f"{v:.17g}" for v in t.data.reshape(-1)) + "\n")
    return buf.getvalue()


def load_paramset(text: str, requires_grad: bool = True) -> ParamSet:
    lines = text.splitlines()
    if not lines or lines[0] != PARAMS_FORMAT_HEADER:
        raise ValueError(f"bad parameter file: expected header {PARAMS_FORMAT_HEADER!r}")
    entries = []
    i = 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        name, shape_s = lines[i].split()
        shape = () if shape_s == "scalar" else tuple(int(d) for d in shape_s.split(","))
        values = np.array([float(v) for v in lines[i + 1].split()], dtype=np.float64)
        entries.append((name, Tensor(values.reshape(shape), requires_grad=requires_grad)))
        i += 2
    return ParamSet(entries)


def _glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


@dataclass
class Encoder:
    config: EncoderConfig
    params: ParamSet

    def encode(self, x: Tensor) -> Tensor:
        """Map an n-by-m batch to n-by-f features."""
        if x.data.ndim != 2 or x.data.shape[1] != self.config.input_dim:
            raise ValueError(
                f"encode: expected (n, {self.config.input_dim}) input, got {x.shape}"
            )
        tensors = dict(self.params.entries)
        h = x
        for li in range(len(self.config.hidden_dims)):
            h = relu(add_broadcast_row(matmul(h, tensors[f"w{li}"]), tensors[f"b{li}"]))
        if self.config.bottleneck_dim is not None:
            h = add_broadcast_row(matmul(h, tensors["w_bottleneck"]), tensors["b_bottleneck"])
        return h


def init_encoder(config: EncoderConfig) -> Encoder:
    """Glorot-uniform weights, zero biases, deterministic in the seed."""
    rng = np.random.default_rng(config.init_seed)
    entries: list[tuple[str, Tensor]] = []
    dims = [config.input_dim, *config.hidden_dims]
    for li, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        entries.append((f"w{li}", Tensor(_glorot_uniform(rng, fan_in, fan_out), requires_grad=True)))
        entries.append((f"b{li}", Tensor(np.zeros(fan_out), requires_grad=True)))
    if config.bottleneck_dim is not None:
        fan_in, fan_out = config.hidden_dims[-1], config.bottleneck_dim
        entries.append(("w_bottleneck", Tensor(_glorot_uniform(rng, fan_in, fan_out), requires_grad=True)))
        entries.append(("b_bottleneck", Tensor(np.zeros(fan_out), requires_grad=True)))
    return Encoder(config, ParamSet(entries))


@dataclass
class Classifier:
    params: ParamSet
    n_classes: int
    frozen: bool = False

    def freeze(self) -> None:
        self.frozen = True
        self.params.frozen = True

    def classify(self, features: Tensor) -> Tensor:
        """Pre-softmax logits; the softmax lives inside the loss."""
        tensors = dict(self.params.entries)
        w = tensors["w_head"]
        if features.data.ndim != 2 or features.data.shape[1] != w.shape[0]:
            raise ValueError(
                f"classify: expected (n, {w.shape[0]}) features, got {features.shape}"
            )
        return add_broadcast_row(matmul(features, w), tensors["b_head"])


def init_classifier(feature_dim: int, n_classes: int, init_seed: int = 0) -> Classifier:
    if feature_dim <= 0 or n_classes < 2:
        raise ValueError("classifier needs feature_dim >= 1 and n_classes >= 2")
    rng = np.random.default_rng(init_seed)
    entries = [
        ("w_head", Tensor(_glorot_uniform(rng, feature_dim, n_classes), requires_grad=True)),
        ("b_head", Tensor(np.zeros(n_classes), requires_grad=True)),
    ]
    return Classifier(ParamSet(entries), n_classes)


def sgd_step(params: ParamSet, lr: float, weight_decay: float = 0.0) -> None:
    """p <- p - lr * (grad + weight_decay * p), then zero the grads.

    Weight decay is coupled into the gradient (classic SGD formulation).
    """
    if params.frozen:
        raise ValueError("sgd_step: parameter set is frozen")
    for name, t in params.entries:
        if t.grad is None:
            raise ValueError(f"sgd_step: parameter {name!r} has no gradient")
        t.data -= lr * (t.grad + weight_decay * t.data)
    params.zero_grads()
