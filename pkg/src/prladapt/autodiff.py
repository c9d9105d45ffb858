"""Dense float64 tensors with tape-based reverse-mode differentiation.

The engine is deliberately small: a flat list of primitives, one global
active tape, and a backward pass that walks the tape in reverse insertion
order. Tapes are rebuilt on every forward pass; nothing persists between
batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AutodiffError",
    "ShapeMismatch",
    "NonFiniteValue",
    "Tensor",
    "Tape",
    "tape_active",
    "apply_primitive",
    "backward",
    "grad_check",
    "GradCheckReport",
    "matmul",
    "add",
    "add_broadcast_row",
    "scale",
    "neg",
    "exp",
    "relu",
    "abs_",
    "square",
    "reduce_mean",
    "reduce_sum",
    "concat_rows",
    "pairwise_sq_dists",
    "cross_entropy_with_labels",
]


class AutodiffError(Exception):
    """Base class for tensor-engine failures."""


class ShapeMismatch(AutodiffError):
    pass


class NonFiniteValue(AutodiffError):
    pass


class Tensor:
    """Row-major float64 array, optionally carrying a gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class _Node:
    op_kind: str
    inputs: list[Tensor]
    output: Tensor
    # one vector-Jacobian product per input: grad_out -> grad_input
    vjps: list


@dataclass
class Tape:
    """Append-only record of primitive applications, in topological order."""

    nodes: list[_Node] = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise AutodiffError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None


_ACTIVE_TAPE: Tape | None = None


def tape_active() -> bool:
    return _ACTIVE_TAPE is not None


def _check_finite(op_kind: str, arrays) -> None:
    for a in arrays:
        if a.size and not np.isfinite(a).all():
            raise NonFiniteValue(f"{op_kind}: non-finite input")


def _shape_error(op_kind, shapes):
    return ShapeMismatch(f"{op_kind}: incompatible shapes {list(shapes)}")


# ---------------------------------------------------------------------------
# primitive forward/vjp definitions
# ---------------------------------------------------------------------------

def _fw_matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", (a.shape, b.shape))
    out = a @ b
    return out, [
        lambda g, b=b: g @ b.T,
        lambda g, a=a: a.T @ g,
    ]


def _fw_add(a, b):
    if a.shape != b.shape:
        raise _shape_error("add", (a.shape, b.shape))
    return a + b, [lambda g: g, lambda g: g]


def _fw_add_broadcast_row(a, row):
    if a.ndim != 2 or row.ndim != 1 or a.shape[1] != row.shape[0]:
        raise _shape_error("add_broadcast_row", (a.shape, row.shape))
    return a + row[None, :], [lambda g: g, lambda g: g.sum(axis=0)]


def _fw_neg(a):
    return -a, [lambda g: -g]


def _fw_exp(a):
    out = np.exp(a)
    return out, [lambda g, out=out: g * out]


def _fw_relu(a):
    mask = a > 0
    return a * mask, [lambda g, mask=mask: g * mask]


def _fw_abs(a):
    # subgradient at 0 fixed to 0, so coinciding parameters stay put
    s = np.sign(a)
    return np.abs(a), [lambda g, s=s: g * s]


def _fw_square(a):
    return a * a, [lambda g, a=a: 2.0 * a * g]


def _fw_reduce_mean(a):
    n = a.size
    if n == 0:
        raise _shape_error("reduce_mean", (a.shape,))
    return np.array(a.mean()), [lambda g, a=a, n=n: np.full_like(a, float(g) / n)]


def _fw_reduce_sum(a):
    return np.array(a.sum()), [lambda g, a=a: np.full_like(a, float(g))]


def _fw_concat_rows(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise _shape_error("concat_rows", (a.shape, b.shape))
    na = a.shape[0]
    out = np.concatenate([a, b], axis=0)
    return out, [lambda g, na=na: g[:na], lambda g, na=na: g[na:]]


def _fw_pairwise_sq_dists(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise _shape_error("pairwise_sq_dists", (a.shape, b.shape))
    # expansion form with a clamp against tiny negative round-off
    sq_a = (a * a).sum(axis=1)[:, None]
    sq_b = (b * b).sum(axis=1)[None, :]
    d = sq_a + sq_b - 2.0 * (a @ b.T)
    np.maximum(d, 0.0, out=d)
    return d, [
        lambda g, a=a, b=b: 2.0 * (a * g.sum(axis=1)[:, None] - g @ b),
        lambda g, a=a, b=b: 2.0 * (b * g.sum(axis=0)[:, None] - g.T @ a),
    ]


_PRIMITIVES = {
    "matmul": (_fw_matmul, 2),
    "add": (_fw_add, 2),
    "add_broadcast_row": (_fw_add_broadcast_row, 2),
    "neg": (_fw_neg, 1),
    "exp": (_fw_exp, 1),
    "relu": (_fw_relu, 1),
    "abs": (_fw_abs, 1),
    "square": (_fw_square, 1),
    "reduce_mean": (_fw_reduce_mean, 1),
    "reduce_sum": (_fw_reduce_sum, 1),
    "concat_rows": (_fw_concat_rows, 2),
    "pairwise_sq_dists": (_fw_pairwise_sq_dists, 2),
}


def apply_primitive(op_kind: str, inputs: list[Tensor], **params) -> Tensor:
    """Run one primitive, recording it on the active tape when a gradient
    may be needed. ``scale`` takes its factor through ``params``."""
    if op_kind == "scale":
        return _apply(op_kind, inputs, _make_scale(params["factor"]))
    if op_kind == "cross_entropy_with_labels":
        return _apply(op_kind, inputs, _make_cross_entropy(params["labels"]))
    try:
        fw, arity = _PRIMITIVES[op_kind]
    except KeyError:
        raise AutodiffError(f"unknown primitive {op_kind!r}") from None
    if len(inputs) != arity:
        raise AutodiffError(f"{op_kind}: expected {arity} inputs, got {len(inputs)}")
    return _apply(op_kind, inputs, fw)


def _apply(op_kind: str, inputs: list[Tensor], fw) -> Tensor:
    arrays = [t.data for t in inputs]
    _check_finite(op_kind, arrays)
    out_data, vjps = fw(*arrays)
    if not np.isfinite(out_data).all():
        raise NonFiniteValue(f"{op_kind}: produced non-finite output")
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs_grad)
    if needs_grad and _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE.nodes.append(_Node(op_kind, list(inputs), out, vjps))
    return out


def _make_scale(factor: float):
    factor = float(factor)
    if not np.isfinite(factor):
        raise NonFiniteValue("scale: non-finite factor")

    def fw(a):
        return a * factor, [lambda g: g * factor]

    return fw


def _make_cross_entropy(labels):
    """Mean cross-entropy of logits against integer labels, stabilized by
    max-subtraction. Fused because log-softmax plus row selection cannot be
    expressed in the elementwise primitive vocabulary with stable gradients."""
    labels = np.asarray(labels, dtype=np.int64)

    def fw(logits):
        if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
            raise _shape_error("cross_entropy_with_labels", (logits.shape, labels.shape))
        n, k = logits.shape
        if n == 0:
            raise _shape_error("cross_entropy_with_labels", (logits.shape,))
        if labels.min() < 0 or labels.max() >= k:
            raise AutodiffError(
                f"cross_entropy_with_labels: label out of range for {k} classes"
            )
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        loss = (log_z - shifted[np.arange(n), labels]).mean()
        softmax = np.exp(shifted - log_z[:, None])

        def vjp(g, softmax=softmax, labels=labels, n=n):
            grad = softmax.copy()
            grad[np.arange(n), labels] -= 1.0
            return grad * (float(g) / n)

        return np.array(loss), [vjp]

    return fw


# convenience wrappers ------------------------------------------------------

def matmul(a, b):
    return apply_primitive("matmul", [a, b])


def add(a, b):
    return apply_primitive("add", [a, b])


def add_broadcast_row(a, row):
    return apply_primitive("add_broadcast_row", [a, row])


def scale(a, factor):
    return apply_primitive("scale", [a], factor=factor)


def neg(a):
    return apply_primitive("neg", [a])


def exp(a):
    return apply_primitive("exp", [a])


def relu(a):
    return apply_primitive("relu", [a])


def abs_(a):
    return apply_primitive("abs", [a])


def square(a):
    return apply_primitive("square", [a])


def reduce_mean(a):
    return apply_primitive("reduce_mean", [a])


def reduce_sum(a):
    return apply_primitive("reduce_sum", [a])


def concat_rows(a, b):
    return apply_primitive("concat_rows", [a, b])


def pairwise_sq_dists(a, b):
    return apply_primitive("pairwise_sq_dists", [a, b])


def cross_entropy_with_labels(logits, labels):
    return apply_primitive("cross_entropy_with_labels", [logits], labels=labels)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(output: Tensor) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from a scalar
    ``output``. Gradients accumulate additively across reuses of a leaf."""
    tape = _ACTIVE_TAPE
    if tape is None:
        raise AutodiffError("backward: no active tape")
    if tape.consumed:
        raise AutodiffError("backward: tape already consumed; re-run the forward pass")
    if output.size != 1:
        raise AutodiffError(f"backward: output must be scalar, got shape {output.shape}")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    produced = {id(n.output) for n in tape.nodes}
    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        for inp, vjp in zip(node.inputs, node.vjps):
            if not inp.requires_grad:
                continue
            g_in = vjp(g_out)
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + g_in
            else:
                grads[key] = g_in
            if key not in produced:
                if inp.grad is None:
                    inp.grad = np.array(g_in, dtype=np.float64, copy=True)
                else:
                    inp.grad = inp.grad + g_in
                grads[key] = np.zeros_like(inp.data)  # leaf: already flushed


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    mean_rel_error: float
    tol: float
    passed: bool
    per_param: dict[str, float]

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"grad_check {status}: max={self.max_rel_error:.3e} "
            f"mean={self.mean_rel_error:.3e} tol={self.tol:.1e}"
        )


def grad_check(f, params, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare the analytic gradient of a scalar-valued ``f()`` against
    central differences over every scalar in ``params``.

    ``params`` is a sequence of (name, Tensor) pairs (a ParamSet iterates
    that way). Relative error uses an absolute floor of 1 in the
    denominator so near-zero gradients are compared absolutely.
    """
    if not (0.0 < h <= 1e-2):
        raise ValueError(f"grad_check: h must be in (0, 1e-2], got {h}")
    pairs = list(params)
    for _, t in pairs:
        t.zero_grad()
    with Tape():
        out = f()
        if not np.isfinite(out.data).all():
            raise NonFiniteValue("grad_check: f returned non-finite value")
        backward(out)

    per_param: dict[str, float] = {}
    errs = []
    for name, t in pairs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f().item()
            flat[i] = orig - h
            f_minus = f().item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NonFiniteValue("grad_check: f returned non-finite value")
            num_flat[i] = (f_plus - f_minus) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
        rel = np.abs(analytic - numeric) / denom
        per_param[name] = float(rel.max()) if rel.size else 0.0
        errs.append(rel.reshape(-1))

    all_errs = np.concatenate(errs) if errs else np.zeros(1)
    max_err = float(all_errs.max())
    return GradCheckReport(
        max_rel_error=max_err,
        mean_rel_error=float(all_errs.mean()),
        tol=tol,
        passed=max_err <= tol,
        per_param=per_param,
    )
