"""The three loss terms and their combinations, plus kernel-width selection.

MMD is the biased V-statistic of the squared RKHS distance between mean
embeddings. The optimized quantity is the squared norm (smooth at 0); the
value written to logs is its square root, via ``reported_mmd``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    abs_,
    add,
    cross_entropy_with_labels,
    matmul,
    neg,
    pairwise_sq_dists,
    exp,
    reduce_mean,
    reduce_sum,
    relu,
    scale,
    square,
)
from .models import ParamSet

REPORTED_MMD_CONVENTION = "sqrt_of_squared_v_statistic"


@dataclass(frozen=True)
class MMDConfig:
    kernel: str = "gaussian"
    width: float = 1.0  # gaussian scale dividing squared distances

    def __post_init__(self):
        if self.kernel not in ("gaussian", "linear"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.kernel == "gaussian" and self.width <= 0:
            raise ValueError(f"kernel width must be positive, got {self.width}")


@dataclass(frozen=True)
class LossWeights:
    reference_weight: float = 10.0
    norm_kind: str = "l1"

    def __post_init__(self):
        if self.reference_weight < 0:
            raise ValueError("reference_weight must be non-negative")
        if self.norm_kind not in ("l1", "l2"):
            raise ValueError(f"norm_kind must be 'l1' or 'l2', got {self.norm_kind!r}")


def classification_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over the batch, stabilized by max-subtraction."""
    return cross_entropy_with_labels(logits, labels)


def mmd_loss(f_s: Tensor, f_t: Tensor, cfg: MMDConfig) -> Tensor:
    """Squared-MMD V-statistic between two feature batches, clamped at 0."""
    if f_s.data.ndim != 2 or f_t.data.ndim != 2 or f_s.shape[1] != f_t.shape[1]:
        raise ValueError(f"mmd_loss: incompatible feature shapes {f_s.shape}, {f_t.shape}")
    if f_s.shape[0] == 0 or f_t.shape[0] == 0:
        raise ValueError("mmd_loss: empty batch")
    if cfg.kernel == "gaussian":
        inv_w = -1.0 / cfg.width

        def block(a, b):
            return reduce_mean(exp(scale(pairwise_sq_dists(a, b), inv_w)))
    else:
        # mean_{ij} a_i . b_j == mean(a) . mean(b); the dot product is
        # expressed through the polarization identity to stay inside the
        # elementwise primitive vocabulary
        def block(a, b):
            return _vec_dot(_row_mean(a), _row_mean(b))

    total = add(
        add(block(f_s, f_s), block(f_t, f_t)),
        scale(block(f_s, f_t), -2.0),
    )
    return relu(total)  # clamp float round-off below 0


def _row_mean(x: Tensor) -> Tensor:
    n = x.shape[0]
    ones = Tensor(np.full((1, n), 1.0 / n))
    return matmul(ones, x)


def _vec_dot(u: Tensor, v: Tensor) -> Tensor:
    # u . v = ((u+v)^2 - u^2 - v^2) / 2, summed over components
    cross = add(square(add(u, v)), neg(add(square(u), square(v))))
    return reduce_sum(scale(cross, 0.5))


def reported_mmd(raw_value: float) -> float:
    """Log-facing value: square root of the squared estimator."""
    return float(np.sqrt(max(raw_value, 0.0)))


def prl_loss(p_t: ParamSet, p_s: ParamSet, norm_kind: str = "l1") -> Tensor:
    """Sum over all corresponding scalars of |p_t - p_s| (or squared
    difference for the l2 variant). Gradient flows into whichever side
    currently requires grad."""
    if norm_kind not in ("l1", "l2"):
        raise ValueError(f"norm_kind must be 'l1' or 'l2', got {norm_kind!r}")
    p_t.check_aligned(p_s)
    elem = abs_ if norm_kind == "l1" else square
    total: Tensor | None = None
    for (_, t), (_, s) in zip(p_t.entries, p_s.entries):
        term = reduce_sum(elem(add(t, neg(s))))
        total = term if total is None else add(total, term)
    assert total is not None
    return total


def target_objective(
    f_s: Tensor,
    f_t: Tensor,
    p_t: ParamSet,
    p_s: ParamSet,
    cfg: MMDConfig,
    weights: LossWeights,
) -> Tensor:
    """Adaptation objective for the target encoder: MMD plus weighted PRL."""
    loss = mmd_loss(f_s, f_t, cfg)
    if weights.reference_weight > 0:
        loss = add(loss, scale(prl_loss(p_t, p_s, weights.norm_kind), weights.reference_weight))
    return loss


def source_objective(
    logits: Tensor,
    labels: np.ndarray,
    f_s: Tensor,
    f_t: Tensor,
    p_s: ParamSet,
    p_t: ParamSet,
    cfg: MMDConfig,
    weights: LossWeights,
) -> Tensor:
    """Objective for the source encoder when a schedule enables its
    learning: classification + MMD + weighted PRL."""
    loss = add(classification_loss(logits, labels), mmd_loss(f_s, f_t, cfg))
    if weights.reference_weight > 0:
        loss = add(loss, scale(prl_loss(p_t, p_s, weights.norm_kind), weights.reference_weight))
    return loss


def select_kernel_width(candidates, probe, epochs: int, rel_slack: float = 0.01) -> float:
    """Pick the smallest candidate width whose probe MMD trajectory is
    non-increasing (within ``rel_slack``) and ends below its start.

    ``probe(width, epochs)`` runs a reference-weight-0 adaptation and
    returns the per-epoch reported MMD. Selection never reads target
    labels; the probe must not either.
    """
    candidates = sorted(candidates)
    if not candidates:
        raise ValueError("select_kernel_width: empty candidate list")
    if any(c <= 0 for c in candidates):
        raise ValueError("select_kernel_width: candidates must be positive")
    for cand in candidates:
        traj = list(probe(cand, epochs))
        if len(traj) < 2:
            continue
        monotone = all(b <= a * (1.0 + rel_slack) for a, b in zip(traj, traj[1:]))
        if monotone and traj[-1] < traj[0]:
            return cand
    raise ValueError(
        "select_kernel_width: no candidate produced a decreasing MMD trajectory; "
        "widen the candidate grid"
    )
