"""Per-epoch learning-enable state machine for the adaptation phase.

Four schedules control whether the source encoder learns during a given
epoch; the target encoder learns at every epoch under every schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

NAIVE = "naive"
SIMULTANEOUS = "simultaneous"
WARMUP = "warmup"
INTURN = "inturn"

SCHEDULE_KINDS = (NAIVE, SIMULTANEOUS, WARMUP, INTURN)

SOURCE_ONLY = "source_only"
SINGLE_ENCODER = "single_encoder"
DOUBLE_ENCODER = "double_encoder"
PRL = "prl"

ARCHITECTURE_KINDS = (SOURCE_ONLY, SINGLE_ENCODER, DOUBLE_ENCODER, PRL)


@dataclass(frozen=True)
class ScheduleKind:
    kind: str
    k: int | None = None  # in-turn period half-length
    patience: int = 5
    min_rel_improve: float = 0.02
    eps_small: float | None = None  # None: resolved to 0.05 * initial reported MMD

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == INTURN:
            if self.k is None or self.k < 1:
                raise ValueError("in-turn schedule requires k >= 1")
        if self.kind == WARMUP:
            if self.patience < 1:
                raise ValueError("warm-up patience must be >= 1")
            if not (0.0 < self.min_rel_improve < 1.0):
                raise ValueError("min_rel_improve must be in (0, 1)")
            if self.eps_small is not None and self.eps_small <= 0:
                raise ValueError("eps_small must be positive")


def naive() -> ScheduleKind:
    return ScheduleKind(NAIVE)


def simultaneous() -> ScheduleKind:
    return ScheduleKind(SIMULTANEOUS)


def warmup(patience: int = 5, min_rel_improve: float = 0.02, eps_small: float | None = None) -> ScheduleKind:
    return ScheduleKind(WARMUP, patience=patience, min_rel_improve=min_rel_improve, eps_small=eps_small)


def inturn(k: int) -> ScheduleKind:
    return ScheduleKind(INTURN, k=k)


@dataclass(frozen=True)
class ScheduleState:
    epoch: int = 0
    warm_up_triggered: bool = False  # monotone: never reverts


def plateau_detected(
    mmd_history,
    patience: int,
    min_rel_improve: float,
    eps_small: float,
) -> bool:
    """True once the running minimum of reported MMD is small and has
    stopped improving over the last ``patience`` epochs."""
    history = list(mmd_history)
    if not history:
        raise ValueError("plateau_detected: empty history")
    running_min = []
    best = history[0]
    for v in history:
        best = min(best, v)
        running_min.append(best)
    e = len(history) - 1
    if e < patience:
        return False
    b_now = running_min[e]
    if b_now > eps_small:
        return False
    b_then = running_min[e - patience]
    improvement = (b_then - b_now) / max(b_then, 1e-12)
    return improvement < min_rel_improve


def resolve_eps_small(kind: ScheduleKind, initial_reported_mmd: float) -> ScheduleKind:
    """Fill the warm-up plateau gate from the run's first MMD reading when
    the config left it unset."""
    if kind.kind == WARMUP and kind.eps_small is None:
        return replace(kind, eps_small=max(0.05 * initial_reported_mmd, 1e-12))
    return kind


def schedule_step(
    kind: ScheduleKind,
    state: ScheduleState,
    mmd_history,
) -> tuple[tuple[bool, bool], ScheduleState]:
    """Return ((source_trainable, target_trainable), next state) for the
    epoch about to run. ``mmd_history`` holds reported MMD for completed
    epochs only."""
    history = list(mmd_history)
    if kind.kind == NAIVE:
        flags = (False, True)
        next_state = state
    elif kind.kind == SIMULTANEOUS:
        flags = (True, True)
        next_state = state
    elif kind.kind == INTURN:
        flags = ((state.epoch // kind.k) % 2 == 1, True)
        next_state = state
    else:  # warm-up
        triggered = state.warm_up_triggered
        if not triggered and history:
            eps = kind.eps_small
            if eps is None:
                raise ValueError("warm-up eps_small unresolved; call resolve_eps_small first")
            triggered = plateau_detected(history, kind.patience, kind.min_rel_improve, eps)
        flags = (triggered, True)
        next_state = replace(state, warm_up_triggered=triggered)
    return flags, replace(next_state, epoch=state.epoch + 1)
