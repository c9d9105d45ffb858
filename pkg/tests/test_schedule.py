import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prladapt import schedule as sched
from prladapt.schedule import (
    ScheduleKind,
    ScheduleState,
    plateau_detected,
    resolve_eps_small,
    schedule_step,
)


def run_flags(kind, histories):
    """Feed a per-epoch MMD history and collect source flags."""
    state = ScheduleState()
    flags = []
    for i in range(len(histories)):
        (src, tgt), state = schedule_step(kind, state, histories[: i + 1])
        assert tgt is True
        flags.append(src)
    return flags


class TestKinds:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            ScheduleKind("sometimes")

    def test_inturn_requires_k(self):
        with pytest.raises(ValueError, match="k"):
            ScheduleKind(sched.INTURN)
        with pytest.raises(ValueError, match="k"):
            sched.inturn(0)

    def test_warmup_parameter_validation(self):
        with pytest.raises(ValueError):
            sched.warmup(patience=0)
        with pytest.raises(ValueError):
            sched.warmup(min_rel_improve=1.5)
        with pytest.raises(ValueError):
            ScheduleKind(sched.WARMUP, eps_small=-1.0)


class TestNaiveAndSimultaneous:
    def test_naive_never_trains_source(self):
        assert run_flags(sched.naive(), [1.0] * 8) == [False] * 8

    def test_simultaneous_always_trains_source(self):
        assert run_flags(sched.simultaneous(), [1.0] * 8) == [True] * 8


class TestInturn:
    def test_k2_sequence(self):
        flags = run_flags(sched.inturn(2), [1.0] * 6)
        assert flags == [False, False, True, True, False, False]

    def test_period_is_2k_and_starts_frozen(self):
        for k in (1, 2, 3, 5):
            flags = run_flags(sched.inturn(k), [1.0] * (6 * k))
            assert flags[:k] == [False] * k
            assert flags == flags[: 2 * k] * 3

    @settings(max_examples=25, deadline=None)
    @given(k=st.integers(1, 6), epochs=st.integers(1, 40))
    def test_property_flag_formula(self, k, epochs):
        flags = run_flags(sched.inturn(k), [1.0] * epochs)
        assert flags == [(e // k) % 2 == 1 for e in range(epochs)]


class TestPlateau:
    def test_fast_improvement_is_not_plateau(self):
        assert plateau_detected([1.0, 0.5, 0.25], 2, 0.1, 10.0) is False

    def test_small_and_stalled_is_plateau(self):
        assert plateau_detected([0.01, 0.0099, 0.00989], 2, 0.05, 0.02) is True

    def test_single_element_history(self):
        assert plateau_detected([0.5], 2, 0.05, 10.0) is False

    def test_gate_blocks_large_values(self):
        # stalled but not yet small: eps gate must block
        assert plateau_detected([1.0, 1.0, 1.0, 1.0], 2, 0.05, 0.1) is False

    def test_rebounds_do_not_reset_the_minimum(self):
        # raw readings rose, but the running minimum stalled: plateau fires
        assert plateau_detected([0.1, 0.05, 0.02, 0.9, 0.9], 2, 0.05, 1.0) is True
        # while the minimum is still falling, no plateau
        assert plateau_detected([0.1, 0.05, 0.02], 2, 0.05, 1.0) is False

    def test_empty_history_rejected(self):
        with pytest.raises(ValueError):
            plateau_detected([], 2, 0.05, 1.0)


class TestWarmup:
    def test_equivalent_to_naive_without_plateau(self):
        kind = sched.warmup(patience=3, eps_small=1e-6)
        assert run_flags(kind, [1.0, 0.9, 0.8, 0.7, 0.6, 0.5]) == [False] * 6

    def test_trigger_is_monotone(self):
        kind = sched.warmup(patience=2, min_rel_improve=0.05, eps_small=1.0)
        # stalls at 0.5, then starts improving again: flag must stay latched
        flags = run_flags(kind, [0.5, 0.5, 0.5, 0.25, 0.1, 0.05])
        first_on = flags.index(True)
        assert all(flags[first_on:])

    def test_naive_prefix_then_simultaneous_suffix(self):
        kind = sched.warmup(patience=2, min_rel_improve=0.05, eps_small=1.0)
        flags = run_flags(kind, [0.5] * 8)
        assert flags == sorted(flags)  # False..False then True..True

    def test_unresolved_eps_rejected_at_step_time(self):
        kind = sched.warmup()  # eps_small left to be resolved from the run
        with pytest.raises(ValueError, match="eps_small"):
            schedule_step(kind, ScheduleState(), [1.0])


class TestResolveEps:
    def test_fills_from_initial_mmd(self):
        kind = resolve_eps_small(sched.warmup(), initial_reported_mmd=2.0)
        assert kind.eps_small == pytest.approx(0.1)

    def test_explicit_value_kept(self):
        kind = resolve_eps_small(sched.warmup(eps_small=0.5), initial_reported_mmd=2.0)
        assert kind.eps_small == 0.5

    def test_other_kinds_untouched(self):
        assert resolve_eps_small(sched.naive(), 2.0) == sched.naive()


class TestReplay:
    def test_pure_replay_reproduces_flags(self):
        kind = sched.warmup(patience=2, min_rel_improve=0.05, eps_small=1.0)
        history = [0.9, 0.5, 0.5, 0.5, 0.4, 0.4]
        assert run_flags(kind, history) == run_flags(kind, history)
