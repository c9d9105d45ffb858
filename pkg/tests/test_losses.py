import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from prladapt.autodiff import Tensor, grad_check
from prladapt.losses import (
    LossWeights,
    MMDConfig,
    classification_loss,
    mmd_loss,
    prl_loss,
    reported_mmd,
    select_kernel_width,
    source_objective,
    target_objective,
)
from prladapt.models import EncoderConfig, clone_params, init_classifier, init_encoder


def brute_force_gaussian_mmd(a, b, width):
    """Independent oracle: explicit double sums over every pair."""

    def ksum(u, v):
        total = 0.0
        for x in u:
            for y in v:
                total += math.exp(-float(((x - y) ** 2).sum()) / width)
        return total

    n, m = len(a), len(b)
    return ksum(a, a) / n**2 + ksum(b, b) / m**2 - 2.0 * ksum(a, b) / (n * m)


class TestClassificationLoss:
    def test_uniform_softmax(self):
        out = classification_loss(Tensor(np.zeros((4, 3))), np.array([0, 1, 2, 0]))
        assert out.item() == pytest.approx(math.log(3.0), abs=1e-12)

    def test_confident_correct(self):
        out = classification_loss(Tensor([[10.0, 0.0, 0.0]]), np.array([0]))
        assert out.item() == pytest.approx(math.log(1.0 + 2.0 * math.exp(-10.0)), abs=1e-12)

    def test_confident_wrong(self):
        out = classification_loss(Tensor([[0.0, 10.0]]), np.array([0]))
        assert out.item() == pytest.approx(10.0 + math.log(1.0 + math.exp(-10.0)), abs=1e-9)

    def test_label_out_of_range(self):
        from prladapt.autodiff import AutodiffError

        with pytest.raises(AutodiffError, match="label out of range"):
            classification_loss(Tensor(np.zeros((1, 2))), np.array([2]))

    def test_empty_batch_rejected(self):
        from prladapt.autodiff import AutodiffError

        with pytest.raises(AutodiffError):
            classification_loss(Tensor(np.zeros((0, 2))), np.array([], dtype=int))

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(size=(5, 4))
        labels = rng.integers(0, 4, 5)
        a = classification_loss(Tensor(logits), labels).item()
        b = classification_loss(Tensor(logits + 123.456), labels).item()
        assert a == pytest.approx(b, abs=1e-10)


class TestMMD:
    def test_identical_batches_zero(self):
        x = np.random.default_rng(1).normal(size=(6, 3))
        for cfg in (MMDConfig("gaussian", 2.0), MMDConfig("linear")):
            assert mmd_loss(Tensor(x), Tensor(x.copy()), cfg).item() == pytest.approx(0.0, abs=1e-12)

    def test_two_singletons_closed_form(self):
        w = 3.0
        s = np.array([[0.0, 0.0]])
        t = np.array([[math.sqrt(w), 0.0]])  # squared distance equals the width
        out = mmd_loss(Tensor(s), Tensor(t), MMDConfig("gaussian", w))
        assert out.item() == pytest.approx(2.0 - 2.0 * math.exp(-1.0), abs=1e-12)

    def test_gaussian_matches_brute_force_oracle(self):
        rng = np.random.default_rng(42)
        for trial in range(100):
            n, m = rng.integers(1, 11), rng.integers(1, 11)
            d = rng.integers(1, 5)
            a = rng.normal(size=(n, d))
            b = rng.normal(size=(m, d)) + rng.normal()
            width = float(rng.uniform(0.5, 50.0))
            got = mmd_loss(Tensor(a), Tensor(b), MMDConfig("gaussian", width)).item()
            want = brute_force_gaussian_mmd(a, b, width)
            assert got == pytest.approx(want, abs=1e-10), f"trial {trial}"

    def test_linear_matches_mean_difference_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a = rng.normal(size=(rng.integers(1, 12), 4))
            b = rng.normal(size=(rng.integers(1, 12), 4)) + 0.5
            got = mmd_loss(Tensor(a), Tensor(b), MMDConfig("linear")).item()
            want = float(((a.mean(axis=0) - b.mean(axis=0)) ** 2).sum())
            assert got == pytest.approx(want, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(9)
        a, b = rng.normal(size=(5, 3)), rng.normal(size=(7, 3))
        cfg = MMDConfig("gaussian", 4.0)
        assert mmd_loss(Tensor(a), Tensor(b), cfg).item() == pytest.approx(
            mmd_loss(Tensor(b), Tensor(a), cfg).item(), abs=1e-12
        )

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            mmd_loss(Tensor(np.zeros((0, 2))), Tensor(np.zeros((3, 2))), MMDConfig())

    def test_bad_width_rejected(self):
        with pytest.raises(ValueError):
            MMDConfig("gaussian", 0.0)
        with pytest.raises(ValueError):
            MMDConfig("cubic")

    def test_reported_value_is_square_root(self):
        assert reported_mmd(4.0) == 2.0
        assert reported_mmd(-1e-18) == 0.0


@settings(max_examples=30, deadline=None)
@given(
    a=arrays(np.float64, (4, 3), elements=st.floats(-2, 2, allow_nan=False)),
    b=arrays(np.float64, (6, 3), elements=st.floats(-2, 2, allow_nan=False)),
)
def test_property_mmd_nonnegative(a, b):
    for cfg in (MMDConfig("gaussian", 1.0), MMDConfig("linear")):
        assert mmd_loss(Tensor(a), Tensor(b), cfg).item() >= 0.0


class TestReferenceLoss:
    def _pair_with_diffs(self, diffs):
        enc = init_encoder(EncoderConfig(1, (2,), init_seed=0))
        other = clone_params(enc.params)
        flat_positions = 0
        for _, t in other.entries:
            take = min(t.data.size, len(diffs) - flat_positions)
            if take > 0:
                t.data.reshape(-1)[:take] += diffs[flat_positions : flat_positions + take]
                flat_positions += take
        return other, enc.params

    def test_equal_sets_zero(self):
        p, q = self._pair_with_diffs(np.zeros(3))
        assert prl_loss(p, q, "l1").item() == 0.0
        assert prl_loss(p, q, "l2").item() == 0.0

    def test_hand_case_l1(self):
        # differences 1, -2, 0 over three scalars: |1| + |-2| + 0 = 3
        p, q = self._pair_with_diffs(np.array([1.0, -2.0, 0.0]))
        assert prl_loss(p, q, "l1").item() == pytest.approx(3.0, abs=1e-12)

    def test_hand_case_l2(self):
        p, q = self._pair_with_diffs(np.array([1.0, -2.0, 0.0]))
        assert prl_loss(p, q, "l2").item() == pytest.approx(5.0, abs=1e-12)

    def test_symmetry(self):
        p, q = self._pair_with_diffs(np.array([0.3, -0.7, 0.1]))
        for norm in ("l1", "l2"):
            assert prl_loss(p, q, norm).item() == pytest.approx(prl_loss(q, p, norm).item(), abs=1e-15)

    def test_l1_halves_with_differences(self):
        p, q = self._pair_with_diffs(np.array([0.4, -0.8, 0.2]))
        half, _ = self._pair_with_diffs(np.array([0.2, -0.4, 0.1]))
        assert prl_loss(half, q, "l1").item() == pytest.approx(0.5 * prl_loss(p, q, "l1").item(), abs=1e-12)

    def test_misaligned_rejected(self):
        a = init_encoder(EncoderConfig(1, (2,), init_seed=0)).params
        b = init_encoder(EncoderConfig(1, (3,), init_seed=0)).params
        with pytest.raises(ValueError):
            prl_loss(a, b, "l1")

    def test_bad_norm_rejected(self):
        a = init_encoder(EncoderConfig(1, (2,))).params
        with pytest.raises(ValueError):
            prl_loss(a, clone_params(a), "linf")


class TestObjectives:
    def setup_method(self):
        rng = np.random.default_rng(11)
        self.enc_s = init_encoder(EncoderConfig(3, (5,), init_seed=1))
        self.enc_t_params = clone_params(self.enc_s.params)
        for _, t in self.enc_t_params.entries:
            t.data += rng.normal(0, 0.05, size=t.data.shape)
        self.x_s = rng.normal(size=(6, 3))
        self.x_t = rng.normal(size=(7, 3))
        self.cfg = MMDConfig("gaussian", 2.0)

    def _features(self):
        from prladapt.models import Encoder

        enc_t = Encoder(self.enc_s.config, self.enc_t_params)
        return self.enc_s.encode(Tensor(self.x_s)), enc_t.encode(Tensor(self.x_t))

    def test_target_objective_reduces_to_mmd_at_zero_weight(self):
        f_s, f_t = self._features()
        got = target_objective(f_s, f_t, self.enc_t_params, self.enc_s.params, self.cfg, LossWeights(0.0)).item()
        f_s2, f_t2 = self._features()
        assert got == mmd_loss(f_s2, f_t2, self.cfg).item()

    def test_target_objective_arithmetic(self):
        f_s, f_t = self._features()
        mmd_val = mmd_loss(f_s, f_t, self.cfg).item()
        pr_val = prl_loss(self.enc_t_params, self.enc_s.params, "l1").item()
        total = target_objective(f_s, f_t, self.enc_t_params, self.enc_s.params, self.cfg, LossWeights(10.0, "l1")).item()
        assert total == pytest.approx(mmd_val + 10.0 * pr_val, rel=1e-12)

    def test_source_objective_arithmetic(self):
        clf = init_classifier(5, 2, init_seed=2)
        labels = np.array([0, 1, 0, 1, 0, 1])
        f_s, f_t = self._features()
        logits = clf.classify(f_s)
        parts = (
            classification_loss(logits, labels).item()
            + mmd_loss(f_s, f_t, self.cfg).item()
            + 1.0 * prl_loss(self.enc_s.params, self.enc_t_params, "l1").item()
        )
        total = source_objective(
            logits, labels, f_s, f_t, self.enc_s.params, self.enc_t_params, self.cfg, LossWeights(1.0, "l1")
        ).item()
        assert total == pytest.approx(parts, rel=1e-12)


class TestGradients:
    """Finite-difference checks over every loss term, repeated across seeds."""

    N_SEEDS = 20

    def _setup(self, seed):
        rng = np.random.default_rng(seed)
        enc_s = init_encoder(EncoderConfig(3, (4,), init_seed=seed))
        enc_t = init_encoder(EncoderConfig(3, (4,), init_seed=seed + 1000))
        # keep parameter differences away from the l1 kink
        for (_, a), (_, b) in zip(enc_s.params.entries, enc_t.params.entries):
            b.data = a.data + rng.uniform(0.05, 0.2, size=a.data.shape) * rng.choice([-1.0, 1.0], size=a.data.shape)
        clf = init_classifier(4, 3, init_seed=seed + 2000)
        x_s = rng.normal(size=(5, 3))
        x_t = rng.normal(size=(6, 3))
        labels = rng.integers(0, 3, 5)
        return enc_s, enc_t, clf, x_s, x_t, labels

    def test_all_losses_pass_grad_check(self):
        from prladapt.models import Encoder

        for seed in range(self.N_SEEDS):
            enc_s, enc_t_proto, clf, x_s, x_t, labels = self._setup(seed)
            enc_t = Encoder(enc_s.config, enc_t_proto.params)
            params = list(enc_s.params.entries) + list(enc_t.params.entries) + list(clf.params.entries)

            checks = {
                "classification": lambda: classification_loss(
                    clf.classify(enc_s.encode(Tensor(x_s))), labels
                ),
                "mmd_gaussian": lambda: mmd_loss(
                    enc_s.encode(Tensor(x_s)), enc_t.encode(Tensor(x_t)), MMDConfig("gaussian", 2.0)
                ),
                "mmd_linear": lambda: mmd_loss(
                    enc_s.encode(Tensor(x_s)), enc_t.encode(Tensor(x_t)), MMDConfig("linear")
                ),
                "reference_l1": lambda: prl_loss(enc_t.params, enc_s.params, "l1"),
                "reference_l2": lambda: prl_loss(enc_t.params, enc_s.params, "l2"),
                "target_objective": lambda: target_objective(
                    enc_s.encode(Tensor(x_s)),
                    enc_t.encode(Tensor(x_t)),
                    enc_t.params,
                    enc_s.params,
                    MMDConfig("gaussian", 2.0),
                    LossWeights(0.5, "l2"),
                ),
                "source_objective": lambda: source_objective(
                    clf.classify(enc_s.encode(Tensor(x_s))),
                    labels,
                    enc_s.encode(Tensor(x_s)),
                    enc_t.encode(Tensor(x_t)),
                    enc_s.params,
                    enc_t.params,
                    MMDConfig("gaussian", 2.0),
                    LossWeights(0.5, "l2"),
                ),
            }
            for name, f in checks.items():
                report = grad_check(f, params, h=1e-5, tol=1e-4)
                assert report.passed, f"seed {seed}, {name}: {report}"


class TestSelectKernelWidth:
    def test_single_qualifying_candidate(self):
        traj = {2.0: [1.0, 0.8, 0.6]}
        assert select_kernel_width([2.0], lambda w, e: traj[w], 3) == 2.0

    def test_smallest_qualifying_wins(self):
        traj = {0.1: [1.0, 1.5, 2.0], 1.0: [1.0, 0.7, 0.5], 10.0: [1.0, 0.9, 0.8]}
        assert select_kernel_width([10.0, 0.1, 1.0], lambda w, e: traj[w], 3) == 1.0

    def test_slack_tolerates_small_bumps(self):
        traj = {1.0: [1.0, 1.005, 0.9]}
        assert select_kernel_width([1.0], lambda w, e: traj[w], 3) == 1.0

    def test_no_candidate_raises_with_advice(self):
        with pytest.raises(ValueError, match="widen"):
            select_kernel_width([1.0], lambda w, e: [1.0, 2.0, 3.0], 3)

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError):
            select_kernel_width([], lambda w, e: [], 3)

    def test_nonpositive_candidates_rejected(self):
        with pytest.raises(ValueError):
            select_kernel_width([-1.0, 2.0], lambda w, e: [1.0, 0.5], 2)
