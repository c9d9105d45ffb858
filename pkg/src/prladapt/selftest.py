"""Fast built-in invariant checks, runnable without pytest via the CLI."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tape, Tensor, backward, grad_check
from .data import ShiftSpec, make_two_moons
from .losses import LossWeights, MMDConfig, mmd_loss, prl_loss, source_objective
from .models import EncoderConfig, clone_params, init_classifier, init_encoder
from .trainer import AdaptConfig, PretrainConfig, adapt, pretrain_source
from . import schedule as sched


def _check(name, ok, detail="", verbose=True):
    if verbose:
        print(f"{'ok  ' if ok else 'FAIL'} {name}" + (f"  ({detail})" if detail else ""))
    return bool(ok)


def run_selftest(verbose: bool = True) -> int:
    rng = np.random.default_rng(7)
    ok = True

    # gradient check through the full source-side objective
    enc_cfg = EncoderConfig(input_dim=3, hidden_dims=(5, 4), init_seed=1)
    encoder = init_encoder(enc_cfg)
    reference = clone_params(encoder.params)
    for _, t in reference.entries:
        t.data = t.data + 0.05
    classifier = init_classifier(enc_cfg.feature_dim, 2, init_seed=2)
    x_s = rng.normal(size=(6, 3))
    y_s = rng.integers(0, 2, size=6)
    x_t = rng.normal(size=(5, 3))

    def objective():
        f_s = encoder.encode(Tensor(x_s))
        f_t = encoder.encode(Tensor(x_t))
        logits = classifier.classify(f_s)
        return source_objective(
            logits, y_s, f_s, f_t, encoder.params, reference,
            MMDConfig(kernel="gaussian", width=2.0),
            LossWeights(reference_weight=0.5, norm_kind="l2"),
        )

    params = list(encoder.params.entries) + list(classifier.params.entries)
    report = grad_check(objective, params)
    ok &= _check("gradient check on combined objective", report.passed,
                 f"max rel err {report.max_rel_error:.2e}", verbose)

    # mmd against a direct kernel-sum computation
    a = rng.normal(size=(8, 4))
    b = rng.normal(size=(9, 4)) + 0.3
    w = 2.5

    def kmean(u, v):
        d = ((u[:, None, :] - v[None, :, :]) ** 2).sum(-1)
        return np.exp(-d / w).mean()

    direct = kmean(a, a) + kmean(b, b) - 2 * kmean(a, b)
    with Tape():
        est = mmd_loss(Tensor(a), Tensor(b), MMDConfig(kernel="gaussian", width=w))
    ok &= _check("gaussian mmd matches direct kernel sums",
                 abs(float(est.data) - direct) < 1e-12, f"|diff|={abs(float(est.data) - direct):.2e}", verbose)

    # parameter reference loss on a hand-checkable difference
    diffs = np.array([1.0, -2.0, 0.5])
    enc2 = init_encoder(EncoderConfig(input_dim=1, hidden_dims=(3,), init_seed=3))
    ref2 = clone_params(enc2.params)
    flat = np.concatenate([t.data.ravel() for _, t in enc2.params.entries])
    flat[:3] += diffs
    pos = 0
    for _, t in enc2.params.entries:
        k = t.data.size
        t.data = flat[pos:pos + k].reshape(t.data.shape)
        pos += k
    with Tape():
        l1 = float(prl_loss(enc2.params, ref2, "l1").data)
        l2 = float(prl_loss(enc2.params, ref2, "l2").data)
    ok &= _check("reference loss L1/L2 on known offsets",
                 math.isclose(l1, 3.5) and math.isclose(l2, 5.25), f"l1={l1}, l2={l2}", verbose)

    # backward-twice rejection
    from .autodiff import AutodiffError, reduce_sum, square

    with Tape():
        t = Tensor(np.ones((2, 2)), requires_grad=True)
        loss = reduce_sum(square(t))
        backward(loss)
        try:
            backward(loss)
            ok &= _check("tape rejects a second backward pass", False, verbose=verbose)
        except AutodiffError:
            ok &= _check("tape rejects a second backward pass", True, verbose=verbose)

    # tiny end-to-end run: adaptation must be deterministic given the seed
    ds_s = make_two_moons(40, 0.1, seed=0, domain_tag="source")
    ds_t = make_two_moons(40, 0.1, ShiftSpec(rotation_deg=30.0), seed=11, domain_tag="target")
    cfg = EncoderConfig(input_dim=2, hidden_dims=(8,), init_seed=0)
    pre = PretrainConfig(epochs=3, batch_size=16, seed=0)
    acfg = AdaptConfig(architecture=sched.PRL, schedule=sched.naive(), epochs=3,
                       batch_size=16, seed=0)
    logs = []
    for _ in range(2):
        enc, cls_, _ = pretrain_source(ds_s, cfg, pre)
        log, _ = adapt(enc, cls_, ds_s, ds_t.without_labels(), acfg, eval_labels=ds_t.labels)
        logs.append([(r.mmd_reported, r.l_pr) for r in log.records])
    ok &= _check("repeated seeded run is bit-identical", logs[0] == logs[1], verbose=verbose)

    if verbose:
        print("selftest " + ("passed" if ok else "FAILED"))
    return 0 if ok else 2


__all__ = ["run_selftest"]
