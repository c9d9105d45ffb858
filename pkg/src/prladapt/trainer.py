"""Two-phase training: supervised source pretraining, then adaptation.

Per-epoch metrics in the training log are full-dataset forward evaluations
taken at epoch end (and once at epoch 0, before any step), so the same
numbers drive the warm-up plateau detector, the snapshots, and the report.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import schedule as sched
from .autodiff import Tape, Tensor, add, backward
from .data import DomainDataset, sample_unpaired_batches
from .losses import (
    LossWeights,
    MMDConfig,
    classification_loss,
    mmd_loss,
    prl_loss,
    reported_mmd,
    source_objective,
    target_objective,
)
from .models import (
    Classifier,
    Encoder,
    EncoderConfig,
    ParamSet,
    clone_params,
    init_classifier,
    init_encoder,
    load_paramset,
    save_paramset,
    sgd_step,
)


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 30
    lr: float = 0.0001
    weight_decay: float = 0.00002
    batch_size: int = 256
    holdout_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0:
            raise ValueError("pretrain needs non-negative epochs and positive lr")


@dataclass(frozen=True)
class AdaptConfig:
    architecture: str = sched.PRL
    schedule: sched.ScheduleKind = field(default_factory=sched.naive)
    weights: LossWeights = field(default_factory=LossWeights)
    mmd: MMDConfig = field(default_factory=MMDConfig)
    epochs: int = 50
    lr: float = 0.0001
    weight_decay: float = 0.00002
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in sched.ARCHITECTURE_KINDS:
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.epochs < 0 or self.lr <= 0 or self.batch_size < 1:
            raise ValueError("adapt needs non-negative epochs, positive lr and batch size")
        if self.architecture == sched.DOUBLE_ENCODER:
            # independent-encoder baseline: reference loss forced off
            object.__setattr__(self, "weights", replace(self.weights, reference_weight=0.0))


@dataclass
class EpochRecord:
    epoch: int
    l_cls: float | None
    mmd_reported: float
    l_pr: float
    target_acc: float | None
    source_trainable: bool


CSV_COLUMNS = ("epoch", "l_cls", "mmd_reported", "l_pr", "target_acc", "source_trainable")


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)

    def accuracies(self) -> list[float]:
        return [r.target_acc for r in self.records if r.target_acc is not None]

    def mmd_trajectory(self) -> list[float]:
        return [r.mmd_reported for r in self.records]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for r in self.records:
                cells = [
                    str(r.epoch),
                    "" if r.l_cls is None else f"{r.l_cls:.17g}",
                    f"{r.mmd_reported:.17g}",
                    f"{r.l_pr:.17g}",
                    "" if r.target_acc is None else f"{r.target_acc:.17g}",
                    "1" if r.source_trainable else "0",
                ]
                fh.write(",".join(cells) + "\n")

    @staticmethod
    def from_csv(path) -> "TrainingLog":
        log = TrainingLog()
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            if tuple(header) != CSV_COLUMNS:
                raise ValueError(f"{path}: unexpected log columns {header}")
            for line in fh:
                cells = line.rstrip("\n").split(",")
                log.records.append(
                    EpochRecord(
                        epoch=int(cells[0]),
                        l_cls=float(cells[1]) if cells[1] else None,
                        mmd_reported=float(cells[2]),
                        l_pr=float(cells[3]),
                        target_acc=float(cells[4]) if cells[4] else None,
                        source_trainable=cells[5] == "1",
                    )
                )
        return log


class SnapshotStore:
    """Per-epoch serialized parameter sets, optionally mirrored to disk."""

    def __init__(self, save_dir=None):
        self.save_dir = save_dir
        self._by_epoch: dict[int, dict[str, str]] = {}
        self.classifier_text: str | None = None
        if save_dir is not None:
            os.makedirs(save_dir, exist_ok=True)

    def epochs(self) -> list[int]:
        return sorted(self._by_epoch)

    def put(self, epoch: int, target_params: ParamSet, source_params: ParamSet | None) -> None:
        entry = {"target": save_paramset(target_params)}
        if source_params is not None:
            entry["source"] = save_paramset(source_params)
        self._by_epoch[epoch] = entry
        if self.save_dir is not None:
            for role, text in entry.items():
                with open(
                    os.path.join(self.save_dir, f"epoch{epoch:04d}_{role}.params"),
                    "w",
                    encoding="utf-8",
                ) as fh:
                    fh.write(text)

    def set_classifier(self, classifier_params: ParamSet) -> None:
        self.classifier_text = save_paramset(classifier_params)
        if self.save_dir is not None:
            with open(os.path.join(self.save_dir, "classifier.params"), "w", encoding="utf-8") as fh:
                fh.write(self.classifier_text)

    def load(self, epoch: int, role: str = "target") -> ParamSet:
        return load_paramset(self._by_epoch[epoch][role])

    def load_classifier(self) -> ParamSet:
        if self.classifier_text is None:
            raise ValueError("no classifier stored")
        return load_paramset(self.classifier_text)


def evaluate_accuracy(encoder: Encoder, classifier: Classifier, ds: DomainDataset) -> float:
    """Fraction of argmax predictions matching labels; argmax breaks ties
    toward the lowest class index."""
    if ds.labels is None:
        raise ValueError("evaluate_accuracy needs a labeled dataset")
    logits = classifier.classify(encoder.encode(Tensor(ds.features))).data
    pred = np.argmax(logits, axis=1)
    return float((pred == ds.labels).mean())


def _source_batches(ds: DomainDataset, batch_size: int, rng: np.random.Generator):
    idx = rng.permutation(ds.n)
    for start in range(0, ds.n - batch_size + 1, batch_size):
        rows = idx[start : start + batch_size]
        yield ds.features[rows], ds.labels[rows]


def pretrain_source(
    ds_s: DomainDataset,
    encoder_cfg: EncoderConfig,
    cfg: PretrainConfig,
) -> tuple[Encoder, Classifier, list[tuple[int, float, float]]]:
    """Minimize cross-entropy on the labeled source domain by mini-batch
    SGD. Returns the trained encoder, the classifier head, and a per-epoch
    (epoch, train accuracy, holdout accuracy) log."""
    if ds_s.labels is None:
        raise ValueError("pretraining needs source labels")
    if len(np.unique(ds_s.labels)) < 2:
        raise ValueError("source dataset is degenerate: a single class present")
    encoder = init_encoder(replace(encoder_cfg, init_seed=cfg.seed))
    classifier = init_classifier(encoder_cfg.feature_dim, ds_s.n_classes, init_seed=cfg.seed + 1)

    split_rng = np.random.default_rng([cfg.seed, 0x401])
    order = split_rng.permutation(ds_s.n)
    n_holdout = max(1, int(round(cfg.holdout_fraction * ds_s.n)))
    holdout_rows, train_rows = order[:n_holdout], order[n_holdout:]
    train_ds = DomainDataset(ds_s.features[train_rows], ds_s.labels[train_rows], ds_s.n_classes, ds_s.domain_tag)
    holdout_ds = DomainDataset(ds_s.features[holdout_rows], ds_s.labels[holdout_rows], ds_s.n_classes, ds_s.domain_tag)

    batch_size = min(cfg.batch_size, train_ds.n)
    log: list[tuple[int, float, float]] = []
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, 0x402, epoch])
        for x_np, y_np in _source_batches(train_ds, batch_size, rng):
            with Tape():
                logits = classifier.classify(encoder.encode(Tensor(x_np)))
                loss = classification_loss(logits, y_np)
                backward(loss)
            sgd_step(encoder.params, cfg.lr, cfg.weight_decay)
            sgd_step(classifier.params, cfg.lr, cfg.weight_decay)
        log.append(
            (
                epoch,
                evaluate_accuracy(encoder, classifier, train_ds),
                evaluate_accuracy(encoder, classifier, holdout_ds),
            )
        )
    return encoder, classifier, log


def _epoch_metrics(
    enc_s: Encoder,
    enc_t: Encoder,
    classifier: Classifier,
    ds_s: DomainDataset,
    ds_t: DomainDataset,
    cfg: AdaptConfig,
    shared: bool,
) -> tuple[float, float, float]:
    """Full-dataset (l_cls, reported mmd, l_pr), forward only."""
    f_s = enc_s.encode(Tensor(ds_s.features))
    f_t = enc_t.encode(Tensor(ds_t.features))
    l_cls = classification_loss(classifier.classify(f_s), ds_s.labels).item()
    raw_mmd = mmd_loss(f_s, f_t, cfg.mmd).item()
    l_pr = 0.0 if shared else prl_loss(enc_t.params, enc_s.params, cfg.weights.norm_kind).item()
    return l_cls, reported_mmd(raw_mmd), l_pr


def adapt(
    source_encoder: Encoder,
    classifier: Classifier,
    ds_s: DomainDataset,
    ds_t: DomainDataset,
    cfg: AdaptConfig,
    eval_labels: np.ndarray | None = None,
    snapshot_dir=None,
) -> tuple[TrainingLog, SnapshotStore]:
    """Adapt to the unlabeled target domain per the configured architecture
    and schedule.

    ``ds_t`` must be unlabeled; accuracy logging goes through the separate
    ``eval_labels`` argument, which no training decision reads. The
    classifier is frozen for the duration and its parameters are restored
    bit-identically at the end.
    """
    if ds_t.labels is not None:
        raise ValueError("adapt: target dataset must be unlabeled (use without_labels())")
    if ds_s.labels is None:
        raise ValueError("adapt: source dataset must be labeled")
    classifier.freeze()

    shared = cfg.architecture == sched.SINGLE_ENCODER
    frozen_everything = cfg.architecture == sched.SOURCE_ONLY
    enc_s = source_encoder
    if shared:
        enc_t = enc_s
    else:
        enc_t = Encoder(enc_s.config, clone_params(enc_s.params))

    eval_ds = None
    if eval_labels is not None:
        eval_ds = DomainDataset(ds_t.features, eval_labels, ds_s.n_classes, ds_t.domain_tag)

    log = TrainingLog()
    store = SnapshotStore(snapshot_dir)
    store.set_classifier(classifier.params)

    def record(epoch: int, source_flag: bool) -> None:
        l_cls, mmd_rep, l_pr = _epoch_metrics(enc_s, enc_t, classifier, ds_s, ds_t, cfg, shared)
        acc = evaluate_accuracy(enc_t, classifier, eval_ds) if eval_ds is not None else None
        log.records.append(
            EpochRecord(
                epoch=epoch,
                l_cls=l_cls if source_flag or shared else None,
                mmd_reported=mmd_rep,
                l_pr=l_pr,
                target_acc=acc,
                source_trainable=source_flag,
            )
        )

    record(0, False)
    schedule_kind = sched.resolve_eps_small(cfg.schedule, log.records[0].mmd_reported)
    state = sched.ScheduleState()
    mmd_history = [log.records[0].mmd_reported]

    for epoch in range(1, cfg.epochs + 1):
        if frozen_everything:
            source_flag = False
        elif shared:
            source_flag = True  # the one shared encoder trains every epoch
        elif cfg.architecture == sched.DOUBLE_ENCODER:
            source_flag = False
        else:
            (source_flag, _target_flag), state = sched.schedule_step(
                schedule_kind, state, mmd_history
            )

        batches = (
            []
            if frozen_everything
            else sample_unpaired_batches(
                ds_s,
                ds_t,
                min(cfg.batch_size, ds_s.n),
                min(cfg.batch_size, ds_t.n),
                epoch_seed=cfg.seed * 1_000_003 + epoch,
            )
        )
        for batch in batches:
            if shared:
                with Tape():
                    f_s = enc_s.encode(Tensor(batch.x_s))
                    f_t = enc_s.encode(Tensor(batch.x_t))
                    logits = classifier.classify(f_s)
                    loss = add(classification_loss(logits, batch.y_s), mmd_loss(f_s, f_t, cfg.mmd))
                    backward(loss)
                sgd_step(enc_s.params, cfg.lr, cfg.weight_decay)
                classifier.params.zero_grads()
                continue

            # target step: MMD + weighted PRL, source stream forward-only
            with Tape():
                f_s = enc_s.encode(Tensor(batch.x_s))
                f_t = enc_t.encode(Tensor(batch.x_t))
                loss = target_objective(f_s, f_t, enc_t.params, enc_s.params, cfg.mmd, cfg.weights)
                backward(loss)
            sgd_step(enc_t.params, cfg.lr, cfg.weight_decay)
            enc_s.params.zero_grads()

            if source_flag:
                with Tape():
                    f_s = enc_s.encode(Tensor(batch.x_s))
                    f_t = enc_t.encode(Tensor(batch.x_t))
                    logits = classifier.classify(f_s)
                    loss = source_objective(
                        logits, batch.y_s, f_s, f_t, enc_s.params, enc_t.params, cfg.mmd, cfg.weights
                    )
                    backward(loss)
                sgd_step(enc_s.params, cfg.lr, cfg.weight_decay)
                enc_t.params.zero_grads()
                classifier.params.zero_grads()

        record(epoch, source_flag)
        mmd_history.append(log.records[-1].mmd_reported)
        store.put(epoch, enc_t.params, enc_s.params if source_flag else None)

    return log, store
