"""Label-free evaluation protocol and the experiment grid.

The only legitimate selection rule is the latest snapshot; the label-using
best-snapshot column exists purely as a diagnostic contrast and is tagged
``oracle`` wherever it appears. This module consumes finished training
logs only — nothing here can influence a run.
"""

from __future__ import annotations

import json
import traceback
from dataclasses import dataclass, field, replace

import numpy as np

from . import schedule as sched
from .data import DomainDataset
from .losses import LossWeights
from .models import EncoderConfig
from .trainer import AdaptConfig, PretrainConfig, TrainingLog, adapt, pretrain_source


def latest_snapshot_report(log: TrainingLog) -> float:
    """Target accuracy of the final epoch record."""
    accs = log.accuracies()
    if not accs:
        raise ValueError("latest_snapshot_report: log has no accuracy records")
    return accs[-1]


def best_snapshot_oracle(log: TrainingLog) -> tuple[float, int]:
    """Label-selected best accuracy and its first-attaining epoch.

    Diagnostic only; callers must surface this as oracle output."""
    pairs = [(r.target_acc, r.epoch) for r in log.records if r.target_acc is not None]
    if not pairs:
        raise ValueError("best_snapshot_oracle: log has no accuracy records")
    best_acc = max(a for a, _ in pairs)
    best_epoch = next(e for a, e in pairs if a == best_acc)
    return best_acc, best_epoch


def accuracy_at_mmd_threshold(log: TrainingLog, threshold: float) -> tuple[float, int] | None:
    """Accuracy at the first epoch whose reported MMD is at or below the
    threshold; None if the run never gets there."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    for r in log.records:
        if r.mmd_reported <= threshold and r.target_acc is not None:
            return r.target_acc, r.epoch
    return None


def stability_metrics(log: TrainingLog, window: int = 10) -> tuple[float, float]:
    """(population std of the trailing ``window`` accuracies, largest
    single-epoch accuracy drop over the whole run)."""
    accs = log.accuracies()
    if window < 2 or window > len(accs):
        raise ValueError(f"window {window} out of range for {len(accs)} records")
    trailing = np.array(accs[-window:])
    trailing_std = float(trailing.std())
    drops = [a - b for a, b in zip(accs, accs[1:])]
    max_drop = max(drops) if drops else 0.0
    return trailing_std, max(0.0, max_drop)


@dataclass(frozen=True)
class MethodSpec:
    name: str
    architecture: str
    schedule: sched.ScheduleKind = field(default_factory=sched.naive)
    weights: LossWeights = field(default_factory=LossWeights)


@dataclass(frozen=True)
class TaskSpec:
    name: str
    ds_s: DomainDataset
    ds_t: DomainDataset  # labeled; labels are stripped before training


@dataclass
class CellResult:
    task: str
    method: str
    seed: int
    log: TrainingLog
    latest_accuracy: float
    best_accuracy: float
    best_epoch: int
    trailing_std: float
    max_drop: float


@dataclass
class CellFailure:
    task: str
    method: str
    seed: int
    error: str


@dataclass
class ReportRow:
    task: str
    method: str
    n_seeds: int
    latest_accuracy_median: float
    latest_accuracy_std: float
    best_accuracy_median: float  # oracle column, label-selected
    best_epoch_median: float
    latest_minus_best: float
    trailing_std_median: float
    max_drop_median: float
    accuracy_at_threshold_median: float | None
    oracle: bool = True  # flags that best_* columns used target labels


@dataclass
class EvalReport:
    rows: list[ReportRow]
    failures: list[CellFailure]
    cells: list[CellResult]
    common_mmd_threshold: float | None

    def to_json_dict(self) -> dict:
        return {
            "common_mmd_threshold": self.common_mmd_threshold,
            "oracle_columns": ["best_accuracy_median", "best_epoch_median"],
            "rows": [
                {
                    "task": r.task,
                    "method": r.method,
                    "n_seeds": r.n_seeds,
                    "latest_accuracy_median": r.latest_accuracy_median,
                    "latest_accuracy_std": r.latest_accuracy_std,
                    "best_accuracy_median_oracle": r.best_accuracy_median,
                    "best_epoch_median_oracle": r.best_epoch_median,
                    "latest_minus_best": r.latest_minus_best,
                    "trailing_std_median": r.trailing_std_median,
                    "max_drop_median": r.max_drop_median,
                    "accuracy_at_threshold_median": r.accuracy_at_threshold_median,
                }
                for r in self.rows
            ],
            "failures": [
                {"task": f.task, "method": f.method, "seed": f.seed, "error": f.error}
                for f in self.failures
            ],
        }

    def to_csv(self, path) -> None:
        cols = (
            "task,method,n_seeds,latest_accuracy_median,latest_accuracy_std,"
            "best_accuracy_median_oracle,best_epoch_median_oracle,latest_minus_best,"
            "trailing_std_median,max_drop_median,accuracy_at_threshold_median"
        )
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(cols + "\n")
            for r in self.rows:
                thr = "" if r.accuracy_at_threshold_median is None else f"{r.accuracy_at_threshold_median:.17g}"
                fh.write(
                    f"{r.task},{r.method},{r.n_seeds},{r.latest_accuracy_median:.17g},"
                    f"{r.latest_accuracy_std:.17g},{r.best_accuracy_median:.17g},"
                    f"{r.best_epoch_median:.17g},{r.latest_minus_best:.17g},"
                    f"{r.trailing_std_median:.17g},{r.max_drop_median:.17g},{thr}\n"
                )

    def write_plotdata_csv(self, path) -> None:
        """Long-form (task, method, seed, epoch, accuracy, mmd) rows for
        trajectory plots."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("task,method,seed,epoch,target_acc,mmd_reported\n")
            for cell in self.cells:
                for r in cell.log.records:
                    acc = "" if r.target_acc is None else f"{r.target_acc:.17g}"
                    fh.write(
                        f"{cell.task},{cell.method},{cell.seed},{r.epoch},{acc},"
                        f"{r.mmd_reported:.17g}\n"
                    )


def run_cell(
    task: TaskSpec,
    method: MethodSpec,
    seed: int,
    encoder_cfg: EncoderConfig,
    pretrain_cfg: PretrainConfig,
    adapt_cfg: AdaptConfig,
    stability_window: int = 10,
) -> CellResult:
    """Pretrain + adapt one (task, method, seed) combination."""
    pre_cfg = replace(pretrain_cfg, seed=seed)
    ad_cfg = replace(
        adapt_cfg,
        architecture=method.architecture,
        schedule=method.schedule,
        weights=method.weights,
        seed=seed,
    )
    encoder, classifier, _ = pretrain_source(task.ds_s, encoder_cfg, pre_cfg)
    log, _store = adapt(
        encoder,
        classifier,
        task.ds_s,
        task.ds_t.without_labels(),
        ad_cfg,
        eval_labels=task.ds_t.labels,
    )
    latest = latest_snapshot_report(log)
    best, best_epoch = best_snapshot_oracle(log)
    window = min(stability_window, len(log.accuracies()))
    tstd, mdrop = stability_metrics(log, window)
    return CellResult(task.name, method.name, seed, log, latest, best, best_epoch, tstd, mdrop)


def _median(values) -> float:
    return float(np.median(np.array(values, dtype=np.float64)))


def experiment_grid(
    tasks: list[TaskSpec],
    methods: list[MethodSpec],
    seeds: list[int],
    encoder_cfg: EncoderConfig,
    pretrain_cfg: PretrainConfig,
    adapt_cfg: AdaptConfig,
    stability_window: int = 10,
    jobs: int = 1,
) -> EvalReport:
    """Run every (task, method, seed) cell and aggregate medians across
    seeds. Per-cell failures are recorded and the grid continues."""
    if not tasks or not methods or not seeds:
        raise ValueError("experiment_grid: tasks, methods and seeds must be non-empty")
    cells: list[CellResult] = []
    failures: list[CellFailure] = []
    work = [(t, m, s) for t in tasks for m in methods for s in seeds]

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(
                    run_cell, t, m, s, encoder_cfg, pretrain_cfg, adapt_cfg, stability_window
                )
                for t, m, s in work
            ]
            for (t, m, s), fut in zip(work, futures):
                try:
                    cells.append(fut.result())
                except Exception:
                    failures.append(CellFailure(t.name, m.name, s, traceback.format_exc(limit=3)))
    else:
        for t, m, s in work:
            try:
                cells.append(run_cell(t, m, s, encoder_cfg, pretrain_cfg, adapt_cfg, stability_window))
            except Exception:
                failures.append(CellFailure(t.name, m.name, s, traceback.format_exc(limit=3)))

    # minimal common reported-MMD threshold: the largest per-run minimum,
    # so every successful run reaches it
    threshold = None
    if cells:
        per_run_min = [min(c.log.mmd_trajectory()) for c in cells]
        threshold = max(per_run_min)
        if threshold <= 0:
            threshold = None

    rows: list[ReportRow] = []
    for t in tasks:
        for m in methods:
            group = [c for c in cells if c.task == t.name and c.method == m.name]
            if not group:
                continue
            latest = [c.latest_accuracy for c in group]
            best = [c.best_accuracy for c in group]
            at_thr = None
            if threshold is not None:
                hits = [
                    hit[0]
                    for c in group
                    if (hit := accuracy_at_mmd_threshold(c.log, threshold)) is not None
                ]
                at_thr = _median(hits) if hits else None
            rows.append(
                ReportRow(
                    task=t.name,
                    method=m.name,
                    n_seeds=len(group),
                    latest_accuracy_median=_median(latest),
                    latest_accuracy_std=float(np.std(np.array(latest))),
                    best_accuracy_median=_median(best),
                    best_epoch_median=_median([c.best_epoch for c in group]),
                    latest_minus_best=_median([c.latest_accuracy - c.best_accuracy for c in group]),
                    trailing_std_median=_median([c.trailing_std for c in group]),
                    max_drop_median=_median([c.max_drop for c in group]),
                    accuracy_at_threshold_median=at_thr,
                )
            )
    return EvalReport(rows, failures, cells, threshold)
