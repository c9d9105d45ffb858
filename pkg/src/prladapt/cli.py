"""Config-driven command-line front end.

Subcommands: run, grid, selftest, gen-data, select-width. Configs are
YAML (JSON is a YAML subset, so a run manifest can be fed back in as the
config to reproduce a run). Unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import copy
import datetime
import hashlib
import json
import os
import sys

import numpy as np
import yaml

from . import schedule as sched
from .data import DomainDataset, ShiftSpec, load_csv_dataset, make_blobs, make_two_moons, save_csv_dataset
from .evaluation import (
    MethodSpec,
    TaskSpec,
    best_snapshot_oracle,
    experiment_grid,
    latest_snapshot_report,
    stability_metrics,
)
from .losses import REPORTED_MMD_CONVENTION, LossWeights, MMDConfig, select_kernel_width
from .models import EncoderConfig
from .trainer import AdaptConfig, PretrainConfig, adapt, evaluate_accuracy, pretrain_source


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# config schema: nested dict of key -> default (None means required-by-kind)
# ---------------------------------------------------------------------------

SHIFT_DEFAULTS = {
    "rotation_deg": 0.0,
    "translation": [],
    "scale": 1.0,
    "noise_sigma": 0.0,
    "seed": 0,
}

DATA_DEFAULTS = {
    "kind": "two_moons",  # two_moons | blobs | csv
    "n": 600,
    "noise_sigma": 0.1,
    "seed": 0,
    "target_seed_offset": 500,
    "n_classes": 5,
    "dim": 2,
    "centers_seed": 0,
    "cluster_sigma": 0.5,
    "source_csv": "",
    "target_csv": "",
    "target_labels": True,
    "header": False,
    "shift": SHIFT_DEFAULTS,
}

SCHEDULE_DEFAULTS = {
    "kind": "naive",
    "k": None,  # required when kind == inturn
    "patience": 5,
    "min_rel_improve": 0.02,
    "eps_small": None,
}

RUN_DEFAULTS = {
    "out_dir": "runs/run",
    "seed": 0,
    "data": DATA_DEFAULTS,
    "encoder": {"hidden_dims": [64, 32], "bottleneck_dim": None},
    "pretrain": {
        "epochs": 30,
        "lr": 0.0001,
        "weight_decay": 0.00002,
        "batch_size": 256,
        "holdout_fraction": 0.2,
    },
    "adapt": {
        "architecture": "prl",
        "schedule": SCHEDULE_DEFAULTS,
        "reference_weight": 10.0,
        "norm_kind": "l1",
        "mmd": {"kernel": "gaussian", "width": 1.0},
        "epochs": 50,
        "lr": 0.0001,
        "weight_decay": 0.00002,
        "batch_size": 128,
    },
    "eval": {"stability_window": 10},
    "select_width": {"candidates": [0.1, 1.0, 10.0, 100.0, 1000.0], "probe_epochs": 5},
}

GRID_DEFAULTS = {
    "out_dir": "runs/grid",
    "seeds": [0],
    "tasks": [],  # list of {name, data: {...}}
    "methods": [],  # list of {name, architecture, schedule, reference_weight, norm_kind}
    "encoder": RUN_DEFAULTS["encoder"],
    "pretrain": RUN_DEFAULTS["pretrain"],
    "adapt": RUN_DEFAULTS["adapt"],
    "eval": RUN_DEFAULTS["eval"],
}


def _merge(defaults, given, path=""):
    """Fill defaults, rejecting keys the schema does not know."""
    if not isinstance(given, dict):
        raise ConfigError(f"config section {path or '<root>'} must be a mapping")
    out = {}
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
    for key, default in defaults.items():
        if key in given and isinstance(default, dict):
            out[key] = _merge(default, given[key], path + key + ".")
        elif key in given:
            out[key] = copy.deepcopy(given[key])
        else:
            out[key] = copy.deepcopy(default)
    return out


def load_config(path, defaults, overrides=()):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            if str(path).endswith(".json"):
                # JSON manifests must round-trip exactly; YAML 1.1 reads
                # bare exponents like 2e-05 as strings
                raw = json.load(fh) or {}
            else:
                raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    if isinstance(raw, dict) and "config" in raw and "run_id" in raw:
        raw = raw["config"]  # a manifest was passed back in
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"bad --override {item!r}, expected key=value")
        key, value = item.split("=", 1)
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--override path {key!r} crosses a non-mapping")
        node[parts[-1]] = yaml.safe_load(value)
    return _merge(defaults, raw)


# ---------------------------------------------------------------------------
# config -> domain objects
# ---------------------------------------------------------------------------

def build_datasets(data_cfg, seed) -> tuple[DomainDataset, DomainDataset]:
    """Returns (labeled source, labeled-for-eval target)."""
    kind = data_cfg["kind"]
    shift_cfg = data_cfg["shift"]
    shift = ShiftSpec(
        rotation_deg=float(shift_cfg["rotation_deg"]),
        translation=tuple(shift_cfg["translation"]),
        scale=float(shift_cfg["scale"]),
        noise_sigma=float(shift_cfg["noise_sigma"]),
        seed=int(shift_cfg["seed"]),
    )
    base_seed = int(data_cfg["seed"]) + seed
    tgt_seed = base_seed + int(data_cfg["target_seed_offset"])
    n = int(data_cfg["n"])
    noise = float(data_cfg["noise_sigma"])
    if kind == "two_moons":
        ds_s = make_two_moons(n, noise, seed=base_seed, domain_tag="source")
        ds_t = make_two_moons(n, noise, shift, seed=tgt_seed, domain_tag="target")
    elif kind == "blobs":
        ds_s = make_blobs(
            n, int(data_cfg["n_classes"]), int(data_cfg["dim"]), int(data_cfg["centers_seed"]),
            cluster_sigma=float(data_cfg["cluster_sigma"]), seed=base_seed, domain_tag="source",
        )
        ds_t = make_blobs(
            n, int(data_cfg["n_classes"]), int(data_cfg["dim"]), int(data_cfg["centers_seed"]),
            shift, cluster_sigma=float(data_cfg["cluster_sigma"]), seed=tgt_seed, domain_tag="target",
        )
    elif kind == "csv":
        if not data_cfg["source_csv"] or not data_cfg["target_csv"]:
            raise ConfigError("csv data needs source_csv and target_csv paths")
        ds_s = load_csv_dataset(data_cfg["source_csv"], has_labels=True, skip_header=data_cfg["header"], domain_tag="source")
        ds_t = load_csv_dataset(
            data_cfg["target_csv"], has_labels=bool(data_cfg["target_labels"]),
            skip_header=data_cfg["header"], domain_tag="target",
        )
        if ds_t.labels is not None:
            ds_t = DomainDataset(ds_t.features, ds_t.labels, ds_s.n_classes, ds_t.domain_tag)
    else:
        raise ConfigError(f"unknown data kind {kind!r}")
    return ds_s, ds_t


def build_encoder_config(cfg, input_dim, seed) -> EncoderConfig:
    enc = cfg["encoder"]
    return EncoderConfig(
        input_dim=input_dim,
        hidden_dims=tuple(enc["hidden_dims"]),
        bottleneck_dim=enc["bottleneck_dim"],
        init_seed=seed,
    )


def build_schedule(s_cfg) -> sched.ScheduleKind:
    kind = s_cfg["kind"]
    if kind == "inturn" and s_cfg["k"] is None:
        raise ConfigError("adapt.schedule.k is required when schedule kind is 'inturn'")
    return sched.ScheduleKind(
        kind=kind,
        k=None if s_cfg["k"] is None else int(s_cfg["k"]),
        patience=int(s_cfg["patience"]),
        min_rel_improve=float(s_cfg["min_rel_improve"]),
        eps_small=None if s_cfg["eps_small"] is None else float(s_cfg["eps_small"]),
    )


def build_pretrain_config(cfg, seed) -> PretrainConfig:
    # float() coercions throughout: YAML 1.1 reads exponent literals
    # without a dot ("2e-05") as strings, and manifests round-trip through
    # that syntax
    p = cfg["pretrain"]
    return PretrainConfig(
        epochs=int(p["epochs"]), lr=float(p["lr"]), weight_decay=float(p["weight_decay"]),
        batch_size=int(p["batch_size"]), holdout_fraction=float(p["holdout_fraction"]), seed=seed,
    )


def build_adapt_config(cfg, seed) -> AdaptConfig:
    a = cfg["adapt"]
    return AdaptConfig(
        architecture=a["architecture"],
        schedule=build_schedule(a["schedule"]),
        weights=LossWeights(reference_weight=float(a["reference_weight"]), norm_kind=a["norm_kind"]),
        mmd=MMDConfig(kernel=a["mmd"]["kernel"], width=float(a["mmd"]["width"])),
        epochs=int(a["epochs"]), lr=float(a["lr"]), weight_decay=float(a["weight_decay"]),
        batch_size=int(a["batch_size"]), seed=seed,
    )


def _run_id(config: dict) -> str:
    # the output location does not define the run
    hashed = {k: v for k, v in config.items() if k != "out_dir"}
    blob = json.dumps(hashed, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def write_manifest(out_dir, config) -> str:
    manifest = {
        "run_id": _run_id(config),
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "mmd_reported_convention": REPORTED_MMD_CONVENTION,
        "config": config,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest["run_id"]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    config = load_config(args.config, RUN_DEFAULTS, args.override)
    if args.out_dir:
        config["out_dir"] = args.out_dir
    if args.seed is not None:
        config["seed"] = args.seed
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    seed = int(config["seed"])

    try:
        ds_s, ds_t = build_datasets(config["data"], seed)
        enc_cfg = build_encoder_config(config, ds_s.dim, seed)
        pre_cfg = build_pretrain_config(config, seed)
        adapt_cfg = build_adapt_config(config, seed)
    except ValueError as exc:  # dataclass validation of config values
        raise ConfigError(str(exc)) from exc

    write_manifest(out_dir, config)
    encoder, classifier, pre_log = pretrain_source(ds_s, enc_cfg, pre_cfg)
    source_only_acc = evaluate_accuracy(encoder, classifier, ds_t) if ds_t.labels is not None else None
    log, _store = adapt(
        encoder,
        classifier,
        ds_s,
        ds_t.without_labels(),
        adapt_cfg,
        eval_labels=ds_t.labels,
        snapshot_dir=os.path.join(out_dir, "snapshots"),
    )
    log.to_csv(os.path.join(out_dir, "log.csv"))

    report = {
        "run_id": _run_id(config),
        "source_holdout_accuracy": pre_log[-1][2] if pre_log else None,
        "source_only_target_accuracy": source_only_acc,
    }
    if ds_t.labels is not None:
        latest = latest_snapshot_report(log)
        best, best_epoch = best_snapshot_oracle(log)
        window = min(config["eval"]["stability_window"], len(log.accuracies()))
        tstd, mdrop = stability_metrics(log, window)
        report.update(
            {
                "latest_accuracy": latest,
                "best_accuracy_oracle": best,
                "best_epoch_oracle": best_epoch,
                "latest_minus_best": latest - best,
                "trailing_std": tstd,
                "max_drop": mdrop,
            }
        )
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "report.csv"), "w", encoding="utf-8", newline="\n") as fh:
        keys = sorted(report)
        fh.write(",".join(keys) + "\n")
        fh.write(
            ",".join(
                ""
                if report[k] is None
                else (f"{report[k]:.17g}" if isinstance(report[k], float) else str(report[k]))
                for k in keys
            )
            + "\n"
        )
    from .plots import save_run_curves

    save_run_curves(log, os.path.join(out_dir, "curves.png"))
    print(f"run complete: latest accuracy {report.get('latest_accuracy')}, outputs in {out_dir}")
    return 0


def cmd_grid(args) -> int:
    config = load_config(args.config, GRID_DEFAULTS, args.override)
    if args.out_dir:
        config["out_dir"] = args.out_dir
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    if not config["tasks"] or not config["methods"]:
        raise ConfigError("grid config needs non-empty tasks and methods lists")

    tasks = []
    methods = []
    try:
        for t_cfg in config["tasks"]:
            extra = set(t_cfg) - {"name", "data"}
            if extra:
                raise ConfigError(f"unknown task keys {sorted(extra)}")
            data_cfg = _merge(DATA_DEFAULTS, t_cfg.get("data", {}), "tasks.data.")
            ds_s, ds_t = build_datasets(data_cfg, 0)
            tasks.append(TaskSpec(t_cfg["name"], ds_s, ds_t))

        for m_cfg in config["methods"]:
            extra = set(m_cfg) - {"name", "architecture", "schedule", "reference_weight", "norm_kind"}
            if extra:
                raise ConfigError(f"unknown method keys {sorted(extra)}")
            schedule_cfg = _merge(SCHEDULE_DEFAULTS, m_cfg.get("schedule", {}), "methods.schedule.")
            methods.append(
                MethodSpec(
                    name=m_cfg["name"],
                    architecture=m_cfg.get("architecture", "prl"),
                    schedule=build_schedule(schedule_cfg),
                    weights=LossWeights(
                        reference_weight=m_cfg.get("reference_weight", config["adapt"]["reference_weight"]),
                        norm_kind=m_cfg.get("norm_kind", config["adapt"]["norm_kind"]),
                    ),
                )
            )

        enc_cfg = build_encoder_config(config, tasks[0].ds_s.dim, 0)
        pre_cfg = build_pretrain_config(config, 0)
        adapt_cfg = build_adapt_config(config, 0)
    except ValueError as exc:  # dataclass validation of config values
        raise ConfigError(str(exc)) from exc

    write_manifest(out_dir, config)
    report = experiment_grid(
        tasks,
        methods,
        [int(s) for s in config["seeds"]],
        enc_cfg,
        pre_cfg,
        adapt_cfg,
        stability_window=config["eval"]["stability_window"],
        jobs=args.jobs,
    )
    report.to_csv(os.path.join(out_dir, "report.csv"))
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    report.write_plotdata_csv(os.path.join(out_dir, "plotdata.csv"))
    from .plots import save_threshold_figure, save_trajectory_figure

    save_trajectory_figure(report, os.path.join(out_dir, "trajectories.png"))
    save_threshold_figure(report, os.path.join(out_dir, "threshold.png"))

    for f in report.failures:
        print(f"cell failed: {f.task}/{f.method}/seed{f.seed}", file=sys.stderr)
    print(f"grid complete: {len(report.cells)} cells ok, {len(report.failures)} failed, outputs in {out_dir}")
    return 0 if report.cells else 2


def cmd_gen_data(args) -> int:
    config = load_config(args.config, RUN_DEFAULTS, args.override)
    out_dir = args.out_dir or config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    seed = args.seed if args.seed is not None else int(config["seed"])
    ds_s, ds_t = build_datasets(config["data"], seed)
    save_csv_dataset(ds_s, os.path.join(out_dir, "source.csv"))
    save_csv_dataset(ds_t, os.path.join(out_dir, "target.csv"))
    save_csv_dataset(ds_t.without_labels(), os.path.join(out_dir, "target_unlabeled.csv"))
    print(f"wrote source.csv, target.csv, target_unlabeled.csv to {out_dir}")
    return 0


def cmd_select_width(args) -> int:
    config = load_config(args.config, RUN_DEFAULTS, args.override)
    seed = args.seed if args.seed is not None else int(config["seed"])
    ds_s, ds_t = build_datasets(config["data"], seed)
    enc_cfg = build_encoder_config(config, ds_s.dim, seed)
    pre_cfg = build_pretrain_config(config, seed)
    encoder, classifier, _ = pretrain_source(ds_s, enc_cfg, pre_cfg)
    from .models import clone_params, Encoder

    base_params = clone_params(encoder.params)

    def probe(width, epochs):
        probe_enc = Encoder(encoder.config, clone_params(base_params))
        cfg = build_adapt_config(config, seed)
        from dataclasses import replace

        cfg = replace(
            cfg,
            architecture=sched.DOUBLE_ENCODER,
            mmd=MMDConfig(kernel=cfg.mmd.kernel, width=width),
            epochs=epochs,
        )
        log, _ = adapt(probe_enc, classifier, ds_s, ds_t.without_labels(), cfg)
        return log.mmd_trajectory()

    width = select_kernel_width(
        config["select_width"]["candidates"], probe, config["select_width"]["probe_epochs"]
    )
    print(f"selected kernel width: {width}")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return run_selftest(verbose=True)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="prladapt",
        description="Dual-encoder domain adaptation with a parameter-reference loss.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="YAML/JSON config (or a run manifest)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out-dir", default=None)
        p.add_argument("--seed", type=int, default=None)

    p_run = sub.add_parser("run", help="pretrain, adapt, and report one configuration")
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_grid = sub.add_parser("grid", help="run a task x method x seed experiment grid")
    add_common(p_grid)
    p_grid.add_argument("--jobs", type=int, default=1, help="parallel grid cells")
    p_grid.set_defaults(func=cmd_grid)

    p_gen = sub.add_parser("gen-data", help="write the configured datasets as CSV")
    add_common(p_gen)
    p_gen.set_defaults(func=cmd_gen_data)

    p_width = sub.add_parser("select-width", help="unsupervised kernel-width selection")
    add_common(p_width)
    p_width.set_defaults(func=cmd_select_width)

    p_self = sub.add_parser("selftest", help="fast invariant suite")
    p_self.set_defaults(func=cmd_selftest)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
