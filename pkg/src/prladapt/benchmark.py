"""The default desk-scale benchmark: rotated two-moons.

One place freezes the task and the tuned hyper-parameters so the library,
the CLI example configs, and the acceptance suite all exercise the same
setup. The adaptation learning rate and kernel width here were selected by
a seed-replicated grid search on this task; they are benchmark constants,
not library defaults.
"""

from __future__ import annotations

from .data import DomainDataset, ShiftSpec, make_two_moons
from .losses import LossWeights, MMDConfig
from .models import EncoderConfig
from .trainer import AdaptConfig, PretrainConfig
from . import schedule as sched

ROTATION_DEG = 35.0
NOISE_SIGMA = 0.1
N_PER_DOMAIN = 600
TARGET_SEED_OFFSET = 500

HIDDEN_DIMS = (32,)
KERNEL_WIDTH = 1.0
ADAPT_LR = 0.25
ADAPT_WEIGHT_DECAY = 1e-3
ADAPT_EPOCHS = 50
ADAPT_BATCH = 64
REFERENCE_WEIGHT = 0.002

PRETRAIN_EPOCHS = 60
PRETRAIN_LR = 0.1
PRETRAIN_WEIGHT_DECAY = 2e-5
PRETRAIN_BATCH = 64


def benchmark_task(seed: int = 0) -> tuple[DomainDataset, DomainDataset]:
    """(labeled source, labeled-for-evaluation target)."""
    ds_s = make_two_moons(N_PER_DOMAIN, NOISE_SIGMA, seed=seed, domain_tag="source")
    ds_t = make_two_moons(
        N_PER_DOMAIN,
        NOISE_SIGMA,
        ShiftSpec(rotation_deg=ROTATION_DEG),
        seed=seed + TARGET_SEED_OFFSET,
        domain_tag="target",
    )
    return ds_s, ds_t


def benchmark_encoder_config(seed: int = 0) -> EncoderConfig:
    return EncoderConfig(input_dim=2, hidden_dims=HIDDEN_DIMS, init_seed=seed)


def benchmark_pretrain_config(seed: int = 0) -> PretrainConfig:
    return PretrainConfig(
        epochs=PRETRAIN_EPOCHS,
        lr=PRETRAIN_LR,
        weight_decay=PRETRAIN_WEIGHT_DECAY,
        batch_size=PRETRAIN_BATCH,
        seed=seed,
    )


def benchmark_adapt_config(
    seed: int = 0,
    architecture: str = sched.PRL,
    schedule: sched.ScheduleKind | None = None,
    weights: LossWeights | None = None,
) -> AdaptConfig:
    return AdaptConfig(
        architecture=architecture,
        schedule=schedule if schedule is not None else sched.naive(),
        weights=weights if weights is not None else LossWeights(REFERENCE_WEIGHT, "l1"),
        mmd=MMDConfig(kernel="gaussian", width=KERNEL_WIDTH),
        epochs=ADAPT_EPOCHS,
        lr=ADAPT_LR,
        weight_decay=ADAPT_WEIGHT_DECAY,
        batch_size=ADAPT_BATCH,
        seed=seed,
    )
