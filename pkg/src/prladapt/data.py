"""Synthetic domain-shift datasets, CSV ingestion, and unpaired batching.

Target labels, when present on a dataset, exist only so evaluation code can
score accuracy; the batch sampler never exposes them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ShiftSpec:
    """Affine distortion applied to a generated dataset to simulate a
    domain gap: rotate (first two feature axes), scale, translate, then add
    Gaussian noise."""

    rotation_deg: float = 0.0
    translation: tuple[float, ...] = ()
    scale: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "translation", tuple(self.translation))
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


IDENTITY_SHIFT = ShiftSpec()


@dataclass
class DomainDataset:
    features: np.ndarray  # (n, m) float64
    labels: np.ndarray | None  # (n,) ints in {0..K-1}, or None
    n_classes: int
    domain_tag: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise ValueError("labels must be one integer per row")
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
                raise ValueError(f"labels out of range for {self.n_classes} classes")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def without_labels(self) -> "DomainDataset":
        """Label firewall: the copy handed to training code."""
        return DomainDataset(self.features, None, self.n_classes, self.domain_tag)


def _apply_shift(x: np.ndarray, shift: ShiftSpec) -> np.ndarray:
    out = x.copy()
    if shift.rotation_deg:
        theta = np.deg2rad(shift.rotation_deg)
        c, s = np.cos(theta), np.sin(theta)
        rot = np.array([[c, -s], [s, c]])
        out[:, :2] = out[:, :2] @ rot.T
    out *= shift.scale
    if shift.translation:
        t = np.asarray(shift.translation, dtype=np.float64)
        if t.shape != (out.shape[1],):
            raise ValueError(
                f"translation has dim {t.shape[0]}, features have dim {out.shape[1]}"
            )
        out += t
    if shift.noise_sigma > 0:
        rng = np.random.default_rng([shift.seed, 0xD157])
        out += rng.normal(0.0, shift.noise_sigma, size=out.shape)
    return out


def make_two_moons(
    n: int,
    noise_sigma: float,
    shift: ShiftSpec = IDENTITY_SHIFT,
    seed: int = 0,
    domain_tag: str = "moons",
) -> DomainDataset:
    """Two interleaved half-circle arcs, n/2 points per class."""
    if n < 2 or n % 2:
        raise ValueError(f"n must be even and >= 2, got {n}")
    half = n // 2
    rng = np.random.default_rng([seed, 0x300])
    t_outer = rng.uniform(0.0, np.pi, half)
    t_inner = rng.uniform(0.0, np.pi, half)
    # arcs are offset so the combined cloud is centered at the origin,
    # which makes a rotation shift an in-place distortion
    outer = np.column_stack([np.cos(t_outer) - 0.5, np.sin(t_outer) - 0.25])
    inner = np.column_stack([0.5 - np.cos(t_inner), 0.25 - np.sin(t_inner)])
    x = np.concatenate([outer, inner], axis=0)
    if noise_sigma > 0:
        x += rng.normal(0.0, noise_sigma, size=x.shape)
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    x = _apply_shift(x, shift)
    return DomainDataset(x, y, 2, domain_tag)


def make_blobs(
    n: int,
    n_classes: int,
    dim: int,
    centers_seed: int,
    shift: ShiftSpec = IDENTITY_SHIFT,
    cluster_sigma: float = 0.5,
    seed: int = 0,
    domain_tag: str = "blobs",
) -> DomainDataset:
    """K Gaussian clusters labeled by cluster; centers fixed by their own
    seed so source/target variants share geometry."""
    if n_classes < 2 or dim < 2 or n < n_classes:
        raise ValueError(f"invalid blobs spec: n={n}, K={n_classes}, m={dim}")
    centers_rng = np.random.default_rng([centers_seed, 0xB10B])
    centers = centers_rng.uniform(-3.0, 3.0, size=(n_classes, dim))
    rng = np.random.default_rng([seed, 0xB10C])
    y = np.arange(n, dtype=np.int64) % n_classes
    x = centers[y] + rng.normal(0.0, cluster_sigma, size=(n, dim))
    x = _apply_shift(x, shift)
    return DomainDataset(x, y, n_classes, domain_tag)


def load_csv_dataset(
    path,
    has_labels: bool,
    skip_header: bool = False,
    domain_tag: str = "",
) -> DomainDataset:
    """Comma-separated rows of floats, optional trailing integer label."""
    rows: list[list[float]] = []
    labels: list[int] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno == 1 and skip_header:
                continue
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ValueError(f"{path}: ragged row at line {lineno}")
            try:
                values = [float(c) for c in cells]
            except ValueError:
                raise ValueError(f"{path}: non-numeric cell at line {lineno}") from None
            if has_labels:
                label = values[-1]
                if label != int(label) or label < 0:
                    raise ValueError(f"{path}: bad label at line {lineno}")
                labels.append(int(label))
                values = values[:-1]
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: empty dataset")
    features = np.array(rows, dtype=np.float64)
    if has_labels:
        y = np.array(labels, dtype=np.int64)
        return DomainDataset(features, y, int(y.max()) + 1, domain_tag)
    return DomainDataset(features, None, 0, domain_tag)


def save_csv_dataset(ds: DomainDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(ds.n):
            cells = [f"{v:.17g}" for v in ds.features[i]]
            if ds.labels is not None:
                cells.append(str(int(ds.labels[i])))
            fh.write(",".join(cells) + "\n")


@dataclass
class BatchPair:
    x_s: np.ndarray
    y_s: np.ndarray
    x_t: np.ndarray


def sample_unpaired_batches(
    ds_s: DomainDataset,
    ds_t: DomainDataset,
    b_s: int,
    b_t: int,
    epoch_seed: int,
):
    """Yield unpaired (source, target) mini-batch pairs for one epoch.

    Each domain shuffles independently without replacement; the epoch ends
    when the larger domain is exhausted, the smaller domain reshuffling and
    cycling as needed. Target labels never leave this function.
    """
    if ds_s.labels is None:
        raise ValueError("source dataset must be labeled")
    if b_s < 1 or b_s > ds_s.n:
        raise ValueError(f"source batch size {b_s} out of range for n={ds_s.n}")
    if b_t < 1 or b_t > ds_t.n:
        raise ValueError(f"target batch size {b_t} out of range for n={ds_t.n}")
    n_batches = max(ds_s.n // b_s, ds_t.n // b_t)
    rng_s = np.random.default_rng([epoch_seed, 0x5])
    rng_t = np.random.default_rng([epoch_seed, 0x7])

    def index_stream(rng, n, batch, count):
        idx = np.concatenate(
            [rng.permutation(n) for _ in range(-(-(batch * count) // n))]
        )
        return idx[: batch * count].reshape(count, batch)

    s_idx = index_stream(rng_s, ds_s.n, b_s, n_batches)
    t_idx = index_stream(rng_t, ds_t.n, b_t, n_batches)
    for bi in range(n_batches):
        yield BatchPair(
            x_s=ds_s.features[s_idx[bi]],
            y_s=ds_s.labels[s_idx[bi]],
            x_t=ds_t.features[t_idx[bi]],
        )
