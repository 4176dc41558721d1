"""Datasets, CSV ingestion, synthetic generators and perturbation protocols.

Feature and sample indices are 0-based throughout the Python API. Class ids
in GroundTruth are 1-based and contiguous.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ParameterError, ParseError, ProtocolError, SizeError


@dataclass(frozen=True)
class Dataset:
    values: np.ndarray
    feature_names: tuple = ()
    # True where an entry was nulled by apply_missing; None if nothing is known to be missing
    missing: Optional[np.ndarray] = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise ParameterError("dataset values must be a 2-D matrix")
        if not np.all(np.isfinite(vals)):
            raise ParameterError("dataset values must be finite")
        object.__setattr__(self, "values", vals)
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(f"f{i}" for i in range(vals.shape[1])))
        elif len(self.feature_names) != vals.shape[1]:
            raise ParameterError("feature_names length does not match column count")
        if self.missing is not None:
            mask = np.asarray(self.missing, dtype=bool)
            if mask.shape != vals.shape:
                raise ParameterError("missing mask shape does not match values")
            object.__setattr__(self, "missing", mask)

    @property
    def sample_count(self) -> int:
        return self.values.shape[0]

    @property
    def feature_count(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class GroundTruth:
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.size == 0:
            raise ParameterError("labels must be a non-empty vector")
        k = int(labels.max())
        if labels.min() < 1 or len(np.unique(labels)) != k:
            raise ParameterError("class ids must be contiguous 1..K_C")
        object.__setattr__(self, "labels", labels)

    @property
    def k(self) -> int:
        return int(self.labels.max())


@dataclass(frozen=True)
class CorruptionRecord:
    injected_indices: tuple
    snr_db: float


def relabel_contiguous(labels) -> np.ndarray:
    """Map arbitrary ids to 1..K preserving sorted order of the original ids."""
    _, inv = np.unique(np.asarray(labels), return_inverse=True)
    return inv.astype(np.int64) + 1


def _check_size(n_samples: int):
    if n_samples < 3:
        raise SizeError(f"need at least 3 samples, got {n_samples}")


def load_csv(path, has_labels: bool = False, header: bool = False):
    """Read a numeric CSV table.

    Returns (Dataset, GroundTruth or None). Parse errors report 1-based data
    row and column numbers (the header line, if any, is not counted).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    names = None
    if header:
        if not rows:
            raise ParseError(f"{path}: empty file")
        names, rows = [c.strip() for c in rows[0]], rows[1:]
    if not rows:
        raise SizeError(f"{path}: no data rows")
    width = len(rows[0])
    table = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"{path}: ragged row {i + 1} has {len(row)} cells, expected {width}", row=i + 1)
        for j, cell in enumerate(row):
            try:
                table[i, j] = float(cell)
            except ValueError:
                raise ParseError(f"{path}: non-numeric cell {cell.strip()!r} at ({i + 1},{j + 1})",
                                 row=i + 1, col=j + 1) from None
    _check_size(table.shape[0])
    gt = None
    if has_labels:
        if width < 2:
            raise ParseError(f"{path}: label column requested but only one column present")
        raw = table[:, -1]
        if not np.all(raw == np.round(raw)):
            bad = int(np.flatnonzero(raw != np.round(raw))[0])
            raise ParseError(f"{path}: non-integer label at ({bad + 1},{width})", row=bad + 1, col=width)
        gt = GroundTruth(relabel_contiguous(raw.astype(np.int64)))
        table = table[:, :-1]
        if names is not None:
            names = names[:-1]
    ds = Dataset(table, tuple(names) if names else ())
    return ds, gt


def normalize_minmax(d: Dataset) -> Dataset:
    """Affinely map every column to [0, 1]; constant columns become 0.

    Entries flagged in d.missing are ignored when computing ranges and stay 0.0.
    """
    vals = d.values
    mask = d.missing
    if mask is None:
        lo = vals.min(axis=0)
        hi = vals.max(axis=0)
    else:
        lo = np.where(mask, np.inf, vals).min(axis=0)
        hi = np.where(mask, -np.inf, vals).max(axis=0)
        lo[~np.isfinite(lo)] = 0.0
        hi[~np.isfinite(hi)] = 0.0
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = (vals - lo) / safe
    out[:, span <= 0] = 0.0
    out = np.clip(out, 0.0, 1.0)
    if mask is not None:
        out[mask] = 0.0
    return replace(d, values=out)


def _labels_from_sizes(sizes) -> np.ndarray:
    return np.repeat(np.arange(1, len(sizes) + 1), sizes)


def gen_blocks(k: int, sizes: Sequence[int], n: int, noise_sd: float, seed: int):
    """Class prototypes plus isotropic Gaussian noise, then min-max normalized."""
    sizes = [int(s) for s in sizes]
    if k < 2 or len(sizes) != k or min(sizes) < 1 or noise_sd < 0 or n < 1:
        raise ParameterError("gen_blocks needs k >= 2, k sizes >= 1, n >= 1, noise_sd >= 0")
    _check_size(sum(sizes))
    rng = np.random.default_rng(seed)
    protos = rng.random((k, n))
    labels = _labels_from_sizes(sizes)
    values = protos[labels - 1] + noise_sd * rng.standard_normal((len(labels), n))
    return normalize_minmax(Dataset(values)), GroundTruth(labels)


TOY_SIZES = (8, 3, 4)
TOY_FEATURES = 77


def gen_toy(seed: int, base_noise: float = 0.04, loud_frac: float = 0.3, loud_factor: float = 5.0):
    """15-sample, 77-feature toy set with classes of 8, 3 and 4 samples.

    Noise is not uniform across features: every feature gets its own scale
    drawn around base_noise, and a random 30% of features get 5x that scale.
    """
    rng = np.random.default_rng(seed)
    n = TOY_FEATURES
    protos = rng.random((len(TOY_SIZES), n))
    scale = base_noise * rng.uniform(0.5, 1.5, size=n)
    loud = rng.choice(n, size=int(round(loud_frac * n)), replace=False)
    scale[loud] *= loud_factor
    labels = _labels_from_sizes(TOY_SIZES)
    values = protos[labels - 1] + scale * rng.standard_normal((len(labels), n))
    return normalize_minmax(Dataset(values)), GroundTruth(labels)


def mark_zeros_missing(d: Dataset) -> Dataset:
    """Record every exact 0.0 of a raw (unnormalized) dataset as missing."""
    mask = d.values == 0.0
    if d.missing is not None:
        mask = mask | d.missing
    return replace(d, missing=mask if mask.any() else d.missing)


def apply_missing(d: Dataset, m_p: float, seed: int) -> Dataset:
    """Null floor(m_p * n) uniformly chosen features in every sample."""
    if not 0 <= m_p < 1:
        raise ParameterError("m_p must lie in [0, 1)")
    count = int(math.floor(m_p * d.feature_count + 1e-12))
    if count == 0:
        return d
    rng = np.random.default_rng(seed)
    mask = np.zeros(d.values.shape, dtype=bool)
    for i in range(d.sample_count):
        mask[i, rng.choice(d.feature_count, size=count, replace=False)] = True
    values = d.values.copy()
    values[mask] = 0.0
    if d.missing is not None:
        mask |= d.missing
    return replace(d, values=values, missing=mask)


def apply_imbalance(d: Dataset, gt: GroundTruth, target_class: int, target_frac: float, seed: int):
    """Resample rows so target_class makes up target_frac of the N rows.

    The rest is split as evenly as possible across the other classes (the
    remainder goes to the lowest class ids). Classes are drawn without
    replacement when they have enough rows, with replacement otherwise.
    """
    k = gt.k
    if k < 2:
        raise ProtocolError("imbalance protocol needs at least two classes")
    if not 0 < target_frac < 1:
        raise ParameterError("target_frac must lie in (0, 1)")
    if target_class not in set(gt.labels.tolist()):
        raise ParameterError(f"class {target_class} not present")
    total = d.sample_count
    n_target = int(round(target_frac * total))
    others = [c for c in range(1, k + 1) if c != target_class]
    rest = total - n_target
    base, extra = divmod(rest, len(others))
    counts = {target_class: n_target}
    for pos, c in enumerate(others):
        counts[c] = base + (1 if pos < extra else 0)
    rng = np.random.default_rng(seed)
    rows = []
    for c in range(1, k + 1):
        pool = np.flatnonzero(gt.labels == c)
        want = counts[c]
        if want == 0:
            continue
        rows.append(rng.choice(pool, size=want, replace=want > len(pool)))
    idx = np.concatenate(rows)
    _check_size(len(idx))
    missing = None if d.missing is None else d.missing[idx]
    return (replace(d, values=d.values[idx], missing=missing),
            GroundTruth(relabel_contiguous(gt.labels[idx])))


def append_noise_features(d: Dataset, frac: float, snr_db: float, seed: int):
    """Append ceil(frac * n) pure-noise columns at the given SNR.

    Noise variance is the mean signal power of the original columns divided by
    10^(snr_db/10). Appended columns are min-max normalized.
    """
    if frac <= 0:
        raise ParameterError("frac must be positive")
    n = d.feature_count
    extra = int(math.ceil(frac * n - 1e-12))
    rng = np.random.default_rng(seed)
    power = float(np.mean(d.values ** 2))
    sd = math.sqrt(power * 10.0 ** (-snr_db / 10.0))
    noise = Dataset(sd * rng.standard_normal((d.sample_count, extra)))
    noise = normalize_minmax(noise)
    values = np.hstack([d.values, noise.values])
    names = tuple(d.feature_names) + tuple(f"noise{i}" for i in range(extra))
    missing = None
    if d.missing is not None:
        missing = np.hstack([d.missing, np.zeros((d.sample_count, extra), dtype=bool)])
    record = CorruptionRecord(tuple(range(n, n + extra)), float(snr_db))
    return Dataset(values, names, missing), record


def corrupt_per_sample(d: Dataset, frac: float, seed: int):
    """Overwrite floor(frac * n) random features of every sample with uniform noise.

    Each sample draws its own feature subset and its own noise, so the
    corrupted entries carry no information shared across samples. Returns the
    new dataset and the boolean corruption mask.
    """
    if not 0 <= frac < 1:
        raise ParameterError("frac must lie in [0, 1)")
    count = int(math.floor(frac * d.feature_count + 1e-12))
    rng = np.random.default_rng(seed)
    mask = np.zeros(d.values.shape, dtype=bool)
    values = d.values.copy()
    for i in range(d.sample_count):
        cols = rng.choice(d.feature_count, size=count, replace=False)
        mask[i, cols] = True
        values[i, cols] = rng.random(count)
    return replace(d, values=values), mask
