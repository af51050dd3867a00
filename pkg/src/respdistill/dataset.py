"""Synthetic four-class breathing-cycle data, CSV I/O and patient-level splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, ParseError, StorageError
from .numerics import Rng64, check_finite

CLASS_NAMES = ("normal", "crackle", "wheeze", "both")
N_CLASSES = len(CLASS_NAMES)
SPLITS = ("train", "test")

# roughly the ICBHI cycle proportions (3642 / 1864 / 886 / 506)
DEFAULT_PRIORS = (0.53, 0.27, 0.13, 0.07)


@dataclass(eq=False)
class SampleRecord:
    sample_id: str
    patient_id: str
    label: int
    features: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.label not in range(N_CLASSES):
            raise ConfigError(f"label must be in 0..3, got {self.label!r}")
        if self.split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {self.split!r}")

    def __eq__(self, other):
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.patient_id == other.patient_id
            and self.label == other.label
            and self.split == other.split
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True)
class DatasetSpec:
    """Parameters of the synthetic generator.

    ``patient_sigma`` adds a per-patient offset shared by all of a patient's
    cycles, which is what makes patient-disjoint evaluation harder than a
    random cycle split.
    """

    n_patients: int = 60
    cycles_per_patient: int = 40
    feature_dim: int = 32
    class_priors: tuple = DEFAULT_PRIORS
    class_separation: float = 2.0
    noise_sigma: float = 1.0
    patient_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        priors = tuple(float(p) for p in self.class_priors)
        object.__setattr__(self, "class_priors", priors)
        if len(priors) != N_CLASSES or any(p < 0 for p in priors):
            raise ConfigError(f"class_priors must be {N_CLASSES} non-negative numbers")
        if abs(sum(priors) - 1.0) > 1e-9:
            raise ConfigError(f"class_priors must sum to 1, got {sum(priors)!r}")
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be >= 2")
        if self.n_patients < 1 or self.cycles_per_patient < 1:
            raise ConfigError("n_patients and cycles_per_patient must be >= 1")
        if self.class_separation < 0:
            raise ConfigError("class_separation must be >= 0")
        if self.noise_sigma <= 0:
            raise ConfigError("noise_sigma must be > 0")
        if self.patient_sigma < 0:
            raise ConfigError("patient_sigma must be >= 0")


def class_means(spec):
    """Means of the four classes.

    Crackle and wheeze sit at ``class_separation`` from the normal mean along
    orthogonal random directions; "both" is their superposition
    (crackle + wheeze - normal).
    """
    rng = Rng64(spec.seed).spawn("means")
    d = spec.feature_dim
    u1 = rng.normal(d)
    u1 /= np.linalg.norm(u1)
    u2 = rng.normal(d)
    u2 -= (u2 @ u1) * u1
    u2 /= np.linalg.norm(u2)
    normal = np.zeros(d)
    crackle = normal + spec.class_separation * u1
    wheeze = normal + spec.class_separation * u2
    both = crackle + wheeze - normal
    return np.stack([normal, crackle, wheeze, both])


def generate(spec):
    means = class_means(spec)
    rng = Rng64(spec.seed)
    label_rng = rng.spawn("labels")
    patient_rng = rng.spawn("patients")
    noise_rng = rng.spawn("noise")

    n_total = spec.n_patients * spec.cycles_per_patient
    cdf = np.cumsum(spec.class_priors)
    cdf[-1] = 1.0
    labels = np.searchsorted(cdf, label_rng.random(n_total), side="right")
    labels = np.minimum(labels, N_CLASSES - 1)
    offsets = spec.patient_sigma * patient_rng.normal((spec.n_patients, spec.feature_dim))
    noise = spec.noise_sigma * noise_rng.normal((n_total, spec.feature_dim))

    records = []
    i = 0
    for p in range(spec.n_patients):
        pid = f"p{p:03d}"
        for c in range(spec.cycles_per_patient):
            label = int(labels[i])
            x = means[label] + offsets[p] + noise[i]
            records.append(SampleRecord(f"{pid}_c{c:03d}", pid, label, x))
            i += 1
    return records


def patient_ids(records):
    seen = {}
    for r in records:
        seen.setdefault(r.patient_id, None)
    return list(seen)


def split_by_patient(data, train_fraction, seed, names=("train", "test")):
    """Patient-disjoint split.

    The held-out side gets ``floor((1 - train_fraction) * n_patients)``
    patients (at least one), the remainder goes to the training side.
    ``names`` sets the split tags written into the returned records; pass
    ``None`` to keep the existing tags (used for validation carve-outs).
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction!r}")
    patients = patient_ids(data)
    n = len(patients)
    if n < 2:
        raise ConfigError("need at least 2 patients to split")
    n_held = math.floor((1.0 - train_fraction) * n + 1e-9)
    n_held = min(max(n_held, 1), n - 1)
    order = Rng64(seed).permutation(n)
    held = {patients[i] for i in order[:n_held]}

    first, second = [], []
    for r in data:
        if r.patient_id in held:
            second.append(r if names is None else replace(r, split=names[1]))
        else:
            first.append(r if names is None else replace(r, split=names[0]))
    return first, second


def to_arrays(records):
    """Stack records into ``(X, y, sample_ids)``."""
    if not records:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64), []
    X = np.stack([r.features for r in records])
    y = np.array([r.label for r in records], dtype=np.int64)
    return X, y, [r.sample_id for r in records]


def _fmt(x):
    return format(float(x), ".17g")


def save_csv(data, path):
    if not data:
        raise ConfigError("refusing to write an empty dataset")
    d = data[0].features.size
    header = ["sample_id", "patient_id", "split", "label"] + [f"f{j}" for j in range(d)]
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in data:
                if r.features.size != d:
                    raise ConfigError(f"{r.sample_id}: feature length {r.features.size} != {d}")
                w.writerow([r.sample_id, r.patient_id, r.split, r.label] + [_fmt(x) for x in r.features])
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def load_csv(path):
    path = Path(path)
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    if not rows or not rows[0]:
        raise ParseError("missing header", row=1)
    header = rows[0]
    fixed = ["sample_id", "patient_id", "split", "label"]
    if header[:4] != fixed:
        missing = [c for c in fixed if c not in header]
        raise ParseError(f"missing column(s) {missing or fixed} in header", row=1)
    feat_cols = header[4:]
    if not feat_cols or feat_cols != [f"f{j}" for j in range(len(feat_cols))]:
        raise ParseError("feature columns must be f0..f{D-1}", row=1)

    records, seen = [], set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=lineno)
        sample_id, patient_id, split, label_s = row[:4]
        try:
            label = int(label_s)
        except ValueError:
            raise ParseError(f"label {label_s!r} is not an integer", row=lineno) from None
        if label not in range(N_CLASSES):
            raise ParseError(f"label {label} not in 0..{N_CLASSES - 1}", row=lineno)
        if split not in SPLITS:
            raise ParseError(f"split {split!r} not in {SPLITS}", row=lineno)
        try:
            feats = np.array([float(v) for v in row[4:]], dtype=np.float64)
        except ValueError:
            raise ParseError("non-numeric feature value", row=lineno) from None
        if not np.all(np.isfinite(feats)):
            raise ParseError("non-finite feature value", row=lineno)
        if sample_id in seen:
            raise ParseError(f"duplicate sample_id {sample_id!r}", row=lineno)
        seen.add(sample_id)
        records.append(SampleRecord(sample_id, patient_id, label, feats, split))
    return records


def _mask_positions(n, d, max_width, rng):
    u = rng.random(2 * n)
    widths = np.floor(u[:n] * (max_width + 1)).astype(np.int64)
    starts = np.floor(u[n:] * (d - widths + 1)).astype(np.int64)
    return widths, starts


def mask_batch(X, max_width, rng):
    """Zero one contiguous run per row; run width is uniform on 0..max_width."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if max_width > d or max_width < 0:
        raise ConfigError(f"mask width {max_width} must be in 0..{d}")
    if max_width == 0:
        return X.copy()
    widths, starts = _mask_positions(n, d, max_width, rng)
    cols = np.arange(d)
    keep = ~((cols >= starts[:, None]) & (cols < (starts + widths)[:, None]))
    return np.where(keep, X, 0.0)


def mask_augment(features, max_width, rng):
    x = check_finite(np.asarray(features, dtype=np.float64), "features")
    return mask_batch(x[None, :], max_width, rng)[0]
