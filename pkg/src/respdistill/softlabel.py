"""Training targets for every labelling strategy.

A bank here is anything with the :class:`~respdistill.ensemble.LogitBank`
interface: ``stack(sample_ids, k=None, teacher_ids=None)`` returning a
``(teachers, samples, classes)`` logit array, plus ``n_teachers``,
``n_classes``, ``teacher_ids`` and ``scores(mode)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DataError
from .io import dump_jsonl
from .model import init_params, train
from .numerics import Rng64, derive_seed, softmax

KINDS = ("hard", "single", "mean", "random", "noised_fixed", "noised_teacher_var", "curated", "raw_logit")
REFRESH_MODES = ("per_iteration", "per_epoch", "once")
SELECTION_MODES = ("validation", "test")
VARIANCE_SPACES = ("probability", "logit")


@dataclass(frozen=True)
class SoftLabelPolicy:
    """One labelling strategy plus its parameters.

    ``k`` is the teacher count for mean/random/raw-logit and the subset size
    for curated; ``var`` only applies to ``noised_fixed``.
    """

    kind: str
    k: int | None = None
    teacher_id: int | None = None
    var: float | None = None
    selection_mode: str = "validation"
    refresh: str = "once"
    variance_space: str = "probability"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if self.kind in ("mean", "random", "curated", "raw_logit", "noised_teacher_var"):
            if self.k is None or self.k < 1:
                raise ConfigError(f"{self.kind} policy needs k >= 1")
        if self.kind == "single" and self.teacher_id is None:
            raise ConfigError("single policy needs a teacher_id")
        if self.kind == "noised_fixed" and (self.var is None or self.var < 0):
            raise ConfigError("noised_fixed policy needs var >= 0")
        if self.refresh not in REFRESH_MODES:
            raise ConfigError(f"refresh must be one of {REFRESH_MODES}")
        if self.selection_mode not in SELECTION_MODES:
            raise ConfigError(f"selection_mode must be one of {SELECTION_MODES}")
        if self.variance_space not in VARIANCE_SPACES:
            raise ConfigError(f"variance_space must be one of {VARIANCE_SPACES}")

    @classmethod
    def hard(cls):
        return cls("hard")

    @classmethod
    def single(cls, teacher_id):
        return cls("single", teacher_id=teacher_id)

    @classmethod
    def mean(cls, k):
        return cls("mean", k=k)

    @classmethod
    def random(cls, k, refresh="per_iteration"):
        return cls("random", k=k, refresh=refresh)

    @classmethod
    def noised_fixed(cls, var):
        return cls("noised_fixed", var=float(var))

    @classmethod
    def noised_teacher_var(cls, k, variance_space="probability"):
        return cls("noised_teacher_var", k=k, variance_space=variance_space)

    @classmethod
    def curated(cls, m, selection_mode="validation"):
        return cls("curated", k=m, selection_mode=selection_mode)

    @classmethod
    def raw_logit(cls, k):
        return cls("raw_logit", k=k)

    @property
    def uses_bank(self):
        return self.kind not in ("hard", "noised_fixed")

    @property
    def teacher_count(self):
        """Teachers consulted; 0 for bank-free policies."""
        if self.kind == "single":
            return 1
        return self.k if self.uses_bank else 0

    def descriptor(self):
        """Compact, filesystem-safe name, parseable by :meth:`parse`."""
        if self.kind == "hard":
            return "hard"
        if self.kind == "single":
            return f"single:{self.teacher_id}"
        if self.kind == "noised_fixed":
            return f"noised_fixed:{self.var:g}"
        if self.kind == "curated":
            return f"curated:{self.k}:{self.selection_mode}"
        if self.kind == "random" and self.refresh != "per_iteration":
            return f"random:{self.k}:{self.refresh}"
        if self.kind == "noised_teacher_var" and self.variance_space != "probability":
            return f"noised_teacher_var:{self.k}:{self.variance_space}"
        return f"{self.kind}:{self.k}"

    @classmethod
    def parse(cls, text):
        parts = [p.strip() for p in text.strip().split(":")]
        kind, args = parts[0].replace("-", "_"), parts[1:]
        try:
            if kind == "hard" and not args:
                return cls.hard()
            if kind == "single" and len(args) == 1:
                return cls.single(int(args[0]))
            if kind == "mean" and len(args) == 1:
                return cls.mean(int(args[0]))
            if kind == "random" and len(args) in (1, 2):
                return cls.random(int(args[0]), *(args[1:]))
            if kind == "noised_fixed" and len(args) == 1:
                return cls.noised_fixed(float(args[0]))
            if kind == "noised_teacher_var" and len(args) in (1, 2):
                return cls.noised_teacher_var(int(args[0]), *(args[1:]))
            if kind == "curated" and len(args) in (1, 2):
                return cls.curated(int(args[0]), *(args[1:]))
            if kind == "raw_logit" and len(args) == 1:
                return cls.raw_logit(int(args[0]))
        except ValueError as exc:
            raise ConfigError(f"bad policy {text!r}: {exc}") from None
        raise ConfigError(f"cannot parse policy {text!r}")


@dataclass
class TargetSet:
    """Per-sample targets, row-aligned with ``sample_ids``.

    ``refresh_hook`` is set for policies whose labels are re-drawn during
    training; ``targets`` then holds one representative draw.
    """

    sample_ids: list
    targets: np.ndarray
    on_simplex: bool = True
    policy: SoftLabelPolicy | None = None
    refresh_hook: object = field(default=None, repr=False)

    def as_dict(self):
        return {sid: self.targets[i] for i, sid in enumerate(self.sample_ids)}

    def to_jsonl(self, path):
        dump_jsonl(path, ({"sample_id": sid, "target": self.targets[i].tolist()} for i, sid in enumerate(self.sample_ids)))


def one_hot(labels, n_classes=4):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _check_k(bank, k):
    if k is None or k < 1:
        raise ConfigError("k must be >= 1")
    if k > bank.n_teachers:
        raise ConfigError(f"k={k} exceeds bank size {bank.n_teachers}")


def mean_logits(bank, sample_ids, k=None, teacher_ids=None):
    if teacher_ids is None:
        _check_k(bank, k)
    return bank.stack(sample_ids, k=k, teacher_ids=teacher_ids).mean(axis=0)


def mean_teacher(bank, sample_id, k, teacher_ids=None):
    """softmax of the average of the first ``k`` teachers' logits."""
    return softmax(mean_logits(bank, [sample_id], k, teacher_ids)[0])


def random_teacher(bank, sample_id, k, rng):
    _check_k(bank, k)
    i = rng.uniform_index(k)
    return softmax(bank.stack([sample_id], k=k)[i, 0])


def noised_label(hard, var, rng, n_classes=4):
    """One-hot label plus Gaussian noise, clamped at 0 and renormalised.

    ``var`` is a scalar or a per-class variance vector. If every component
    clamps to zero the clean one-hot is returned.
    """
    var = np.broadcast_to(np.asarray(var, dtype=np.float64), (n_classes,))
    if np.any(var < 0):
        raise ConfigError("noise variance must be >= 0")
    return _noise_rows(one_hot([hard], n_classes), var, rng)[0]


def _noise_rows(onehots, var, rng):
    out = onehots + np.sqrt(var) * rng.normal(onehots.shape)
    out = np.maximum(out, 0.0)
    sums = out.sum(axis=1, keepdims=True)
    dead = sums[:, 0] <= 0.0
    out[dead] = onehots[dead]
    sums[dead] = 1.0
    return out / sums


def teacher_variance(bank, sample_ids, k, space="probability"):
    """Per-class variance of the k-teacher mean label over ``sample_ids``."""
    z = mean_logits(bank, sample_ids, k)
    values = softmax(z) if space == "probability" else z
    return values.var(axis=0)


def curated_select(scores, m):
    """Ids of the ``m`` best-scoring teachers, ties to the lower id.

    ``scores`` maps teacher id to Score; a plain sequence is read as
    ``{0: s0, 1: s1, ...}``.
    """
    if not hasattr(scores, "items"):
        scores = dict(enumerate(scores))
    if m < 1:
        raise ConfigError("curated subset size must be >= 1")
    if m > len(scores):
        raise ConfigError(f"m={m} exceeds teacher count {len(scores)}")
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [tid for tid, _ in ranked[:m]]


def _random_hook(choices, rng, refresh):
    """Return a ``train`` refresh hook drawing one teacher per sample.

    ``choices`` is the ``(k, n, C)`` array of candidate soft labels.
    """
    k, n, _ = choices.shape
    cache = {}

    def hook(idx, epoch):
        if refresh == "per_iteration":
            pick = rng.uniform_index(k, size=idx.size)
            return choices[pick, idx]
        if epoch not in cache:
            cache.clear()
            cache[epoch] = rng.uniform_index(k, size=n)
        return choices[cache[epoch][idx], idx]

    return hook


def build_targets(policy, bank, records, rng, labels=None):
    """Targets for ``records`` (training samples) under ``policy``.

    ``bank`` may be ``None`` for policies that never read it. ``labels``
    defaults to the records' hard labels.
    """
    sample_ids = [r.sample_id for r in records]
    if labels is None:
        labels = [r.label for r in records]
    n_classes = bank.n_classes if bank is not None else 4
    kind = policy.kind

    if policy.uses_bank:
        if bank is None:
            raise ConfigError(f"policy {policy.descriptor()} needs a logit bank")
        missing = bank.missing(sample_ids)
        if missing:
            raise DataError(f"sample {missing[0]!r} not in logit bank")

    if kind == "hard":
        return TargetSet(sample_ids, one_hot(labels, n_classes), policy=policy)
    if kind == "noised_fixed":
        t = _noise_rows(one_hot(labels, n_classes), np.full(n_classes, policy.var), rng)
        return TargetSet(sample_ids, t, policy=policy)
    if kind == "noised_teacher_var":
        var = teacher_variance(bank, sample_ids, policy.k, policy.variance_space)
        t = _noise_rows(one_hot(labels, n_classes), var, rng)
        return TargetSet(sample_ids, t, policy=policy)
    if kind == "single":
        t = softmax(bank.stack(sample_ids, teacher_ids=[policy.teacher_id])[0])
        return TargetSet(sample_ids, t, policy=policy)
    if kind == "mean":
        return TargetSet(sample_ids, softmax(mean_logits(bank, sample_ids, policy.k)), policy=policy)
    if kind == "curated":
        ids = curated_select(bank.scores(policy.selection_mode), policy.k)
        t = softmax(mean_logits(bank, sample_ids, teacher_ids=ids))
        return TargetSet(sample_ids, t, policy=policy)
    if kind == "raw_logit":
        return TargetSet(sample_ids, mean_logits(bank, sample_ids, policy.k), on_simplex=False, policy=policy)
    if kind == "random":
        _check_k(bank, policy.k)
        choices = softmax(bank.stack(sample_ids, k=policy.k))
        if policy.refresh == "once":
            pick = rng.uniform_index(policy.k, size=len(sample_ids))
            return TargetSet(sample_ids, choices[pick, np.arange(len(sample_ids))], policy=policy)
        hook = _random_hook(choices, rng, policy.refresh)
        # representative draw from an independent stream so the hook's sequence is untouched
        preview = _random_hook(choices, Rng64(rng.seed ^ 0x5EED), "once")
        all_idx = np.arange(len(sample_ids))
        return TargetSet(sample_ids, preview(all_idx, 0), policy=policy, refresh_hook=hook)
    raise ConfigError(f"unhandled policy {kind!r}")


def distill_student(policy, bank, train_records, cfg, n_classes=None):
    """Train a fresh student on ``policy`` targets; returns a ``TrainResult``.

    Label randomness (noise, random-teacher draws) comes from a stream derived
    from ``cfg.seed``, separate from initialisation, shuffling and masking.
    """
    if n_classes is None:
        n_classes = bank.n_classes if bank is not None else 4
    rng = Rng64(derive_seed(cfg.seed, "labels"))
    targets = build_targets(policy, bank if policy.uses_bank else None, train_records, rng)
    X = np.stack([r.features for r in train_records])
    params = init_params(cfg.layer_sizes(X.shape[1], n_classes), cfg.seed)
    if targets.refresh_hook is not None:
        return train(params, X, None, cfg, refresh=targets.refresh_hook)
    return train(params, X, targets.targets, cfg)


def check_simplex(targets, tol=1e-9):
    t = np.atleast_2d(targets)
    return bool(np.all(t >= -tol) and np.all(np.abs(t.sum(axis=1) - 1.0) <= tol))


__all__ = [
    "SoftLabelPolicy",
    "TargetSet",
    "build_targets",
    "check_simplex",
    "curated_select",
    "distill_student",
    "mean_teacher",
    "noised_label",
    "one_hot",
    "random_teacher",
    "teacher_variance",
]
