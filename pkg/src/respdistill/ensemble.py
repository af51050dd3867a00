"""Teacher logit banks, mean-logit ensembles and second-generation ensembles."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError
from .io import dump_json, dump_jsonl, load_json, load_jsonl
from .metrics import evaluate
from .model import forward
from .numerics import check_finite
from .softlabel import distill_student

BANK_VERSION = 1
MANIFEST_FILE = "manifest.json"
LOGITS_FILE = "logits.jsonl"


def config_hash(cfg):
    blob = json.dumps(cfg.to_dict() if cfg is not None else None, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


class LogitBank:
    """Per-sample, per-teacher logits plus a per-teacher manifest.

    Logits live in one ``(teachers, samples, classes)`` array. Teacher order
    is manifest order, which is what "the first k teachers" refers to.
    ``reads`` counts logit lookups so callers can assert a code path never
    touched the bank.
    """

    def __init__(self, teacher_ids, sample_ids, logits, manifest=None):
        logits = np.asarray(logits, dtype=np.float64)
        teacher_ids = [int(t) for t in teacher_ids]
        if len(set(teacher_ids)) != len(teacher_ids):
            raise ConfigError("teacher ids must be unique")
        if len(set(sample_ids)) != len(sample_ids):
            raise DataError("sample ids must be unique")
        if logits.ndim != 3 or logits.shape[:2] != (len(teacher_ids), len(sample_ids)):
            raise DataError(f"logits shape {logits.shape} does not match {len(teacher_ids)} teachers x {len(sample_ids)} samples")
        check_finite(logits, "bank logits")
        self.teacher_ids = teacher_ids
        self.sample_ids = list(sample_ids)
        self.logits = logits
        self.manifest = manifest if manifest is not None else [{"teacher_id": t} for t in teacher_ids]
        self._row = {sid: i for i, sid in enumerate(self.sample_ids)}
        self._col = {tid: i for i, tid in enumerate(self.teacher_ids)}
        self.reads = 0

    def __repr__(self):
        return f"LogitBank(teachers={self.n_teachers}, samples={len(self.sample_ids)}, classes={self.n_classes})"

    @property
    def n_teachers(self):
        return len(self.teacher_ids)

    @property
    def n_classes(self):
        return self.logits.shape[2]

    def missing(self, sample_ids):
        return [s for s in sample_ids if s not in self._row]

    def teacher_index(self, k=None, teacher_ids=None):
        if teacher_ids is not None:
            try:
                return [self._col[int(t)] for t in teacher_ids]
            except KeyError as exc:
                raise ConfigError(f"teacher {exc.args[0]} not in bank") from None
        if k is None:
            return list(range(self.n_teachers))
        if k < 1 or k > self.n_teachers:
            raise ConfigError(f"k={k} outside 1..{self.n_teachers}")
        return list(range(k))

    def rows(self, sample_ids):
        try:
            return np.array([self._row[s] for s in sample_ids], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"sample {exc.args[0]!r} not in logit bank") from None

    def stack(self, sample_ids, k=None, teacher_ids=None):
        """``(teachers, len(sample_ids), classes)`` logits for the chosen teachers."""
        cols = self.teacher_index(k, teacher_ids)
        rows = self.rows(sample_ids)
        self.reads += 1
        return self.logits[np.ix_(cols, rows)]

    def logits_for(self, sample_id, teacher_id):
        return self.stack([sample_id], teacher_ids=[teacher_id])[0, 0]

    def scores(self, mode="test"):
        key = {"test": "score", "validation": "val_score"}.get(mode)
        if key is None:
            raise ConfigError(f"unknown score mode {mode!r}")
        out = {}
        for entry in self.manifest:
            if entry.get(key) is None:
                raise ConfigError(f"teacher {entry['teacher_id']} has no {mode} score in the manifest")
            out[int(entry["teacher_id"])] = float(entry[key])
        return out

    def subset(self, teacher_ids):
        cols = self.teacher_index(teacher_ids=teacher_ids)
        manifest = [self.manifest[c] for c in cols]
        return LogitBank([self.teacher_ids[c] for c in cols], self.sample_ids, self.logits[cols], manifest)

    def save(self, directory):
        directory = Path(directory)
        manifest = {
            "version": BANK_VERSION,
            "class_count": self.n_classes,
            "teacher_ids": self.teacher_ids,
            "teachers": self.manifest,
        }
        for key, name in (("score", "mean_score"), ("val_score", "mean_val_score")):
            vals = [e.get(key) for e in self.manifest]
            if vals and all(v is not None for v in vals):
                manifest[name] = float(np.mean(vals))
        dump_json(directory / MANIFEST_FILE, manifest)
        dump_jsonl(
            directory / LOGITS_FILE,
            (
                {"sample_id": sid, "teacher_id": tid, "logits": self.logits[t, s].tolist()}
                for t, tid in enumerate(self.teacher_ids)
                for s, sid in enumerate(self.sample_ids)
            ),
        )

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        manifest = load_json(directory / MANIFEST_FILE)
        if manifest.get("version") != BANK_VERSION:
            raise ConfigError(f"unsupported bank version {manifest.get('version')!r}")
        teacher_ids = [int(t) for t in manifest["teacher_ids"]]
        n_classes = int(manifest["class_count"])
        entries = {}
        sample_ids = []
        seen = set()
        for row in load_jsonl(directory / LOGITS_FILE):
            sid, tid = row["sample_id"], int(row["teacher_id"])
            if sid not in seen:
                seen.add(sid)
                sample_ids.append(sid)
            if len(row["logits"]) != n_classes:
                raise DataError(f"{sid}/{tid}: expected {n_classes} logits")
            entries[(sid, tid)] = row["logits"]
        logits = np.empty((len(teacher_ids), len(sample_ids), n_classes))
        for t, tid in enumerate(teacher_ids):
            for s, sid in enumerate(sample_ids):
                try:
                    logits[t, s] = entries[(sid, tid)]
                except KeyError:
                    raise DataError(f"bank is missing logits for ({sid!r}, teacher {tid})") from None
        return cls(teacher_ids, sample_ids, logits, manifest["teachers"])


def export_logits(params, records):
    """``(sample_ids, logits)`` for every record, in record order."""
    X = np.stack([r.features for r in records])
    return [r.sample_id for r in records], forward(params, X)


@dataclass
class TeacherCheckpoint:
    teacher_id: int
    params: object
    cfg: object = None
    path: str | None = None


def _score(logits, sample_ids, records):
    if not records:
        return None
    pos = {s: i for i, s in enumerate(sample_ids)}
    preds = {r.sample_id: int(np.argmax(logits[pos[r.sample_id]])) for r in records}
    return evaluate(preds, records).score


def build_bank(checkpoints, records, test_records=None, validation_records=None):
    """Export every checkpoint's logits on ``records`` into one bank.

    Each manifest entry carries the teacher's seed, config hash and its
    individual Score on the test and validation records when given.
    """
    if not checkpoints:
        raise ConfigError("build_bank needs at least one checkpoint")
    sizes = {tuple(c.params.layer_sizes) for c in checkpoints}
    if len({s[-1] for s in sizes}) != 1 or len({s[0] for s in sizes}) != 1:
        raise ConfigError("checkpoints disagree on input size or class count")
    sample_ids = [r.sample_id for r in records]
    stacks, manifest = [], []
    for ck in checkpoints:
        _, z = export_logits(ck.params, records)
        stacks.append(z)
        manifest.append(
            {
                "teacher_id": int(ck.teacher_id),
                "seed": None if ck.cfg is None else ck.cfg.seed,
                "config_hash": config_hash(ck.cfg),
                "checkpoint": ck.path,
                "score": _score(z, sample_ids, test_records),
                "val_score": _score(z, sample_ids, validation_records),
            }
        )
    return LogitBank([c.teacher_id for c in checkpoints], sample_ids, np.stack(stacks), manifest)


def ensemble_logits(bank, sample_ids, k=None, teacher_ids=None):
    return bank.stack(sample_ids, k=k, teacher_ids=teacher_ids).mean(axis=0)


def ensemble_predict(bank, sample_id, k=None, teacher_ids=None):
    """argmax of the mean logits of the first ``k`` teachers (ties -> lowest class)."""
    return int(np.argmax(ensemble_logits(bank, [sample_id], k, teacher_ids)[0]))


def ensemble_predictions(bank, records, k=None, teacher_ids=None):
    ids = [r.sample_id for r in records]
    z = ensemble_logits(bank, ids, k, teacher_ids)
    return dict(zip(ids, np.argmax(z, axis=1).tolist()))


def ensemble_metrics(bank, records, k=None, teacher_ids=None):
    return evaluate(ensemble_predictions(bank, records, k, teacher_ids), records)


def second_generation(teacher_bank, policy, student_cfgs, train_records, records, test_records=None,
                      validation_records=None):
    """Distill one student per config from ``teacher_bank`` and bank their logits.

    Student ids are 1..len(student_cfgs) in config order; logits are exported
    on ``records``.
    """
    if not student_cfgs:
        raise ConfigError("second_generation needs at least one student config")
    seeds = [c.seed for c in student_cfgs]
    if len(set(seeds)) != len(seeds):
        raise ConfigError("student configs must use distinct seeds")
    if not policy.uses_bank:
        raise ConfigError(f"policy {policy.descriptor()} does not reference the teacher bank")
    students = []
    for i, cfg in enumerate(student_cfgs, start=1):
        result = distill_student(policy, teacher_bank, train_records, cfg)
        students.append(TeacherCheckpoint(i, result.params, cfg))
    return build_bank(students, records, test_records, validation_records)
