"""Experiment orchestration: teacher banks, distillation runs, sweeps, ablations.

Output layout under ``config.output``::

    data.csv                      gen-data
    teachers/t001/checkpoint.json
    bank/{manifest.json, logits.jsonl}
    runs/<run_id>/{checkpoint.json, logits.jsonl, result.json}
    sweep/{sweep.csv, sweep_summary.csv, sweep.svg, teacher_val_loss.svg}
    ablation/{ablation_runs.csv, ablation.csv}
    second_gen/{second_gen.csv, second_gen.json, trial<j>/bank/...}
    ensemble_eval.csv
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import generate, load_csv, save_csv, split_by_patient
from ..ensemble import (
    LogitBank,
    TeacherCheckpoint,
    build_bank,
    ensemble_logits,
    ensemble_metrics,
    export_logits,
    second_generation,
)
from ..exceptions import ConfigError, DataError
from ..io import dump_json, dump_jsonl, load_json, write_text_atomic
from ..metrics import IcbhiMetrics, aggregate, evaluate
from ..model import init_params, save_checkpoint, train
from ..numerics import cross_entropy, derive_seed, softmax
from ..softlabel import SoftLabelPolicy, distill_student, one_hot
from .svg import line_chart

log = logging.getLogger(__name__)

RUN_HEADER = ["run_id", "policy", "k", "seed", "sp", "se", "score", "final_loss", "wall_ms"]


def _num(x):
    if x is None:
        return "nan"
    return repr(float(x))


def _parse_num(s):
    return float(s) if s not in ("", "nan") else float("nan")


def diverged(trace):
    """True when a loss trace failed to converge.

    That is: a non-finite entry, no decrease from the first to the last
    epoch, or a negative cross-entropy (only possible when the targets are
    off the simplex, where the loss has no minimum).
    """
    if not trace:
        return False
    if not all(math.isfinite(v) for v in trace):
        return True
    return trace[-1] >= trace[0] or min(trace) < 0.0


def run_status(policy, trace):
    """``"diverged"`` or ``"ok"``.

    Only off-simplex targets (raw logits) are judged by the full
    :func:`diverged` rule; re-drawn soft labels make a short loss trace
    noisy, so other policies only diverge on a non-finite loss.
    """
    if policy.kind == "raw_logit":
        return "diverged" if diverged(trace) else "ok"
    return "ok" if all(math.isfinite(v) for v in trace) else "diverged"


@dataclass
class RunResult:
    run_id: str
    policy: str
    k: int
    seed: int
    metrics: IcbhiMetrics | None
    final_loss: float
    wall_ms: int = 0
    status: str = "ok"
    loss_trace: list = field(default_factory=list)

    @property
    def score(self):
        return self.metrics.score if self.metrics is not None else float("nan")

    def csv_row(self):
        m = self.metrics
        return [
            self.run_id, self.policy, str(self.k), str(self.seed),
            _num(m.sp if m else None), _num(m.se if m else None), _num(m.score if m else None),
            _num(self.final_loss), str(int(self.wall_ms)),
        ]

    def to_dict(self):
        return {
            "run_id": self.run_id,
            "policy": self.policy,
            "k": self.k,
            "seed": self.seed,
            "metrics": None if self.metrics is None else self.metrics.to_dict(),
            "final_loss": None if not math.isfinite(self.final_loss) else self.final_loss,
            "wall_ms": int(self.wall_ms),
            "status": self.status,
            "loss_trace": [v if math.isfinite(v) else None for v in self.loss_trace],
        }

    @classmethod
    def from_dict(cls, d):
        m = d.get("metrics")
        metrics = IcbhiMetrics.from_confusion(m["confusion"]) if m else None
        fl = d.get("final_loss")
        return cls(
            d["run_id"], d["policy"], int(d["k"]), int(d["seed"]), metrics,
            float("nan") if fl is None else float(fl), int(d.get("wall_ms", 0)), d.get("status", "ok"),
            [float("nan") if v is None else v for v in d.get("loss_trace", [])],
        )


def runs_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_HEADER)
    for r in results:
        w.writerow(r.csv_row())
    return buf.getvalue()


def read_runs_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in ("sp", "se", "score", "final_loss"):
            row[key] = _parse_num(row[key])
        for key in ("k", "seed", "wall_ms"):
            row[key] = int(row[key])
    return rows


@dataclass
class Splits:
    fit: list
    validation: list
    test: list
    train: list = field(default_factory=list)  # fit + validation in source order

    @property
    def all(self):
        return self.fit + self.validation + self.test


def prepare_data(config):
    """Load or generate the records and split them by patient.

    Test patients come from the train/test split (or the CSV's split tags
    when it carries both); ``validation_fraction`` of the training patients
    are then held out for curated selection and teacher validation loss.
    """
    if config.csv_path:
        records = load_csv(config.csv_path)
        tags = {r.split for r in records}
        if tags == {"train", "test"}:
            train_recs = [r for r in records if r.split == "train"]
            test = [r for r in records if r.split == "test"]
        else:
            train_recs, test = split_by_patient(records, config.train_fraction, config.split_seed)
    else:
        records = generate(config.dataset)
        train_recs, test = split_by_patient(records, config.train_fraction, config.split_seed)
    fit, val = split_by_patient(
        train_recs, 1.0 - config.validation_fraction, derive_seed(config.split_seed, "validation"), names=None
    )
    if not fit or not test:
        raise DataError("empty training or test split")
    return Splits(fit, val, test, train_recs)


def _predictions(logits, sample_ids):
    return dict(zip(sample_ids, np.argmax(logits, axis=1).tolist()))


def validation_loss(bank, records, k):
    """Mean cross-entropy of the k-teacher ensemble's softmax against hard labels."""
    if k < 1 or not records:
        return float("nan")
    ids = [r.sample_id for r in records]
    p = softmax(ensemble_logits(bank, ids, k))
    y = one_hot([r.label for r in records], bank.n_classes)
    return float(np.mean(cross_entropy(y, p)))


class Workspace:
    """Owns the data splits, the teacher bank and an in-memory run cache for one output dir."""

    def __init__(self, config, threads=1):
        self.config = config
        self.out = Path(config.output)
        self.threads = max(1, int(threads))
        self._splits = None
        self._bank = None
        self._trained = {}

    @property
    def splits(self):
        if self._splits is None:
            self._splits = prepare_data(self.config)
        return self._splits

    @property
    def bank_dir(self):
        return self.out / "bank"

    def _map(self, fn, items):
        items = list(items)
        if self.threads == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))

    # -- teachers -------------------------------------------------------

    def train_teacher(self, teacher_id, cfg=None):
        cfg = cfg or self.config.teacher_config(teacher_id)
        fit = self.splits.fit
        X = np.stack([r.features for r in fit])
        params = init_params(cfg.layer_sizes(X.shape[1], 4), cfg.seed)
        return train(params, X, one_hot([r.label for r in fit]), cfg)

    def train_teachers(self, count=None, write=True):
        n = self.config.n_teachers if count is None else int(count)
        if n < 1:
            raise ConfigError("teacher count must be >= 1")
        results = self._map(self.train_teacher, range(1, n + 1))
        checkpoints = []
        for tid, res in zip(range(1, n + 1), results):
            rel = f"teachers/t{tid:03d}/checkpoint.json"
            cfg = self.config.teacher_config(tid)
            if write:
                save_checkpoint(self.out / rel, res.params, cfg)
            checkpoints.append(TeacherCheckpoint(tid, res.params, cfg, rel))
        s = self.splits
        bank = build_bank(checkpoints, s.all, s.test, s.validation)
        if write:
            bank.save(self.bank_dir)
        self._bank = bank
        log.info("trained %d teachers; mean Score %.2f", n, np.mean([e["score"] for e in bank.manifest]))
        return bank

    def load_bank(self, required=True):
        if self._bank is None:
            if (self.bank_dir / "manifest.json").exists():
                self._bank = LogitBank.load(self.bank_dir)
            elif required:
                raise DataError(f"no teacher bank at {self.bank_dir}; run train-teachers first")
            else:
                return None
        return self._bank

    def ensure_bank(self):
        bank = self.load_bank(required=False)
        if bank is None:
            bank = self.train_teachers()
        return bank

    def _check_bank(self, bank, policy):
        missing = bank.missing([r.sample_id for r in self.splits.fit])
        if missing:
            raise DataError(f"bank does not cover training sample {missing[0]!r}")
        if policy.kind == "single":
            bank.teacher_index(teacher_ids=[policy.teacher_id])
        elif policy.uses_bank and policy.k > bank.n_teachers:
            raise ConfigError(f"policy {policy.descriptor()} needs {policy.k} teachers, bank has {bank.n_teachers}")

    # -- students -------------------------------------------------------

    def _train_student(self, policy, seed):
        key = (policy.descriptor(), int(seed))
        if key not in self._trained:
            bank = None
            if policy.uses_bank:
                bank = self.load_bank()
                self._check_bank(bank, policy)
            cfg = self.config.student_config(seed)
            t0 = time.perf_counter()
            result = distill_student(policy, bank, self.splits.fit, cfg)
            wall = int(round(1000 * (time.perf_counter() - t0)))
            self._trained[key] = (result, cfg, wall)
        return self._trained[key]

    def run(self, policy, seed, run_id=None, k=None, write=True):
        """Train, evaluate on the test split and (optionally) persist one student."""
        k = policy.teacher_count if k is None else k
        run_id = run_id or f"{policy.descriptor().replace(':', '-')}-s{seed}"
        result, cfg, wall = self._train_student(policy, seed)
        s = self.splits
        ids, logits = export_logits(result.params, s.all)
        test_ids = [r.sample_id for r in s.test]
        pos = {sid: i for i, sid in enumerate(ids)}
        test_logits = logits[[pos[t] for t in test_ids]]
        metrics = None
        if np.all(np.isfinite(test_logits)):
            metrics = evaluate(_predictions(test_logits, test_ids), s.test)
        rr = RunResult(
            run_id, policy.descriptor(), int(k), int(seed), metrics, result.final_loss,
            wall if self.config.record_wall_time else 0,
            run_status(policy, result.loss_trace),
            list(result.loss_trace),
        )
        if write:
            d = self.out / "runs" / run_id
            save_checkpoint(d / "checkpoint.json", result.params, cfg)
            dump_jsonl(
                d / "logits.jsonl",
                ({"sample_id": sid, "logits": logits[i].tolist()} for i, sid in enumerate(ids)),
            )
            dump_json(d / "result.json", rr.to_dict())
        return rr

    def run_many(self, jobs):
        """``jobs`` is a list of ``(policy, seed, run_id, k)``; training runs may go in parallel."""
        unique = {}
        for policy, seed, _, _ in jobs:
            unique.setdefault((policy.descriptor(), seed), (policy, seed))
        self._map(lambda ps: self._train_student(*ps), unique.values())
        return [self.run(p, s, rid, k) for p, s, rid, k in jobs]


# -- commands -----------------------------------------------------------


def cmd_gen_data(config, path=None):
    ws = Workspace(config)
    s = ws.splits
    path = Path(path) if path else ws.out / "data.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_csv(s.train + s.test, path)
    return path


def cmd_train_teachers(config, threads=1, count=None):
    return Workspace(config, threads).train_teachers(count)


def cmd_distill(config, policy, seed, threads=1):
    ws = Workspace(config, threads)
    return ws.run(policy, seed)


def cmd_ensemble_eval(config, k_values=None):
    ws = Workspace(config)
    bank = ws.load_bank()
    ks = [k for k in (k_values or range(1, bank.n_teachers + 1)) if k >= 1]
    rows = []
    for k in ks:
        if k > bank.n_teachers:
            raise ConfigError(f"k={k} exceeds bank size {bank.n_teachers}")
        m = ensemble_metrics(bank, ws.splits.test, k)
        rows.append({"k": k, **m.as_row(), "val_loss": validation_loss(bank, ws.splits.validation, k)})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "sp", "se", "score", "val_loss"])
    for r in rows:
        w.writerow([r["k"], _num(r["sp"]), _num(r["se"]), _num(r["score"]), _num(r["val_loss"])])
    write_text_atomic(ws.out / "ensemble_eval.csv", buf.getvalue())
    return rows


def sweep_jobs(config):
    jobs = []
    for k in config.k_values:
        for kind in config.sweep_policies:
            for seed in config.seeds:
                if k == 0:
                    policy = SoftLabelPolicy.hard()
                elif kind == "mean":
                    policy = SoftLabelPolicy.mean(k)
                else:
                    policy = SoftLabelPolicy.random(k)
                jobs.append((policy, seed, f"sweep-{kind}-k{k}-s{seed}", k))
    return jobs


def summarize(results, key=lambda r: (r.policy, r.k)):
    """Seed aggregates per group, in first-seen order; diverged runs without metrics are skipped."""
    groups = {}
    for r in results:
        groups.setdefault(key(r), []).append(r)
    out = []
    for g, rs in groups.items():
        ok = [r.metrics for r in rs if r.metrics is not None]
        out.append((g, rs, aggregate(ok) if ok else None))
    return out


def cmd_sweep_k(config, threads=1):
    ws = Workspace(config, threads)
    bank = ws.ensure_bank()
    if max(config.k_values, default=0) > bank.n_teachers:
        raise ConfigError(f"k_values exceed bank size {bank.n_teachers}")
    results = ws.run_many(sweep_jobs(config))

    ensemble_rows = []
    for k in config.k_values:
        metrics = ensemble_metrics(bank, ws.splits.test, k) if k >= 1 else None
        ensemble_rows.append(
            RunResult(f"sweep-ensemble-k{k}", "ensemble", k, 0, metrics, validation_loss(bank, ws.splits.validation, k))
        )
    out = ws.out / "sweep"
    write_text_atomic(out / "sweep.csv", runs_csv(results + ensemble_rows))

    kind_of = {rid: rid.split("-")[1] for _, _, rid, _ in sweep_jobs(config)}
    summary = summarize(results, key=lambda r: (kind_of[r.run_id], r.k))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "k", "n", "sp_mean", "sp_std", "se_mean", "se_std", "score_mean", "score_std"])
    series = {}
    for (kind, k), _, agg in summary:
        w.writerow([kind, k, agg.n] + [_num(v) for key in ("sp", "se", "score") for v in (agg.mean[key], agg.std[key])])
        series.setdefault(f"student ({kind})", []).append((k, agg.mean["score"]))
    for r in ensemble_rows:
        if r.metrics is not None:
            series.setdefault("teacher ensemble", []).append((r.k, r.score))
    write_text_atomic(out / "sweep_summary.csv", buf.getvalue())
    write_text_atomic(
        out / "sweep.svg",
        line_chart(series, "ICBHI Score vs teacher count", "teachers k", "Score (%)"),
    )
    loss_series = {"teacher ensemble": [(r.k, r.final_loss) for r in ensemble_rows if r.k >= 1]}
    write_text_atomic(
        out / "teacher_val_loss.svg",
        line_chart(loss_series, "Teacher ensemble validation loss", "teachers k", "cross-entropy"),
    )
    return results, ensemble_rows


ABLATION_HEADER = [
    "arm", "policy", "n", "sp_mean", "sp_std", "se_mean", "se_std", "score_mean", "score_std", "status",
]


def cmd_ablate(config, threads=1):
    ws = Workspace(config, threads)
    bank = ws.ensure_bank()
    arms = config.ablation.arms()
    for _, policy in arms:
        if policy.uses_bank:
            ws._check_bank(bank, policy)
    jobs = [(p, seed, f"ablate-{name}-s{seed}", p.teacher_count) for name, p in arms for seed in config.seeds]
    results = ws.run_many(jobs)

    out = ws.out / "ablation"
    write_text_atomic(out / "ablation_runs.csv", runs_csv(results))
    rows = []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_HEADER)
    for name, policy in arms:
        rs = [r for r in results if r.run_id.startswith(f"ablate-{name}-s")]
        status = "diverged" if any(r.status == "diverged" for r in rs) else "ok"
        metrics = [r.metrics for r in rs if r.metrics is not None]
        agg = aggregate(metrics) if metrics and status == "ok" else None
        row = {"arm": name, "policy": policy.descriptor(), "n": len(rs), "status": status, "aggregate": agg}
        rows.append(row)
        vals = ["" for _ in range(6)] if agg is None else [
            _num(v) for key in ("sp", "se", "score") for v in (agg.mean[key], agg.std[key])
        ]
        w.writerow([name, policy.descriptor(), len(rs), *vals, status])
    write_text_atomic(out / "ablation.csv", buf.getvalue())
    return rows, results


def cmd_second_gen(config, threads=1):
    """First-generation vs second-generation ensembles over paired trials.

    Trial ``j`` trains its own first generation (teacher seeds
    ``j*m+1 .. j*m+m``), distills one student per experiment seed from it
    with the configured policy, and compares the two ensembles on the test
    split.
    """
    ws = Workspace(config, threads)
    sg = config.second_gen
    policy = SoftLabelPolicy.parse(sg.policy)
    if policy.teacher_count > sg.teachers_per_trial:
        raise ConfigError(f"policy {sg.policy} needs more than {sg.teachers_per_trial} teachers")
    s = ws.splits
    trials = []
    for j in range(sg.trials):
        tids = [j * sg.teachers_per_trial + i + 1 for i in range(sg.teachers_per_trial)]
        results = ws._map(ws.train_teacher, tids)
        cks = [TeacherCheckpoint(t, r.params, ws.config.teacher_config(t)) for t, r in zip(tids, results)]
        first = build_bank(cks, s.all, s.test, s.validation)
        student_cfgs = [config.student_config(seed) for seed in config.seeds]
        second = second_generation(first, policy, student_cfgs, s.fit, s.all, s.test, s.validation)
        second.save(ws.out / "second_gen" / f"trial{j}" / "bank")
        m1 = ensemble_metrics(first, s.test)
        m2 = ensemble_metrics(second, s.test)
        trials.append({"trial": j, "teacher_seeds": tids, "first_gen": m1, "second_gen": m2})

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", "first_sp", "first_se", "first_score", "second_sp", "second_se", "second_score"])
    for t in trials:
        m1, m2 = t["first_gen"], t["second_gen"]
        w.writerow([t["trial"], *(_num(v) for v in (m1.sp, m1.se, m1.score, m2.sp, m2.se, m2.score))])
    write_text_atomic(ws.out / "second_gen" / "second_gen.csv", buf.getvalue())
    first_mean = float(np.mean([t["first_gen"].score for t in trials]))
    second_mean = float(np.mean([t["second_gen"].score for t in trials]))
    summary = {
        "policy": policy.descriptor(),
        "trials": [
            {"trial": t["trial"], "teacher_seeds": t["teacher_seeds"],
             "first_gen": t["first_gen"].to_dict(), "second_gen": t["second_gen"].to_dict()}
            for t in trials
        ],
        "first_gen_mean_score": first_mean,
        "second_gen_mean_score": second_mean,
    }
    dump_json(ws.out / "second_gen" / "second_gen.json", summary)
    return summary


def load_run_results(directory):
    directory = Path(directory)
    runs_dir = directory / "runs"
    paths = sorted(runs_dir.glob("*/result.json")) if runs_dir.is_dir() else []
    if not paths:
        raise DataError(f"no run results under {runs_dir}")
    return [RunResult.from_dict(load_json(p)) for p in paths]


def cmd_report(directory):
    """Merge every ``runs/*/result.json`` into ``report.csv`` and ``report.json``."""
    directory = Path(directory)
    results = sorted(load_run_results(directory), key=lambda r: r.run_id)
    write_text_atomic(directory / "report.csv", runs_csv(results))
    groups = summarize(sorted(results, key=lambda r: (r.policy, r.k, r.seed)))
    summary = []
    for (policy, k), rs, agg in groups:
        summary.append({
            "policy": policy,
            "k": k,
            "n": len(rs),
            "diverged": sum(r.status == "diverged" for r in rs),
            "run_ids": [r.run_id for r in rs],
            "mean": None if agg is None else agg.mean,
            "std": None if agg is None else agg.std,
        })
    dump_json(directory / "report.json", {"runs": len(results), "groups": summary})
    return results, summary


def cmd_plot(csv_path, svg_path=None):
    """Re-draw the sweep chart from a ``sweep.csv``."""
    rows = read_runs_csv(csv_path)
    series = {}
    per = {}
    for row in rows:
        if row["policy"] == "ensemble":
            if math.isfinite(row["score"]):
                series.setdefault("teacher ensemble", []).append((row["k"], row["score"]))
            continue
        kind = row["run_id"].split("-")[1] if row["run_id"].startswith("sweep-") else row["policy"]
        per.setdefault((kind, row["k"]), []).append(row["score"])
    students = {}
    for (kind, k), scores in per.items():
        students.setdefault(f"student ({kind})", []).append((k, float(np.mean(scores))))
    series = {**students, **series}
    svg = line_chart(series, "ICBHI Score vs teacher count", "teachers k", "Score (%)")
    svg_path = Path(svg_path) if svg_path else Path(csv_path).with_suffix(".svg")
    write_text_atomic(svg_path, svg)
    return svg_path
