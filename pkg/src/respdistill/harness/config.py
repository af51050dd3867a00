"""INI-style experiment configuration.

Every key is optional; the defaults are listed below and exported as
``DEFAULT_CONFIG``. ``[dataset] csv = path`` loads records from a CSV file
(relative to the config file) instead of generating them. ``[student]``
takes the same keys as ``[teachers]`` except ``count``::

    [dataset]
    n_patients = 60
    cycles_per_patient = 40
    feature_dim = 32
    class_priors = 0.53, 0.27, 0.13, 0.07
    class_separation = 2.0
    noise_sigma = 1.0
    patient_sigma = 0.5
    seed = 0
    train_fraction = 0.6            ; patient-level train/test split
    validation_fraction = 0.2       ; share of training patients held out
    split_seed = 0

    [teachers]
    count = 15
    lr_max = 0.001
    epochs = 200
    batch_size = 128
    mask_width = 4
    shuffle = true
    hidden_sizes = 32, 32

    [student]
    lr_max = 0.001
    epochs = 200
    batch_size = 128
    mask_width = 4
    shuffle = true
    hidden_sizes = 32, 32

    [experiment]
    output = runs_out
    seeds = 1, 2, 3, 4, 5
    k_values = 0, 1, 3, 5, 10, 15
    sweep_policies = mean, random
    record_wall_time = false

    [ablation]
    noised_var = 0.1
    teacher_var_k = 5
    single_teacher = 1
    mean_k = 5
    random_k = 15
    curated_m = 5
    curated_selection = validation
    raw_logit_k = 5

    [second_gen]
    trials = 5
    teachers_per_trial = 5
    policy = mean:5
"""

from __future__ import annotations

import configparser
import textwrap
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..dataset import DatasetSpec
from ..exceptions import ConfigError, StorageError
from ..model import TrainConfig
from ..softlabel import SELECTION_MODES, SoftLabelPolicy

SWEEP_KINDS = ("mean", "random")


@dataclass(frozen=True)
class AblationConfig:
    noised_var: float = 0.1
    teacher_var_k: int = 5
    single_teacher: int = 1
    mean_k: int = 5
    random_k: int = 15
    curated_m: int = 5
    curated_selection: str = "validation"
    raw_logit_k: int = 5

    def arms(self):
        """The eight ablation arms as ``(name, policy)`` pairs, in report order."""
        return [
            ("baseline", SoftLabelPolicy.hard()),
            ("noised_fixed", SoftLabelPolicy.noised_fixed(self.noised_var)),
            ("noised_teacher_var", SoftLabelPolicy.noised_teacher_var(self.teacher_var_k)),
            ("single_teacher", SoftLabelPolicy.single(self.single_teacher)),
            ("mean_teacher", SoftLabelPolicy.mean(self.mean_k)),
            ("random_teacher", SoftLabelPolicy.random(self.random_k)),
            ("curated_teacher", SoftLabelPolicy.curated(self.curated_m, self.curated_selection)),
            ("raw_logit", SoftLabelPolicy.raw_logit(self.raw_logit_k)),
        ]


@dataclass(frozen=True)
class SecondGenConfig:
    trials: int = 5
    teachers_per_trial: int = 5
    policy: str = "mean:5"


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    csv_path: str | None = None
    train_fraction: float = 0.6
    validation_fraction: float = 0.2
    split_seed: int = 0
    n_teachers: int = 15
    teacher: TrainConfig = field(default_factory=lambda: TrainConfig(mask_width=4))
    student: TrainConfig = field(default_factory=lambda: TrainConfig(mask_width=4))
    seeds: tuple = (1, 2, 3, 4, 5)
    k_values: tuple = (0, 1, 3, 5, 10, 15)
    sweep_policies: tuple = SWEEP_KINDS
    output: str = "runs_out"
    record_wall_time: bool = False
    ablation: AblationConfig = field(default_factory=AblationConfig)
    second_gen: SecondGenConfig = field(default_factory=SecondGenConfig)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.n_teachers < 1:
            raise ConfigError("teacher count must be >= 1")
        bad = [k for k in self.k_values if k < 0 or k > self.n_teachers]
        if bad:
            raise ConfigError(f"k_values {bad} outside [0, {self.n_teachers}]")
        for kind in self.sweep_policies:
            if kind not in SWEEP_KINDS:
                raise ConfigError(f"sweep policy must be one of {SWEEP_KINDS}, got {kind!r}")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must be in (0, 1)")
        if self.ablation.curated_selection not in SELECTION_MODES:
            raise ConfigError(f"curated_selection must be one of {SELECTION_MODES}")

    def with_overrides(self, seed=None, output=None):
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seeds=(int(seed),))
        if output is not None:
            cfg = replace(cfg, output=str(output))
        return cfg

    def student_config(self, seed):
        return replace(self.student, seed=int(seed))

    def teacher_config(self, seed):
        return replace(self.teacher, seed=int(seed))


def _ints(text):
    return tuple(int(x) for x in text.replace(" ", "").split(",") if x)


def _floats(text):
    return tuple(float(x) for x in text.replace(" ", "").split(",") if x)


def _words(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _train_section(sec, base):
    if sec is None:
        return base
    kw = {}
    if "lr_max" in sec:
        kw["lr_max"] = sec.getfloat("lr_max")
    for key in ("epochs", "batch_size", "mask_width"):
        if key in sec:
            kw[key] = sec.getint(key)
    if "shuffle" in sec:
        kw["shuffle"] = sec.getboolean("shuffle")
    if "hidden_sizes" in sec:
        kw["hidden_sizes"] = _ints(sec["hidden_sizes"])
    return replace(base, **kw)


_SECTIONS = {"dataset", "teachers", "student", "experiment", "ablation", "second_gen"}


def parse_config(text, base_dir="."):
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    unknown = set(parser.sections()) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    get = lambda name: parser[name] if parser.has_section(name) else None  # noqa: E731
    try:
        return _build(get, Path(base_dir))
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config value: {exc}") from None


def _build(get, base_dir):
    kw = {}
    ds = get("dataset")
    spec_kw = {}
    if ds is not None:
        if "csv" in ds:
            p = Path(ds["csv"])
            kw["csv_path"] = str(p if p.is_absolute() else base_dir / p)
        for key in ("n_patients", "cycles_per_patient", "feature_dim", "seed"):
            if key in ds:
                spec_kw[key] = ds.getint(key)
        for key in ("class_separation", "noise_sigma", "patient_sigma"):
            if key in ds:
                spec_kw[key] = ds.getfloat(key)
        if "class_priors" in ds:
            spec_kw["class_priors"] = _floats(ds["class_priors"])
        for key in ("train_fraction", "validation_fraction"):
            if key in ds:
                kw[key] = ds.getfloat(key)
        if "split_seed" in ds:
            kw["split_seed"] = ds.getint("split_seed")
    kw["dataset"] = DatasetSpec(**spec_kw)

    defaults = ExperimentConfig()
    t = get("teachers")
    kw["teacher"] = _train_section(t, defaults.teacher)
    if t is not None and "count" in t:
        kw["n_teachers"] = t.getint("count")
    kw["student"] = _train_section(get("student"), defaults.student)

    ex = get("experiment")
    if ex is not None:
        if "output" in ex:
            kw["output"] = ex["output"]
        if "seeds" in ex:
            kw["seeds"] = _ints(ex["seeds"])
        if "k_values" in ex:
            kw["k_values"] = _ints(ex["k_values"])
        if "sweep_policies" in ex:
            kw["sweep_policies"] = _words(ex["sweep_policies"])
        if "record_wall_time" in ex:
            kw["record_wall_time"] = ex.getboolean("record_wall_time")

    ab = get("ablation")
    if ab is not None:
        akw = {}
        for key in ("teacher_var_k", "single_teacher", "mean_k", "random_k", "curated_m", "raw_logit_k"):
            if key in ab:
                akw[key] = ab.getint(key)
        if "noised_var" in ab:
            akw["noised_var"] = ab.getfloat("noised_var")
        if "curated_selection" in ab:
            akw["curated_selection"] = ab["curated_selection"]
        kw["ablation"] = AblationConfig(**akw)

    sg = get("second_gen")
    if sg is not None:
        skw = {}
        for key in ("trials", "teachers_per_trial"):
            if key in sg:
                skw[key] = sg.getint(key)
        if "policy" in sg:
            SoftLabelPolicy.parse(sg["policy"])
            skw["policy"] = sg["policy"]
        kw["second_gen"] = SecondGenConfig(**skw)
    return ExperimentConfig(**kw)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent)


DEFAULT_CONFIG = textwrap.dedent(__doc__.split("::", 1)[1]).strip() + "\n"
