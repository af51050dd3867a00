"""Soft-label knowledge distillation from teacher ensembles, at desk scale."""

from .dataset import DatasetSpec, SampleRecord, generate, load_csv, mask_augment, save_csv, split_by_patient, to_arrays
from .ensemble import LogitBank, build_bank, ensemble_predict, export_logits, second_generation
from .estimators import LogitEnsembleClassifier, SoftLabelMLPClassifier
from .exceptions import ConfigError, DataError, DomainError, ParseError, RespDistillError, StorageError
from .metrics import IcbhiMetrics, SeedAggregate, aggregate, evaluate, icbhi_scorer
from .model import MlpParams, TrainConfig, adam_step, backward, cosine_lr, forward, init_params, train
from .numerics import Rng64, cross_entropy, matmul, softmax
from .softlabel import (
    SoftLabelPolicy,
    TargetSet,
    build_targets,
    curated_select,
    distill_student,
    mean_teacher,
    noised_label,
    random_teacher,
)

__version__ = "0.1.0"
