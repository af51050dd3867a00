import numpy as np
import pytest

from respdistill.dataset import DatasetSpec, generate, split_by_patient
from respdistill.ensemble import LogitBank
from respdistill.numerics import Rng64


@pytest.fixture
def tiny_spec():
    return DatasetSpec(n_patients=10, cycles_per_patient=8, feature_dim=6, seed=3)


@pytest.fixture
def tiny_data(tiny_spec):
    return generate(tiny_spec)


@pytest.fixture
def tiny_split(tiny_data):
    return split_by_patient(tiny_data, 0.6, seed=0)


def random_bank(n_teachers, sample_ids, n_classes=4, seed=0, scale=2.0):
    rng = Rng64(seed)
    logits = scale * rng.normal((n_teachers, len(sample_ids), n_classes))
    tids = list(range(1, n_teachers + 1))
    manifest = [
        {"teacher_id": t, "score": float(50 + 10 * rng.random()), "val_score": float(50 + 10 * rng.random())}
        for t in tids
    ]
    return LogitBank(tids, sample_ids, logits, manifest)


@pytest.fixture
def bank_factory():
    return random_bank


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
