import numpy as np
import pytest

from conftest import random_bank
from respdistill.dataset import DatasetSpec, SampleRecord, generate
from respdistill.ensemble import (
    LogitBank,
    TeacherCheckpoint,
    build_bank,
    ensemble_metrics,
    ensemble_predict,
    ensemble_predictions,
    export_logits,
    second_generation,
)
from respdistill.exceptions import ConfigError, DataError
from respdistill.metrics import evaluate
from respdistill.model import TrainConfig, init_params, zero_params
from respdistill.softlabel import SoftLabelPolicy

IDS = [f"s{i}" for i in range(40)]


def brute_force(bank, sid, k):
    j = bank.sample_ids.index(sid)
    C = bank.n_classes
    mean = [sum(float(bank.logits[t, j, c]) for t in range(k)) / k for c in range(C)]
    best = 0
    for c in range(1, C):
        if mean[c] > mean[best]:
            best = c
    return best


def test_tie_goes_to_lowest_class():
    bank = LogitBank([1, 2], ["a"], np.array([[[3.0, 1.0]], [[1.0, 3.0]]]))
    assert ensemble_predict(bank, "a", 2) == 0


def test_k1_is_single_teacher_argmax():
    bank = random_bank(3, IDS)
    for j, sid in enumerate(IDS):
        assert ensemble_predict(bank, sid, 1) == int(np.argmax(bank.logits[0, j]))


@pytest.mark.parametrize("seed", range(5))
def test_matches_brute_force(seed):
    bank = random_bank(5, IDS, seed=seed)
    for k in (1, 3, 5):
        for sid in IDS:
            assert ensemble_predict(bank, sid, k) == brute_force(bank, sid, k)


def test_permutation_invariance():
    bank = random_bank(6, IDS, seed=3)
    perm = [4, 1, 5, 0, 3, 2]
    other = LogitBank(range(1, 7), IDS, bank.logits[perm])
    assert ensemble_predictions(bank, _recs()) == ensemble_predictions(other, _recs())


def test_adding_mean_teacher_changes_nothing():
    bank = random_bank(4, IDS, seed=5)
    grown = LogitBank(range(1, 6), IDS, np.concatenate([bank.logits, bank.logits.mean(axis=0)[None]]))
    before = ensemble_predictions(bank, _recs())
    after = ensemble_predictions(grown, _recs())
    assert before == after


def test_missing_sample_and_bad_k():
    bank = random_bank(2, IDS)
    with pytest.raises(DataError):
        ensemble_predict(bank, "nope", 1)
    with pytest.raises(ConfigError):
        ensemble_predict(bank, "s0", 3)


def test_bank_invariants():
    with pytest.raises(ConfigError):
        LogitBank([1, 1], ["a"], np.zeros((2, 1, 4)))
    with pytest.raises(DataError):
        LogitBank([1], ["a"], np.zeros((1, 2, 4)))


def test_bank_round_trip(tmp_path):
    bank = random_bank(3, IDS, seed=9)
    bank.save(tmp_path / "b")
    back = LogitBank.load(tmp_path / "b")
    assert back.teacher_ids == bank.teacher_ids
    assert back.sample_ids == bank.sample_ids
    np.testing.assert_array_equal(back.logits, bank.logits)
    assert back.manifest == bank.manifest
    assert ensemble_predictions(back, _recs()) == ensemble_predictions(bank, _recs())


def test_bank_load_detects_missing_pair(tmp_path):
    bank = random_bank(2, IDS[:2])
    bank.save(tmp_path)
    lines = (tmp_path / "logits.jsonl").read_text().splitlines()
    (tmp_path / "logits.jsonl").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DataError):
        LogitBank.load(tmp_path)


def _data():
    return generate(DatasetSpec(n_patients=6, cycles_per_patient=10, feature_dim=5, seed=1))


def _recs():
    return [SampleRecord(sid, "p", i % 4, np.zeros(1)) for i, sid in enumerate(IDS)]


def test_export_logits_shapes_and_zero_model():
    data = _data()
    ids, z = export_logits(zero_params([5, 3, 4]), data)
    assert len(ids) == len(data) == z.shape[0]
    assert not z.any()


def test_identical_checkpoints_act_like_one():
    data = _data()
    p = init_params([5, 8, 4], 3)
    single = build_bank([TeacherCheckpoint(1, p)], data)
    triple = build_bank([TeacherCheckpoint(i, p) for i in (1, 2, 3)], data)
    assert ensemble_predictions(single, data) == ensemble_predictions(triple, data, k=3)


def test_manifest_scores_match_recomputation():
    data = _data()
    cks = [TeacherCheckpoint(i, init_params([5, 8, 4], i), TrainConfig(seed=i)) for i in (1, 2)]
    bank = build_bank(cks, data, test_records=data[:30], validation_records=data[30:])
    for t, entry in enumerate(bank.manifest):
        _, z = export_logits(cks[t].params, data)
        preds = {r.sample_id: int(np.argmax(z[i])) for i, r in enumerate(data)}
        assert entry["score"] == evaluate(preds, data[:30]).score
        assert entry["val_score"] == evaluate(preds, data[30:]).score
        assert entry["seed"] == t + 1
    assert bank.scores("test") == {1: bank.manifest[0]["score"], 2: bank.manifest[1]["score"]}


def test_build_bank_rejects_mixed_class_counts():
    with pytest.raises(ConfigError):
        build_bank([TeacherCheckpoint(1, zero_params([5, 4])), TeacherCheckpoint(2, zero_params([5, 3]))], _data())


def _teacher_bank(data):
    cks = [TeacherCheckpoint(i, init_params([5, 8, 4], i)) for i in (1, 2, 3)]
    return build_bank(cks, data)


def test_second_generation_count_and_determinism():
    data = _data()
    bank = _teacher_bank(data)
    cfgs = [TrainConfig(seed=s, epochs=2, batch_size=16, hidden_sizes=(8,)) for s in (1, 2, 3, 4, 5)]
    a = second_generation(bank, SoftLabelPolicy.mean(3), cfgs, data, data, test_records=data)
    b = second_generation(bank, SoftLabelPolicy.mean(3), cfgs, data, data, test_records=data)
    assert a.n_teachers == 5
    np.testing.assert_array_equal(a.logits, b.logits)
    assert a.manifest == b.manifest
    assert ensemble_metrics(a, data, k=5).score == ensemble_metrics(b, data, k=5).score


@pytest.mark.parametrize(
    "cfgs, policy",
    [
        ([], SoftLabelPolicy.mean(1)),
        ([TrainConfig(seed=1), TrainConfig(seed=1)], SoftLabelPolicy.mean(1)),
        ([TrainConfig(seed=1)], SoftLabelPolicy.hard()),
    ],
)
def test_second_generation_errors(cfgs, policy):
    data = _data()
    with pytest.raises(ConfigError):
        second_generation(_teacher_bank(data), policy, cfgs, data, data)
