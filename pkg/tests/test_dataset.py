import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from respdistill.dataset import (
    DatasetSpec,
    SampleRecord,
    class_means,
    generate,
    load_csv,
    mask_augment,
    mask_batch,
    patient_ids,
    save_csv,
    split_by_patient,
    to_arrays,
)
from respdistill.exceptions import ConfigError, ParseError
from respdistill.numerics import Rng64


def test_generate_count_and_ids():
    data = generate(DatasetSpec(n_patients=5, cycles_per_patient=40, feature_dim=8, seed=1))
    assert len(data) == 200
    assert len({r.sample_id for r in data}) == 200
    assert data[0].sample_id == "p000_c000"
    assert all(r.features.shape == (8,) for r in data)


def test_generate_deterministic():
    spec = DatasetSpec(n_patients=4, cycles_per_patient=5, feature_dim=6, seed=11)
    assert generate(spec) == generate(spec)
    other = generate(DatasetSpec(n_patients=4, cycles_per_patient=5, feature_dim=6, seed=12))
    assert generate(spec) != other


def test_class_priors_binomial_bound():
    spec = DatasetSpec(n_patients=1000, cycles_per_patient=100, feature_dim=2, seed=5)
    _, y, _ = to_arrays(generate(spec))
    n = y.size
    counts = np.bincount(y, minlength=4)
    for c, p in enumerate(spec.class_priors):
        assert abs(counts[c] - n * p) <= 3 * math.sqrt(n * p * (1 - p)), (c, counts)


def test_class_means_geometry():
    spec = DatasetSpec(feature_dim=16, class_separation=2.5, seed=4)
    m = class_means(spec)
    np.testing.assert_allclose(np.linalg.norm(m[1] - m[0]), 2.5, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(m[2] - m[0]), 2.5, atol=1e-12)
    assert abs((m[1] - m[0]) @ (m[2] - m[0])) < 1e-12
    np.testing.assert_allclose(m[3], m[1] + m[2] - m[0], atol=1e-12)


@pytest.mark.parametrize(
    "kw",
    [
        {"class_priors": (0.5, 0.5, 0.5, 0.5)},
        {"class_priors": (0.5, 0.5)},
        {"feature_dim": 1},
        {"n_patients": 0},
        {"noise_sigma": 0.0},
    ],
)
def test_spec_validation(kw):
    with pytest.raises(ConfigError):
        DatasetSpec(**kw)


def test_record_rejects_bad_label():
    with pytest.raises(ConfigError):
        SampleRecord("s", "p", 4, np.zeros(3))


def _patients(n, cycles=2):
    return generate(DatasetSpec(n_patients=n, cycles_per_patient=cycles, feature_dim=2, seed=0))


def test_split_counts_ten_patients():
    train, test = split_by_patient(_patients(10), 0.6, seed=0)
    assert len(patient_ids(train)) == 6
    assert len(patient_ids(test)) == 4
    assert {r.split for r in train} == {"train"}
    assert {r.split for r in test} == {"test"}


def test_split_two_patients_keeps_both_sides():
    train, test = split_by_patient(_patients(2), 0.99, seed=0)
    assert len(patient_ids(train)) == 1
    assert len(patient_ids(test)) == 1


def test_split_rejects_bad_fraction():
    with pytest.raises(ConfigError):
        split_by_patient(_patients(4), 1.0, seed=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.floats(0.05, 0.95), st.integers(0, 2**32))
def test_split_is_patient_partition(n, frac, seed):
    data = _patients(n, cycles=1)
    a, b = split_by_patient(data, frac, seed)
    pa, pb = set(patient_ids(a)), set(patient_ids(b))
    assert not pa & pb
    assert pa | pb == set(patient_ids(data))
    assert len(a) + len(b) == len(data)
    assert split_by_patient(data, frac, seed) == (a, b)


def test_split_none_names_keeps_tags():
    train, _ = split_by_patient(_patients(6), 0.5, seed=0)
    fit, val = split_by_patient(train, 0.8, seed=1, names=None)
    assert {r.split for r in fit + val} == {"train"}


def test_csv_round_trip(tmp_path):
    data = generate(DatasetSpec(n_patients=3, cycles_per_patient=4, feature_dim=5, seed=2))
    train, test = split_by_patient(data, 0.6, seed=0)
    path = tmp_path / "d.csv"
    save_csv(train + test, path)
    assert load_csv(path) == train + test


def test_csv_bad_label_reports_row(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("sample_id,patient_id,split,label,f0\na,p,train,0,1.0\nb,p,train,7,2.0\n")
    with pytest.raises(ParseError) as exc:
        load_csv(path)
    assert exc.value.row == 3
    assert "row 3" in str(exc.value)


def test_csv_empty_file(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("")
    with pytest.raises(ParseError, match="missing header"):
        load_csv(path)


def test_csv_non_numeric_and_duplicate(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("sample_id,patient_id,split,label,f0\na,p,train,0,x\n")
    with pytest.raises(ParseError, match="non-numeric"):
        load_csv(path)
    path.write_text("sample_id,patient_id,split,label,f0\na,p,train,0,1\na,p,train,1,2\n")
    with pytest.raises(ParseError, match="duplicate"):
        load_csv(path)


def test_mask_width_zero_is_identity():
    x = np.arange(1.0, 9.0)
    np.testing.assert_array_equal(mask_augment(x, 0, Rng64(0)), x)


def test_mask_full_width_can_zero_everything():
    X = np.ones((2000, 4))
    out = mask_batch(X, 4, Rng64(1))
    assert np.any(np.all(out == 0, axis=1))


@settings(max_examples=50)
@given(st.integers(1, 12), st.integers(0, 12), st.integers(0, 2**32))
def test_mask_zeroes_one_contiguous_run(d, w, seed):
    w = min(w, d)
    X = np.arange(1.0, d + 1.0)[None, :].repeat(20, axis=0)
    out = mask_batch(X, w, Rng64(seed))
    for row in out:
        zeros = np.flatnonzero(row == 0)
        assert zeros.size <= w
        if zeros.size:
            assert zeros[-1] - zeros[0] + 1 == zeros.size
        kept = row != 0
        np.testing.assert_array_equal(row[kept], X[0][kept])


def test_mask_rejects_too_wide():
    with pytest.raises(ConfigError):
        mask_batch(np.ones((1, 3)), 4, Rng64(0))
