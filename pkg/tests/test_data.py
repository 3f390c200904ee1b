import gzip
import struct

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from dprsa.data import (
    Dataset,
    SyntheticSpec,
    class_means,
    gen_synthetic,
    load_idx,
    write_idx,
)
from dprsa.errors import BadMagicError, CountMismatchError, InvalidInputError, TruncatedFileError


def _images(n, rows, cols, pixels, magic=0x803):
    return struct.pack(">IIII", magic, n, rows, cols) + bytes(pixels)


def _labels(labels, magic=0x801, n=None):
    return struct.pack(">II", magic, len(labels) if n is None else n) + bytes(labels)


@pytest.fixture
def fixture_pair(tmp_path):
    img, lbl = tmp_path / "img", tmp_path / "lbl"
    img.write_bytes(_images(2, 2, 2, [0, 255, 255, 0, 255, 255, 0, 0]))
    lbl.write_bytes(_labels([3, 7]))
    return img, lbl


def test_parse_hand_built_fixture(fixture_pair):
    ds = load_idx(*fixture_pair)
    assert ds.features.tolist() == [[0.0, 1.0, 1.0, 0.0], [1.0, 1.0, 0.0, 0.0]]
    assert ds.labels.tolist() == [3, 7]
    assert ds.num_classes == 10


def test_gzip_files_are_detected(tmp_path, fixture_pair):
    img, lbl = fixture_pair
    gimg, glbl = tmp_path / "img.gz", tmp_path / "lbl.gz"
    gimg.write_bytes(gzip.compress(img.read_bytes()))
    glbl.write_bytes(gzip.compress(lbl.read_bytes()))
    assert load_idx(gimg, glbl).features.tobytes() == load_idx(img, lbl).features.tobytes()


def test_bad_magic(tmp_path, fixture_pair):
    img, lbl = fixture_pair
    bad = tmp_path / "bad"
    bad.write_bytes(_images(2, 2, 2, [0] * 8, magic=0x801))
    with pytest.raises(BadMagicError):
        load_idx(bad, lbl)
    bad.write_bytes(_labels([1, 2], magic=0x803))
    with pytest.raises(BadMagicError):
        load_idx(img, bad)


def test_truncated_labels_is_count_mismatch(tmp_path, fixture_pair):
    img, _ = fixture_pair
    short = tmp_path / "short"
    short.write_bytes(_labels([3], n=2))
    with pytest.raises(CountMismatchError) as info:
        load_idx(img, short)
    assert isinstance(info.value, TruncatedFileError)


def test_truncated_images(tmp_path, fixture_pair):
    _, lbl = fixture_pair
    short = tmp_path / "short"
    short.write_bytes(_images(2, 2, 2, [0] * 5))
    with pytest.raises(TruncatedFileError):
        load_idx(short, lbl)


def test_count_mismatch_between_files(tmp_path, fixture_pair):
    img, _ = fixture_pair
    lbl = tmp_path / "three"
    lbl.write_bytes(_labels([1, 2, 3]))
    with pytest.raises(CountMismatchError) as info:
        load_idx(img, lbl)
    assert not isinstance(info.value, TruncatedFileError)


def test_idx_round_trip(tmp_path, rng):
    feats = rng.integers(0, 256, (5, 12)) / 255.0
    ds = Dataset(feats, rng.integers(0, 10, 5), 10)
    write_idx(ds, tmp_path / "i", tmp_path / "l", shape=(3, 4))
    back = load_idx(tmp_path / "i", tmp_path / "l")
    assert back.features.tobytes() == ds.features.tobytes()
    assert back.labels.tolist() == ds.labels.tolist()


def test_dataset_invariants():
    with pytest.raises(InvalidInputError):
        Dataset(np.zeros((2, 3)), np.array([0, 10]), 10)
    with pytest.raises(InvalidInputError):
        Dataset(np.array([[np.inf]]), np.array([0]), 2)
    with pytest.raises(InvalidInputError):
        Dataset(np.zeros((2, 3)), np.array([0]), 2)


def test_synthetic_means_are_separated():
    spec = SyntheticSpec(num_classes=6, dim=9, class_mean_separation=2.5)
    mu = class_means(spec)
    d = np.linalg.norm(mu[:, None] - mu[None], axis=2)
    assert np.all(d[~np.eye(6, dtype=bool)] >= 2.5 - 1e-12)


def test_synthetic_counts_determinism_and_range():
    spec = SyntheticSpec(num_classes=5, dim=8, samples_per_class=300, class_mean_separation=3.0, noise_std=0.5, seed=4)
    a, b = gen_synthetic(spec), gen_synthetic(spec)
    assert a.features.tobytes() == b.features.tobytes() and a.labels.tobytes() == b.labels.tobytes()
    assert np.bincount(a.labels).tolist() == [300] * 5
    assert np.all(np.abs(a.features) <= 3.0 + 6 * 0.5)


def _offline_accuracy(spec):
    train = gen_synthetic(spec)
    test = gen_synthetic(SyntheticSpec(**{**spec.__dict__, "seed": spec.seed + 100}))
    clf = LogisticRegression(max_iter=2000).fit(train.features, train.labels)
    return clf.score(test.features, test.labels)


def test_well_separated_classes_are_linearly_learnable():
    assert _offline_accuracy(SyntheticSpec(10, 20, 100, class_mean_separation=20.0, noise_std=1.0)) > 0.99


def test_noise_dominated_classes_are_near_chance():
    acc = _offline_accuracy(SyntheticSpec(10, 20, 100, class_mean_separation=0.1, noise_std=10.0))
    assert abs(acc - 0.1) < 0.05


def test_synthetic_spec_validation():
    with pytest.raises(InvalidInputError):
        SyntheticSpec(class_mean_separation=0.0)
    with pytest.raises(InvalidInputError):
        SyntheticSpec(num_classes=10, dim=5)
