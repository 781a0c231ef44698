import numpy as np
import pytest

from pairssl import data as D
from pairssl.errors import ConfigError, DataFormatError


def test_toy_counts():
    ds = D.generate_toy_shapes(2, 10, 16, seed=0)
    assert len(ds) == 20
    assert np.bincount(ds.labels).tolist() == [10, 10]
    x = ds.images()
    assert x.shape == (20, 1, 16, 16) and x.min() >= 0 and x.max() <= 1


def test_toy_deterministic_and_seeded():
    a = D.generate_toy_shapes(4, 5, 16, seed=3)
    b = D.generate_toy_shapes(4, 5, 16, seed=3)
    c = D.generate_toy_shapes(4, 5, 16, seed=4)
    assert np.array_equal(a.store, b.store) and np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.store, c.store)


@pytest.mark.parametrize("L,size", [(1, 32), (9, 32), (4, 8)])
def test_toy_bad_args(L, size):
    with pytest.raises(ConfigError):
        D.generate_toy_shapes(L, 5, size)


def _fake_cifar(n, seed=0):
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.integers(0, 256, (n, 3, 32, 32), dtype=np.uint8), rng.integers(0, 10, n)


def test_cifar_round_trip():
    x, y = _fake_cifar(5)
    raw = D.encode_cifar10_records(x, y)
    assert len(raw) == 5 * 3073
    x2, y2 = D.decode_cifar10_records(raw)
    assert np.array_equal(x2, x) and np.array_equal(y2, y)
    assert D.encode_cifar10_records(x2[:1], y2[:1]) == raw[:3073]


def test_cifar_bad_length():
    with pytest.raises(DataFormatError):
        D.decode_cifar10_records(b"\x00" * 3072)


def test_cifar_directory(tmp_path):
    for i, name in enumerate(D.CIFAR_TRAIN_FILES + D.CIFAR_TEST_FILES):
        D.write_cifar10_binary(tmp_path / name, *_fake_cifar(3, i))
    train = D.load_cifar10_binary(tmp_path, "train")
    assert len(train) == 15 and train.image_shape == (3, 32, 32)
    x = train.images()
    assert x.dtype == np.float64 and x.max() <= 1.0
    assert len(D.load_cifar10_binary(tmp_path, "test")) == 3


def test_cifar_missing_file_named(tmp_path):
    D.write_cifar10_binary(tmp_path / "data_batch_1.bin", *_fake_cifar(1))
    with pytest.raises(FileNotFoundError, match="data_batch_2.bin"):
        D.load_cifar10_binary(tmp_path)


def test_cifar_truncated_file_named(tmp_path):
    for name in D.CIFAR_TRAIN_FILES:
        D.write_cifar10_binary(tmp_path / name, *_fake_cifar(2))
    (tmp_path / "data_batch_3.bin").write_bytes(b"\x01" * 100)
    with pytest.raises(DataFormatError, match="data_batch_3.bin"):
        D.load_cifar10_binary(tmp_path)


def test_split_two_classes():
    ds = D.generate_toy_shapes(2, 30, 16, seed=1)
    lab, unl, val = D.stratified_split(ds, D.SplitSpec(5, 10, seed=0))
    assert len(lab) == 10 and np.bincount(lab.labels()).tolist() == [5, 5]
    assert np.bincount(val.labels()).tolist() == [5, 5]
    assert len(unl) == 40
    sets = [set(lab.indices), set(unl.indices), set(val.indices)]
    assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
    assert set.union(*sets) == set(range(60))


def test_split_deterministic_and_sized():
    ds = D.generate_toy_shapes(4, 50, 16, seed=2)
    spec = D.SplitSpec(3, 21, seed=9, unlabeled_size=100)
    a, b = D.stratified_split(ds, spec), D.stratified_split(ds, spec)
    for va, vb in zip(a, b):
        assert np.array_equal(va.indices, vb.indices)
    assert len(a[1]) == 100 and len(a[2]) == 21


def test_unlabeled_view_hides_labels():
    ds = D.generate_toy_shapes(2, 10, 16)
    _, unl, _ = D.stratified_split(ds, D.SplitSpec(2, 2))
    assert not hasattr(unl, "labels")
    assert np.array_equal(unl.diagnostic_truth(np.arange(3)), ds.labels[unl.indices[:3]])


@pytest.mark.parametrize("spec", [D.SplitSpec(11, 0), D.SplitSpec(5, 15), D.SplitSpec(0, 2), D.SplitSpec(2, 2, 0, 99)])
def test_split_infeasible(spec):
    ds = D.generate_toy_shapes(2, 10, 16)
    with pytest.raises(ConfigError):
        D.stratified_split(ds, spec)
