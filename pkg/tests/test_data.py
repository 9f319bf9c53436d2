import gzip
import struct

import numpy as np
import pytest

from positnn import data as D
from positnn import kernels as K
from positnn.posit import PositConfig
from positnn.tensor import FLOAT32


def _write_idx(tmp_path, prefix, images, labels, gz=False):
    img = struct.pack(">IIII", 0x803, len(images), 28, 28) + images.astype(np.uint8).tobytes()
    lab = struct.pack(">II", 0x801, len(labels)) + labels.astype(np.uint8).tobytes()
    for name, raw in [(f"{prefix}-images-idx3-ubyte", img), (f"{prefix}-labels-idx1-ubyte", lab)]:
        if gz:
            with gzip.open(tmp_path / (name + ".gz"), "wb") as f:
                f.write(raw)
        else:
            (tmp_path / name).write_bytes(raw)


@pytest.mark.parametrize("gz", [False, True])
def test_idx_round_trip(tmp_path, gz):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (5, 28, 28))
    labels = np.array([0, 3, 9, 1, 1])
    _write_idx(tmp_path, "train", images, labels, gz)
    ds = D.load_idx_dir(tmp_path, "train")
    assert ds.images.shape == (5, 1, 28, 28)
    assert np.array_equal(ds.images[:, 0] * 255, images)
    assert ds.labels.tolist() == labels.tolist()


def test_idx_errors(tmp_path):
    _write_idx(tmp_path, "t10k", np.zeros((2, 28, 28)), np.array([1, 2]))
    img = tmp_path / "t10k-images-idx3-ubyte"
    raw = img.read_bytes()
    img.write_bytes(raw[:-5])
    with pytest.raises(D.DataError, match="expected"):
        D.load_idx_dir(tmp_path, "test")
    img.write_bytes(struct.pack(">I", 0x999) + raw[4:])
    with pytest.raises(D.DataError, match="magic"):
        D.load_idx_dir(tmp_path, "test")
    with pytest.raises(D.DataError, match="missing"):
        D.load_idx_dir(tmp_path / "nowhere", "test")
    (tmp_path / "t10k-labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x801, 3) + b"\x01\x02\x03")
    img.write_bytes(raw)
    with pytest.raises(D.DataError, match="mismatch"):
        D.load_idx_dir(tmp_path, "test")


def test_cifar_reader(tmp_path):
    rng = np.random.default_rng(1)
    recs = []
    for label in (3, 7):
        pix = rng.integers(0, 256, 3072, dtype=np.uint8)
        recs.append(bytes([label]) + pix.tobytes())
    (tmp_path / "test_batch.bin").write_bytes(b"".join(recs))
    ds = D.load_cifar10(tmp_path, "test")
    assert ds.images.shape == (2, 3, 32, 32) and ds.labels.tolist() == [3, 7]
    # red plane first, row-major
    assert ds.images[0, 0, 0, 1] * 255 == recs[0][2]
    assert ds.images[0, 1, 0, 0] * 255 == recs[0][1 + 1024]
    (tmp_path / "test_batch.bin").write_bytes(b"".join(recs)[:-1])
    with pytest.raises(D.DataError):
        D.load_cifar10(tmp_path, "test")


def test_dataset_validation():
    with pytest.raises(D.DataError):
        D.Dataset(np.zeros((2, 1, 2, 2)), np.array([0]))
    with pytest.raises(D.DataError):
        D.Dataset(np.zeros((1, 1, 2, 2)), np.array([10]))


def test_normalize_and_stats():
    x = np.random.default_rng(2).uniform(size=(50, 3, 4, 4))
    ds = D.Dataset(x, np.zeros(50, dtype=np.int64))
    mean, std = D.channel_stats(ds)
    n = D.normalize(ds, mean, std)
    assert np.allclose(n.images.mean(axis=(0, 2, 3)), 0)
    assert np.allclose(n.images.std(axis=(0, 2, 3)), 1)
    with pytest.raises(D.DataError):
        D.normalize(ds, mean, [0, 1, 1])


def test_fisher_yates_is_seeded_permutation():
    a = D.fisher_yates(100, np.random.default_rng(5))
    b = D.fisher_yates(100, np.random.default_rng(5))
    assert np.array_equal(a, b) and sorted(a) == list(range(100))
    assert not np.array_equal(a, D.fisher_yates(100, np.random.default_rng(6)))


def test_batches_quantize_and_cover_everything():
    x = np.random.default_rng(3).normal(size=(10, 1, 2, 2))
    ds = D.Dataset(x, np.arange(10) % 10)
    cfg = PositConfig(8, 2)
    seen = []
    before = K.float_boundary_calls
    for xb, yb in D.batches(ds, 4, seed=1, kind=cfg, epoch=2):
        assert xb.dtype == np.uint64
        seen += yb.tolist()
    assert sorted(seen) == list(range(10))
    assert K.float_boundary_calls - before == 3
    ordered = [yb.tolist() for _, yb in D.batches(ds, 4, None, FLOAT32)]
    assert ordered == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]
    e1 = [yb.tolist() for _, yb in D.batches(ds, 10, 1, FLOAT32, epoch=1)]
    e2 = [yb.tolist() for _, yb in D.batches(ds, 10, 1, FLOAT32, epoch=2)]
    assert e1 != e2
    with pytest.raises(ValueError):
        next(D.batches(ds, 0, 1, FLOAT32))


def test_subset():
    ds = D.Dataset(np.zeros((10, 1, 1, 1)), np.zeros(10, dtype=np.int64))
    assert len(ds.subset(3)) == 3 and len(ds.subset(None)) == 10 and len(ds.subset(50)) == 10
