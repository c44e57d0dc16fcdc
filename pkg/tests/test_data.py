import struct

import numpy as np
import pytest

from fedarena import data
from fedarena.errors import BadMagic, DegeneratePlan, DimensionMismatch, InsufficientData, TruncatedFile
from fedarena.model import ModelSpec, SGDConfig, evaluate, init_model, local_train


def _labelled(n, classes=10):
    return data.DataShard(np.arange(n, dtype=np.float64)[:, None], np.arange(n) % classes, np.arange(n))


# ------------------------------------------------------------------- IDX

def test_idx_round_trip(tmp_path):
    arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    data.write_idx(tmp_path / "x", arr)
    assert data.read_idx(str(tmp_path / "x"), data.IDX_IMAGES_MAGIC).tolist() == arr.tolist()


def test_idx_magic_constants(tmp_path):
    data.write_idx(tmp_path / "lab", np.zeros(3))
    data.write_idx(tmp_path / "img", np.zeros((1, 2, 2)))
    assert struct.unpack(">I", (tmp_path / "lab").read_bytes()[:4])[0] == 0x00000801
    assert struct.unpack(">I", (tmp_path / "img").read_bytes()[:4])[0] == 0x00000803


def test_idx_bad_magic(tmp_path):
    data.write_idx(tmp_path / "lab", np.zeros(3))
    with pytest.raises(BadMagic):
        data.read_idx(str(tmp_path / "lab"), data.IDX_IMAGES_MAGIC)


@pytest.mark.parametrize("keep", [2, 9, 20])
def test_idx_truncated(tmp_path, keep):
    data.write_idx(tmp_path / "img", np.ones((2, 3, 3)))
    raw = (tmp_path / "img").read_bytes()
    (tmp_path / "cut").write_bytes(raw[:keep])
    with pytest.raises(TruncatedFile):
        data.read_idx(str(tmp_path / "cut"), data.IDX_IMAGES_MAGIC)


def test_load_mnist_fixture_scales_pixels(tiny_mnist_dir):
    data.write_idx(tiny_mnist_dir / "t10k-images-idx3-ubyte", np.full((10, 2, 3), 255))
    train, test = data.load_mnist(str(tiny_mnist_dir))
    assert (len(train), len(test)) == (30, 10)
    assert train.features.shape == (30, 6)
    assert test.features.max() == 1.0 and train.features.max() <= 1.0


def test_load_mnist_count_mismatch(tiny_mnist_dir):
    data.write_idx(tiny_mnist_dir / "train-labels-idx1-ubyte", np.zeros(29))
    with pytest.raises(DimensionMismatch):
        data.load_mnist(str(tiny_mnist_dir))


def test_real_mnist_sizes(mnist_dir):
    train, test = data.load_mnist(mnist_dir)
    assert (len(train), len(test)) == (60000, 10000)
    assert train.features.shape[1] == 784
    assert set(np.unique(train.labels)) == set(range(10))


# -------------------------------------------------------------- synthetic

def test_synth_is_deterministic():
    a, b = data.synth_classification(3, 4, 50, 9), data.synth_classification(3, 4, 50, 9)
    assert a[0].features.tobytes() == b[0].features.tobytes()
    assert a[1].labels.tobytes() == b[1].labels.tobytes()


def test_synth_split_sizes():
    train, test = data.synth_classification(2, 3, 10, 0)
    assert (len(train), len(test)) == (8, 2)


def test_synth_blobs_are_learnable():
    # pinned empirical oracle: 10 blobs on a radius-3 sphere in 20 dims
    train, test = data.synth_classification(10, 20, 5000, 0)
    m = init_model(ModelSpec(20, 0, 10), 0)
    cfg = SGDConfig(learning_rate=0.05, batch_size=32)
    for epoch in range(50):
        m = m + local_train(m, train, cfg, 0.05, epoch)
    assert evaluate(m, test).accuracy > 0.85


def test_shard_file_round_trip(tmp_path, blobs):
    train, _ = blobs
    path = tmp_path / "s.bin"
    data.write_shard(path, train, 4)
    back, classes = data.read_shard(path)
    assert classes == 4
    np.testing.assert_allclose(back.features, train.features.astype(np.float32))
    assert back.labels.tolist() == train.labels.tolist()


# ------------------------------------------------------------------ splits

def test_uniform_sizes():
    shards = data.split_uniform(_labelled(5000), data.SplitPlan("uniform", 5, 3000))
    assert [len(s) for s in shards] == [600] * 5
    shards = data.split_uniform(_labelled(10), data.SplitPlan("uniform", 3, 10))
    assert sorted(len(s) for s in shards) == [3, 3, 4]


def test_uniform_disjoint_and_seeded():
    train = _labelled(1000)
    shards = data.split_uniform(train, data.SplitPlan("uniform", 4, 900, seed=2))
    idx = np.concatenate([s.source_index for s in shards])
    assert idx.size == np.unique(idx).size == 900
    again = data.split_uniform(train, data.SplitPlan("uniform", 4, 900, seed=2))
    assert all(a.source_index.tolist() == b.source_index.tolist() for a, b in zip(shards, again))


def test_uniform_insufficient():
    with pytest.raises(InsufficientData):
        data.split_uniform(_labelled(10), data.SplitPlan("uniform", 2, 11))


@pytest.mark.parametrize("total,n", [(3000, 5), (6000, 10), (12000, 20)])
def test_powerlaw_sizes(total, n):
    sizes = data.powerlaw_sizes(total, n)
    assert sizes.sum() == total
    assert np.all(np.diff(sizes) > 0)
    assert sizes.mean() == total / n
    assert sizes[-1] / sizes[0] == pytest.approx(5.0, rel=0.05)


def test_powerlaw_split_disjoint():
    shards = data.split_powerlaw(_labelled(7000), data.SplitPlan("powerlaw", 10, 6000))
    idx = np.concatenate([s.source_index for s in shards])
    assert idx.size == np.unique(idx).size == 6000


def test_powerlaw_degenerate_plans():
    with pytest.raises(DegeneratePlan):
        data.split_powerlaw(_labelled(100), data.SplitPlan("powerlaw", 10, 20))
    with pytest.raises(DegeneratePlan):
        data.split_powerlaw(_labelled(1000), data.SplitPlan("powerlaw", 5, 100), min_size=16)


def test_classimbalance_counts():
    assert data.classimbalance_counts(10, 5).tolist() == [1, 3, 5, 7, 10]
    assert data.classimbalance_counts(10, 10).tolist() == list(range(1, 11))


def test_classimbalance_split():
    train = _labelled(20000)
    shards = data.split_classimbalance(train, data.SplitPlan("classimbalance", 5, 3000))
    assert [len(s) for s in shards] == [600] * 5
    assert [s.num_classes_present for s in shards] == [1, 3, 5, 7, 10]
    assert set(shards[0].labels.tolist()) == {0}
    idx = np.concatenate([s.source_index for s in shards])
    assert idx.size == np.unique(idx).size


def test_classimbalance_needs_even_division():
    with pytest.raises(DegeneratePlan):
        data.split_classimbalance(_labelled(500), data.SplitPlan("classimbalance", 3, 100))


def test_classimbalance_class_exhausted():
    with pytest.raises(InsufficientData):
        data.split_classimbalance(_labelled(100), data.SplitPlan("classimbalance", 5, 100))


def test_shard_file_truncated(tmp_path, blobs):
    train, _ = blobs
    path = tmp_path / "s.bin"
    data.write_shard(path, train, 4)
    path.write_bytes(path.read_bytes()[:-1])
    with pytest.raises(TruncatedFile):
        data.read_shard(path)


def test_remaining_indices():
    train = _labelled(20)
    shards = data.split_uniform(train, data.SplitPlan("uniform", 2, 10))
    rest = data.remaining_indices(train, shards)
    assert rest.size == 10
    assert not set(rest.tolist()) & set(np.concatenate([s.source_index for s in shards]).tolist())
