import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tansens.data import (DataFormatError, Dataset, dataset_to_bytes, idx_from_pixel_csv, load_cifar10_bin,
                          load_mnist_idx, normalize, one_vs_rest, subsample, synth_blobs, write_cifar10_bin,
                          write_mnist_idx)
from tansens.grad_engine import SquaredLoss, empirical_loss_gradient
from tansens.network import Network, forward_batch


def _idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x803, *images.shape) + images.tobytes())


def _idx_labels(path, labels, magic=0x801):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", magic, labels.size) + labels.tobytes())


def test_idx_single_2x2_image(tmp_path):
    _idx_images(tmp_path / "img", [[[0, 255], [0, 255]]])
    _idx_labels(tmp_path / "lab", [4])
    d = load_mnist_idx(tmp_path / "img", tmp_path / "lab")
    assert d.inputs.tolist() == [[0.0, 1.0, 0.0, 1.0]]
    assert d.labels.tolist() == [4]


def test_idx_bad_magic(tmp_path):
    _idx_images(tmp_path / "img", [[[0, 255], [0, 255]]])
    with pytest.raises(DataFormatError, match="bad magic"):
        load_mnist_idx(tmp_path / "img", tmp_path / "img")


def test_idx_empty_payload(tmp_path):
    _idx_images(tmp_path / "img", np.zeros((0, 28, 28)))
    _idx_labels(tmp_path / "lab", [])
    d = load_mnist_idx(tmp_path / "img", tmp_path / "lab")
    assert len(d) == 0 and d.n_in == 784


def test_idx_truncated_and_trailing(tmp_path):
    _idx_images(tmp_path / "img", np.zeros((2, 2, 2)))
    raw = (tmp_path / "img").read_bytes()
    (tmp_path / "short").write_bytes(raw[:-1])
    (tmp_path / "long").write_bytes(raw + b"\0")
    _idx_labels(tmp_path / "lab", [1, 2])
    with pytest.raises(DataFormatError, match="truncated"):
        load_mnist_idx(tmp_path / "short", tmp_path / "lab")
    with pytest.raises(DataFormatError, match="trailing"):
        load_mnist_idx(tmp_path / "long", tmp_path / "lab")


def test_idx_count_mismatch(tmp_path):
    _idx_images(tmp_path / "img", np.zeros((2, 2, 2)))
    _idx_labels(tmp_path / "lab", [1])
    with pytest.raises(DataFormatError, match="count mismatch"):
        load_mnist_idx(tmp_path / "img", tmp_path / "lab")


def test_idx_gzip(tmp_path):
    _idx_images(tmp_path / "img", [[[0, 255], [255, 0]]])
    _idx_labels(tmp_path / "lab", [9])
    for name in ("img", "lab"):
        (tmp_path / f"{name}.gz").write_bytes(gzip.compress((tmp_path / name).read_bytes()))
    d = load_mnist_idx(tmp_path / "img.gz", tmp_path / "lab.gz")
    assert d.inputs.tolist() == [[0.0, 1.0, 1.0, 0.0]]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_idx_roundtrip(tmp_path_factory, n, rows, cols, seed):
    r = np.random.default_rng(seed)
    images = r.integers(0, 256, size=(n, rows, cols), dtype=np.uint8)
    labels = r.integers(0, 10, size=n)
    d = tmp_path_factory.mktemp("idx")
    write_mnist_idx(d / "i", d / "l", images, labels)
    data = load_mnist_idx(d / "i", d / "l")
    assert np.array_equal(dataset_to_bytes(data).reshape(images.shape), images)
    assert np.array_equal(data.labels, labels)


def test_cifar_single_record(tmp_path):
    (tmp_path / "b.bin").write_bytes(bytes([7]) + bytes([255]) * 3072)
    d = load_cifar10_bin(tmp_path / "b.bin")
    assert len(d) == 1 and d.labels.tolist() == [7]
    assert np.all(d.inputs == 1.0) and d.n_in == 3072


def test_cifar_truncated(tmp_path):
    (tmp_path / "b.bin").write_bytes(bytes(3072))
    with pytest.raises(DataFormatError, match="truncated record"):
        load_cifar10_bin(tmp_path / "b.bin")


def test_cifar_bad_label(tmp_path):
    (tmp_path / "b.bin").write_bytes(bytes([10]) + bytes(3072))
    with pytest.raises(DataFormatError, match="label"):
        load_cifar10_bin(tmp_path / "b.bin")


def test_cifar_two_records_in_order_and_roundtrip(tmp_path):
    r = np.random.default_rng(0)
    pix = r.integers(0, 256, size=(2, 3072), dtype=np.uint8)
    write_cifar10_bin(tmp_path / "b.bin", pix, [3, 8])
    d = load_cifar10_bin([tmp_path / "b.bin"])
    assert d.labels.tolist() == [3, 8]
    assert np.array_equal(dataset_to_bytes(d), pix)
    assert (tmp_path / "b.bin").stat().st_size == 2 * 3073


def test_loaders_are_deterministic(tmp_path):
    write_cifar10_bin(tmp_path / "b.bin", np.arange(3072) % 256, [1])
    a, b = load_cifar10_bin(tmp_path / "b.bin"), load_cifar10_bin(tmp_path / "b.bin")
    assert a.inputs.tobytes() == b.inputs.tobytes()


def test_one_vs_rest_examples():
    d = Dataset(np.zeros((3, 1)), [3, 1, 3])
    assert one_vs_rest(d, 3).labels.tolist() == [1, -1, 1]
    assert one_vs_rest(d, 5).labels.tolist() == [-1, -1, -1]
    with pytest.raises(ValueError):
        one_vs_rest(one_vs_rest(d, 3), 3)
    with pytest.raises(ValueError):
        one_vs_rest(d, 10)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=40), st.integers(0, 9))
def test_one_vs_rest_counts(labels, c):
    y = one_vs_rest(Dataset(np.zeros((len(labels), 1)), labels), c).labels
    assert np.sum(y == 1) + np.sum(y == -1) == len(labels)
    assert np.sum(y == 1) == labels.count(c)


def test_targets_views():
    d = Dataset(np.zeros((2, 1)), [2, 0])
    assert d.targets(3).tolist() == [[-1, -1, 1], [1, -1, -1]]
    s = synth_blobs(2, 2, 1.0)
    assert s.targets(1).shape == (4, 1)
    with pytest.raises(ValueError):
        s.targets(2)


def test_blobs_reproducible_and_balanced():
    a, b = synth_blobs(50, 3, 2.0, seed=4), synth_blobs(50, 3, 2.0, seed=4)
    assert a.inputs.tobytes() == b.inputs.tobytes()
    assert np.sum(a.labels == 1) == 50 and a.signed
    # zero separation: both classes come from the same distribution
    z = synth_blobs(2000, 2, 0.0, seed=1)
    m_pos, m_neg = z.inputs[z.labels == 1].mean(0), z.inputs[z.labels == -1].mean(0)
    assert np.all(np.abs(m_pos - m_neg) < 0.15)


def test_separated_blobs_linearly_fit_by_gd():
    data = synth_blobs(50, 2, 10.0, seed=0)
    net = Network((2, 1), [np.zeros((1, 2))])
    for _ in range(200):
        _, g, _ = empirical_loss_gradient(net, data.inputs, data.targets(1), SquaredLoss())
        net = Network((2, 1), [net.weights[0] - 0.01 * g.reshape(1, 2)])
    pred = np.sign(forward_batch(net, data.inputs)[0][:, 0])
    assert np.mean(pred == data.labels) >= 0.99


def test_subsample_rules():
    d = Dataset(np.arange(200, dtype=float)[:, None], np.repeat(np.arange(10), 20))
    s = subsample(d, 100, seed=1)
    assert np.bincount(s.labels).tolist() == [10] * 10
    full = subsample(d, 200, seed=2, stratified=False)
    assert sorted(full.inputs[:, 0].tolist()) == list(range(200))
    assert subsample(d, 50, 3).inputs.tobytes() == subsample(d, 50, 3).inputs.tobytes()
    with pytest.raises(ValueError):
        subsample(d, 201)


def test_normalize_modes():
    r = np.random.default_rng(0)
    d = Dataset(r.uniform(0, 5, size=(30, 4)), np.zeros(30))
    g = normalize(d, "global-unit-sup-norm")
    assert abs(g.kx - 1.0) <= 1e-12
    assert g.normalization["scale"] == pytest.approx(d.kx)
    # ratios between inputs survive a global rescale
    np.testing.assert_allclose(g.inputs[1] / g.inputs[0], d.inputs[1] / d.inputs[0], rtol=1e-12)
    p = normalize(d, "per-pixel-01")
    assert p.inputs.min() == 0.0 and p.inputs.max() == 1.0
    assert normalize(d, "none") is d
    with pytest.raises(ValueError):
        normalize(d, "zscore")


def test_normalize_uses_reference_statistics():
    ref = Dataset(np.array([[3.0, 4.0]]), [0])
    other = Dataset(np.array([[6.0, 8.0]]), [0])
    assert normalize(other, reference=ref).inputs.tolist() == [[1.2, 1.6]]


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros(3), [0, 0, 0])
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), [0, 0])


def test_pixel_csv_split(tmp_path):
    r = np.random.default_rng(0)
    rows = np.hstack([r.integers(0, 256, size=(40, 4)), np.repeat(np.arange(4), 10)[:, None]])
    csv = tmp_path / "p.csv"
    np.savetxt(csv, rows, fmt="%d", delimiter=",")
    paths = idx_from_pixel_csv(str(csv), str(tmp_path / "out"), test_per_class=3, side=2)
    train = load_mnist_idx(paths["train_images"], paths["train_labels"])
    test = load_mnist_idx(paths["test_images"], paths["test_labels"])
    assert len(test) == 12 and len(train) == 28
    assert np.bincount(test.labels).tolist() == [3, 3, 3, 3]
    both = np.vstack([dataset_to_bytes(train), dataset_to_bytes(test)])
    assert sorted(map(tuple, both)) == sorted(map(tuple, rows[:, :4].astype(np.uint8)))
