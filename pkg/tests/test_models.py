"""Model gradients against finite differences; data plumbing against recounts."""

import struct

import numpy as np
import pytest

from sparsevote.models import (
    Dataset,
    IdxFormatError,
    WorkerShard,
    load_idx_dataset,
    logistic_accuracy,
    logistic_grad,
    logistic_loss,
    mlp_accuracy,
    mlp_grad,
    mlp_loss,
    mlp_param_count,
    partition_dataset,
    quadratic_grad,
    quadratic_loss,
    sample_minibatch,
    synth_classification,
)


def central_difference(loss_fn, x, step=1e-4):
    grad = np.empty_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (loss_fn(hi) - loss_fn(lo)) / (2 * step)
    return grad


def small_batch(rng, n, d, c):
    feats = rng.normal(size=(n, d))
    labels = rng.integers(0, c, size=n)
    return feats, labels.astype(np.int64)


class TestQuadratic:
    def test_noiseless_gradient(self):
        l_diag = np.array([1.0, 2.0, 4.0])
        x = np.array([1.0, -1.0, 0.5])
        rng = np.random.default_rng(0)
        g = quadratic_grad(x, l_diag, 0.0, rng)
        assert np.array_equal(g, l_diag * x)

    def test_loss_value(self):
        l_diag = np.array([2.0, 4.0])
        x = np.array([1.0, 1.0])
        assert quadratic_loss(x, l_diag) == pytest.approx(3.0)

    def test_loss_gradient_consistent(self):
        rng = np.random.default_rng(3)
        l_diag = rng.uniform(0.5, 4.0, size=6)
        x = rng.normal(size=6)
        fd = central_difference(lambda z: quadratic_loss(z, l_diag), x)
        g = quadratic_grad(x, l_diag, 0.0, np.random.default_rng(0))
        assert np.allclose(g, fd, atol=1e-8)

    def test_noise_is_unbiased(self):
        rng = np.random.default_rng(7)
        l_diag = np.ones(4)
        x = np.zeros(4)
        draws = np.stack([quadratic_grad(x, l_diag, 2.0, rng) for _ in range(100_000)])
        mean = draws.mean(axis=0)
        # 3 sigma band for the empirical mean of N(0, 4) over 1e5 draws
        assert np.all(np.abs(mean) < 3 * 2.0 / np.sqrt(100_000))
        assert draws.std() == pytest.approx(2.0, rel=0.02)


class TestLogistic:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        d, c = 4, 3
        feats, labels = small_batch(rng, 6, d, c)
        x = rng.normal(scale=0.5, size=c * (d + 1))
        fd = central_difference(lambda z: logistic_loss(z, feats, labels), x)
        g = logistic_grad(x, feats, labels)
        assert np.allclose(g, fd, rtol=1e-6, atol=1e-8)

    def test_single_sample_closed_form(self):
        # At zero weights probs are uniform: grad_W = (1/C - onehot) x^T
        d, c = 3, 4
        feats = np.array([[1.0, 2.0, -1.0]])
        labels = np.array([2])
        x = np.zeros(c * (d + 1))
        g = logistic_grad(x, feats, labels)
        w_grad = g[: c * d].reshape(c, d)
        b_grad = g[c * d:]
        resid = np.full(c, 1.0 / c)
        resid[2] -= 1.0
        assert np.allclose(w_grad, np.outer(resid, feats[0]))
        assert np.allclose(b_grad, resid)

    def test_balanced_batch_zero_bias_grad(self):
        # one sample per class at zero weights: bias residuals cancel
        d, c = 2, 3
        feats = np.zeros((c, d))
        labels = np.arange(c)
        g = logistic_grad(np.zeros(c * (d + 1)), feats, labels)
        assert np.allclose(g[c * d:], 0.0, atol=1e-15)

    def test_accuracy(self):
        d, c = 2, 2
        feats = np.array([[1.0, 0.0], [-1.0, 0.0]])
        labels = np.array([0, 1])
        # weights that score class 0 by +x0, class 1 by -x0
        x = np.array([1.0, 0.0, -1.0, 0.0, 0.0, 0.0])
        assert logistic_accuracy(x, feats, labels) == 1.0

    def test_loss_at_uniform(self):
        d, c = 3, 5
        feats = np.ones((4, d))
        labels = np.zeros(4, dtype=np.int64)
        assert logistic_loss(np.zeros(c * (d + 1)), feats, labels) == pytest.approx(np.log(c))


class TestMlp:
    def test_param_count(self):
        # 4 -> 8 -> 3: (4*8 + 8) + (8*3 + 3)
        assert mlp_param_count([4, 8, 3]) == 40 + 27

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        arch = [3, 5, 4]
        feats, labels = small_batch(rng, 5, 3, 4)
        x = rng.normal(scale=0.4, size=mlp_param_count(arch))
        fd = central_difference(lambda z: mlp_loss(z, arch, feats, labels), x)
        g = mlp_grad(x, arch, feats, labels)
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-7)

    def test_two_hidden_layers_finite_differences(self):
        rng = np.random.default_rng(17)
        arch = [2, 4, 3, 3]
        feats, labels = small_batch(rng, 4, 2, 3)
        x = rng.normal(scale=0.4, size=mlp_param_count(arch))
        fd = central_difference(lambda z: mlp_loss(z, arch, feats, labels), x)
        g = mlp_grad(x, arch, feats, labels)
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-7)

    def test_zero_weights_head_bias_grad(self):
        # all-zero params: softmax uniform, head bias grad = mean(uniform - onehot)
        arch = [2, 3, 4]
        feats = np.array([[1.0, -1.0], [0.5, 2.0]])
        labels = np.array([0, 3])
        g = mlp_grad(np.zeros(mlp_param_count(arch)), arch, feats, labels)
        head_bias = g[-4:]
        expected = np.full(4, 0.25)
        expected[0] -= 0.5 * 1.0
        expected[3] -= 0.5 * 1.0
        assert np.allclose(head_bias, expected, atol=1e-15)

    def test_accuracy_and_loss_finite(self):
        rng = np.random.default_rng(19)
        arch = [3, 4, 2]
        feats, labels = small_batch(rng, 10, 3, 2)
        x = rng.normal(scale=0.3, size=mlp_param_count(arch))
        acc = mlp_accuracy(x, arch, feats, labels)
        assert 0.0 <= acc <= 1.0
        assert np.isfinite(mlp_loss(x, arch, feats, labels))


def toy_dataset(n=20, d=3, c=4, seed=0):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n, d))
    labels = np.arange(n, dtype=np.int64) % c
    return Dataset(feats, labels, c)


class TestPartition:
    def test_iid_sizes_and_cover(self):
        ds = toy_dataset(n=23)
        shards = partition_dataset(ds, 5, "IID", np.random.default_rng(0))
        sizes = [s.indices.size for s in shards]
        assert max(sizes) - min(sizes) <= 1
        merged = np.concatenate([s.indices for s in shards])
        assert np.array_equal(np.sort(merged), np.arange(23))
        assert [s.worker_id for s in shards] == list(range(5))

    def test_noniid_single_class_per_worker(self):
        ds = toy_dataset(n=40, c=4)
        shards = partition_dataset(ds, 4, "NONIID", np.random.default_rng(0))
        for shard in shards:
            assert np.unique(ds.labels[shard.indices]).size == 1

    def test_noniid_fewer_workers_than_classes(self):
        ds = toy_dataset(n=40, c=4)
        shards = partition_dataset(ds, 2, "NONIID", np.random.default_rng(0))
        merged = np.concatenate([s.indices for s in shards])
        assert np.array_equal(np.sort(merged), np.arange(40))
        # each worker holds whole classes only
        for shard in shards:
            for cls in np.unique(ds.labels[shard.indices]):
                assert np.sum(ds.labels[shard.indices] == cls) == np.sum(ds.labels == cls)

    def test_noniid_more_workers_than_classes(self):
        ds = toy_dataset(n=60, c=3)
        shards = partition_dataset(ds, 6, "NONIID", np.random.default_rng(0))
        merged = np.concatenate([s.indices for s in shards])
        assert np.array_equal(np.sort(merged), np.arange(60))
        for shard in shards:
            assert shard.indices.size > 0
            assert np.unique(ds.labels[shard.indices]).size == 1

    def test_errors(self):
        ds = toy_dataset(n=10)
        with pytest.raises(ValueError):
            partition_dataset(ds, 0, "IID", np.random.default_rng(0))
        with pytest.raises(ValueError):
            partition_dataset(ds, 11, "IID", np.random.default_rng(0))
        with pytest.raises(ValueError):
            partition_dataset(ds, 2, "SORTED", np.random.default_rng(0))


class TestMinibatch:
    def test_draws_from_shard_only(self):
        ds = toy_dataset(n=30)
        shard = WorkerShard(0, np.arange(10, 20))
        feats, labels = sample_minibatch(ds, shard, 8, np.random.default_rng(1))
        assert feats.shape == (8, 3)
        for row, lab in zip(feats, labels):
            matches = np.where((ds.features == row).all(axis=1))[0]
            assert np.any((matches >= 10) & (matches < 20))
            assert lab in ds.labels[10:20]

    def test_uniform_over_shard(self):
        ds = toy_dataset(n=8, d=1)
        shard = WorkerShard(0, np.arange(8))
        rng = np.random.default_rng(5)
        counts = np.zeros(8)
        trials = 40_000
        for _ in range(trials // 100):
            feats, _ = sample_minibatch(ds, shard, 100, rng)
            for row in feats:
                idx = np.where(ds.features[:, 0] == row[0])[0][0]
                counts[idx] += 1
        expected = trials / 8
        assert np.all(np.abs(counts - expected) < 4 * np.sqrt(expected))


def write_idx_pair(tmp_path, images, labels):
    img_path = tmp_path / "img.idx"
    lab_path = tmp_path / "lab.idx"
    n, rows, cols = images.shape
    with open(img_path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        fh.write(images.astype(np.uint8).tobytes())
    with open(lab_path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, n))
        fh.write(labels.astype(np.uint8).tobytes())
    return img_path, lab_path


class TestIdxLoader:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        images = rng.integers(0, 256, size=(5, 4, 3), dtype=np.uint8)
        labels = np.array([0, 1, 2, 1, 0], dtype=np.uint8)
        img_path, lab_path = write_idx_pair(tmp_path, images, labels)
        ds = load_idx_dataset(img_path, lab_path)
        assert ds.features.shape == (5, 12)
        assert np.allclose(ds.features, images.reshape(5, 12) / 255.0)
        assert np.array_equal(ds.labels, labels)
        assert ds.num_classes == 3

    def test_bad_image_magic(self, tmp_path):
        img_path, lab_path = write_idx_pair(
            tmp_path, np.zeros((1, 2, 2), dtype=np.uint8), np.zeros(1, dtype=np.uint8)
        )
        raw = bytearray(img_path.read_bytes())
        raw[3] = 0x99
        img_path.write_bytes(bytes(raw))
        with pytest.raises(IdxFormatError, match="magic"):
            load_idx_dataset(img_path, lab_path)

    def test_truncated_pixels(self, tmp_path):
        img_path, lab_path = write_idx_pair(
            tmp_path, np.zeros((2, 2, 2), dtype=np.uint8), np.zeros(2, dtype=np.uint8)
        )
        raw = img_path.read_bytes()
        img_path.write_bytes(raw[:-3])
        with pytest.raises(IdxFormatError, match="images payload"):
            load_idx_dataset(img_path, lab_path)

    def test_count_mismatch(self, tmp_path):
        img_path, lab_path = write_idx_pair(
            tmp_path, np.zeros((3, 2, 2), dtype=np.uint8), np.zeros(3, dtype=np.uint8)
        )
        raw = bytearray(lab_path.read_bytes())
        raw[7] = 2
        lab_path.write_bytes(bytes(raw[:8]) + bytes(2))
        with pytest.raises(IdxFormatError, match="count"):
            load_idx_dataset(img_path, lab_path)


class TestSynthClassification:
    def test_shapes_and_balance(self):
        ds = synth_classification(100, 5, 4, 3.0, np.random.default_rng(0))
        assert ds.features.shape == (100, 5)
        assert ds.num_classes == 4
        counts = np.bincount(ds.labels, minlength=4)
        assert max(counts) - min(counts) <= 1

    def test_separation_controls_difficulty(self):
        rng = np.random.default_rng(1)
        near = synth_classification(500, 4, 3, 0.1, rng)
        far = synth_classification(500, 4, 3, 8.0, np.random.default_rng(1))
        # class means should be much farther apart in the separated set
        def spread(ds):
            means = np.stack([ds.features[ds.labels == c].mean(axis=0) for c in range(3)])
            return np.linalg.norm(means[0] - means[1])
        assert spread(far) > spread(near) * 3


class TestDataset:
    def test_validation(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.zeros(2, dtype=np.int64), 1)
        with pytest.raises(ValueError):
            Dataset(np.zeros(3), np.zeros(3, dtype=np.int64), 1)
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.array([0, 1, 2]), 2)

    def test_subset(self):
        ds = toy_dataset(n=10)
        sub = ds.subset(np.array([1, 3, 5]))
        assert sub.features.shape == (3, 3)
        assert np.array_equal(sub.labels, ds.labels[[1, 3, 5]])
        assert sub.num_classes == ds.num_classes
