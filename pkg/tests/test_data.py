import numpy as np
import pytest
from scipy.stats import chisquare
from sklearn.linear_model import LogisticRegression

from labelsift.data import (DataError, Dataset, GoldSubset, NoiseSpec,
                            draw_gold_subset, inject_noise, load_binary,
                            load_csv, load_dataset, make_blobs, save_binary,
                            save_csv)


def small_dataset(with_true=False):
    feats = np.arange(16, dtype=np.float32).reshape(4, 4)
    given = np.array([0, 1, 1, 0])
    true = np.array([0, 1, 0, 0]) if with_true else None
    return Dataset(feats, given, 2, true_labels=true)


class TestDataset:
    def test_ids_assigned_in_order(self):
        ds = small_dataset()
        assert np.array_equal(ds.ids, [0, 1, 2, 3])

    def test_rejects_nan_features(self):
        feats = np.array([[np.nan, 0.0]], dtype=np.float32)
        with pytest.raises(DataError):
            Dataset(feats, np.array([0]), 2)

    def test_rejects_out_of_range_label(self):
        with pytest.raises(DataError):
            Dataset(np.zeros((2, 2), dtype=np.float32), np.array([0, 5]), 2)

    def test_rejects_true_label_length_mismatch(self):
        with pytest.raises(DataError):
            Dataset(np.zeros((2, 2), dtype=np.float32), np.array([0, 1]), 2,
                    true_labels=np.array([0]))


class TestCsvRoundtrip:
    def test_basic_readback(self, tmp_path):
        path = tmp_path / "d.csv"
        ds = small_dataset()
        save_csv(ds, path)
        back = load_csv(path)
        assert back.n == 4 and back.dim == 4 and back.num_classes == 2
        assert back == ds

    def test_true_label_column_bit_exact(self, tmp_path):
        path = tmp_path / "d.csv"
        ds = Dataset(np.random.default_rng(0).standard_normal((20, 3)).astype(np.float32),
                     np.zeros(20, dtype=np.int64), 2,
                     true_labels=np.ones(20, dtype=np.int64))
        save_csv(ds, path)
        back = load_csv(path)
        assert back.true_labels is not None
        assert back == ds

    def test_empty_file_errors(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DataError, match="no rows"):
            load_csv(path)

    def test_header_only_errors(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("label,f0\n")
        with pytest.raises(DataError, match="no rows"):
            load_csv(path)

    def test_malformed_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("label,f0\n0,1.5\nnot_an_int,2.0\n")
        with pytest.raises(DataError, match="line 3"):
            load_csv(path)


class TestBinaryRoundtrip:
    @pytest.mark.parametrize("with_true", [False, True])
    def test_roundtrip(self, tmp_path, with_true):
        path = tmp_path / "d.bin"
        ds = make_blobs(10, 3, 5, 4.0, seed=2)
        if not with_true:
            ds = Dataset(ds.features, ds.given_labels, ds.num_classes)
        save_binary(ds, path)
        assert load_binary(path) == ds

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "g.bin"
        path.write_bytes(b"JUNKxxxxxxxxxxxxxxxxxxxxxxxxxxxx")
        with pytest.raises(DataError):
            load_binary(path)

    def test_load_dataset_dispatch(self, tmp_path):
        ds = make_blobs(5, 2, 3, 4.0, seed=0)
        save_binary(ds, tmp_path / "d.bin")
        assert load_dataset(tmp_path / "d.bin", "binary") == ds


class TestMakeBlobs:
    def test_shapes_and_labels(self):
        ds = make_blobs(100, 10, 32, 6.0, seed=1)
        assert ds.n == 1000 and ds.dim == 32 and ds.num_classes == 10
        assert np.array_equal(ds.given_labels, ds.true_labels)

    def test_linearly_separable(self):
        ds = make_blobs(100, 10, 32, 6.0, seed=1)
        clf = LogisticRegression(max_iter=2000).fit(ds.features, ds.given_labels)
        assert clf.score(ds.features, ds.given_labels) >= 0.99

    def test_two_points(self):
        ds = make_blobs(1, 2, 1, 10.0, seed=0)
        assert ds.n == 2
        assert sorted(ds.given_labels.tolist()) == [0, 1]

    def test_deterministic(self):
        a = make_blobs(20, 3, 4, 5.0, seed=7)
        b = make_blobs(20, 3, 4, 5.0, seed=7)
        assert a == b

    def test_mean_separation(self):
        ds = make_blobs(200, 4, 8, 6.0, seed=3)
        means = np.stack([ds.features[ds.given_labels == c].mean(axis=0)
                          for c in range(4)])
        for i in range(4):
            for j in range(i + 1, 4):
                assert np.linalg.norm(means[i] - means[j]) > 5.0

    def test_invalid_params(self):
        with pytest.raises(DataError):
            make_blobs(0, 2, 2, 1.0, seed=0)
        with pytest.raises(DataError):
            make_blobs(1, 2, 2, -1.0, seed=0)


class TestInjectNoise:
    def test_exact_count_and_all_changed(self):
        ds = make_blobs(100, 10, 8, 6.0, seed=0)
        noisy = inject_noise(ds, NoiseSpec("symmetric", 0.4, 3))
        changed = noisy.given_labels != noisy.true_labels
        assert changed.sum() == int(np.floor(0.4 * ds.n))
        assert np.array_equal(noisy.true_labels, ds.given_labels)
        assert np.array_equal(noisy.features, ds.features)

    def test_zero_rate_identity(self):
        ds = make_blobs(50, 3, 4, 5.0, seed=1)
        out = inject_noise(ds, NoiseSpec("symmetric", 0.0, 3))
        assert np.array_equal(out.given_labels, ds.given_labels)

    def test_pair_rule(self):
        ds = make_blobs(100, 10, 4, 5.0, seed=2)
        noisy = inject_noise(ds, NoiseSpec("pair", 0.6, 4))
        changed = noisy.given_labels != noisy.true_labels
        assert np.array_equal(noisy.given_labels[changed],
                              (noisy.true_labels[changed] + 1) % 10)

    def test_pair_majority_flip_above_half(self):
        # at rate > 0.5, the plurality given label inside every true class
        # is the next class, not the true one
        ds = make_blobs(500, 10, 4, 5.0, seed=5)
        noisy = inject_noise(ds, NoiseSpec("pair", 0.6, 6))
        for c in range(10):
            members = noisy.true_labels == c
            counts = np.bincount(noisy.given_labels[members], minlength=10)
            assert counts.argmax() != c

    def test_reproducible(self):
        ds = make_blobs(50, 4, 4, 5.0, seed=1)
        a = inject_noise(ds, NoiseSpec("symmetric", 0.3, 9))
        b = inject_noise(ds, NoiseSpec("symmetric", 0.3, 9))
        assert a == b

    def test_symmetric_flip_targets_uniform(self):
        ds = make_blobs(3000, 5, 2, 5.0, seed=0)
        noisy = inject_noise(ds, NoiseSpec("symmetric", 0.8, 11))
        changed = noisy.given_labels != noisy.true_labels
        assert changed.sum() >= 10_000
        offsets = (noisy.given_labels[changed] - noisy.true_labels[changed]) % 5
        counts = np.bincount(offsets, minlength=5)[1:]
        assert chisquare(counts).pvalue > 0.01

    def test_invalid_rate(self):
        ds = make_blobs(10, 2, 2, 5.0, seed=0)
        with pytest.raises(DataError):
            inject_noise(ds, NoiseSpec("symmetric", 1.5, 0))

    def test_refuses_double_corruption(self):
        ds = make_blobs(50, 4, 4, 5.0, seed=1)
        noisy = inject_noise(ds, NoiseSpec("symmetric", 0.4, 2))
        with pytest.raises(DataError):
            inject_noise(noisy, NoiseSpec("symmetric", 0.4, 3))


class TestGoldSubset:
    def test_size_and_uniqueness(self):
        ds = make_blobs(200, 5, 4, 5.0, seed=0)
        gold = draw_gold_subset(ds, 100, seed=1)
        assert len(gold.ids) == 100
        assert len(np.unique(gold.ids)) == 100

    def test_full_draw(self):
        ds = make_blobs(10, 2, 2, 5.0, seed=0)
        gold = draw_gold_subset(ds, ds.n, seed=1)
        assert sorted(gold.ids.tolist()) == list(range(ds.n))

    def test_deterministic(self):
        ds = make_blobs(100, 4, 4, 5.0, seed=0)
        a = draw_gold_subset(ds, 50, seed=3)
        b = draw_gold_subset(ds, 50, seed=3)
        assert np.array_equal(a.ids, b.ids)

    def test_oversized_errors(self):
        ds = make_blobs(10, 2, 2, 5.0, seed=0)
        with pytest.raises(DataError):
            draw_gold_subset(ds, ds.n + 1, seed=0)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DataError):
            GoldSubset(np.array([1, 1, 2]))
