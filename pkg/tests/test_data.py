import struct

import numpy as np
import pytest

from fedrank.data import (IdxFormatError, dirichlet_partition,
                          dirichlet_proportions, gen_blobs,
                          largest_remainder_counts, load_csv, load_idx,
                          save_csv)
from fedrank.rng import derive


class TestBlobs:
    def test_zero_std_points_at_center(self):
        ds = gen_blobs(3, 5, 4, 0.0, derive(41, []), separation=2.0)
        for c in range(3):
            pts = ds.features[ds.labels == c]
            assert np.allclose(pts, pts[0])
            assert np.linalg.norm(pts[0]) == pytest.approx(2.0)

    def test_nearest_centroid_separable(self):
        ds = gen_blobs(4, 10, 50, 0.05, derive(42, []))
        centers = np.stack([ds.features[ds.labels == c].mean(axis=0) for c in range(4)])
        d2 = ((ds.features[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assert np.mean(np.argmin(d2, axis=1) == ds.labels) == 1.0

    def test_deterministic(self):
        a = gen_blobs(2, 3, 10, 1.0, derive(43, []))
        b = gen_blobs(2, 3, 10, 1.0, derive(43, []))
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            gen_blobs(0, 3, 10, 1.0, derive(1, []))
        with pytest.raises(ValueError):
            gen_blobs(2, 3, 10, -1.0, derive(1, []))


class TestLargestRemainder:
    def test_exact_total(self):
        rng = derive(44, [])
        for _ in range(20):
            props = dirichlet_proportions(1.0, 7, rng)
            counts = largest_remainder_counts(props, 103)
            assert counts.sum() == 103
            assert np.all(counts >= 0)

    def test_even_split(self):
        counts = largest_remainder_counts(np.array([0.25, 0.25, 0.25, 0.25]), 8)
        assert counts.tolist() == [2, 2, 2, 2]

    def test_remainder_to_largest_fraction(self):
        counts = largest_remainder_counts(np.array([0.6, 0.4]), 5)
        assert counts.tolist() == [3, 2]


class TestDirichletPartition:
    def _labels(self, per_class=200, classes=4):
        return np.repeat(np.arange(classes), per_class)

    def test_single_client_gets_everything(self):
        labels = self._labels()
        shards = dirichlet_partition(labels, 1, 1.0, derive(45, []))
        assert len(shards.train[0]) + len(shards.test[0]) == len(labels)

    def test_disjoint_and_covering(self):
        labels = self._labels()
        shards = dirichlet_partition(labels, 10, 0.5, derive(46, []))
        seen = np.concatenate([np.concatenate([tr, te])
                               for tr, te in zip(shards.train, shards.test)])
        assert sorted(seen.tolist()) == list(range(len(labels)))

    def test_large_alpha_near_uniform(self):
        labels = self._labels(per_class=500, classes=2)
        shards = dirichlet_partition(labels, 2, 1e6, derive(47, []))
        for tr, te in zip(shards.train, shards.test):
            shard = np.concatenate([tr, te])
            hist = np.bincount(labels[shard], minlength=2) / len(shard)
            assert abs(hist[0] - 0.5) < 0.05

    def test_split_ratio(self):
        labels = self._labels()
        shards = dirichlet_partition(labels, 8, 1.0, derive(48, []))
        for tr, te in zip(shards.train, shards.test):
            total = len(tr) + len(te)
            assert len(tr) == round(0.8 * total)

    def test_deterministic(self):
        labels = self._labels()
        a = dirichlet_partition(labels, 6, 1.0, derive(49, []))
        b = dirichlet_partition(labels, 6, 1.0, derive(49, []))
        for ta, tb in zip(a.train, b.train):
            assert np.array_equal(ta, tb)

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            dirichlet_partition(np.array([0, 1]), 0, 1.0, derive(1, []))
        with pytest.raises(ValueError):
            dirichlet_partition(np.array([0, 1]), 2, 0.0, derive(1, []))


def write_idx_pair(tmp_path, images, labels):
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    img_path = tmp_path / "imgs.idx"
    lbl_path = tmp_path / "lbls.idx"
    img_path.write_bytes(struct.pack(">IIII", 0x00000803, count, rows, cols)
                         + images.tobytes())
    lbl_path.write_bytes(struct.pack(">II", 0x00000801, len(labels))
                         + bytes(labels))
    return str(img_path), str(lbl_path)


class TestIdx:
    def test_parse_two_images(self, tmp_path):
        images = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4)
        img, lbl = write_idx_pair(tmp_path, images, [1, 0])
        ds = load_idx(img, lbl)
        assert ds.features.shape == (2, 12)
        assert ds.labels.tolist() == [1, 0]
        assert ds.features.max() <= 1.0
        assert ds.features[1, 0] == pytest.approx(12 / 255.0)

    def test_bad_magic(self, tmp_path):
        img, lbl = write_idx_pair(tmp_path, np.zeros((1, 2, 2), dtype=np.uint8), [0])
        bad = tmp_path / "bad.idx"
        bad.write_bytes(struct.pack(">IIII", 0x00000805, 1, 2, 2) + bytes(4))
        with pytest.raises(IdxFormatError):
            load_idx(str(bad), lbl)

    def test_truncated_file(self, tmp_path):
        lbl = tmp_path / "short.idx"
        lbl.write_bytes(b"\x00\x00")
        img, good_lbl = write_idx_pair(tmp_path, np.zeros((1, 2, 2), dtype=np.uint8), [0])
        with pytest.raises(IdxFormatError):
            load_idx(img, str(lbl))

    def test_empty_images_file(self, tmp_path):
        img = tmp_path / "empty.idx"
        img.write_bytes(b"")
        with pytest.raises(IdxFormatError):
            load_idx(str(img), str(img))

    def test_count_mismatch(self, tmp_path):
        img, _ = write_idx_pair(tmp_path, np.zeros((2, 2, 2), dtype=np.uint8), [0, 1])
        lbl = tmp_path / "one.idx"
        lbl.write_bytes(struct.pack(">II", 0x00000801, 1) + bytes([0]))
        with pytest.raises(IdxFormatError):
            load_idx(img, str(lbl))

    def test_truncated_pixels(self, tmp_path):
        img = tmp_path / "trunc.idx"
        img.write_bytes(struct.pack(">IIII", 0x00000803, 2, 2, 2) + bytes(3))
        _, lbl = write_idx_pair(tmp_path, np.zeros((2, 2, 2), dtype=np.uint8), [0, 1])
        with pytest.raises(IdxFormatError):
            load_idx(str(img), lbl)


class TestCsvRoundtrip:
    def test_roundtrip(self, tmp_path):
        ds = gen_blobs(3, 4, 5, 1.0, derive(50, []))
        path = str(tmp_path / "blobs.csv")
        save_csv(ds, path)
        with open(path) as f:
            assert f.readline().strip() == "f0,f1,f2,f3,label"
        back = load_csv(path)
        assert np.array_equal(back.features, ds.features)
        assert np.array_equal(back.labels, ds.labels)
