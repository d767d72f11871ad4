"""IDX parsing, fixtures, subsetting, synthetic data."""

import struct

import numpy as np
import pytest

from recgrad.data import (
    Dataset,
    IdxFormatError,
    load_idx,
    make_class_images,
    make_synthetic,
    subset,
    write_idx,
)

FIXTURE_PIXELS = bytes(
    [255, 0, 128, 7, 19, 200, 1, 64, 33,   # image 0
     0, 0, 0, 255, 255, 255, 90, 91, 92]   # image 1
)


def write_fixture(tmp_path, pixels=FIXTURE_PIXELS, labels=bytes([3, 1]),
                  image_magic=0x00000803, label_magic=0x00000801, count=2):
    images_path = tmp_path / "images.idx3"
    labels_path = tmp_path / "labels.idx1"
    images_path.write_bytes(struct.pack(">IIII", image_magic, count, 3, 3) + pixels)
    labels_path.write_bytes(struct.pack(">II", label_magic, len(labels)) + labels)
    return images_path, labels_path


class TestLoadIdx:
    def test_known_bytes_scale_exactly(self, tmp_path):
        ds = load_idx(*write_fixture(tmp_path))
        assert ds.features.shape == (2, 9)
        assert ds.features[0, 0] == 1.0      # byte 255
        assert ds.features[1, 0] == 0.0      # byte 0
        assert ds.features[0, 2] == 128 / 255
        assert ds.labels.tolist() == [3, 1]
        assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0

    def test_committed_fixture_files(self):
        from pathlib import Path

        fixtures = Path(__file__).parent / "fixtures"
        ds = load_idx(fixtures / "two-digits-images.idx3", fixtures / "two-digits-labels.idx1")
        expected = np.frombuffer(FIXTURE_PIXELS, dtype=np.uint8).reshape(2, 9) / 255.0
        assert np.array_equal(ds.features, expected)
        assert ds.labels.tolist() == [3, 1]

    def test_wrong_magic_images(self, tmp_path):
        paths = write_fixture(tmp_path, image_magic=0x00000801)
        with pytest.raises(IdxFormatError, match="0x00000803"):
            load_idx(*paths)

    def test_labels_file_with_image_magic(self, tmp_path):
        paths = write_fixture(tmp_path, label_magic=0x00000803)
        with pytest.raises(IdxFormatError, match="0x00000801"):
            load_idx(*paths)

    def test_truncated_pixels(self, tmp_path):
        paths = write_fixture(tmp_path, pixels=FIXTURE_PIXELS[:-4])
        with pytest.raises(IdxFormatError, match="truncated"):
            load_idx(*paths)

    def test_count_mismatch(self, tmp_path):
        paths = write_fixture(tmp_path, labels=bytes([3, 1, 0]))
        with pytest.raises(IdxFormatError, match="does not match"):
            load_idx(*paths)

    def test_round_trip_bit_identical(self, tmp_path):
        ds = load_idx(*write_fixture(tmp_path))
        out_images = tmp_path / "out.idx3"
        out_labels = tmp_path / "out.idx1"
        write_idx(ds, out_images, out_labels, rows=3, cols=3)
        again = load_idx(out_images, out_labels)
        assert np.array_equal(ds.features, again.features)
        assert np.array_equal(ds.labels, again.labels)


class TestSubset:
    def full(self):
        return Dataset(
            features=np.arange(20, dtype=float).reshape(10, 2) / 20.0,
            labels=np.arange(10) % 3,
            name="full",
        )

    def test_k_equals_n_is_identity_multiset(self):
        ds = self.full()
        sub = subset(ds, 10, seed=4)
        assert np.array_equal(np.sort(sub.features[:, 0]), np.sort(ds.features[:, 0]))
        assert sub.n == 10

    def test_k_one_both_outcomes_realizable(self, tmp_path):
        two = load_idx(*write_fixture(tmp_path))
        picked = {subset(two, 1, seed=s).labels[0] for s in range(30)}
        assert picked == {1, 3}

    def test_deterministic(self):
        ds = self.full()
        a = subset(ds, 4, seed=9)
        b = subset(ds, 4, seed=9)
        assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            subset(self.full(), 0, seed=0)
        with pytest.raises(ValueError):
            subset(self.full(), 11, seed=0)


class TestMakeSynthetic:
    def test_shapes_and_determinism(self):
        ds = make_synthetic(50, 7, seed=2)
        assert ds.features.shape == (50, 7) and ds.labels.shape == (50,)
        again = make_synthetic(50, 7, seed=2)
        assert np.array_equal(ds.features, again.features)
        assert np.array_equal(ds.labels, again.labels)

    def test_flip_rate_monte_carlo(self):
        ds = make_synthetic(10_000, 5, seed=3)
        # labels measured against the noiseless teacher recover the flip rate
        from recgrad.sampling import RngStream

        teacher = RngStream(3, "synthetic-teacher").normal_array(5)
        clean = (ds.features @ teacher > 0.0).astype(np.int64)
        flipped = float(np.mean(clean != ds.labels))
        assert abs(flipped - 0.1) < 0.03


class TestMakeClassImages:
    def test_shapes_labels_range(self):
        ds = make_class_images(200, 8, 8, 10, seed=1)
        assert ds.features.shape == (200, 64)
        assert ds.labels.min() >= 0 and ds.labels.max() < 10
        assert ds.features.min() >= 0.0 and ds.features.max() <= 1.0

    def test_quantized_to_byte_grid_round_trips(self, tmp_path):
        ds = make_class_images(50, 6, 6, 3, seed=2)
        write_idx(ds, tmp_path / "im.idx3", tmp_path / "lb.idx1", rows=6, cols=6)
        again = load_idx(tmp_path / "im.idx3", tmp_path / "lb.idx1")
        assert np.array_equal(ds.features, again.features)
        assert np.array_equal(ds.labels, again.labels)

    def test_deterministic(self):
        a = make_class_images(30, 6, 6, 4, seed=5)
        b = make_class_images(30, 6, 6, 4, seed=5)
        assert np.array_equal(a.features, b.features)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(features=np.empty((0, 3)), labels=np.empty(0, dtype=int), name="empty")
    with pytest.raises(ValueError):
        Dataset(features=np.array([[np.inf]]), labels=np.array([0]), name="inf")
    with pytest.raises(ValueError):
        Dataset(features=np.ones((2, 2)), labels=np.array([0]), name="short")
