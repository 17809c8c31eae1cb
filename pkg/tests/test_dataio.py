import struct

import numpy as np
import pytest

from rvae import dataio
from rvae.errors import (
    ConfigError,
    DataError,
    IdxDimensionError,
    IdxMagicError,
    IdxTruncatedError,
)


def hand_built_image_idx(path):
    # magic 0x00000803, dims 1x2x2, bytes [0, 255, 0, 255]
    path.write_bytes(struct.pack(">IIII", 0x00000803, 1, 2, 2)
                     + bytes([0, 255, 0, 255]))


class TestReadIdx:
    def test_hand_built_image_fixture(self, tmp_path):
        path = tmp_path / "img.idx"
        hand_built_image_idx(path)
        data, meta = dataio.read_idx(path)
        assert data.shape == (1, 2, 2)
        assert np.array_equal(data.ravel(), [0.0, 1.0, 0.0, 1.0])
        assert meta["dims"] == (1, 2, 2)

    def test_label_round_trip(self, tmp_path):
        path = tmp_path / "labels.idx"
        dataio.write_idx(path, np.array([7, 2, 1]))
        labels, _ = dataio.read_idx(path)
        assert np.array_equal(labels, [7, 2, 1])

    def test_image_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(3, 4, 4)).astype(np.float64) / 255.0
        path = tmp_path / "img.idx"
        dataio.write_idx(path, images)
        back, _ = dataio.read_idx(path)
        assert np.array_equal(back, images)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(struct.pack(">II", 0x00000999, 1))
        with pytest.raises(IdxMagicError):
            dataio.read_idx(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.idx"
        path.write_bytes(struct.pack(">IIII", 0x00000803, 1, 2, 2) + bytes([0, 255]))
        with pytest.raises(IdxTruncatedError):
            dataio.read_idx(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "head.idx"
        path.write_bytes(struct.pack(">I", 0x00000803) + b"\x00\x00")
        with pytest.raises(IdxTruncatedError):
            dataio.read_idx(path)

    def test_dimension_overflow(self, tmp_path):
        path = tmp_path / "big.idx"
        path.write_bytes(struct.pack(">IIII", 0x00000803,
                                     2**31, 2**20, 2**20))
        with pytest.raises(IdxDimensionError):
            dataio.read_idx(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            dataio.read_idx(tmp_path / "nope.idx")

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "long.idx"
        path.write_bytes(struct.pack(">IIII", 0x00000803, 1, 2, 2)
                         + bytes([0, 255, 0, 255, 9]))
        with pytest.raises(IdxTruncatedError):
            dataio.read_idx(path)


class TestBinarize:
    def _ds(self, images):
        images = np.asarray(images, dtype=np.float64)
        n = images.shape[0]
        return dataio.Dataset(images, np.zeros(n, dtype=np.int64),
                              np.zeros(n, dtype=bool))

    def test_all_zero_image_stays_zero(self):
        ds = self._ds([[0.0, 0.0], [1.0, 0.2]])
        out = dataio.binarize(ds)
        assert np.array_equal(out.images[0], [0.0, 0.0])

    def test_boundary_is_inclusive_above(self):
        ds = self._ds([[1.0, 0.49, 0.5, 0.51]])
        out = dataio.binarize(ds)
        assert np.array_equal(out.images[0], [1.0, 0.0, 1.0, 1.0])

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        ds = self._ds(rng.random((5, 9)))
        once = dataio.binarize(ds)
        twice = dataio.binarize(once)
        assert np.array_equal(once.images, twice.images)
        assert set(np.unique(once.images)) <= {0.0, 1.0}

    def test_empty_dataset_rejected(self):
        ds = self._ds(np.zeros((0, 4)))
        with pytest.raises(DataError):
            dataio.binarize(ds)

    def test_input_untouched_and_meta_appended(self):
        ds = self._ds([[0.2, 0.8]])
        out = dataio.binarize(ds)
        assert ds.images[0, 0] == 0.2
        assert ds.meta["transforms"] == []
        assert any("binarize" in t for t in out.meta["transforms"])


class TestContaminate:
    def _clean(self, n=100, d=16, seed=0):
        return dataio.make_synthetic_clusters(n, d, seed)

    def test_zero_fraction_is_identity_with_false_flags(self):
        ds = self._clean()
        out = dataio.contaminate(ds, dataio.ContaminationSpec(fraction=0.0))
        assert np.array_equal(out.images, ds.images)
        assert not out.is_outlier.any()

    def test_flag_count_is_floor_of_fraction(self):
        ds = self._clean(n=1000)
        out = dataio.contaminate(
            ds, dataio.ContaminationSpec(fraction=0.1, seed=3))
        assert int(out.is_outlier.sum()) == 100
        assert out.n == ds.n and out.dim == ds.dim

    def test_same_seed_same_replacement_set(self):
        ds = self._clean()
        spec = dataio.ContaminationSpec(fraction=0.2, seed=9)
        a = dataio.contaminate(ds, spec)
        b = dataio.contaminate(ds, spec)
        assert np.array_equal(a.is_outlier, b.is_outlier)
        assert np.array_equal(a.images, b.images)

    def test_small_fraction_warns_and_leaves_data_alone(self):
        ds = self._clean(n=5)
        with pytest.warns(UserWarning):
            out = dataio.contaminate(ds, dataio.ContaminationSpec(fraction=0.1))
        assert not out.is_outlier.any()

    def test_original_is_untouched(self):
        ds = self._clean()
        snapshot = ds.images.copy()
        dataio.contaminate(ds, dataio.ContaminationSpec(fraction=0.5, seed=1))
        assert np.array_equal(ds.images, snapshot)
        assert not ds.is_outlier.any()

    def test_noise_values_clipped_and_labels_marked(self):
        ds = self._clean(n=50)
        out = dataio.contaminate(ds, dataio.ContaminationSpec(fraction=0.2, seed=2))
        flagged = out.is_outlier
        assert out.images[flagged].min() >= 0.0
        assert out.images[flagged].max() <= 1.0
        assert np.all(out.labels[flagged] == -1)

    def test_foreign_requires_source(self):
        ds = self._clean()
        spec = dataio.ContaminationSpec(kind=dataio.FOREIGN_DATASET, fraction=0.1)
        with pytest.raises(DataError):
            dataio.contaminate(ds, spec)

    def test_foreign_dimension_mismatch(self):
        ds = self._clean(d=16)
        other = self._clean(d=25)
        spec = dataio.ContaminationSpec(kind=dataio.FOREIGN_DATASET, fraction=0.1)
        with pytest.raises(DataError):
            dataio.contaminate(ds, spec, other)

    def test_foreign_rows_come_from_source(self):
        ds = self._clean(n=50, seed=0)
        other = self._clean(n=50, seed=99)
        spec = dataio.ContaminationSpec(kind=dataio.FOREIGN_DATASET,
                                        fraction=0.2, seed=4)
        out = dataio.contaminate(ds, spec, other)
        source_rows = {row.tobytes() for row in other.images}
        for row in out.images[out.is_outlier]:
            assert row.tobytes() in source_rows

    def test_dropout_bands_zero_five_rows(self):
        ds = self._clean(n=20, d=64)
        spec = dataio.ContaminationSpec(kind=dataio.DROPOUT_BANDS,
                                        fraction=0.5, seed=5)
        out = dataio.contaminate(ds, spec)
        side = 8
        for i in np.nonzero(out.is_outlier)[0]:
            frame = out.images[i].reshape(side, side)
            zero_rows = np.nonzero(~frame.any(axis=1))[0]
            assert len(zero_rows) >= 5

    def test_blobs_add_intensity(self):
        ds = self._clean(n=20, d=64)
        spec = dataio.ContaminationSpec(kind=dataio.BLOBS, fraction=0.5, seed=6)
        out = dataio.contaminate(ds, spec)
        flagged = out.is_outlier
        assert (out.images[flagged].sum(axis=1)
                >= ds.images[flagged].sum(axis=1)).all()

    def test_bad_spec_rejected(self):
        with pytest.raises(ConfigError):
            dataio.ContaminationSpec(kind="sparkles")
        with pytest.raises(ConfigError):
            dataio.ContaminationSpec(fraction=1.0)


class TestSyntheticClusters:
    def test_reproducible(self):
        a = dataio.make_synthetic_clusters(10, 16, seed=7)
        b = dataio.make_synthetic_clusters(10, 16, seed=7)
        assert a.images.tobytes() == b.images.tobytes()

    def test_balanced_classes(self):
        ds = dataio.make_synthetic_clusters(11, 16, seed=0)
        counts = np.bincount(ds.labels)
        assert abs(int(counts[0]) - int(counts[1])) <= 1

    @pytest.mark.parametrize("geometry", ["bars", "blobs"])
    def test_intra_class_tighter_than_inter_class(self, geometry):
        ds = dataio.make_synthetic_clusters(60, 64, seed=3, geometry=geometry)
        x, y = ds.images, ds.labels
        d2 = ((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=2)
        same = y[:, None] == y[None, :]
        off_diag = ~np.eye(len(x), dtype=bool)
        intra = d2[same & off_diag].mean()
        inter = d2[~same].mean()
        assert intra < inter

    def test_requires_square_dimension(self):
        with pytest.raises(DataError):
            dataio.make_synthetic_clusters(10, 15, seed=0)

    def test_values_in_unit_interval(self):
        ds = dataio.make_synthetic_clusters(30, 16, seed=2)
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0


class TestSplit:
    def test_sizes(self):
        ds = dataio.make_synthetic_clusters(100, 16, seed=0)
        train, test = dataio.split(ds, 0.8, seed=1)
        assert train.n == 80 and test.n == 20

    def test_union_is_original(self):
        ds = dataio.make_synthetic_clusters(40, 16, seed=0)
        train, test = dataio.split(ds, 0.7, seed=2)
        combined = {row.tobytes() for row in train.images} \
            | {row.tobytes() for row in test.images}
        original = {row.tobytes() for row in ds.images}
        assert combined == original
        assert train.n + test.n == ds.n

    def test_same_seed_same_split(self):
        ds = dataio.make_synthetic_clusters(40, 16, seed=0)
        a_train, _ = dataio.split(ds, 0.5, seed=3)
        b_train, _ = dataio.split(ds, 0.5, seed=3)
        assert np.array_equal(a_train.images, b_train.images)

    def test_degenerate_rejected(self):
        ds = dataio.make_synthetic_clusters(4, 16, seed=0)
        with pytest.raises(ConfigError):
            dataio.split(ds, 0.0, seed=0)
        with pytest.raises(DataError):
            dataio.split(ds, 0.01, seed=0)


class TestManifest:
    def test_synthetic_pipeline_round_trip(self, tmp_path):
        manifest = tmp_path / "train.manifest"
        dataio.write_manifest(manifest, {
            "source": "synthetic", "n": 50, "dim": 16, "seed": 4,
            "split": "train", "train_frac": 0.8, "split_seed": 1,
            "outlier_kind": "gaussian_noise", "outlier_fraction": 0.1,
            "outlier_seed": 2, "binarize": "true",
        })
        a = dataio.load_manifest(manifest)
        b = dataio.load_manifest(manifest)
        assert a.n == 40
        assert int(a.is_outlier.sum()) == 4
        assert set(np.unique(a.images)) <= {0.0, 1.0}
        assert a.images.tobytes() == b.images.tobytes()

    def test_idx_source(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(6, 4, 4)).astype(float) / 255.0
        dataio.write_idx(tmp_path / "img.idx", images)
        dataio.write_idx(tmp_path / "lab.idx", np.arange(6) % 3)
        manifest = tmp_path / "data.manifest"
        dataio.write_manifest(manifest, {
            "source": "idx", "images": "img.idx", "labels": "lab.idx",
        })
        ds = dataio.load_manifest(manifest)
        assert ds.n == 6 and ds.dim == 16
        assert np.array_equal(ds.labels, np.arange(6) % 3)

    def test_unknown_key_rejected(self, tmp_path):
        manifest = tmp_path / "bad.manifest"
        manifest.write_text("source = synthetic\nn = 10\ndim = 16\nseed = 0\n"
                            "sparkle = yes\n")
        with pytest.raises(ConfigError):
            dataio.load_manifest(manifest)

    def test_missing_source_rejected(self, tmp_path):
        manifest = tmp_path / "bad.manifest"
        manifest.write_text("n = 10\n")
        with pytest.raises(ConfigError):
            dataio.load_manifest(manifest)

    def test_foreign_outliers_from_idx(self, tmp_path):
        rng = np.random.default_rng(1)
        letters = rng.integers(0, 256, size=(20, 4, 4)).astype(float) / 255.0
        dataio.write_idx(tmp_path / "letters.idx", letters)
        manifest = tmp_path / "mix.manifest"
        dataio.write_manifest(manifest, {
            "source": "synthetic", "n": 50, "dim": 16, "seed": 0,
            "outlier_kind": "foreign_dataset", "outlier_fraction": 0.2,
            "outlier_seed": 1, "outlier_images": "letters.idx",
        })
        ds = dataio.load_manifest(manifest)
        assert int(ds.is_outlier.sum()) == 10
