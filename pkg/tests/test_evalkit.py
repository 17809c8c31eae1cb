import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rvae import dataio, evalkit, optim, vaemodel as vm
from rvae.divergences import BETA, LossSpec, STANDARD
from rvae.errors import DataError, ShapeError

from oracles import pairwise_auc, rel_err


def read_pgm(path):
    with open(path, "rb") as f:
        blob = f.read()
    header, rest = blob.split(b"\n255\n", 1)
    magic, dims = header.split(b"\n", 1)
    assert magic == b"P5"
    w, h = map(int, dims.split())
    pixels = np.frombuffer(rest, dtype=np.uint8).reshape(h, w)
    return pixels


class TestErrorRows:
    def test_identical_is_zero(self):
        x = np.random.default_rng(0).random((3, 4))
        assert np.array_equal(evalkit.error_rows(x, x, "mse"), np.zeros(3))

    def test_ones_vs_zeros_is_one(self):
        x = np.ones((2, 8))
        xhat = np.zeros((2, 8))
        assert np.array_equal(evalkit.error_rows(x, xhat, "mse"), np.ones(2))
        assert np.array_equal(evalkit.error_rows(x, xhat, "abs"), np.ones(2))

    def test_two_pixel_hand_value(self):
        # pixels (0.0, 1.0) vs (0.5, 0.75): mse (0.25 + 0.0625)/2, abs (0.5+0.25)/2
        x = np.array([[0.0, 1.0]])
        xhat = np.array([[0.5, 0.75]])
        assert evalkit.error_rows(x, xhat, "mse")[0] == pytest.approx(0.15625)
        assert evalkit.error_rows(x, xhat, "abs")[0] == pytest.approx(0.375)

    def test_unknown_mode(self):
        with pytest.raises(DataError):
            evalkit.error_rows(np.ones((1, 2)), np.ones((1, 2)), "rmse")


class TestReconError:
    def test_shape_and_determinism(self):
        ds = dataio.make_synthetic_clusters(20, 16, seed=0)
        params = vm.init_params(vm.Arch(16, 2, hidden_dim=8), seed=1)
        a = evalkit.recon_error(params, ds)
        b = evalkit.recon_error(params, ds)
        assert a.shape == (20,)
        assert np.array_equal(a, b)

    def test_dimension_mismatch(self):
        ds = dataio.make_synthetic_clusters(5, 25, seed=0)
        params = vm.init_params(vm.Arch(16, 2, hidden_dim=8), seed=1)
        with pytest.raises(ShapeError):
            evalkit.recon_error(params, ds)


class TestRatioMetric:
    def test_identical_distributions_give_one(self):
        errors = np.array([0.5, 0.5, 0.5, 0.5])
        flags = np.array([True, False, True, False])
        assert evalkit.ratio_metric(errors, flags) == pytest.approx(1.0)

    def test_doubled_outlier_errors_give_two(self):
        errors = np.array([2.0, 1.0, 2.0, 1.0])
        flags = np.array([True, False, True, False])
        assert evalkit.ratio_metric(errors, flags) == pytest.approx(2.0)

    def test_group_means_balance_unequal_sizes(self):
        errors = np.array([3.0, 1.0, 1.0, 1.0, 1.0])
        flags = np.array([True, False, False, False, False])
        assert evalkit.ratio_metric(errors, flags) == pytest.approx(3.0)

    @settings(max_examples=30, deadline=None)
    @given(scale=st.floats(1e-3, 1e3), seed=st.integers(0, 1000))
    def test_scale_invariant(self, scale, seed):
        rng = np.random.default_rng(seed)
        errors = rng.random(20) + 0.01
        flags = np.zeros(20, dtype=bool)
        flags[:7] = True
        base = evalkit.ratio_metric(errors, flags)
        scaled = evalkit.ratio_metric(errors * scale, flags)
        assert rel_err(base, scaled).max() < 1e-9

    def test_single_class_rejected(self):
        with pytest.raises(DataError):
            evalkit.ratio_metric(np.ones(3), np.zeros(3, dtype=bool))


class TestRocAuc:
    def test_perfect_separation(self):
        scores = np.array([0.9, 0.8, 0.1, 0.2])
        flags = np.array([True, True, False, False])
        roc, auc = evalkit.roc_auc(scores, flags)
        assert auc == pytest.approx(1.0)
        assert roc[0] == (0.0, 0.0, np.inf)
        assert roc[-1][:2] == (1.0, 1.0)

    def test_constant_scores_give_half(self):
        scores = np.ones(10)
        flags = np.arange(10) < 4
        _, auc = evalkit.roc_auc(scores, flags)
        assert auc == pytest.approx(0.5)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_pairwise_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(10, 200))
        # coarse grid forces ties
        scores = rng.integers(0, 12, size=n) / 4.0
        flags = rng.random(n) < 0.4
        if flags.all() or not flags.any():
            flags[0] = True
            flags[1] = False
        _, auc = evalkit.roc_auc(scores, flags)
        assert rel_err(auc, pairwise_auc(scores, flags)).max() < 1e-12

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 1000), shift=st.floats(-5, 5))
    def test_invariant_under_monotone_transform(self, seed, shift):
        rng = np.random.default_rng(seed)
        scores = rng.random(40)
        flags = rng.random(40) < 0.3
        if flags.all() or not flags.any():
            flags[0] = True
            flags[1] = False
        _, auc = evalkit.roc_auc(scores, flags)
        _, auc2 = evalkit.roc_auc(np.exp(3.0 * scores) + shift, flags)
        assert auc2 == pytest.approx(auc, abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(DataError):
            evalkit.roc_auc(np.ones(3), np.ones(3, dtype=bool))

    def test_roc_points_monotone(self):
        rng = np.random.default_rng(4)
        scores = rng.random(50)
        flags = rng.random(50) < 0.5
        roc, _ = evalkit.roc_auc(scores, flags)
        fpr = [p[0] for p in roc]
        tpr = [p[1] for p in roc]
        assert all(b >= a for a, b in zip(fpr, fpr[1:]))
        assert all(b >= a for a, b in zip(tpr, tpr[1:]))


class TestImageGrid:
    def test_single_image_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=16).astype(np.float64) / 255.0
        path = tmp_path / "one.pgm"
        evalkit.emit_image_grid(img[None, :], cols=1, path=path)
        pixels = read_pgm(path)
        assert pixels.shape == (4, 4)
        assert np.array_equal(pixels, np.rint(img * 255).reshape(4, 4))

    def test_two_by_two_geometry(self, tmp_path):
        images = np.zeros((4, 16))
        path = tmp_path / "grid.pgm"
        evalkit.emit_image_grid(images, cols=2, path=path)
        pixels = read_pgm(path)
        assert pixels.shape == (9, 9)  # 2*4 + 1 separator
        assert (pixels[4, :] == 127).all()
        assert (pixels[:, 4] == 127).all()

    def test_header_is_p5(self, tmp_path):
        path = tmp_path / "h.pgm"
        evalkit.emit_image_grid(np.zeros((1, 16)), cols=1, path=path)
        assert path.read_bytes().startswith(b"P5\n")

    def test_non_square_rejected(self, tmp_path):
        with pytest.raises(DataError):
            evalkit.emit_image_grid(np.zeros((1, 15)), cols=1,
                                    path=tmp_path / "x.pgm")


class TestExportLatent:
    def test_rows_columns_determinism(self, tmp_path):
        ds = dataio.make_synthetic_clusters(12, 16, seed=0)
        params = vm.init_params(vm.Arch(16, 2, hidden_dim=8), seed=1)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        evalkit.export_latent(params, ds, a)
        evalkit.export_latent(params, ds, b)
        lines = a.read_text().strip().splitlines()
        assert lines[0] == "mu_1,mu_2,label,is_outlier"
        assert len(lines) == 13
        assert a.read_bytes() == b.read_bytes()


def _fast_base():
    return evalkit.SweepBase(
        arch=vm.Arch(input_dim=16, latent_dim=2, hidden_dim=8),
        epochs=2, batch_size=32, seed=3, corpus_n=120, corpus_seed=1)


class TestSweep:
    def test_single_cell_reduces_to_train_plus_eval(self):
        base = _fast_base()
        grid = evalkit.sweep(base, [0.01], [0.1])
        train_ds, test_ds = evalkit._cell_datasets(base, 0.1, 0)
        config = optim.TrainConfig(
            arch=base.arch, loss_spec=LossSpec(vm.BERNOULLI, BETA, beta=0.01),
            epochs=base.epochs, batch_size=base.batch_size, seed=base.seed,
            lr=base.lr)
        params, _ = optim.train(config, train_ds)
        report = evalkit.evaluate(params, test_ds)
        assert grid.ratio_cells[0, 0] == pytest.approx(report.ratio_metric)
        assert grid.auc_cells[0, 0] == pytest.approx(report.auc)

    def test_cells_independent_of_order(self):
        base = _fast_base()
        forward = evalkit.sweep(base, [0.01, 0.1], [0.1])
        backward = evalkit.sweep(base, [0.1, 0.01], [0.1])
        assert forward.ratio_cells[0, 0] == backward.ratio_cells[1, 0]
        assert forward.ratio_cells[1, 0] == backward.ratio_cells[0, 0]

    def test_worker_pool_matches_serial(self):
        base = _fast_base()
        serial = evalkit.sweep(base, [0.01, 0.05], [0.1], workers=1)
        parallel = evalkit.sweep(base, [0.01, 0.05], [0.1], workers=2)
        assert np.array_equal(serial.ratio_cells, parallel.ratio_cells)
        assert np.array_equal(serial.auc_cells, parallel.auc_cells)

    def test_failures_become_nan_with_log(self):
        base = _fast_base()
        grid = evalkit.sweep(base, [0.01, -1.0], [0.1])  # negative beta fails
        assert np.isnan(grid.ratio_cells[1, 0])
        assert np.isfinite(grid.ratio_cells[0, 0])
        assert len(grid.failures) == 1

    def test_empty_grid_rejected(self):
        with pytest.raises(DataError):
            evalkit.sweep(_fast_base(), [], [0.1])

    def test_csv_round_trip(self, tmp_path):
        base = _fast_base()
        grid = evalkit.sweep(base, [0.01], [0.1])
        path = tmp_path / "sweep.csv"
        evalkit.write_sweep_csv(grid, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "beta,fraction,ratio,auc"
        beta, frac, ratio, auc = lines[1].split(",")
        assert float(ratio) == pytest.approx(grid.ratio_cells[0, 0])
