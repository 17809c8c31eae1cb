import numpy as np
import pytest

from rvae import betaselect, vaemodel as vm
from rvae.errors import DataError, ShapeError

ARCH = vm.Arch(input_dim=16, latent_dim=2, hidden_dim=8)


def zero_params(arch=ARCH):
    return vm.VaeParams(arch, {k: np.zeros(s)
                               for k, s in arch.param_shapes().items()})


class TestProbe:
    def test_identical_models_identical_grids(self, tmp_path):
        params = vm.init_params(ARCH, seed=0)
        results = betaselect.probe([(0.01, params), (0.02, params)],
                                   n_probe=4, seed=3, out_dir=tmp_path)
        a = (tmp_path / "probe_beta_0.01.pgm").read_bytes()
        b = (tmp_path / "probe_beta_0.02.pgm").read_bytes()
        assert a == b
        assert results[0].proxy_score == results[1].proxy_score
        assert results[0].variability == results[1].variability

    def test_deterministic_given_seed(self, tmp_path):
        params = vm.init_params(ARCH, seed=1)
        r1 = betaselect.probe([(0.01, params)], 4, seed=5,
                              out_dir=tmp_path / "a")
        r2 = betaselect.probe([(0.01, params)], 4, seed=5,
                              out_dir=tmp_path / "b")
        assert r1[0].proxy_score == r2[0].proxy_score
        assert (tmp_path / "a" / "probe_beta_0.01.pgm").read_bytes() == \
            (tmp_path / "b" / "probe_beta_0.01.pgm").read_bytes()

    def test_collapsed_decoder_has_zero_variability(self, tmp_path):
        # zero weights ignore z entirely: every decoded sample is identical
        results = betaselect.probe([(0.0, zero_params())], 6, seed=0,
                                   out_dir=tmp_path)
        assert results[0].variability == pytest.approx(0.0)

    def test_untrained_model_scores_are_positive(self, tmp_path):
        params = vm.init_params(ARCH, seed=2)
        results = betaselect.probe([(0.0, params)], 6, seed=0, out_dir=tmp_path)
        assert results[0].proxy_score > 0.0
        assert results[0].variability > 0.0

    def test_summary_csv_schema(self, tmp_path):
        params = vm.init_params(ARCH, seed=0)
        betaselect.probe([(0.005, params)], 3, seed=1, out_dir=tmp_path)
        lines = (tmp_path / "probe_summary.csv").read_text().strip().splitlines()
        assert lines[0] == "beta,proxy_score,variability"
        assert lines[1].startswith("0.005,")

    def test_arch_mismatch_rejected(self, tmp_path):
        a = vm.init_params(ARCH, seed=0)
        b = vm.init_params(vm.Arch(input_dim=25, latent_dim=2, hidden_dim=8),
                           seed=0)
        with pytest.raises(ShapeError):
            betaselect.probe([(0.01, a), (0.02, b)], 4, seed=0,
                             out_dir=tmp_path)

    def test_empty_inputs_rejected(self, tmp_path):
        with pytest.raises(DataError):
            betaselect.probe([], 4, seed=0, out_dir=tmp_path)
        with pytest.raises(DataError):
            betaselect.probe([(0.01, vm.init_params(ARCH, seed=0))], 0,
                             seed=0, out_dir=tmp_path)

    def test_grid_layout_two_rows(self, tmp_path):
        from test_evalkit import read_pgm

        params = vm.init_params(ARCH, seed=0)
        betaselect.probe([(0.01, params)], n_probe=3, seed=0, out_dir=tmp_path)
        pixels = read_pgm(tmp_path / "probe_beta_0.01.pgm")
        # 2 rows x 3 cols of 4x4 tiles with 1-pixel separators
        assert pixels.shape == (2 * 4 + 1, 3 * 4 + 2)
