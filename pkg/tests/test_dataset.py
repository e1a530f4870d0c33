"""Discretized Gaussian-mixture tables."""

import numpy as np
import pytest

from ddsmc.core import ConfigError
from ddsmc.dataset import GmmComponent, GmmSpec, build_gmm_table, default_gmm_spec


class TestBuildTable:
    def test_mass_is_one(self):
        table = build_gmm_table(default_gmm_spec(64)).data_dist
        assert abs(table.sum() - 1.0) <= 1e-12
        assert table.shape == (64, 64)
        assert table.min() >= 0.0

    def test_centered_component_has_four_fold_symmetry(self):
        spec = GmmSpec(
            (GmmComponent((31.5, 31.5), ((9.0, 0.0), (0.0, 9.0)), 1.0),), 64
        )
        table = build_gmm_table(spec).data_dist
        assert np.max(np.abs(table - table[::-1, :])) <= 1e-12
        assert np.max(np.abs(table - table[:, ::-1])) <= 1e-12
        assert np.max(np.abs(table - table.T)) <= 1e-12

    def test_two_components_split_the_diagonal(self):
        comps = (
            GmmComponent((16.0, 16.0), ((4.0, 0.0), (0.0, 4.0)), 0.5),
            GmmComponent((48.0, 48.0), ((4.0, 0.0), (0.0, 4.0)), 0.5),
        )
        table = build_gmm_table(GmmSpec(comps, 64)).data_dist
        i, j = np.meshgrid(np.arange(64), np.arange(64), indexing="ij")
        below = table[i + j < 63].sum()
        above = table[i + j > 63].sum()
        assert abs(below - above) <= 1e-9

    def test_component_weights_only_need_relative_scale(self):
        comps_unit = (
            GmmComponent((10.0, 20.0), ((5.0, 1.0), (1.0, 5.0)), 0.25),
            GmmComponent((40.0, 45.0), ((3.0, 0.0), (0.0, 7.0)), 0.75),
        )
        comps_scaled = tuple(
            GmmComponent(c.mean, c.cov, 8.0 * c.weight) for c in comps_unit
        )
        a = build_gmm_table(GmmSpec(comps_unit, 64)).data_dist
        b = build_gmm_table(GmmSpec(comps_scaled, 64)).data_dist
        assert np.max(np.abs(a - b)) <= 1e-15

    def test_correlated_component_tilts_the_table(self):
        spec = GmmSpec(
            (GmmComponent((31.5, 31.5), ((9.0, 8.0), (8.0, 9.0)), 1.0),), 64
        )
        table = build_gmm_table(spec).data_dist
        assert table[40, 40] > table[40, 23]


class TestSpecValidation:
    def test_rejects_non_spd_covariance(self):
        comp = GmmComponent((10.0, 10.0), ((1.0, 3.0), (3.0, 1.0)), 1.0)
        with pytest.raises(ConfigError):
            build_gmm_table(GmmSpec((comp,), 64))

    def test_rejects_nonpositive_weight(self):
        comp = GmmComponent((10.0, 10.0), ((1.0, 0.0), (0.0, 1.0)), 0.0)
        with pytest.raises(ConfigError):
            build_gmm_table(GmmSpec((comp,), 64))

    def test_rejects_empty_component_list(self):
        with pytest.raises(ConfigError):
            build_gmm_table(GmmSpec((), 64))

    def test_rejects_tiny_grid(self):
        comp = GmmComponent((0.0, 0.0), ((1.0, 0.0), (0.0, 1.0)), 1.0)
        with pytest.raises(ConfigError):
            build_gmm_table(GmmSpec((comp,), 1))


class TestDefaultSpec:
    def test_quarter_point_components(self):
        spec = default_gmm_spec(64)
        assert spec.grid_size == 64
        assert len(spec.components) == 4
        means = sorted(c.mean for c in spec.components)
        assert means == [(16.0, 16.0), (16.0, 48.0), (48.0, 16.0), (48.0, 48.0)]
        for c in spec.components:
            assert c.weight == pytest.approx(0.25)
            assert np.allclose(c.cov, [[36.0, 0.0], [0.0, 36.0]])

    def test_scales_with_grid(self):
        spec = default_gmm_spec(16)
        means = sorted(c.mean for c in spec.components)
        assert means[0] == (4.0, 4.0)
        assert means[-1] == (12.0, 12.0)

    def test_default_table_has_four_balanced_modes(self):
        # exact symmetry is the diagonal swap (component means map onto each
        # other under i <-> j); quadrant masses agree only approximately
        # because the means 16/48 are not mirror images about 31.5
        table = build_gmm_table(default_gmm_spec(64)).data_dist
        assert np.max(np.abs(table - table.T)) <= 1e-15
        q1 = table[:32, :32].sum()
        q2 = table[:32, 32:].sum()
        q4 = table[32:, 32:].sum()
        assert q2 == pytest.approx(table[32:, :32].sum(), abs=1e-15)
        for q in (q1, q2, q4):
            assert q == pytest.approx(0.25, abs=2e-3)
