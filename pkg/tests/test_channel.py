import numpy as np
import pytest

from rcshp import (ChannelStats, Cost2100ModelParams, DataError, GeometryModelParams,
                   SystemDims, build_cost2100_stats, build_geometry_stats, numerical_rank,
                   sample_channels, steering_vector)
from rcshp.errors import ConfigurationError

DIMS = SystemDims(M=8, S=2, K=3, T_p=3, L=2, T=20, P_max=10.0)


def hermitian_error(c):
    return np.linalg.norm(c - c.conj().T) / max(np.linalg.norm(c), 1e-30)


class TestSystemDims:
    def test_rejects_s_greater_than_m(self):
        with pytest.raises(ConfigurationError):
            SystemDims(M=2, S=4, K=1, T_p=1, L=1, T=1, P_max=1.0)

    def test_rejects_nonpositive_power(self):
        with pytest.raises(ConfigurationError):
            SystemDims(M=2, S=2, K=1, T_p=1, L=1, T=1, P_max=0.0)

    def test_rejects_zero_counts(self):
        with pytest.raises(ConfigurationError):
            SystemDims(M=2, S=2, K=0, T_p=1, L=1, T=1, P_max=1.0)


class TestSteeringVector:
    def test_broadside_is_all_ones(self):
        assert np.allclose(steering_vector(0.0, 4), np.ones(4))

    def test_endfire_alternates(self):
        assert np.allclose(steering_vector(np.pi / 2, 2), [1.0, -1.0])

    def test_thirty_degrees(self):
        # sin(pi/6) = 1/2 so the phase advances by pi/2 per antenna
        expected = np.array([1.0, np.exp(1j * np.pi / 2), np.exp(1j * np.pi)])
        assert np.allclose(steering_vector(np.pi / 6, 3), expected)

    def test_unit_modulus(self):
        v = steering_vector(0.7123, 32)
        assert np.max(np.abs(np.abs(v) - 1.0)) <= 1e-12


class TestGeometryModel:
    def test_single_path_rank_one(self):
        stats = build_geometry_stats(DIMS, GeometryModelParams(n_paths=1), seed=5)
        for k, c in enumerate(stats.covariances):
            assert numerical_rank(c, 1e-10) == 1
            # trace = g * M with a single path carrying the full gain
            assert np.isclose(np.real(np.trace(c)), stats.gains[k] * DIMS.M)

    def test_rank_bounded_by_path_count(self):
        stats = build_geometry_stats(DIMS, GeometryModelParams(n_paths=4), seed=3)
        for c in stats.covariances:
            assert numerical_rank(c, 1e-12) <= 4

    def test_paper_scale_full_rank(self):
        dims = SystemDims(M=64, S=8, K=8, T_p=8, L=4, T=20, P_max=10.0)
        stats = build_geometry_stats(dims, GeometryModelParams(), seed=18)
        assert [numerical_rank(c, 1e-12) for c in stats.covariances] == [8] * 8

    def test_hermitian_and_psd(self):
        stats = build_geometry_stats(DIMS, GeometryModelParams(), seed=1)
        for c in stats.covariances:
            assert hermitian_error(c) <= 1e-10
            assert np.linalg.eigvalsh(c).min() >= -1e-8 * np.real(np.trace(c)) / DIMS.M

    def test_deterministic(self):
        a = build_geometry_stats(DIMS, GeometryModelParams(), seed=7)
        b = build_geometry_stats(DIMS, GeometryModelParams(), seed=7)
        assert np.array_equal(a.covariances, b.covariances)

    def test_gain_range_respected(self):
        stats = build_geometry_stats(DIMS, GeometryModelParams(gain_db_range=(0.0, 0.0)),
                                     seed=2)
        assert np.allclose(stats.gains, 1.0)

    def test_invalid_params(self):
        with pytest.raises(ConfigurationError):
            GeometryModelParams(n_paths=0)
        with pytest.raises(ConfigurationError):
            GeometryModelParams(sigma_as_deg=-1.0)
        with pytest.raises(ConfigurationError):
            GeometryModelParams(gain_db_range=(5.0, -5.0))


class TestCost2100Model:
    def test_paper_scale_numerical_rank(self):
        dims = SystemDims(M=64, S=8, K=8, T_p=8, L=4, T=20, P_max=10.0)
        stats = build_cost2100_stats(dims, Cost2100ModelParams(), seed=1)
        ranks = [numerical_rank(c) for c in stats.covariances]
        assert all(32 <= r <= 40 for r in ranks)

    def test_full_range_cluster_is_identity_like(self):
        # one cluster covering all of [-1, 1): Fourier orthogonality makes the
        # covariance diagonal in the fine-grid limit
        dims = SystemDims(M=16, S=2, K=2, T_p=2, L=1, T=20, P_max=1.0)
        params = Cost2100ModelParams(n_clusters=1, clusters_per_user=1,
                                     cluster_width=2.0, grid_points=4096)
        stats = build_cost2100_stats(dims, params, seed=0)
        for c in stats.covariances:
            diag = np.abs(np.diag(c))
            off = np.abs(c - np.diag(np.diag(c)))
            assert off.max() <= 0.05 * diag.min()

    def test_trace_normalization(self):
        stats = build_cost2100_stats(DIMS, Cost2100ModelParams(), seed=4)
        for k, c in enumerate(stats.covariances):
            assert np.isclose(np.real(np.trace(c)), DIMS.M * stats.gains[k])

    def test_deterministic(self):
        a = build_cost2100_stats(DIMS, Cost2100ModelParams(), seed=9)
        b = build_cost2100_stats(DIMS, Cost2100ModelParams(), seed=9)
        assert np.array_equal(a.covariances, b.covariances)

    def test_invalid_params(self):
        with pytest.raises(ConfigurationError):
            Cost2100ModelParams(clusters_per_user=4, n_clusters=3)
        with pytest.raises(ConfigurationError):
            Cost2100ModelParams(cluster_width=0.0)
        with pytest.raises(ConfigurationError):
            Cost2100ModelParams(grid_points=16)


class TestSampling:
    def test_zero_covariance_gives_zero_channel(self):
        dims = SystemDims(M=4, S=2, K=2, T_p=2, L=1, T=20, P_max=1.0)
        stats = ChannelStats(dims=dims, covariances=np.zeros((2, 4, 4), dtype=complex))
        for s in sample_channels(stats, 3, seed=0):
            assert np.all(s.H == 0)
            assert np.any(s.N != 0)

    def test_empirical_covariance_converges(self):
        dims = SystemDims(M=4, S=2, K=1, T_p=2, L=1, T=20, P_max=1.0)
        stats = ChannelStats(dims=dims, covariances=np.eye(4, dtype=complex)[None])
        samples = sample_channels(stats, 100000, seed=7)
        emp = np.zeros((4, 4), dtype=complex)
        for s in samples:
            h = np.conj(s.H[0])
            emp += np.outer(h, h.conj())
        emp /= len(samples)
        assert np.linalg.norm(emp - np.eye(4)) <= 0.05 * 4

    def test_deterministic_lists(self):
        stats = build_geometry_stats(DIMS, GeometryModelParams(), seed=1)
        a = sample_channels(stats, 3, seed=5)
        b = sample_channels(stats, 3, seed=5)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.H, sb.H)
            assert np.array_equal(sa.N, sb.N)

    def test_prefix_stability(self):
        # per-sample derived seeds: the first samples do not depend on count
        stats = build_geometry_stats(DIMS, GeometryModelParams(), seed=1)
        a = sample_channels(stats, 2, seed=5)
        b = sample_channels(stats, 6, seed=5)
        assert np.array_equal(a[1].H, b[1].H)

    def test_rejects_non_psd(self):
        dims = SystemDims(M=2, S=1, K=1, T_p=1, L=1, T=20, P_max=1.0)
        bad = np.array([[[1.0, 0.0], [0.0, -0.5]]], dtype=complex)
        with pytest.raises(DataError):
            ChannelStats(dims=dims, covariances=bad)
