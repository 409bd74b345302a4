import numpy as np
import pytest

from rcshp import (ControlPolicy, ControlVariable, analog_from_phases,
                   duality_digital_precoder, rzf_digital_precoder)
from rcshp.errors import ConfigurationError
from rcshp.precoding import duality_core, rzf_core
from rcshp.seeding import complex_normal, rng_from


def random_case(seed, M=4, S=2, K=2):
    rng = rng_from(seed)
    F = analog_from_phases(rng.uniform(0, 2 * np.pi, M * S), M, S)
    H_eff = complex_normal(rng, (K, S))
    p = rng.uniform(0.2, 1.0, K)
    return F, H_eff, p


class TestAnalogPrecoder:
    def test_zero_phases(self):
        F = analog_from_phases(np.zeros(8), 4, 2)
        assert np.allclose(F, 0.5)
        assert np.allclose(np.linalg.norm(F, axis=0), 1.0)

    def test_pi_phases(self):
        F = analog_from_phases(np.full(8, np.pi), 4, 2)
        assert np.allclose(F, -0.5)

    def test_frobenius_norm_is_sqrt_s(self):
        rng = rng_from(0)
        F = analog_from_phases(rng.uniform(0, 2 * np.pi, 24), 8, 3)
        assert abs(np.linalg.norm(F) ** 2 - 3.0) <= 1e-12

    def test_fortran_order_indexing(self):
        theta = np.arange(6, dtype=float) * 0.1
        F = analog_from_phases(theta, 3, 2)
        # element (i, j) carries phase theta[(j)*M + i] (0-based)
        assert np.isclose(np.angle(F[1, 1]), theta[3 + 1])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            analog_from_phases(np.zeros(7), 4, 2)


class TestDualityPrecoder:
    def test_single_user_matched_filter(self):
        F, H_eff, _ = random_case(1, K=1)
        result = duality_digital_precoder(H_eff, np.array([0.7]), F)
        g = result.G[:, 0]
        assert np.isclose(np.linalg.norm(F @ g), 1.0)
        h = np.conj(H_eff[0])  # effective channel vector
        cos = abs(np.vdot(g, h)) / (np.linalg.norm(g) * np.linalg.norm(h))
        assert cos >= 1 - 1e-10

    def test_equal_power_equals_rzf(self):
        # with p_k = P/K the duality rule reduces to RZF with alpha = K/P
        for seed in range(20):
            F, H_eff, _ = random_case(seed, M=6, S=3, K=3)
            P_max = 5.0
            p = np.full(3, P_max / 3)
            dual = duality_core(H_eff, p)
            rzf = rzf_core(H_eff, alpha=3 / P_max)
            scale = np.abs(rzf).max()
            assert np.abs(dual - rzf).max() <= 1e-10 * scale
            d_norm = duality_digital_precoder(H_eff, p, F)
            r_norm = rzf_digital_precoder(H_eff, 3 / P_max, F)
            assert np.abs(d_norm.G - r_norm.G).max() <= 1e-10 * np.abs(r_norm.G).max()

    def test_matches_scalar_formula(self):
        # dense-formula oracle: explicit inverse of (H^H P H + I)
        F, H_eff, p = random_case(2, M=4, S=2, K=2)
        inner = H_eff.conj().T @ np.diag(p) @ H_eff + np.eye(2)
        core = np.linalg.inv(inner) @ H_eff.conj().T @ np.diag(p)
        bar = F @ core
        expected = core / np.linalg.norm(bar, axis=0)
        got = duality_digital_precoder(H_eff, p, F)
        assert np.abs(got.G - expected).max() <= 1e-12

    def test_column_normalization(self):
        for seed in range(10):
            F, H_eff, p = random_case(seed, M=8, S=3, K=3)
            res = duality_digital_precoder(H_eff, p, F)
            norms = np.linalg.norm(F @ res.G, axis=0)
            assert np.abs(norms - 1.0).max() <= 1e-9

    def test_zero_power_user_gets_zero_column(self):
        F, H_eff, p = random_case(3, K=3, S=2, M=4)
        p = p.copy()
        p[1] = 0.0
        res = duality_digital_precoder(H_eff, p, F)
        assert np.all(res.G[:, 1] == 0)
        assert res.norm_factors[1] == 0
        assert np.isclose(np.linalg.norm(F @ res.G[:, 0]), 1.0)

    def test_sum_power_accounting(self):
        # unit-norm transmit columns: radiated power is exactly sum(p)
        F, H_eff, p = random_case(4, M=6, S=3, K=3)
        res = duality_digital_precoder(H_eff, p, F)
        FG = F @ res.G
        radiated = sum(p[k] * np.linalg.norm(FG[:, k]) ** 2 for k in range(3))
        assert np.isclose(radiated, p.sum())

    def test_rejects_negative_power(self):
        F, H_eff, p = random_case(5)
        with pytest.raises(ConfigurationError):
            duality_digital_precoder(H_eff, np.array([-0.5, 0.2]), F)

    def test_smooth_in_power_allocation(self):
        # central differences of the normalized precoder entries match the
        # analytic derivative chain shared with the rate Jacobian
        from rcshp.jacobian import duality_precoder_power_jacobian
        for seed in range(5):
            F, H_eff, p = random_case(seed, M=6, S=3, K=3)
            dG = duality_precoder_power_jacobian(H_eff, p, F)
            h = 1e-6
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                gp = duality_digital_precoder(H_eff, p + e, F).G
                gm = duality_digital_precoder(H_eff, p - e, F).G
                fd = (gp - gm) / (2 * h)
                assert np.abs(fd - dG[j]).max() <= 1e-5 * max(np.abs(fd).max(), 1.0)


class TestRzfPrecoder:
    def test_large_alpha_matched_filter_limit(self):
        F, H_eff, _ = random_case(6, M=4, S=2, K=2)
        res = rzf_digital_precoder(H_eff, alpha=1e9, F=F)
        for k in range(2):
            h = np.conj(H_eff[k])
            g = res.G[:, k]
            cos = abs(np.vdot(g, h)) / (np.linalg.norm(g) * np.linalg.norm(h))
            assert cos >= 1 - 1e-6

    def test_single_user_same_as_duality(self):
        F, H_eff, _ = random_case(7, K=1)
        rzf = rzf_digital_precoder(H_eff, alpha=2.0, F=F).G[:, 0]
        dual = duality_digital_precoder(H_eff, np.array([0.9]), F).G[:, 0]
        cos = abs(np.vdot(rzf, dual)) / (np.linalg.norm(rzf) * np.linalg.norm(dual))
        assert cos >= 1 - 1e-9

    def test_rejects_nonpositive_alpha(self):
        F, H_eff, _ = random_case(8)
        with pytest.raises(ConfigurationError):
            rzf_digital_precoder(H_eff, alpha=0.0, F=F)


class TestControlTypes:
    def test_control_variable_validation(self):
        ControlVariable(theta=np.array([0.0, 6.28]), p=np.array([1.0]))
        with pytest.raises(ConfigurationError):
            ControlVariable(theta=np.array([-0.5]), p=np.array([1.0]))
        with pytest.raises(ConfigurationError):
            ControlVariable(theta=np.array([1.0]), p=np.array([-1.0]))

    def test_budget_validation(self):
        gamma = ControlVariable(theta=np.zeros(2), p=np.array([3.0, 3.0]))
        gamma.validate_budget(6.0)
        with pytest.raises(ConfigurationError):
            gamma.validate_budget(4.0)

    def test_policy_simplex_validation(self):
        g = ControlVariable(theta=np.zeros(2), p=np.array([1.0]))
        ControlPolicy(gammas=[g, g], q=np.array([0.4, 0.6]))
        with pytest.raises(ConfigurationError):
            ControlPolicy(gammas=[g, g], q=np.array([0.7, 0.6]))

    def test_feasibility_residual_zero_when_feasible(self):
        g = ControlVariable(theta=np.array([0.1, 2.0]), p=np.array([0.5, 0.5]))
        pol = ControlPolicy(gammas=[g], q=np.ones(1))
        assert pol.feasibility_residual(2.0) == 0.0
