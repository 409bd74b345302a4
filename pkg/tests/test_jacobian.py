import numpy as np
import pytest

from rcshp import (ControlPolicy, ControlVariable,
                   GeometryModelParams, SystemDims, build_geometry_stats,
                   finite_difference_jacobian, generate_pilots, instantaneous_rates,
                   policy_jacobian, rate_gradient_power, rate_gradient_theta,
                   rate_jacobian_single, sample_channels)
from rcshp.errors import ConfigurationError
from rcshp.jacobian import _rate_derivs, _rate_derivs_loop
from rcshp.seeding import derive, rng_from

FD_STEP = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-3  # entries below this magnitude are compared absolutely (scaled)


def make_case(seed, M=4, S=2, K=2, T_p=2, n_paths=4):
    dims = SystemDims(M=M, S=S, K=K, T_p=T_p, L=1, T=20, P_max=4.0)
    stats = build_geometry_stats(dims, GeometryModelParams(n_paths=n_paths),
                                 derive(seed, 0))
    pilots = generate_pilots(T_p, S, dims.P_max, derive(seed, 1))
    sample = sample_channels(stats, 1, derive(seed, 2))[0]
    rng = rng_from(derive(seed, 3))
    gamma = ControlVariable(theta=rng.uniform(0, 2 * np.pi, M * S),
                            p=rng.uniform(0.2, 1.0, K) * dims.P_max / K)
    return stats, pilots, sample, gamma


def fd_rates(gamma, sample, stats, pilots, csi_mode="estimated"):
    n_theta = gamma.theta.size

    def f(x):
        g = ControlVariable(theta=x[:n_theta], p=np.maximum(x[n_theta:], 0.0))
        return instantaneous_rates(g, sample, stats, pilots, csi_mode=csi_mode)

    return finite_difference_jacobian(f, np.concatenate([gamma.theta, gamma.p]), FD_STEP)


def assert_gradient_match(analytic, fd):
    denom = np.maximum(np.abs(fd), ABS_FLOOR)
    err = np.abs(analytic - fd) / denom
    assert err.max() <= REL_TOL, f"max mixed error {err.max():.3e}"


class TestFiniteDifferenceOracle:
    def test_square_function(self):
        J = finite_difference_jacobian(lambda x: x ** 2, np.array([3.0]), 1e-5)
        assert abs(J[0, 0] - 6.0) <= 1e-9

    def test_linear_function_exact(self):
        A = np.array([[1.0, 2.0], [3.0, -4.0]])
        J = finite_difference_jacobian(lambda x: A @ x, np.array([0.3, -0.7]), 1e-4)
        assert np.abs(J - A.T).max() <= 1e-10

    def test_step_halving_consistency(self):
        stats, pilots, sample, gamma = make_case(0)
        base = None
        for step in (1e-4, 1e-5, 1e-6):
            def f(x):
                g = ControlVariable(theta=x[:8], p=x[8:])
                return instantaneous_rates(g, sample, stats, pilots)
            J = finite_difference_jacobian(f, np.concatenate([gamma.theta, gamma.p]), step)
            if base is not None:
                assert np.abs(J - base).max() <= 1e-5
            base = J

    def test_rejects_bad_step(self):
        with pytest.raises(ConfigurationError):
            finite_difference_jacobian(lambda x: x, np.zeros(1), 0.0)


class TestThetaGradient:
    def test_matches_finite_differences(self):
        for seed in range(5):
            stats, pilots, sample, gamma = make_case(seed)
            d_theta = rate_gradient_theta(gamma, sample, stats, pilots)
            fd = fd_rates(gamma, sample, stats, pilots)
            assert_gradient_match(d_theta, fd[:gamma.theta.size])

    def test_perfect_csi_variant(self):
        # estimate == truth bypasses the LMMSE derivative chain entirely
        for seed in range(3):
            stats, pilots, sample, gamma = make_case(seed, M=8, S=2, K=3, T_p=3)
            d_theta = rate_gradient_theta(gamma, sample, stats, pilots, csi_mode="perfect")
            fd = fd_rates(gamma, sample, stats, pilots, csi_mode="perfect")
            assert_gradient_match(d_theta, fd[:gamma.theta.size])

    def test_zero_power_gives_zero_gradient(self):
        stats, pilots, sample, gamma = make_case(1)
        gamma0 = ControlVariable(theta=gamma.theta, p=np.zeros(2))
        assert np.all(rate_gradient_theta(gamma0, sample, stats, pilots) == 0)

    def test_two_pi_periodicity(self):
        stats, pilots, sample, gamma = make_case(2)
        d0 = rate_gradient_theta(gamma, sample, stats, pilots)
        for i in (0, 3):
            # recompute with one phase wrapped a full turn (bypassing the box
            # check, which is about feasibility, not the function's domain)
            theta = gamma.theta.copy()
            theta[i] = theta[i] - 2 * np.pi
            d1, _ = _rate_derivs(theta, gamma.p, sample.H, sample.N, stats, pilots,
                                 "estimated", 1.0)
            assert np.abs(d1 - d0).max() <= 1e-10

    def test_vectorized_equals_loop_reference(self):
        for seed in range(3):
            for mode in ("estimated", "perfect"):
                stats, pilots, sample, gamma = make_case(seed, M=4, S=2, K=3, T_p=3)
                dv = _rate_derivs(gamma.theta, gamma.p, sample.H, sample.N, stats,
                                  pilots, mode, 1.0)
                dl = _rate_derivs_loop(gamma.theta, gamma.p, sample.H, sample.N, stats,
                                       pilots, mode, 1.0)
                assert np.abs(dv[0] - dl[0]).max() <= 1e-12
                assert np.abs(dv[1] - dl[1]).max() <= 1e-12


class TestPowerGradient:
    def test_matches_finite_differences(self):
        for seed in range(5):
            stats, pilots, sample, gamma = make_case(seed)
            d_p = rate_gradient_power(gamma, sample, stats, pilots)
            fd = fd_rates(gamma, sample, stats, pilots)
            assert_gradient_match(d_p, fd[gamma.theta.size:])

    def test_single_user_closed_form(self):
        # fixed direction: dr/dp = |h^H F g|^2 / (ln 2 (1 + p |h^H F g|^2))
        stats, pilots, sample, gamma = make_case(3, M=4, S=1, K=1, T_p=2)
        d_p = rate_gradient_power(gamma, sample, stats, pilots)
        r0 = instantaneous_rates(gamma, sample, stats, pilots)
        gain = (2.0 ** r0[0] - 1.0) / gamma.p[0]  # recover |h^H F g|^2
        expected = gain / (np.log(2.0) * (1.0 + gamma.p[0] * gain))
        assert np.isclose(d_p[0, 0], expected, rtol=1e-9)

    def test_cross_term_interference_sign(self):
        # a nearly-silent user: on this interference-dominated instance the
        # marginal power given to user 1 hurts both other users.  Central
        # differences need p > step, so the check sits just off the boundary
        # where the pipeline is smooth.
        stats, pilots, sample, gamma = make_case(0, K=3)
        p = gamma.p.copy()
        p[1] = 1e-3
        gamma_eps = ControlVariable(theta=gamma.theta, p=p)
        d_eps = rate_gradient_power(gamma_eps, sample, stats, pilots)
        fd = fd_rates(gamma_eps, sample, stats, pilots)[gamma.theta.size:]
        assert_gradient_match(d_eps, fd)
        for k in (0, 2):
            assert d_eps[1, k] <= 0 and fd[1, k] <= 0


class TestPolicyJacobian:
    def test_zero_weight_state_block_is_zero(self):
        stats, pilots, sample, gamma = make_case(5)
        _, _, _, gamma2 = make_case(6)
        policy = ControlPolicy(gammas=[gamma, gamma2], q=np.array([1.0, 0.0]))
        jac = policy_jacobian(policy, [sample], stats, pilots)[0]
        MS = gamma.theta.size
        block2 = jac.matrix[MS + 2:]
        assert np.all(block2 == 0)

    def test_single_state_concatenation(self):
        stats, pilots, sample, gamma = make_case(7)
        policy = ControlPolicy(gammas=[gamma], q=np.ones(1))
        jac = policy_jacobian(policy, [sample], stats, pilots)[0]
        d_theta, d_p = rate_jacobian_single(gamma, sample, stats, pilots)
        assert np.allclose(jac.matrix, np.vstack([d_theta, d_p]))

    def test_two_state_finite_difference(self):
        # FD of the q-weighted rate vector w.r.t. the stacked control vector
        stats, pilots, sample, gamma = make_case(8)
        _, _, _, gamma2 = make_case(9)
        q = np.array([0.3, 0.7])
        policy = ControlPolicy(gammas=[gamma, gamma2], q=q)
        jac = policy_jacobian(policy, [sample], stats, pilots)[0]
        MS, K = gamma.theta.size, 2
        n = MS + K

        def weighted_rates(x):
            out = np.zeros(K)
            for l, g0 in enumerate((gamma, gamma2)):
                block = x[l * n:(l + 1) * n]
                g = ControlVariable(theta=block[:MS], p=block[MS:])
                out += q[l] * instantaneous_rates(g, sample, stats, pilots)
            return out

        x0 = np.concatenate([gamma.theta, gamma.p, gamma2.theta, gamma2.p])
        fd = finite_difference_jacobian(weighted_rates, x0, FD_STEP)
        assert_gradient_match(jac.matrix, fd)
