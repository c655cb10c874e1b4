import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from colddamp.errors import SingularSystem, Unstable
from colddamp.lyapunov import (
    CovarianceMatrix,
    lyapunov_residual,
    mode_report,
    solve_componentwise,
    solve_config,
    solve_steady_lyapunov,
    stability_margin,
)
from colddamp.model import (
    DriftDiffusionPair,
    reference_two_mode_config,
    damping_matrix,
    diffusion_matrix,
    drift_diffusion,
    drift_matrix,
    linear_chain_config,
)

from oracles import quiet_config, relax_covariance, single_mode_covariance, single_mode_margin


class TestStabilityMargin:
    def test_single_mode(self):
        m = np.array([[0, 1.0], [-1.0, -0.04]])
        assert stability_margin(m) == pytest.approx(single_mode_margin(1.0, 0.04), rel=1e-12)
        assert stability_margin(m) == pytest.approx(-0.02, rel=1e-12)

    def test_zero_matrix(self):
        assert stability_margin(np.zeros((4, 4))) == 0

    def test_two_mode_decays(self):
        m = drift_matrix(reference_two_mode_config())
        margin = stability_margin(m)
        assert margin < 0
        # time-domain cross-check: norm of the propagator decays at the margin rate
        t = 400.0
        rate = np.log(np.linalg.norm(expm(m * 2 * t), 2) / np.linalg.norm(expm(m * t), 2)) / t
        assert rate == pytest.approx(margin, rel=0.05)

    def test_non_square(self):
        with pytest.raises(ValueError):
            stability_margin(np.zeros((2, 3)))


class TestSolve:
    def test_single_mode_hand_solution(self):
        c = quiet_config(1.0, 1e-5, 100, 0.16, 0.8, 3, 3.5)
        pair = drift_diffusion(c)
        rate = damping_matrix(c)[0, 0]
        v = solve_steady_lyapunov(pair).values
        np.testing.assert_allclose(v, single_mode_covariance(pair.diffusion[1, 1], rate),
                                   rtol=1e-12, atol=1e-15)
        occ = mode_report(solve_config(c)).occupancy[0]
        # energy is D/(2 Gamma); see the component equation Gamma X_11 = D with X_11 = 2<p^2>
        assert occ == pytest.approx(pair.diffusion[1, 1] / (2 * rate) - 0.5, rel=1e-12)

    def test_zero_noise(self):
        m = drift_matrix(reference_two_mode_config())
        v = solve_steady_lyapunov(DriftDiffusionPair(m, np.zeros_like(m))).values
        assert np.abs(v).max() < 1e-300 or np.all(v == 0)

    def test_unstable(self):
        m = np.array([[0, 1.0], [-1.0, 0.01]])
        with pytest.raises(Unstable) as err:
            solve_steady_lyapunov(DriftDiffusionPair(m, np.eye(2)))
        assert err.value.margin > 0

    def test_marginal_is_unstable(self):
        c = quiet_config(1.0, 0.0, 10, 0.0, 0.0, 3, 3.5)
        with pytest.raises((Unstable, SingularSystem)):
            solve_config(c)

    def test_against_time_relaxation(self):
        c = quiet_config([1.0, 1.3], [1e-3, 2e-3], [5, 8], [0.3, 0.2], [1.0, 0.7], 4, 4.5)
        pair = drift_diffusion(c)
        v = solve_steady_lyapunov(pair).values
        np.testing.assert_allclose(v, relax_covariance(pair.drift, pair.diffusion, dt=0.02),
                                   rtol=1e-6, atol=1e-9)

    def test_methods_agree(self):
        pair = drift_diffusion(linear_chain_config(6))
        a = solve_steady_lyapunov(pair, method="kronecker").values
        b = solve_steady_lyapunov(pair, method="schur").values
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)

    def test_eight_mode_chain_is_cooled(self):
        c = linear_chain_config(8)
        rep = mode_report(solve_config(c))
        assert np.all(rep.occupancy < 0.05 * c.nbar)
        assert np.all(rep.energy > 0)
        # no anomalous mode: all within a factor of a few of each other
        assert rep.energy.max() / rep.energy.min() < 5

    def test_detuning_rejected(self):
        c = reference_two_mode_config().with_cavity(detuning=0.1)
        with pytest.raises(ValueError):
            solve_config(c)


class TestModeReport:
    def test_identity(self):
        rep = mode_report(CovarianceMatrix(np.eye(4)))
        np.testing.assert_array_equal(rep.energy, [1, 1])
        np.testing.assert_array_equal(rep.occupancy, [0.5, 0.5])

    def test_thermal(self):
        rep = mode_report(CovarianceMatrix(np.diag([10.5, 10.5, 3.5, 3.5])))
        np.testing.assert_allclose(rep.occupancy, [10, 3])

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            CovarianceMatrix(np.array([[1.0, 0.1], [0.0, 1.0]]))

    def test_rejects_odd(self):
        with pytest.raises(ValueError):
            CovarianceMatrix(np.eye(3))


class TestComponentwise:
    def test_single_mode(self):
        c = quiet_config(1.0, 1e-5, 100, 0.16, 0.8, 3, 3.5)
        x, y, z = solve_componentwise(c)
        d_pp = diffusion_matrix(c)[1, 1]
        assert x[0, 0] == pytest.approx(d_pp / damping_matrix(c)[0, 0], rel=1e-12)
        assert y[0, 0] == 0

    def test_matches_lyapunov_two_mode(self):
        c = reference_two_mode_config()
        x, y, z = solve_componentwise(c)
        v = solve_config(c).values
        np.testing.assert_allclose(x, 2 * v[1::2, 1::2], rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(z, 2 * v[0::2, 0::2], rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(y, 2 * v[0::2, 1::2], rtol=1e-8, atol=1e-12)

    def test_degenerate_frequencies_allowed(self):
        c = reference_two_mode_config(omega=(1.0, 1.0))
        x, y, z = solve_componentwise(c)
        v = solve_config(c).values
        np.testing.assert_allclose(x, 2 * v[1::2, 1::2], rtol=1e-8)

    def test_structure(self):
        c = quiet_config([1.0, 1.2, 1.5], [1e-4, 2e-4, 3e-4], 50, [0.1, 0.2, 0.15],
                         [0.6, 0.8, 1.0], 5, 5.5)
        x, y, z = solve_componentwise(c)
        w = c.omega
        assert np.all(np.diag(y) == 0)
        np.testing.assert_allclose(x, x.T, rtol=1e-12)
        np.testing.assert_allclose(z, z.T, rtol=1e-12)
        lhs = w[None, :] * y + w[:, None] * y.T
        assert np.abs(lhs).max() < 1e-10 * np.abs(x).max()


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_residual_property(seed):
    from oracles import random_stable_config

    rng = np.random.default_rng(seed)
    c = random_stable_config(rng)
    pair = drift_diffusion(c)
    if stability_margin(pair.drift) >= -1e-9:
        return
    v = solve_steady_lyapunov(pair).values
    assert lyapunov_residual(pair.drift, v, pair.diffusion) <= 1e-10 * np.abs(pair.diffusion).max()
    assert np.all(np.diag(v) >= 0)
    assert np.linalg.eigvalsh(v).min() >= -1e-9 * np.abs(v).max()
