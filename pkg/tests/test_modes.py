import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from colddamp.errors import UnequalRates
from colddamp.lyapunov import solve_config
from colddamp.model import damping_matrix, linear_chain_config
from colddamp.modes import (
    collective_covariance,
    collective_spectrum,
    energy_form_identity_check,
    gram_schmidt_basis,
    transformed_damping,
)

from oracles import quiet_config


def uniform_config(n, rate=0.02, omega=None):
    # Gamma_jk = g G omega / kappa; equal omega, G and g give uniform rates
    omega = np.ones(n) if omega is None else omega
    return quiet_config(omega, 0.0, 10, rate * 3 / 0.5, 0.5, 3, 3.5)


class TestBasis:
    def test_single(self):
        np.testing.assert_array_equal(gram_schmidt_basis(1).alpha, [[1.0]])

    def test_two_modes(self):
        s = 1 / np.sqrt(2)
        np.testing.assert_allclose(gram_schmidt_basis(2).alpha, [[s, s], [s, -s]], atol=1e-15)

    def test_three_mode_coefficients(self):
        w1, w2, w3 = 1.0, 1.15, 1.4
        basis = gram_schmidt_basis(3, seed_order=(1, 0))
        g = collective_spectrum(basis, [w1, w2, w3]).couplings
        assert g[0, 1] == pytest.approx((w1 - 2 * w2 + w3) / (3 * np.sqrt(2)), abs=1e-12)
        assert g[0, 2] == pytest.approx((w1 - w3) / np.sqrt(6), abs=1e-12)

    def test_default_order_rows(self):
        a = gram_schmidt_basis(3).alpha * np.sqrt(6)
        np.testing.assert_allclose(a[1], [2, -1, -1], atol=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3, 5, 17, 64])
    def test_orthonormal_and_dark_sums(self, n):
        a = gram_schmidt_basis(n).alpha
        np.testing.assert_allclose(a @ a.T, np.eye(n), atol=1e-12)
        assert np.abs(a[1:].sum(axis=1)).max(initial=0.0) < 1e-12
        np.testing.assert_allclose(a[0], 1 / np.sqrt(n), rtol=1e-15)

    def test_bad_seed_order(self):
        with pytest.raises(ValueError):
            gram_schmidt_basis(3, seed_order=(0,))


class TestDamping:
    def test_three_modes(self):
        c = uniform_config(3, 0.02)
        out = transformed_damping(gram_schmidt_basis(3), c)
        assert out[1, 1] == pytest.approx(-0.06, rel=1e-12)
        mask = np.ones_like(out, bool)
        mask[1, 1] = False
        assert np.abs(out[mask]).max() < 1e-12

    def test_two_modes(self):
        c = uniform_config(2, 0.03)
        assert transformed_damping(gram_schmidt_basis(2), c)[1, 1] == pytest.approx(-0.06, rel=1e-12)

    def test_unequal(self):
        c = quiet_config([1.0, 1.2], 0.0, 10, 0.1, 0.8, 3, 3.5)
        with pytest.raises(UnequalRates):
            transformed_damping(gram_schmidt_basis(2), c)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(1, 6), rate=st.floats(1e-4, 0.2))
    def test_rank_one(self, n, rate):
        c = uniform_config(n, rate)
        out = transformed_damping(gram_schmidt_basis(n), c)
        ev = np.linalg.eigvals(out)
        ev = ev[np.argsort(ev.real)]
        assert ev[0].real == pytest.approx(-n * damping_matrix(c)[0, 0], rel=1e-12)
        assert np.abs(ev[1:]).max(initial=0.0) < 1e-12


class TestSpectrum:
    def test_degenerate(self):
        spec = collective_spectrum(gram_schmidt_basis(4), np.full(4, 1.3))
        np.testing.assert_allclose(spec.couplings, 1.3 * np.eye(4), atol=1e-12)

    def test_two_mode_coupling(self):
        spec = collective_spectrum(gram_schmidt_basis(2), [1.0, 0.9])
        assert spec.couplings[0, 1] == pytest.approx(0.05, abs=1e-12)
        assert spec.Omega[0] == pytest.approx(0.95, abs=1e-15)

    def test_bright_is_arithmetic_mean(self):
        w = [1.0, 2.0, 4.0]
        assert collective_spectrum(gram_schmidt_basis(3), w).Omega[0] == pytest.approx(7 / 3)

    def test_linear_dispersion(self):
        n, delta = 10, 0.1
        w = 1.0 + delta * np.arange(n)
        basis = gram_schmidt_basis(n)
        spec = collective_spectrum(basis, w)
        bd = np.abs(spec.bright_dark)
        assert np.all(np.diff(bd) < 0)
        spec2 = collective_spectrum(basis, 1.0 + 2 * delta * np.arange(n))
        np.testing.assert_allclose(np.abs(spec2.bright_dark), 2 * bd, rtol=1e-10)
        a = basis.alpha
        expect = (1.0) * np.eye(n) + delta * (a * np.arange(n)) @ a.T
        np.testing.assert_allclose(spec.couplings, expect, atol=1e-12)


class TestEnergyIdentity:
    def test_random_covariance(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((8, 8))
        v = x @ x.T
        w = rng.uniform(0.5, 2, 4)
        total = float(np.sum(w * (np.diag(v)[0::2] + np.diag(v)[1::2])))
        assert energy_form_identity_check(gram_schmidt_basis(4), w, v) <= 1e-10 * total

    def test_lyapunov_covariance(self):
        c = linear_chain_config(4)
        cov = solve_config(c)
        total = float(np.sum(c.omega * 2 * (cov.values.diagonal()[0::2] + cov.values.diagonal()[1::2])))
        assert energy_form_identity_check(gram_schmidt_basis(4), c.omega, cov) <= 1e-10 * total

    def test_dark_modes_untouched_when_degenerate(self):
        n = 3
        c = uniform_config(n, 0.02).with_modes(gamma=1e-9, nbar=50.0, coupling_G=1e-6)
        c = c.with_modes(gain_gcd=0.02 * 3 / 1e-6)
        # pure feedback damping with tiny back-action: dark modes stay at their bath value
        u = collective_covariance(gram_schmidt_basis(n), solve_config(c))
        dark = np.diag(u)[2:]
        np.testing.assert_allclose(dark, 50.5, rtol=1e-5)
