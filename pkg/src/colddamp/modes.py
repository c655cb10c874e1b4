"""
Bright and dark collective modes.

The feedback only sees the momentum combination its gains select.  For
uniform damping ``Gamma_jk = Gamma`` that is the symmetric (bright) mode
``sum_j p_j / sqrt(N)``; the orthogonal complement is spanned by N-1 dark
modes built by Gram-Schmidt.  In the collective basis the damping acts on
the bright mode alone with rate ``N Gamma``, and frequency differences
couple bright and dark modes through ``g_kk' = sum_j a_kj a_k'j omega_j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnequalRates
from .model import SystemConfig, damping_matrix

__all__ = [
    "ModeBasis",
    "CollectiveSpectrum",
    "gram_schmidt_basis",
    "phase_space_transform",
    "transformed_damping",
    "collective_spectrum",
    "collective_covariance",
    "energy_form_identity_check",
]


@dataclass(frozen=True)
class ModeBasis:
    alpha: np.ndarray

    @property
    def n_modes(self):
        return self.alpha.shape[0]

    @property
    def bright(self):
        return self.alpha[0]

    @property
    def dark(self):
        return self.alpha[1:]


@dataclass(frozen=True)
class CollectiveSpectrum:
    Omega: np.ndarray
    couplings: np.ndarray

    @property
    def bright_dark(self):
        """Couplings of the bright mode to each dark mode."""
        return self.couplings[0, 1:]


def gram_schmidt_basis(n, seed_order=None):
    """Orthonormal collective basis whose first row is the bright mode.

    The dark rows come from orthonormalizing the coordinate directions
    ``e_k`` in ``seed_order`` (default ``0, 1, ..., N-1``) against the
    bright row and each other; directions that become dependent are
    skipped.  Each dark row is signed so that its first nonzero entry is
    positive.  Modified Gram-Schmidt with one re-orthogonalization pass.
    """
    n = int(n)
    if n < 1:
        raise ValueError("need at least one mode")
    order = range(n) if seed_order is None else [int(k) for k in seed_order]
    rows = [np.full(n, 1.0 / np.sqrt(n))]
    for k in order:
        if len(rows) == n:
            break
        v = np.zeros(n)
        v[k] = 1.0
        for _ in range(2):
            for r in rows:
                v -= (r @ v) * r
        norm = np.linalg.norm(v)
        if norm < 1e-8:
            continue
        v /= norm
        lead = v[np.flatnonzero(np.abs(v) > 1e-12)[0]]
        rows.append(v if lead > 0 else -v)
    if len(rows) != n:
        raise ValueError(f"seed_order {list(order)} does not span the dark subspace")
    return ModeBasis(np.array(rows))


def phase_space_transform(basis: ModeBasis):
    """The 2N x 2N matrix T mapping ``(q_1, p_1, ...)`` to ``(Q_1, P_1, ...)``."""
    return np.kron(basis.alpha, np.eye(2))


def transformed_damping(basis: ModeBasis, config: SystemConfig, rtol=1e-12):
    """Damping block of the drift in the collective basis, ``T M_Gamma T^T``.

    Requires uniform rates ``Gamma_jk = Gamma`` for all ``j, k`` (feedback
    part only; the bare ``gamma`` is excluded).  The result is the
    phase-space matrix whose only nonzero entry is ``-N Gamma`` at the
    bright momentum position.
    """
    fb = damping_matrix(config) - np.diag(config.gamma)
    rate = fb[0, 0]
    if np.abs(fb - rate).max() > rtol * max(abs(rate), 1e-300):
        raise UnequalRates("feedback damping rates Gamma_jk are not uniform")
    n = config.n_modes
    m_gamma = np.zeros((2 * n, 2 * n))
    m_gamma[1::2, 1::2] = -fb
    t = phase_space_transform(basis)
    out = t @ m_gamma @ t.T
    expected = np.zeros_like(out)
    expected[1, 1] = -n * rate
    if np.abs(out - expected).max() > 1e-12 * max(1.0, n * abs(rate)):
        raise ArithmeticError("collective basis does not diagonalize the damping matrix")
    return out


def collective_spectrum(basis: ModeBasis, frequencies) -> CollectiveSpectrum:
    """Collective frequencies ``Omega_k`` and couplings ``g_kk'``.

    ``Omega_1`` is the arithmetic mean of the frequencies.
    """
    w = np.asarray(frequencies, dtype=float)
    g = basis.alpha @ np.diag(w) @ basis.alpha.T
    g = 0.5 * (g + g.T)
    return CollectiveSpectrum(Omega=np.diag(g).copy(), couplings=g)


def collective_covariance(basis: ModeBasis, cov):
    """Covariance of the collective quadratures, ``T V T^T``."""
    v = getattr(cov, "values", cov)
    t = phase_space_transform(basis)
    return t @ v @ t.T


def energy_form_identity_check(basis: ModeBasis, frequencies, cov):
    """Residual of the weighted-energy identity under the basis change.

    Compares ``sum_j omega_j (<q_j^2> + <p_j^2>)`` with
    ``sum_kk' g_kk' (<Q_k Q_k'> + <P_k P_k'>)`` and returns the absolute
    difference.
    """
    v = np.asarray(getattr(cov, "values", cov), dtype=float)
    w = np.asarray(frequencies, dtype=float)
    lhs = float(np.sum(w * (np.diag(v)[0::2] + np.diag(v)[1::2])))
    u = collective_covariance(basis, v)
    g = collective_spectrum(basis, w).couplings
    rhs = float(np.sum(g * (u[0::2, 0::2] + u[1::2, 1::2])))
    return abs(lhs - rhs)
