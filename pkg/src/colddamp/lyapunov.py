"""
Steady-state second moments from the Lyapunov equation ``M V + V M^T = -D``.

Two independent solvers are provided: a direct solve of the vectorized
Kronecker system (the default for small systems) and a component-wise
solve written in terms of the symmetrized moments

    X_ij = <p_i p_j + p_j p_i>,  Y_ij = <q_i p_j + p_j q_i>,  Z_ij = <q_i q_j + q_j q_i>.

Their agreement is used as a consistency check.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import EigenFailure, MarginallyStableWarning, SingularSystem, Unstable
from .model import DriftDiffusionPair, SystemConfig, damping_matrix, drift_diffusion

__all__ = [
    "CovarianceMatrix",
    "ModeReport",
    "stability_margin",
    "solve_steady_lyapunov",
    "solve_config",
    "mode_report",
    "solve_componentwise",
    "lyapunov_residual",
]

MARGIN_TOL = 1e-12
# The Kronecker system has (2N)^2 unknowns; above this state dimension the
# dense O(N^6) solve is replaced by the Bartels-Stewart (Schur) method.
KRONECKER_MAX_DIM = 40


@dataclass(frozen=True)
class CovarianceMatrix:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] % 2:
            raise ValueError(f"covariance must be a square 2N x 2N matrix, got {v.shape}")
        scale = max(1.0, float(np.abs(v).max(initial=0.0)))
        if np.abs(v - v.T).max(initial=0.0) > 1e-12 * scale:
            raise ValueError("covariance matrix is not symmetric")
        object.__setattr__(self, "values", v)

    @property
    def n_modes(self):
        return self.values.shape[0] // 2

    def block(self, a, b):
        """Sub-block of moments: ``a``, ``b`` in {'q', 'p'}."""
        ia = 0 if a == "q" else 1
        ib = 0 if b == "q" else 1
        return self.values[ia::2, ib::2]


@dataclass(frozen=True)
class ModeReport:
    var_q: np.ndarray
    var_p: np.ndarray

    @property
    def energy(self):
        return 0.5 * (self.var_q + self.var_p)

    @property
    def occupancy(self):
        return self.energy - 0.5


def stability_margin(m):
    """Largest real part over the eigenvalues of ``m`` (negative means stable)."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("drift matrix must be square")
    try:
        eig = scipy.linalg.eigvals(m)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise EigenFailure(str(exc)) from exc
    if not np.all(np.isfinite(eig)):
        raise EigenFailure("eigenvalue computation returned non-finite values")
    return float(eig.real.max())


def _check_stable(m):
    margin = stability_margin(m)
    if margin >= 0:
        raise Unstable(margin)
    if margin > -MARGIN_TOL:
        warnings.warn(f"stability margin {margin:.3e} is within {MARGIN_TOL:g} of zero",
                      MarginallyStableWarning, stacklevel=3)
    return margin


def _solve_kronecker(m, d):
    n = m.shape[0]
    eye = np.eye(n)
    # Row-major vec: vec(M V) = (M kron I) vec V, vec(V M^T) = (I kron M) vec V.
    op = np.kron(m, eye) + np.kron(eye, m)
    lu, piv = scipy.linalg.lu_factor(op, check_finite=False)
    diag = np.abs(np.diag(lu))
    if diag.min() <= 1e3 * np.finfo(float).eps * diag.max():
        raise SingularSystem("vectorized Lyapunov operator is numerically singular "
                             "(undamped or marginal modes?)")
    return scipy.linalg.lu_solve((lu, piv), -d.reshape(-1), check_finite=False).reshape(n, n)


def lyapunov_residual(m, v, d):
    """Max-norm of ``M V + V M^T + D``."""
    return float(np.abs(m @ v + v @ m.T + d).max())


def solve_steady_lyapunov(pair: DriftDiffusionPair, method="auto") -> CovarianceMatrix:
    """Steady covariance of ``dv = M v dt + noise`` with white-noise intensity D.

    Parameters
    ----------
    pair : DriftDiffusionPair
        Drift M and diffusion D.
    method : {'auto', 'kronecker', 'schur'}
        'kronecker' solves ``(M kron I + I kron M) vec V = -vec D`` directly
        (cost O(N^6)); 'schur' uses Bartels-Stewart.  'auto' picks
        'kronecker' up to a state dimension of ``KRONECKER_MAX_DIM``.

    Raises
    ------
    Unstable
        If M has an eigenvalue with non-negative real part.
    SingularSystem
        If the vectorized operator is numerically singular.
    """
    m = np.asarray(pair.drift, dtype=float)
    d = np.asarray(pair.diffusion, dtype=float)
    _check_stable(m)
    if method == "auto":
        method = "kronecker" if m.shape[0] <= KRONECKER_MAX_DIM else "schur"
    if method == "kronecker":
        v = _solve_kronecker(m, d)
    elif method == "schur":
        v = scipy.linalg.solve_continuous_lyapunov(m, -d)
        if not np.all(np.isfinite(v)):
            raise SingularSystem("Bartels-Stewart solve returned non-finite values")
    else:
        raise ValueError(f"unknown method {method!r}")
    return CovarianceMatrix(0.5 * (v + v.T))


def solve_config(config: SystemConfig, method="auto") -> CovarianceMatrix:
    """Lyapunov steady state of the Markovian model for ``config``."""
    config.require_zero_detuning()
    return solve_steady_lyapunov(drift_diffusion(config), method=method)


def mode_report(cov: CovarianceMatrix) -> ModeReport:
    """Per-mode variances; energy is (<q^2> + <p^2>)/2 and occupancy energy - 1/2."""
    v = cov.values
    return ModeReport(var_q=np.diag(v)[0::2].copy(), var_p=np.diag(v)[1::2].copy())


def solve_componentwise(config: SystemConfig):
    """Solve the component equations of the Lyapunov system for X, Y, Z.

    Writing the equations of motion for the second moments entry by entry
    gives, with Gamma the damping matrix and D the momentum noise block,

    * ``omega_j Y_ij + omega_i Y_ji = 0``
    * ``omega_i X_ij - omega_j Z_ij - sum_k Gamma_jk Y_ik = 0``
    * ``omega_i Y_ij + omega_j Y_ji + sum_k (Gamma_ik X_kj + Gamma_jk X_ik) = 2 D_ij``

    which is a square linear system in the independent entries of the
    symmetric X, Z and the full Y.

    Returns
    -------
    X, Y, Z : ndarray
        N x N arrays (X and Z symmetric).
    """
    config.require_zero_detuning()
    pair = drift_diffusion(config)
    _check_stable(pair.drift)

    n = config.n_modes
    w = config.omega
    gam = damping_matrix(config)
    dpp = pair.diffusion[1::2, 1::2]

    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    sym = {}
    for a, (i, j) in enumerate(pairs):
        sym[i, j] = sym[j, i] = a
    ns = len(pairs)

    def ix(i, j):
        return sym[i, j]

    def iz(i, j):
        return ns + sym[i, j]

    def iy(i, j):
        return 2 * ns + i * n + j

    size = 2 * ns + n * n
    a = np.zeros((size, size))
    b = np.zeros(size)
    row = 0
    for i, j in pairs:
        a[row, iy(i, j)] += w[j]
        a[row, iy(j, i)] += w[i]
        row += 1
    for i in range(n):
        for j in range(n):
            a[row, ix(i, j)] += w[i]
            a[row, iz(i, j)] -= w[j]
            for k in range(n):
                a[row, iy(i, k)] -= gam[j, k]
            row += 1
    for i, j in pairs:
        a[row, iy(i, j)] += w[i]
        a[row, iy(j, i)] += w[j]
        for k in range(n):
            a[row, ix(k, j)] += gam[i, k]
            a[row, ix(i, k)] += gam[j, k]
        b[row] = 2.0 * dpp[i, j]
        row += 1

    try:
        lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystem(str(exc)) from exc
    diag = np.abs(np.diag(lu))
    if diag.min() <= 1e3 * np.finfo(float).eps * diag.max():
        raise SingularSystem("component-wise moment system is numerically singular")
    sol = scipy.linalg.lu_solve((lu, piv), b, check_finite=False)

    x = np.empty((n, n))
    z = np.empty((n, n))
    for (i, j), k in zip(pairs, range(ns)):
        x[i, j] = x[j, i] = sol[k]
        z[i, j] = z[j, i] = sol[ns + k]
    y = sol[2 * ns:].reshape(n, n).copy()
    # Y_ii = 0 follows from the first equation with i = j; drop roundoff.
    y[np.diag_indices(n)] = 0.0
    return x, y, z
