"""
Closed-form steady-state estimates for multimode cold damping.

These expressions neglect the bare damping ``gamma_i`` against the
feedback rates and expand in the inverse frequency mismatch, so they are
only valid for well separated modes.  The exact answer always comes from
:mod:`colddamp.lyapunov`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFrequencies, DispersionWarning, NotLinearDispersion, ZeroGain
from .model import SystemConfig, damping_matrix

__all__ = [
    "AnalyticReport",
    "lambda_coefficient",
    "variance_p",
    "variance_q",
    "equipartition_gap",
    "energy_linear_dispersion",
    "neighbor_correction",
    "independent_baseline",
    "degeneracy_tolerance",
    "check_nondegenerate",
    "linear_dispersion_fit",
    "analytic_report",
]


@dataclass(frozen=True)
class AnalyticReport:
    var_p: np.ndarray
    var_q: np.ndarray
    baseline: np.ndarray
    neighbor_correction: np.ndarray

    @property
    def energy(self):
        return 0.5 * (self.var_p + self.var_q)

    @property
    def occupancy(self):
        return self.energy - 0.5


def lambda_coefficient(config: SystemConfig, i, j):
    """Mixed noise strength entering the intermode correlations.

    ``(g_j/g_i)(2n_i+1)gamma_i + (g_i/g_j)(2n_j+1)gamma_j
    + (g_j G_i - g_i G_j)^2 / (kappa g_i g_j)`` with ``g = g_cd``.
    """
    if i == j:
        raise ValueError("lambda_coefficient needs two distinct modes")
    i, j = min(i, j), max(i, j)  # fixed evaluation order keeps the result exactly symmetric
    mi, mj = config.modes[i], config.modes[j]
    gi, gj = mi.gain_gcd, mj.gain_gcd
    if gi == 0 or gj == 0:
        raise ZeroGain(f"feedback gain of mode {i if gi == 0 else j} is zero")
    ti = (2 * mi.nbar + 1) * mi.gamma
    tj = (2 * mj.nbar + 1) * mj.gamma
    mix = (gj * mi.coupling_G - gi * mj.coupling_G) ** 2 / (config.cavity.kappa * gi * gj)
    return gj / gi * ti + gi / gj * tj + mix


def _lambda_matrix(config):
    n = config.n_modes
    lam = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            lam[i, j] = lam[j, i] = lambda_coefficient(config, i, j)
    return lam


def degeneracy_tolerance(config: SystemConfig):
    """Smallest |omega_i^2 - omega_j^2| for which the closed form is trusted."""
    gam = damping_matrix(config)
    return 10.0 * float(np.diag(gam).max()) * float(config.omega.max())


def check_nondegenerate(config: SystemConfig):
    w2 = config.omega ** 2
    n = config.n_modes
    if n < 2:
        return
    diff = np.abs(w2[:, None] - w2[None, :])[np.triu_indices(n, 1)]
    tol = degeneracy_tolerance(config)
    if diff.min() < tol:
        raise DegenerateFrequencies(
            f"min |omega_i^2 - omega_j^2| = {diff.min():.3g} is below {tol:.3g}; "
            "use the Lyapunov solution instead")


def independent_baseline(config: SystemConfig, i):
    """Occupancy-level energy of mode ``i`` if it were cooled on its own."""
    m = config.modes[i]
    gii = damping_matrix(config)[i, i]
    return (m.nbar + 0.5) * m.gamma / gii + m.coupling_G ** 2 / (2 * gii * config.cavity.kappa)


def _variances(config):
    config.require_zero_detuning()
    check_nondegenerate(config)
    n = config.n_modes
    w2 = config.omega ** 2
    gam = damping_matrix(config)
    base = np.array([independent_baseline(config, i) for i in range(n)])
    if n == 1:
        return base.copy(), base.copy()
    lam = _lambda_matrix(config)
    p2 = base.copy()
    gap = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            if j == i:
                continue
            dij = w2[i] - w2[j]
            inner = (w2[i] * gam[j, j] + w2[j] * gam[i, i]) * lam[i, j] / dij ** 2
            for k in range(n):
                if k == i or k == j:
                    continue
                inner += (w2[i] * gam[j, k] * lam[i, k] / (w2[i] - w2[k])
                          - w2[j] * gam[i, k] * lam[j, k] / (w2[j] - w2[k])) / dij
            acc += gam[i, j] / (2 * gam[i, i]) * inner
            gap[i] += gam[i, j] * lam[i, j] / (2 * dij)
        p2[i] += acc
    return p2, p2 + gap


def variance_p(config: SystemConfig, i):
    """Closed-form <p_i^2> including the three-index correlation sum."""
    return float(_variances(config)[0][i])


def variance_q(config: SystemConfig, i):
    """Closed-form <q_i^2>; differs from <p_i^2> by the equipartition gap."""
    return float(_variances(config)[1][i])


def equipartition_gap(config: SystemConfig, i):
    """``sum_{j != i} Gamma_ij Lambda_ij / (2 (omega_i^2 - omega_j^2))``."""
    if config.n_modes == 1:
        return 0.0
    w2 = config.omega ** 2
    gam = damping_matrix(config)
    return float(sum(gam[i, j] * lambda_coefficient(config, i, j) / (2 * (w2[i] - w2[j]))
                     for j in range(config.n_modes) if j != i))


def linear_dispersion_fit(omega):
    """Fit ``omega_j = omega_0 + j * spacing``; returns (omega_0, spacing, max deviation)."""
    omega = np.asarray(omega, dtype=float)
    idx = np.arange(omega.size)
    spacing, offset = np.polyfit(idx, omega, 1)
    dev = float(np.abs(omega - (offset + spacing * idx)).max())
    return float(offset), float(spacing), dev


def _dispersion_spacing(config):
    if config.n_modes < 2:
        raise NotLinearDispersion("a dispersion relation needs at least two modes")
    offset, spacing, dev = linear_dispersion_fit(config.omega)
    if spacing <= 0:
        raise NotLinearDispersion(f"fitted frequency spacing {spacing:.3g} is not positive")
    if dev >= 0.01 * spacing or offset / spacing <= 10:
        warnings.warn(
            f"frequencies are not a clean linear dispersion (spacing {spacing:.3g}, "
            f"max deviation {dev:.3g}, omega/spacing {offset / spacing:.3g})",
            DispersionWarning, stacklevel=3)
    return spacing


def _neighbors(i, n):
    return [j for j in (i - 1, i + 1) if 0 <= j < n]


def neighbor_correction(config: SystemConfig, i):
    """Nearest-neighbour heating term of the linear-dispersion energy.

    Uses the equal-gain approximation ``Lambda_ij ~ (2n_i+1)gamma_i +
    (2n_j+1)gamma_j``.  Neighbours of ``i`` are ``i +- 1``; the inner sum
    over ``k`` runs over the neighbours of ``i`` and ``j`` other than ``i``
    and ``j``.  Edge modes have fewer neighbours.
    """
    dw = _dispersion_spacing(config)
    n = config.n_modes
    gam = damping_matrix(config)
    thermal = (2 * config.nbar + 1) * config.gamma

    def lam(a, b):
        return thermal[a] + thermal[b]

    total = 0.0
    for j in _neighbors(i, n):
        term = (1 + gam[j, j] / gam[i, i]) * lam(i, j)
        ks = sorted(set(_neighbors(i, n) + _neighbors(j, n)) - {i, j})
        for k in ks:
            term += (gam[j, k] * lam(i, k) / ((i - j) * (i - k))
                     - gam[i, k] * lam(j, k) / ((i - j) * (j - k))) / gam[i, i]
        total += gam[i, j] / 2 * term
    return total / (4 * dw ** 2)


def energy_linear_dispersion(config: SystemConfig, i):
    """Mode energy for near-linear dispersion, nearest neighbours only.

    ``n_i gamma_i / Gamma_ii`` plus :func:`neighbor_correction`.  The
    correction scales as the inverse square of the frequency spacing.
    """
    config.require_zero_detuning()
    gii = damping_matrix(config)[i, i]
    m = config.modes[i]
    return m.nbar * m.gamma / gii + neighbor_correction(config, i)


def analytic_report(config: SystemConfig) -> AnalyticReport:
    """Closed-form variances for every mode.

    Raises DegenerateFrequencies when the expansion is not valid.  The
    neighbour correction is NaN unless the frequencies increase with index.
    """
    p2, q2 = _variances(config)
    n = config.n_modes
    base = np.array([independent_baseline(config, i) for i in range(n)])
    corr = np.full(n, np.nan)
    if n >= 2 and linear_dispersion_fit(config.omega)[1] > 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DispersionWarning)
            corr = np.array([neighbor_correction(config, i) for i in range(n)])
    return AnalyticReport(var_p=p2, var_q=q2, baseline=base, neighbor_correction=corr)
