"""
System parameters and the linear drift/diffusion description of the
mechanical modes under cold-damping feedback.

All frequencies and rates are dimensionless, in units of the first mode
frequency.  Phase-space vectors use the interleaved ordering
``v = (q_1, p_1, q_2, p_2, ..., q_N, p_N)`` throughout the package.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .errors import FastCavityWarning, InvalidParameter, NoConvergence

__all__ = [
    "MechanicalMode",
    "CavitySpec",
    "PhysicalDrive",
    "SystemConfig",
    "DriftDiffusionPair",
    "SteadyState",
    "intracavity_steady_state",
    "effective_couplings",
    "damping_matrix",
    "drift_matrix",
    "diffusion_matrix",
    "drift_diffusion",
    "q_index",
    "p_index",
    "reference_two_mode_config",
    "linear_chain_config",
]


def q_index(j):
    return 2 * j


def p_index(j):
    return 2 * j + 1


def _check(name, value, ok, reason):
    if not (np.isfinite(value) and ok):
        raise InvalidParameter(name, f"{reason} (got {value!r})")


@dataclass(frozen=True)
class MechanicalMode:
    omega: float
    gamma: float
    nbar: float
    coupling_G: float = 0.0
    gain_gcd: float = 0.0

    def __post_init__(self):
        for name in ("omega", "gamma", "nbar", "coupling_G", "gain_gcd"):
            object.__setattr__(self, name, float(getattr(self, name)))
        _check("omega", self.omega, self.omega > 0, "must be > 0")
        _check("gamma", self.gamma, self.gamma >= 0, "must be >= 0")
        _check("nbar", self.nbar, self.nbar >= 0, "must be >= 0")
        _check("coupling_G", self.coupling_G, self.coupling_G >= 0, "must be >= 0")
        _check("gain_gcd", self.gain_gcd, self.gain_gcd >= 0, "must be >= 0")


@dataclass(frozen=True)
class CavitySpec:
    kappa: float
    omega_fb: float
    eta: float = 1.0
    detuning: float = 0.0

    def __post_init__(self):
        for name in ("kappa", "omega_fb", "eta", "detuning"):
            object.__setattr__(self, name, float(getattr(self, name)))
        _check("cavity.kappa", self.kappa, self.kappa > 0, "must be > 0")
        _check("cavity.omega_fb", self.omega_fb, self.omega_fb > 0, "must be > 0")
        _check("cavity.eta", self.eta, 0 < self.eta <= 1, "must lie in (0, 1]")
        _check("cavity.detuning", self.detuning, True, "must be finite")


@dataclass(frozen=True)
class PhysicalDrive:
    """Bare optomechanical parameters used to derive the couplings G_j."""

    g_om: tuple
    epsilon: float
    detuning0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "g_om", tuple(float(g) for g in self.g_om))
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "detuning0", float(self.detuning0))
        _check("drive.epsilon", self.epsilon, self.epsilon >= 0, "must be >= 0")
        for g in self.g_om:
            _check("drive.g_om", g, True, "must be finite")


@dataclass(frozen=True)
class SystemConfig:
    """N mechanical modes sharing one cavity and one feedback loop."""

    modes: tuple
    cavity: CavitySpec

    def __post_init__(self):
        modes = tuple(self.modes)
        if len(modes) < 1:
            raise InvalidParameter("modes", "at least one mechanical mode is required")
        object.__setattr__(self, "modes", modes)
        wmax = max(m.omega for m in modes)
        if self.cavity.kappa < 2 * wmax or self.cavity.omega_fb < 2 * wmax:
            warnings.warn(
                f"kappa={self.cavity.kappa:g}, omega_fb={self.cavity.omega_fb:g} are not "
                f"well above max(omega)={wmax:g}; the Markovian reduction may be inaccurate",
                FastCavityWarning,
                stacklevel=3,
            )

    @classmethod
    def from_arrays(cls, omega, gamma, nbar, coupling_G, gain_gcd, kappa, omega_fb,
                    eta=1.0, detuning=0.0):
        """Build a config from per-mode sequences (scalars are broadcast)."""
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        n = omega.size
        cols = []
        for name, value in (("gamma", gamma), ("nbar", nbar),
                            ("coupling_G", coupling_G), ("gain_gcd", gain_gcd)):
            arr = np.atleast_1d(np.asarray(value, dtype=float))
            if arr.size == 1:
                arr = np.full(n, arr[0])
            if arr.size != n:
                raise InvalidParameter(
                    f"modes.{name}", f"has {arr.size} entries but there are {n} frequencies")
            cols.append(arr)
        modes = tuple(MechanicalMode(*vals) for vals in zip(omega, *cols))
        return cls(modes, CavitySpec(kappa, omega_fb, eta, detuning))

    @property
    def n_modes(self):
        return len(self.modes)

    @property
    def omega(self):
        return np.array([m.omega for m in self.modes])

    @property
    def gamma(self):
        return np.array([m.gamma for m in self.modes])

    @property
    def nbar(self):
        return np.array([m.nbar for m in self.modes])

    @property
    def coupling_G(self):
        return np.array([m.coupling_G for m in self.modes])

    @property
    def gain_gcd(self):
        return np.array([m.gain_gcd for m in self.modes])

    def with_modes(self, **arrays):
        """Return a copy with some per-mode fields replaced by new arrays."""
        modes = []
        for j, m in enumerate(self.modes):
            modes.append(replace(m, **{k: np.broadcast_to(v, (self.n_modes,))[j]
                                       for k, v in arrays.items()}))
        return replace(self, modes=tuple(modes))

    def with_cavity(self, **fields):
        return replace(self, cavity=replace(self.cavity, **fields))

    def scaled(self, s_G=1.0, s_g=1.0):
        """Scale every G_j by ``s_G`` and every g_cd^(j) by ``s_g``."""
        return self.with_modes(coupling_G=self.coupling_G * s_G,
                               gain_gcd=self.gain_gcd * s_g)

    def require_zero_detuning(self):
        if self.cavity.detuning != 0.0:
            raise InvalidParameter(
                "cavity.detuning",
                "must be 0 for the Lyapunov and closed-form paths (nonzero detuning is unsupported)")


@dataclass(frozen=True)
class DriftDiffusionPair:
    drift: np.ndarray
    diffusion: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return self.drift.shape[0]


class SteadyState(NamedTuple):
    amplitude: float
    shifts: tuple
    effective_detuning: float
    n_roots: int


def _cubic_roots(intensity_coeffs):
    roots = np.roots(intensity_coeffs)
    real = roots[np.abs(roots.imag) <= 1e-9 * np.maximum(1.0, np.abs(roots.real))].real
    return np.sort(real[real >= 0])


def intracavity_steady_state(drive: PhysicalDrive, config: SystemConfig,
                             rtol=1e-12, max_iter=10000) -> SteadyState:
    """Self-consistent mean intracavity amplitude including radiation-pressure shifts.

    Solves ``I = eps^2 / (kappa^2 + Delta(I)^2)`` for the intensity
    ``I = |<A>|^2`` with ``Delta(I) = Delta0 - sum_j g_j^2/omega_j * I`` by
    damped fixed-point iteration started from the undriven cavity, which
    lands on the smallest root.  ``n_roots`` counts the nonnegative real
    roots of the equivalent cubic; more than one signals bistability.
    """
    kappa = config.cavity.kappa
    if not kappa > 0:
        raise InvalidParameter("cavity.kappa", "must be > 0")
    omega = config.omega
    g_om = np.asarray(drive.g_om, dtype=float)
    if g_om.size != omega.size:
        raise InvalidParameter("drive.g_om", f"needs {omega.size} entries, got {g_om.size}")
    eps = drive.epsilon
    if eps < 0:
        raise InvalidParameter("drive.epsilon", "must be >= 0")
    shift = float(np.sum(g_om**2 / omega))
    d0 = drive.detuning0

    def f(intensity):
        return eps**2 / (kappa**2 + (d0 - shift * intensity) ** 2)

    # I * (kappa^2 + (d0 - s I)^2) - eps^2 = 0
    coeffs = [shift**2, -2 * d0 * shift, kappa**2 + d0**2, -eps**2]
    while coeffs and coeffs[0] == 0:
        coeffs = coeffs[1:]
    n_roots = len(_cubic_roots(coeffs)) if len(coeffs) > 1 else 1

    intensity = 0.0
    step = 0.5
    last_delta = None
    for _ in range(max_iter):
        delta = f(intensity) - intensity
        if last_delta is not None and delta * last_delta < 0:
            step *= 0.5
        new = intensity + step * delta
        if abs(new - intensity) <= rtol * max(abs(new), np.finfo(float).tiny):
            intensity = new
            break
        intensity, last_delta = new, delta
    else:
        raise NoConvergence(
            f"steady-state iteration did not converge in {max_iter} steps "
            f"({n_roots} candidate roots; bistable regime?)")

    # Newton polish on the cubic; stays on the root the iteration selected
    for _ in range(3):
        resid = intensity * (kappa**2 + (d0 - shift * intensity) ** 2) - eps**2
        slope = kappa**2 + (d0 - shift * intensity) * (d0 - 3 * shift * intensity)
        if slope == 0:
            break
        intensity = max(intensity - resid / slope, 0.0)

    amplitude = float(np.sqrt(intensity))
    shifts = tuple(float(s) for s in g_om / omega * intensity)
    return SteadyState(amplitude, shifts, float(d0 - shift * intensity), n_roots)


def effective_couplings(drive: PhysicalDrive, amplitude):
    """``G_j = sqrt(2) g_OM^(j) |<A>|``."""
    if amplitude < 0:
        raise InvalidParameter("amplitude", "must be >= 0")
    return [float(np.sqrt(2.0) * g * amplitude) for g in drive.g_om]


def damping_matrix(config: SystemConfig):
    """Feedback damping matrix Gamma (not symmetric in general).

    ``Gamma[j, k] = g_cd^(j) G_k omega_k / kappa`` plus ``gamma_j`` on the
    diagonal.
    """
    rate = np.outer(config.gain_gcd, config.coupling_G * config.omega) / config.cavity.kappa
    return rate + np.diag(config.gamma)


def drift_matrix(config: SystemConfig, gamma_matrix=None):
    """Drift matrix M of the Markovian equations in interleaved ordering.

    ``gamma_matrix`` substitutes a custom damping matrix (e.g. one with the
    cross terms removed).
    """
    n = config.n_modes
    omega = config.omega
    gam = damping_matrix(config) if gamma_matrix is None else np.asarray(gamma_matrix, float)
    m = np.zeros((2 * n, 2 * n))
    idx = np.arange(n)
    m[2 * idx, 2 * idx + 1] = omega
    m[2 * idx + 1, 2 * idx] = -omega
    m[np.ix_(2 * idx + 1, 2 * idx + 1)] = -gam
    return m


def diffusion_matrix(config: SystemConfig, cross_noise=True):
    """White-noise diffusion matrix D_in: thermal part plus rank-one back-action.

    Only momentum-momentum entries are nonzero.  ``cross_noise=False`` keeps
    the back-action diagonal (``G_i^2/kappa``) and drops ``G_i G_j/kappa``.
    """
    n = config.n_modes
    G = config.coupling_G
    pp = np.outer(G, G) / config.cavity.kappa
    if not cross_noise:
        pp = np.diag(np.diag(pp))
    pp = pp + np.diag((2 * config.nbar + 1) * config.gamma)
    d = np.zeros((2 * n, 2 * n))
    idx = 2 * np.arange(n) + 1
    d[np.ix_(idx, idx)] = pp
    return d


def drift_diffusion(config: SystemConfig) -> DriftDiffusionPair:
    return DriftDiffusionPair(drift_matrix(config), diffusion_matrix(config))


def reference_two_mode_config(omega=(1.0, 0.9), nbar=100.0) -> SystemConfig:
    """Two-mode parameter set used for the two-mode demonstrations."""
    return SystemConfig.from_arrays(
        omega=omega, gamma=(4e-5, 3e-5), nbar=nbar, coupling_G=(0.16, 0.1),
        gain_gcd=(0.8, 0.8), kappa=3.0, omega_fb=3.5)


def linear_chain_config(n_modes=8, omega0=1.0, spacing=0.1, gamma=4e-5, nbar=100.0,
                        coupling_G=0.1, gain_gcd=0.8, kappa=None, omega_fb=None) -> SystemConfig:
    """Modes with linear dispersion ``omega_j = omega0 + j * spacing``."""
    omega = omega0 + spacing * np.arange(n_modes)
    wmax = float(omega.max())
    kappa = 3.0 * wmax if kappa is None else kappa
    omega_fb = 3.5 * wmax if omega_fb is None else omega_fb
    return SystemConfig.from_arrays(omega, gamma, nbar, coupling_G, gain_gcd, kappa, omega_fb)
