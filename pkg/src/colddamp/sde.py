"""
Monte-Carlo integration of the stochastic equations of motion.

Two models are available:

``markovian``
    Mechanical quadratures only, with the feedback replaced by the damping
    matrix Gamma and the optical noise by a single shared white-noise source
    of strength ``G_j / sqrt(kappa)`` (the rank-one back-action).
``full``
    Mechanical quadratures plus the cavity quadratures ``x, y`` and one
    low-pass filter state ``z``.  The feedback convolution with kernel
    ``g_cd d/dt[theta(t) w_fb exp(-w_fb t)]`` equals
    ``g_cd w_fb (u - z)`` with ``dz/dt = w_fb (u - z)``, so no history is
    stored.  ``u`` is the estimated phase quadrature
    ``y - (y_in + sqrt(1/eta - 1) y_v) / sqrt(2 kappa)``.

Both are linear with additive noise, ``dv = A v dt + B dW``.  A step applies
the classical RK4 map to the drift (for a linear drift this is
multiplication by the degree-4 Taylor polynomial of ``exp(A dt)``) and then
adds ``B dW`` with ``dW ~ N(0, dt)``.  All noises are real Gaussian processes
with the symmetrized quantum correlations, which reproduces second moments.

Every trajectory owns an RNG stream derived from ``(seed, index)``.
Trajectories are processed in fixed-size chunks, so results are bitwise
identical for any number of worker threads.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, NonFinite
from .model import SystemConfig, damping_matrix, drift_matrix

__all__ = [
    "FullState",
    "MarkovState",
    "SimPlan",
    "EnsembleStats",
    "trajectory_rng",
    "sample_thermal_initial",
    "markovian_system",
    "full_system",
    "rk4_propagator",
    "step_markovian",
    "step_full",
    "run_ensemble",
    "default_threads",
    "THREADS_ENV",
]

THREADS_ENV = "COLDDAMP_THREADS"
CHUNK = 64
BLOCK_STEPS = 256
STEADY_FRACTION = 0.2


@dataclass
class MarkovState:
    q: np.ndarray
    p: np.ndarray

    def to_vector(self):
        v = np.empty(2 * self.q.size)
        v[0::2] = self.q
        v[1::2] = self.p
        return v

    @classmethod
    def from_vector(cls, v):
        return cls(q=np.array(v[0::2]), p=np.array(v[1::2]))

    @property
    def energy(self):
        return 0.5 * (self.q ** 2 + self.p ** 2)


@dataclass
class FullState:
    q: np.ndarray
    p: np.ndarray
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def to_vector(self):
        n = self.q.size
        v = np.empty(2 * n + 3)
        v[0:2 * n:2] = self.q
        v[1:2 * n:2] = self.p
        v[2 * n:] = (self.x, self.y, self.z)
        return v

    @classmethod
    def from_vector(cls, v):
        n = (v.size - 3) // 2
        return cls(q=np.array(v[0:2 * n:2]), p=np.array(v[1:2 * n:2]),
                   x=float(v[2 * n]), y=float(v[2 * n + 1]), z=float(v[2 * n + 2]))

    @property
    def energy(self):
        return 0.5 * (self.q ** 2 + self.p ** 2)


@dataclass(frozen=True)
class SimPlan:
    dt: float = 0.05
    t_final: float = 500.0
    scheme: str = "markovian"
    n_trajectories: int = 100
    seed: int = 0
    record_stride: int = 20

    def __post_init__(self):
        if self.scheme not in ("markovian", "full"):
            raise InvalidParameter("scheme", f"must be 'markovian' or 'full', got {self.scheme!r}")
        if not self.dt > 0:
            raise InvalidParameter("dt", "must be > 0")
        if not self.t_final > 0:
            raise InvalidParameter("t_final", "must be > 0")
        if int(self.n_trajectories) < 1:
            raise InvalidParameter("n_trajectories", "must be >= 1")
        if int(self.record_stride) < 1:
            raise InvalidParameter("record_stride", "must be >= 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InvalidParameter("seed", "must be an unsigned 64-bit integer")

    @property
    def n_steps(self):
        return max(1, int(round(self.t_final / self.dt)))

    def check_against(self, config: SystemConfig):
        if self.scheme == "full":
            fastest = max(config.omega.max(), config.cavity.kappa, config.cavity.omega_fb)
            limit = 0.1 / fastest
            if self.dt > limit * (1 + 1e-12):
                raise InvalidParameter(
                    "dt", f"{self.dt:g} exceeds 0.1/max(omega, kappa, omega_fb) = {limit:.4g} "
                    "required by the full model")
        rate = float(np.diag(damping_matrix(config)).min())
        if rate > 0 and self.t_final < 10.0 / rate:
            warnings.warn(f"t_final={self.t_final:g} is shorter than 10/min(Gamma_ii)="
                          f"{10.0 / rate:.4g}; final occupancies may not be converged",
                          RuntimeWarning, stacklevel=3)


@dataclass(frozen=True)
class EnsembleStats:
    times: np.ndarray
    mean_energy: np.ndarray
    stderr: np.ndarray
    final_occupancy: np.ndarray
    final_stderr: np.ndarray
    initial_energy: np.ndarray
    initial_stderr: np.ndarray
    final_total: float
    final_total_stderr: float
    n_trajectories: int
    window: tuple

    @property
    def final_energy(self):
        return self.final_occupancy + 0.5


def trajectory_rng(seed, index):
    """Independent generator for trajectory ``index`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


def sample_thermal_initial(nbar, rng):
    """Gaussian thermal state: q_i, p_i independent with variance nbar_i + 1/2."""
    nbar = np.asarray(nbar, dtype=float)
    if np.any(nbar < 0):
        raise InvalidParameter("nbar", "must be >= 0")
    sd = np.sqrt(nbar + 0.5)
    xi = rng.standard_normal(2 * nbar.size)
    return MarkovState(q=sd * xi[0::2], p=sd * xi[1::2])


def markovian_system(config: SystemConfig):
    """Drift A and noise loading B of the reduced model.

    Noise columns: one thermal source per mode, then the shared
    back-action source with loading ``G_j / sqrt(kappa)``.
    """
    n = config.n_modes
    a = drift_matrix(config)
    b = np.zeros((2 * n, n + 1))
    rows = 2 * np.arange(n) + 1
    b[rows, np.arange(n)] = np.sqrt((2 * config.nbar + 1) * config.gamma)
    b[rows, n] = config.coupling_G / np.sqrt(config.cavity.kappa)
    return a, b


def full_system(config: SystemConfig):
    """Drift A and noise loading B of the model with cavity and filter states.

    State is ``(q_1, p_1, ..., q_N, p_N, x, y, z)``.  Noise columns are the
    N thermal sources, then ``x_in``, ``y_in`` and the detector vacuum
    ``y_v``, each a unit white noise scaled to the symmetrized intensity 1/2.
    The same ``y_in`` column drives the cavity and the estimator.
    """
    config.require_zero_detuning()
    n = config.n_modes
    kappa = config.cavity.kappa
    wfb = config.cavity.omega_fb
    loss = np.sqrt(1.0 / config.cavity.eta - 1.0)
    w, gam, G, g = config.omega, config.gamma, config.coupling_G, config.gain_gcd
    ix, iy, iz = 2 * n, 2 * n + 1, 2 * n + 2
    ith, ixin, iyin, iyv = 0, n, n + 1, n + 2
    half = np.sqrt(0.5)
    meas = half / np.sqrt(2 * kappa)

    a = np.zeros((2 * n + 3, 2 * n + 3))
    b = np.zeros((2 * n + 3, n + 3))
    for j in range(n):
        qj, pj = 2 * j, 2 * j + 1
        a[qj, pj] = w[j]
        a[pj, qj] = -w[j]
        a[pj, pj] = -gam[j]
        a[pj, ix] = G[j]
        # force -g_cd w_fb (u - z), u = y - noise/sqrt(2 kappa)
        a[pj, iy] = -g[j] * wfb
        a[pj, iz] = g[j] * wfb
        b[pj, ith + j] = np.sqrt((2 * config.nbar[j] + 1) * gam[j])
        b[pj, iyin] = g[j] * wfb * meas
        b[pj, iyv] = g[j] * wfb * meas * loss
        a[iy, qj] = G[j]
    a[ix, ix] = -kappa
    a[iy, iy] = -kappa
    a[iz, iy] = wfb
    a[iz, iz] = -wfb
    b[ix, ixin] = np.sqrt(2 * kappa) * half
    b[iy, iyin] = np.sqrt(2 * kappa) * half
    b[iz, iyin] = -wfb * meas
    b[iz, iyv] = -wfb * meas * loss
    return a, b


def rk4_propagator(a, dt):
    """One classical RK4 step of ``dv/dt = A v`` as a matrix."""
    h = dt * np.asarray(a, dtype=float)
    eye = np.eye(h.shape[0])
    return eye + h @ (eye + h @ (eye / 2 + h @ (eye / 6 + h / 24)))


def _step(v, a, b, dt, rng):
    v = rk4_propagator(a, dt) @ v
    return v + b @ (np.sqrt(dt) * rng.standard_normal(b.shape[1]))


def _checked(v, what):
    if not np.all(np.isfinite(v)):
        raise NonFinite(f"{what} diverged (unstable system or dt too large)")
    return v


def step_markovian(state: MarkovState, config: SystemConfig, dt, rng) -> MarkovState:
    """Advance the reduced model by one step of size ``dt``."""
    a, b = markovian_system(config)
    v = _checked(_step(state.to_vector(), a, b, dt, rng), "Markovian state")
    return MarkovState(q=v[0::2], p=v[1::2])


def step_full(state: FullState, config: SystemConfig, dt, rng) -> FullState:
    """Advance the model with cavity and feedback filter by one step."""
    fastest = max(config.omega.max(), config.cavity.kappa, config.cavity.omega_fb)
    if dt > 0.1 / fastest * (1 + 1e-12):
        raise InvalidParameter("dt", f"must be <= 0.1/max(omega, kappa, omega_fb) = {0.1 / fastest:.4g}")
    a, b = full_system(config)
    v = _checked(_step(state.to_vector(), a, b, dt, rng), "full state")
    return FullState.from_vector(v)


def default_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


class _ChunkResult:
    __slots__ = ("rec_sum", "rec_sumsq", "win_mean")

    def __init__(self, rec_sum, rec_sumsq, win_mean):
        self.rec_sum = rec_sum
        self.rec_sumsq = rec_sumsq
        self.win_mean = win_mean


def _run_chunk(start, stop, a, b, plan, nbar0, dim, record_steps, win_start):
    n = nbar0.size
    size = stop - start
    rngs = [trajectory_rng(plan.seed, k) for k in range(start, stop)]
    v = np.zeros((size, dim))
    for r, rng in enumerate(rngs):
        s = sample_thermal_initial(nbar0, rng)
        v[r, 0:2 * n:2] = s.q
        v[r, 1:2 * n:2] = s.p
    phi_t = rk4_propagator(a, plan.dt).T
    b_t = np.sqrt(plan.dt) * b.T
    m = b.shape[1]

    n_rec = len(record_steps)
    rec_sum = np.zeros((n_rec, n))
    rec_sumsq = np.zeros((n_rec, n))
    win_acc = np.zeros((size, n))
    win_count = 0

    def energies(state):
        return 0.5 * (state[:, 0:2 * n:2] ** 2 + state[:, 1:2 * n:2] ** 2)

    def record(k, state):
        if not np.all(np.isfinite(state)):
            bad = int(np.nonzero(~np.all(np.isfinite(state), axis=1))[0][0])
            raise NonFinite("state diverged (unstable system or dt too large)",
                            trajectory=start + bad)
        e = energies(state)
        rec_sum[k] = e.sum(axis=0)
        rec_sumsq[k] = (e ** 2).sum(axis=0)

    rec_iter = iter(enumerate(record_steps))
    next_rec = next(rec_iter, None)
    if next_rec is not None and next_rec[1] == 0:
        record(next_rec[0], v)
        next_rec = next(rec_iter, None)

    step = 0
    while step < plan.n_steps:
        block = min(BLOCK_STEPS, plan.n_steps - step)
        xi = np.stack([rng.standard_normal((block, m)) for rng in rngs], axis=1)
        kicks = xi @ b_t
        for k in range(block):
            v = v @ phi_t + kicks[k]
            step += 1
            if step > win_start:
                win_acc += energies(v)
                win_count += 1
            if next_rec is not None and next_rec[1] == step:
                record(next_rec[0], v)
                next_rec = next(rec_iter, None)
    if not np.all(np.isfinite(v)):
        record(0, v)
    return _ChunkResult(rec_sum, rec_sumsq, win_acc / max(win_count, 1))


def _run_chunk_checked(*args):
    # overflow is detected and reported as NonFinite, so silence numpy's own warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _run_chunk(*args)


def run_ensemble(config: SystemConfig, plan: SimPlan, threads=None, initial_nbar=None) -> EnsembleStats:
    """Simulate ``plan.n_trajectories`` independent trajectories and aggregate.

    Parameters
    ----------
    config : SystemConfig
    plan : SimPlan
    threads : int, optional
        Worker threads; defaults to the ``COLDDAMP_THREADS`` environment
        variable (1 if unset).  Has no effect on the numbers produced.
    initial_nbar : array_like, optional
        Occupancies of the initial thermal state (defaults to the bath
        occupancies of ``config``).

    Returns
    -------
    EnsembleStats
        Mean mode energies on the record grid with standard errors, and
        final occupancies averaged over the last 20 % of the run (per
        trajectory, then across trajectories).
    """
    plan.check_against(config)
    if plan.scheme == "full":
        a, b = full_system(config)
    else:
        config.require_zero_detuning()
        a, b = markovian_system(config)
    n = config.n_modes
    nbar0 = config.nbar if initial_nbar is None else np.broadcast_to(
        np.asarray(initial_nbar, dtype=float), (n,)).copy()
    n_traj = int(plan.n_trajectories)
    record_steps = list(range(0, plan.n_steps + 1, int(plan.record_stride)))
    if record_steps[-1] != plan.n_steps:
        record_steps.append(plan.n_steps)
    win_start = plan.n_steps - max(1, int(round(STEADY_FRACTION * plan.n_steps)))

    bounds = [(s, min(s + CHUNK, n_traj)) for s in range(0, n_traj, CHUNK)]
    threads = default_threads() if threads is None else max(1, int(threads))

    def work(bound):
        return _run_chunk_checked(bound[0], bound[1], a, b, plan, nbar0, a.shape[0], record_steps, win_start)

    if threads == 1 or len(bounds) == 1:
        results = [work(bd) for bd in bounds]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, bounds))

    rec_sum = np.zeros((len(record_steps), n))
    rec_sumsq = np.zeros_like(rec_sum)
    for res in results:
        rec_sum += res.rec_sum
        rec_sumsq += res.rec_sumsq
    win = np.concatenate([res.win_mean for res in results], axis=0)

    mean = rec_sum / n_traj
    if n_traj > 1:
        var = np.maximum(rec_sumsq - n_traj * mean ** 2, 0.0) / (n_traj - 1)
        stderr = np.sqrt(var / n_traj)
        final_se = win.std(axis=0, ddof=1) / np.sqrt(n_traj)
        total_se = float(win.sum(axis=1).std(ddof=1) / np.sqrt(n_traj))
    else:
        stderr = np.zeros_like(mean)
        final_se = np.zeros(n)
        total_se = 0.0
    times = np.array(record_steps, dtype=float) * plan.dt
    return EnsembleStats(
        times=times,
        mean_energy=mean,
        stderr=stderr,
        final_occupancy=win.mean(axis=0) - 0.5,
        final_stderr=final_se,
        initial_energy=mean[0].copy(),
        initial_stderr=stderr[0].copy(),
        final_total=float(win.sum(axis=1).mean()),
        final_total_stderr=total_se,
        n_trajectories=n_traj,
        window=(win_start * plan.dt, plan.n_steps * plan.dt),
    )
