"""Independent reference computations and config generators for the tests.

Nothing here calls the solvers under test; each oracle re-derives its
answer by a different route (time integration, brute-force scans or
hand-solved small cases).
"""

import warnings

import numpy as np

from colddamp.model import SystemConfig


def relax_covariance(m, d, dt=0.01, t_max=None, tol=1e-13):
    """Integrate dV/dt = M V + V M^T + D from V = 0 with classical RK4."""
    m = np.asarray(m, float)
    d = np.asarray(d, float)

    def f(v):
        return m @ v + v @ m.T + d

    v = np.zeros_like(m)
    rate = -np.linalg.eigvals(m).real.max()
    t_max = t_max or 60.0 / rate
    for _ in range(int(t_max / dt)):
        k1 = f(v)
        k2 = f(v + 0.5 * dt * k1)
        k3 = f(v + 0.5 * dt * k2)
        k4 = f(v + dt * k3)
        step = dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        v = v + step
        if np.abs(step).max() < tol * max(1.0, np.abs(v).max()):
            break
    return v


def scan_roots(f, lo, hi, points=200001):
    """All sign-change roots of ``f`` on [lo, hi], refined by bisection."""
    xs = np.linspace(lo, hi, points)
    ys = np.array([f(x) for x in xs])
    roots = []
    for k in np.flatnonzero(np.sign(ys[:-1]) * np.sign(ys[1:]) <= 0):
        a, b = xs[k], xs[k + 1]
        fa = f(a)
        for _ in range(200):
            mid = 0.5 * (a + b)
            fm = f(mid)
            if fa * fm <= 0:
                b = mid
            else:
                a, fa = mid, fm
        roots.append(0.5 * (a + b))
    return roots


def single_mode_covariance(d_pp, rate):
    """Hand-solved 2x2 Lyapunov equation with noise only in p."""
    return np.diag([d_pp / (2 * rate), d_pp / (2 * rate)])


def single_mode_margin(omega, rate):
    """Re of the eigenvalues of [[0, w], [-w, -rate]]."""
    disc = rate ** 2 - 4 * omega ** 2
    if disc >= 0:
        return (-rate + np.sqrt(disc)) / 2
    return -rate / 2


def quiet_config(*args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return SystemConfig.from_arrays(*args, **kwargs)


def random_stable_config(rng, n_max=6):
    """Random stable config with N <= n_max (stability checked by caller)."""
    n = int(rng.integers(1, n_max + 1))
    w = np.sort(rng.uniform(0.5, 2.0, n))
    return quiet_config(
        omega=w, gamma=rng.uniform(1e-5, 1e-2, n), nbar=rng.uniform(0, 1000, n),
        coupling_G=rng.uniform(0, 0.3, n), gain_gcd=rng.uniform(0, 1.5, n),
        kappa=rng.uniform(2, 8) * w.max(), omega_fb=rng.uniform(2, 8) * w.max())


def random_separated_config(rng, n_min=2, n_max=4):
    """Well separated modes: gaps >= 20 max Gamma and gamma <= Gamma/100."""
    from colddamp.model import damping_matrix

    n = int(rng.integers(n_min, n_max + 1))
    gcd = rng.uniform(0.3, 1.5, n)
    G = rng.uniform(0.02, 0.2, n)
    w = 1 + np.concatenate([[0], np.cumsum(rng.uniform(0.2, 1.0, n - 1))])
    c = quiet_config(w, 0, 100, G, gcd, 3 * w.max(), 3.6 * w.max())
    gam = damping_matrix(c)
    # shrink the couplings until every gap is 20 to 60 times the largest rate
    ratio = np.diff(w).min() / np.abs(gam).max() / rng.uniform(20, 60)
    if ratio < 1:
        c = c.with_modes(coupling_G=G * ratio)
        gam = damping_matrix(c)
    gamma = np.diag(gam) / 100 * rng.uniform(0.01, 1, n)
    return c.with_modes(gamma=gamma, nbar=rng.uniform(10, 1000, n))
