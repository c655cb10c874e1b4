"""
Command line interface.

Each subcommand loads a configuration, runs one experiment and writes a
single CSV file whose ``#`` header records the version, command, options,
seed and the fully resolved configuration (as ``#|`` lines).  Passing such a
file back via ``--config`` restores both the configuration and the recorded
options, so the run can be reproduced.

Exit codes: 0 success, 2 validation error, 3 instability, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import (
    analytic_report,
    check_nondegenerate,
    independent_baseline,
)
from .config import EMBED_PREFIX, config_hash, emit_config, load_config, loads_config
from .errors import (
    ColdDampError,
    DegenerateFrequencies,
    FastCavityWarning,
    ParseError,
    SingularSystem,
    Unstable,
    UnequalRates,
    ValidationError,
)
from .lyapunov import mode_report, solve_config, stability_margin
from .model import SystemConfig, reference_two_mode_config, damping_matrix, drift_matrix
from .modes import collective_spectrum, gram_schmidt_basis, transformed_damping
from .sde import SimPlan, run_ensemble

__all__ = ["ResultTable", "Grid", "parse_grid", "main", "build_parser",
           "cmd_steady", "cmd_sweep_gap", "cmd_map_gain", "cmd_simulate",
           "cmd_modes", "cmd_stability"]

METHODS = ("lyapunov", "analytic", "baseline", "montecarlo")

EXIT_OK, EXIT_VALIDATION, EXIT_UNSTABLE, EXIT_IO = 0, 2, 3, 4


@dataclass
class ResultTable:
    """Rows of named values plus metadata; serialized as CSV."""

    columns: list
    rows: list = field(default_factory=list)

    def add(self, **row):
        method = row.get("method")
        if method not in METHODS:
            raise ValueError(f"row method must be one of {METHODS}, got {method!r}")
        if method == "montecarlo" and all(
                v is None for k, v in row.items() if k.startswith("stderr")):
            raise ValueError("montecarlo rows need a stderr")
        unknown = set(row) - set(self.columns)
        if unknown:
            raise ValueError(f"unknown columns {sorted(unknown)}")
        self.rows.append(row)

    def column(self, name, **where):
        return [r.get(name) for r in self.rows
                if all(r.get(k) == v for k, v in where.items())]

    def to_csv(self, header_lines=()):
        buf = io.StringIO()
        for line in header_lines:
            buf.write(line + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for r in self.rows:
            writer.writerow([_cell(r.get(c)) for c in self.columns])
        return buf.getvalue()


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


@dataclass(frozen=True)
class Grid:
    lo: float
    hi: float
    points: int
    log: bool = False

    def values(self):
        if self.points == 1:
            return np.array([self.lo])
        if self.log:
            return np.geomspace(self.lo, self.hi, self.points)
        return np.linspace(self.lo, self.hi, self.points)

    def __str__(self):
        return f"{self.lo!r}:{self.hi!r}:{self.points}" + (":log" if self.log else "")


def parse_grid(text, name="grid", positive=False):
    """Parse ``MIN:MAX:POINTS[:log]``."""
    parts = str(text).split(":")
    if len(parts) not in (3, 4) or (len(parts) == 4 and parts[3] not in ("log", "lin")):
        raise ValidationError(name, f"expected MIN:MAX:POINTS[:log], got {text!r}")
    try:
        lo, hi, pts = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise ValidationError(name, f"expected MIN:MAX:POINTS[:log], got {text!r}") from None
    log = len(parts) == 4 and parts[3] == "log"
    if pts < 1:
        raise ValidationError(name, "needs at least one point")
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi < lo:
        raise ValidationError(name, "needs finite MIN <= MAX")
    if (log or positive) and lo <= 0:
        raise ValidationError(name, "values must be > 0")
    return Grid(lo, hi, pts, log)


# ---------------------------------------------------------------- commands

def _stable_report(config):
    return mode_report(solve_config(config))


def cmd_steady(config: SystemConfig) -> ResultTable:
    """Lyapunov, closed-form and independent-damping occupancies per mode."""
    table = ResultTable(["mode", "omega", "nbar", "method", "var_q", "var_p",
                         "energy", "occupancy", "occupancy_over_nbar"])
    rep = _stable_report(config)
    try:
        check_nondegenerate(config)
        ana = analytic_report(config)
    except DegenerateFrequencies as exc:
        warnings.warn(f"analytic rows omitted: {exc}", RuntimeWarning, stacklevel=2)
        ana = None
    for i in range(config.n_modes):
        w, nb = config.omega[i], config.nbar[i]
        rows = [("lyapunov", rep.var_q[i], rep.var_p[i])]
        if ana is not None:
            rows.append(("analytic", ana.var_q[i], ana.var_p[i]))
        base = independent_baseline(config, i)
        rows.append(("baseline", base, base))
        for method, vq, vp in rows:
            e = 0.5 * (vq + vp)
            table.add(mode=i, omega=w, nbar=nb, method=method, var_q=vq, var_p=vp,
                      energy=e, occupancy=e - 0.5, occupancy_over_nbar=(e - 0.5) / nb)
    return table


def cmd_sweep_gap(config: SystemConfig, grid: Grid, target=0, partner=1,
                  plan: SimPlan | None = None) -> ResultTable:
    """Target-mode occupancy as the partner frequency is set to ``omega_target + delta``."""
    n = config.n_modes
    if n < 2:
        raise ValidationError("modes.omega", "a gap sweep needs at least two modes")
    for name, k in (("target", target), ("pair", partner)):
        if not 0 <= k < n:
            raise ValidationError(name, f"mode index {k} out of range for {n} modes")
    if target == partner:
        raise ValidationError("pair", "partner must differ from the target mode")
    table = ResultTable(["delta_omega", "method", "target", "occupancy",
                         "occupancy_over_nbar", "energy", "isolated_energy", "stderr", "status"])
    nb = config.nbar[target]
    for delta in grid.values():
        omega = config.omega.copy()
        omega[partner] = omega[target] + delta
        row = dict(delta_omega=float(delta), target=target)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", FastCavityWarning)
                cfg = config.with_modes(omega=omega)
        except ValidationError as exc:
            table.add(method="lyapunov", status=f"invalid: {exc.reason}", **row)
            continue
        iso = independent_baseline(cfg, target)
        try:
            rep = _stable_report(cfg)
            e = float(rep.energy[target])
            table.add(method="lyapunov", occupancy=e - 0.5, occupancy_over_nbar=(e - 0.5) / nb,
                      energy=e, isolated_energy=iso, status="ok", **row)
        except (Unstable, SingularSystem) as exc:
            table.add(method="lyapunov", isolated_energy=iso,
                      status="unstable" if isinstance(exc, Unstable) else "singular", **row)
            continue
        if plan is not None:
            stats = run_ensemble(cfg, plan)
            occ = float(stats.final_occupancy[target])
            table.add(method="montecarlo", occupancy=occ, occupancy_over_nbar=occ / nb,
                      energy=occ + 0.5, isolated_energy=iso,
                      stderr=float(stats.final_stderr[target]), status="ok", **row)
    return table


def cmd_map_gain(config: SystemConfig, gain_grid: Grid, amp_grid: Grid, target=0) -> ResultTable:
    """Target-mode occupancy over scale factors of all G_j (s_G) and all gains (s_g)."""
    if not 0 <= target < config.n_modes:
        raise ValidationError("target", f"mode index {target} out of range")
    table = ResultTable(["s_G", "s_g", "method", "target", "occupancy",
                         "occupancy_over_nbar", "energy", "status"])
    nb = config.nbar[target]
    for s_G in amp_grid.values():
        for s_g in gain_grid.values():
            row = dict(s_G=float(s_G), s_g=float(s_g), method="lyapunov", target=target)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                try:
                    rep = _stable_report(config.scaled(s_G, s_g))
                except Unstable:
                    table.add(status="unstable", **row)
                    continue
                except SingularSystem:
                    table.add(status="singular", **row)
                    continue
            e = float(rep.energy[target])
            table.add(occupancy=e - 0.5, occupancy_over_nbar=(e - 0.5) / nb, energy=e,
                      status="ok", **row)
    return table


def cmd_simulate(config: SystemConfig, plan: SimPlan, threads=None):
    """Monte-Carlo ensemble; returns (final table, time-series table)."""
    stats = run_ensemble(config, plan, threads=threads)
    lyap = _stable_report(config)
    n = config.n_modes
    cols = ["time"] + [f"energy_{i}" for i in range(n)] + [f"stderr_{i}" for i in range(n)] \
        + [f"lyapunov_energy_{i}" for i in range(n)]
    series = ResultTable(cols + ["method"])
    for k, t in enumerate(stats.times):
        row = {"time": float(t), "method": "montecarlo"}
        for i in range(n):
            row[f"energy_{i}"] = float(stats.mean_energy[k, i])
            row[f"stderr_{i}"] = float(stats.stderr[k, i])
            row[f"lyapunov_energy_{i}"] = float(lyap.energy[i])
        series.add(**row)
    final = ResultTable(["mode", "omega", "method", "occupancy", "occupancy_over_nbar",
                         "stderr", "initial_energy", "initial_stderr", "z_score"])
    for i in range(n):
        nb = config.nbar[i]
        occ, se = float(stats.final_occupancy[i]), float(stats.final_stderr[i])
        ly = float(lyap.occupancy[i])
        final.add(mode=i, omega=config.omega[i], method="montecarlo", occupancy=occ,
                  occupancy_over_nbar=occ / nb, stderr=se,
                  initial_energy=float(stats.initial_energy[i]),
                  initial_stderr=float(stats.initial_stderr[i]),
                  z_score=(occ - ly) / se if se > 0 else None)
        final.add(mode=i, omega=config.omega[i], method="lyapunov", occupancy=ly,
                  occupancy_over_nbar=ly / nb)
    return final, series


def cmd_modes(config: SystemConfig, seed_order=None) -> ResultTable:
    """Collective basis, collective frequencies and couplings."""
    basis = gram_schmidt_basis(config.n_modes, seed_order)
    spec = collective_spectrum(basis, config.omega)
    table = ResultTable(["quantity", "k", "j", "value", "method"])
    n = config.n_modes
    for k in range(n):
        for j in range(n):
            table.add(quantity="alpha", k=k, j=j, value=float(basis.alpha[k, j]), method="analytic")
    for k in range(n):
        table.add(quantity="Omega", k=k, value=float(spec.Omega[k]), method="analytic")
    for k in range(n):
        for j in range(k + 1, n):
            table.add(quantity="coupling", k=k, j=j, value=float(spec.couplings[k, j]),
                      method="analytic")
    for j, c in enumerate(spec.bright_dark, start=1):
        table.add(quantity="bright_dark_magnitude", k=0, j=j, value=abs(float(c)), method="analytic")
    try:
        damp = transformed_damping(basis, config)
        table.add(quantity="bright_damping", k=0, j=0, value=float(-damp[1, 1]), method="analytic")
    except UnequalRates:
        pass
    return table


def cmd_stability(config: SystemConfig) -> ResultTable:
    """Drift-matrix eigenvalues and the stability margin."""
    m = drift_matrix(config)
    eig = np.linalg.eigvals(m)
    order = np.lexsort((eig.imag, -eig.real))
    table = ResultTable(["quantity", "index", "real", "imag", "stable", "method"])
    margin = stability_margin(m)
    table.add(quantity="margin", real=margin, stable=bool(margin < 0), method="lyapunov")
    for k, idx in enumerate(order):
        table.add(quantity="eigenvalue", index=k, real=float(eig[idx].real),
                  imag=float(eig[idx].imag), method="lyapunov")
    return table


# -------------------------------------------------------------------- main

_OPTION_DEFAULTS = {
    "seed": 0, "dt": None, "t_final": None, "trajectories": None, "grid": None,
    "grid_amp": None, "target": 0, "pair": 1, "scheme": "markovian", "record_stride": 20,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="colddamp",
        description="Steady states, stochastic simulation and parameter sweeps for "
                    "multimode cold-damping feedback cooling.")
    parser.add_argument("--version", action="version", version=f"colddamp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH",
                       help="TOML configuration or a previous result file "
                            "(default: the two-mode reference configuration)")
        p.add_argument("--out", metavar="PATH", help="output CSV (default: stdout)")
        p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                       dest="overrides", help="override a configuration entry, e.g. cavity.kappa=5")

    def sim_opts(p):
        p.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed")
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--t-final", type=float, default=None, dest="t_final")
        p.add_argument("--trajectories", type=int, default=None)
        p.add_argument("--scheme", choices=("markovian", "full"), default=None)
        p.add_argument("--record-stride", type=int, default=None, dest="record_stride")

    p = sub.add_parser("steady", help="Lyapunov, closed-form and baseline occupancies")
    common(p)
    p = sub.add_parser("simulate", help="Monte-Carlo ensemble with time series")
    common(p)
    sim_opts(p)
    p = sub.add_parser("sweep-gap", help="target occupancy against a frequency gap")
    common(p)
    sim_opts(p)
    p.add_argument("--grid", metavar="MIN:MAX:POINTS[:log]", default=None,
                   help="gap values (default: 2..50 Gamma of the target mode, log)")
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--pair", type=int, default=None, help="index of the detuned partner mode")
    p = sub.add_parser("map-gain", help="target occupancy over gain and amplitude scales")
    common(p)
    p.add_argument("--grid", metavar="MIN:MAX:POINTS[:log]", default=None,
                   help="scale factors for the feedback gains (default 0.05:50:31:log)")
    p.add_argument("--grid-amp", metavar="MIN:MAX:POINTS[:log]", default=None, dest="grid_amp",
                   help="scale factors for the optomechanical couplings (default 1:1:1)")
    p.add_argument("--target", type=int, default=None)
    p = sub.add_parser("modes", help="bright/dark collective basis and couplings")
    common(p)
    p = sub.add_parser("stability", help="drift eigenvalues and stability margin")
    common(p)
    return parser


def _read_header_options(path):
    opts = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.startswith("#"):
                    break
                if line.startswith("# option."):
                    key, _, raw = line[len("# option."):].partition(":")
                    opts[key.strip()] = json.loads(raw.strip())
    except (OSError, UnicodeDecodeError, ValueError):
        return {}
    return opts


def _resolve_options(args, command):
    recorded = _read_header_options(args.config) if args.config else {}
    resolved = {}
    for key, default in _OPTION_DEFAULTS.items():
        if not hasattr(args, key):
            continue
        value = getattr(args, key)
        if value is None:
            value = recorded.get(key, default)
        resolved[key] = value
    return resolved


def _timestamp():
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def _header(command, config, options, seed=None):
    lines = [f"# colddamp {__version__}",
             f"# command: {command}",
             f"# config_sha256: {config_hash(config)}",
             f"# seed: {'none' if seed is None else seed}",
             f"# timestamp: {_timestamp()}"]
    for key in sorted(options):
        lines.append(f"# option.{key}: {json.dumps(options[key])}")
    lines += [EMBED_PREFIX + ln if ln else EMBED_PREFIX.rstrip()
              for ln in emit_config(config).splitlines()]
    return lines


def _plan(opts, config, default_traj):
    kw = {"seed": int(opts["seed"]), "scheme": opts["scheme"],
          "record_stride": int(opts["record_stride"]),
          "n_trajectories": int(opts["trajectories"] if opts["trajectories"] is not None
                                else default_traj)}
    if opts["dt"] is not None:
        kw["dt"] = float(opts["dt"])
    elif opts["scheme"] == "full":
        kw["dt"] = 0.1 / max(config.omega.max(), config.cavity.kappa, config.cavity.omega_fb)
    if opts["t_final"] is not None:
        kw["t_final"] = float(opts["t_final"])
    return SimPlan(**kw)


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _timeseries_path(out):
    p = Path(out)
    return p.with_name(p.stem + ".timeseries" + (p.suffix or ".csv"))


def run(argv=None):
    """Parse ``argv`` and execute; returns the exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    cmd = args.command
    try:
        if args.config:
            config = load_config(args.config, args.overrides)
        else:
            config = loads_config(emit_config(reference_two_mode_config()), args.overrides)
        opts = _resolve_options(args, cmd)
        seed = None
        extra = {}
        if cmd == "steady":
            table = cmd_steady(config)
        elif cmd == "stability":
            table = cmd_stability(config)
        elif cmd == "modes":
            table = cmd_modes(config)
        elif cmd == "map-gain":
            gain = parse_grid(opts["grid"] or "0.05:50:31:log", "grid", positive=True)
            amp = parse_grid(opts["grid_amp"] or "1:1:1", "grid_amp", positive=True)
            opts["grid"], opts["grid_amp"] = str(gain), str(amp)
            table = cmd_map_gain(config, gain, amp, target=int(opts["target"]))
        elif cmd == "sweep-gap":
            target, pair = int(opts["target"]), int(opts["pair"])
            if opts["grid"]:
                grid = parse_grid(opts["grid"], "grid")
            else:
                rate = float(damping_matrix(config)[target, target]) if 0 <= target < config.n_modes else 1.0
                grid = Grid(2 * rate, 50 * rate, 25, True)
            opts["grid"] = str(grid)
            plan = None
            if opts["trajectories"]:
                plan = _plan(opts, config, opts["trajectories"])
                seed = plan.seed
            table = cmd_sweep_gap(config, grid, target=target, partner=pair, plan=plan)
        elif cmd == "simulate":
            plan = _plan(opts, config, 100)
            opts.update(dt=plan.dt, t_final=plan.t_final, trajectories=plan.n_trajectories)
            seed = plan.seed
            table, series = cmd_simulate(config, plan)
            extra["series"] = series
        else:  # pragma: no cover - argparse restricts choices
            parser.error(f"unknown command {cmd}")
        header = _header(cmd, config, opts, seed)
        _write(args.out, table.to_csv(header))
        if "series" in extra:
            if args.out is None:
                sys.stdout.write("\n")
                sys.stdout.write(extra["series"].to_csv(["# time series"]))
            else:
                _write(_timeseries_path(args.out), extra["series"].to_csv(header))
    except (ParseError, ValidationError) as exc:
        print(f"colddamp: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Unstable as exc:
        print(f"colddamp: unstable: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except OSError as exc:
        print(f"colddamp: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ColdDampError as exc:
        print(f"colddamp: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
