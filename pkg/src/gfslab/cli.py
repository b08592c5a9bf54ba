"""Scenario runner: config parsing, dispatch, and artifact output.

Configs are flat INI text (``[section]`` headers, ``key = value`` pairs,
``#`` comments).  Unknown sections or keys are hard errors; there are no
silent defaults for misspellings.  Every run writes ``summary.json``
containing the fully resolved configuration, so a run can be replayed
exactly; CSV output uses 17-significant-digit decimal floats with LF line
endings and is byte-identical across reruns of the same config and seed.

Exit status: 0 on pass, 1 on configuration errors (nothing is written),
2 on numerical failure (``summary.json`` is still written).
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import ContractViolationError, ConvergenceError, EvolutionAborted
from .grid import Grid, config_laplacian, functional_derivative, functional_integral
from .hamiltonian import apply_hamiltonian, build_hamiltonian, field_strength_apply
from .poisson import gauss_residual
from .dynamics import (TRACE_COLUMNS, evolve, initial_evolution_state,
                       microcausality_probe)
from .state import (GaugeState, ModelParams, WaveFunctional,
                    charge_density_and_total, charge_neutral_entropy,
                    covariant_derivative, density, gauge_transform)
from .stationary import (SCFConfig, ir_limit_scan, scf_solve,
                         superposition_check, variational_gaussian)

COMMANDS = ("stationary", "evolve", "ir-scan", "gauge-check", "variational",
            "superposition", "microcausality", "invariants")

# section -> key -> (type tag, default); None default means "no entry"
_SCHEMA = {
    "grid": {
        "n_sites": ("int", 1),
        "spacing_a": ("float", 1.0),
        "n_phi": ("int", 128),
        "phi_max": ("float", 8.0),
    },
    "model": {
        "mass_m": ("float", 1.0),
        "quartic_lambda": ("float", 0.0),
        "length_l": ("float", 100.0),
        "entropy_s": ("float", None),
        "s_mode": ("str", "charge-neutral"),
    },
    "numerics": {
        "dt": ("float", 1e-3),
        "n_steps": ("int", 1000),
        "tol_poisson": ("float", 1e-10),
        "tol_omega": ("float", 1e-9),
        "tol_rho": ("float", 1e-8),
        "mixing_alpha": ("float", 0.3),
        "max_iter": ("int", 500),
        "seed": ("int", 0),
        "target_index": ("int", 0),
    },
    "output": {
        "directory": ("str", None),
        "record_stride": ("int", 10),
    },
    "scenario": {
        "kick_strength": ("float", 0.0),
        "kick_site": ("int", 0),
        "t_spread": ("float", 0.5),
        "l_values": ("floats", (2.0, 4.0, 8.0, 16.0, 32.0, 64.0)),
        "sigma_lo": ("float", 0.3),
        "sigma_hi": ("float", 1.5),
        "well_separation": ("float", 3.5),
    },
}


class ConfigError(Exception):
    pass


def _convert(section, key, raw):
    kind = _SCHEMA[section][key][0]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "floats":
            parts = raw.replace(",", " ").split()
            return tuple(float(p) for p in parts)
        return str(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}: {exc}")


def load_config(path: str | None, overrides=()):
    """Resolve defaults, the config file, and key=value overrides, in order."""
    values = {sec: {k: v[1] for k, v in keys.items()}
              for sec, keys in _SCHEMA.items()}
    if path is not None:
        cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
        try:
            with open(path, "r", encoding="utf-8") as fh:
                cp.read_file(fh, source=path)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        except configparser.Error as exc:
            raise ConfigError(f"config parse error: {exc}")
        for sec in cp.sections():
            if sec not in _SCHEMA:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, raw in cp.items(sec):
                if key not in _SCHEMA[sec]:
                    raise ConfigError(f"unknown key {key!r} in section [{sec}]")
                values[sec][key] = _convert(sec, key, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form "
                              "section.key=value")
        target, raw = item.split("=", 1)
        if "." not in target:
            raise ConfigError(f"override key {target!r} must be section.key")
        sec, key = target.split(".", 1)
        sec, key = sec.strip(), key.strip()
        if sec not in _SCHEMA or key not in _SCHEMA[sec]:
            raise ConfigError(f"unknown override target {target!r}")
        values[sec][key] = _convert(sec, key, raw.strip())
    return values


def _build_objects(cfg):
    gridc, modelc = cfg["grid"], cfg["model"]
    try:
        grid = Grid(gridc["n_sites"], gridc["spacing_a"], gridc["n_phi"],
                    gridc["phi_max"])
        params = ModelParams(mass_m=modelc["mass_m"],
                             quartic_lambda=modelc["quartic_lambda"],
                             length_l=modelc["length_l"],
                             entropy_S=modelc["entropy_s"])
        scf = SCFConfig(mode=modelc["s_mode"],
                        mixing_alpha=cfg["numerics"]["mixing_alpha"],
                        tol_omega=cfg["numerics"]["tol_omega"],
                        tol_rho=cfg["numerics"]["tol_rho"],
                        max_iter=cfg["numerics"]["max_iter"],
                        target_index=cfg["numerics"]["target_index"])
    except ContractViolationError as exc:
        raise ConfigError(str(exc))
    return grid, params, scf


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def dump_field(outdir, name, array, logical_shape):
    """Flat binary dump plus a self-describing JSON sidecar header."""
    arr = np.ascontiguousarray(array)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    bin_name = f"{name}.bin"
    arr.tofile(os.path.join(outdir, bin_name))
    header = {
        "file": bin_name,
        "dtype": str(arr.dtype),
        "dtype_bytes": int(arr.dtype.itemsize),
        "byte_order": "little",
        "ordering": "row-major",
        "shape": [int(s) for s in logical_shape],
        "count": int(arr.size),
    }
    with open(os.path.join(outdir, f"{name}.json"), "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_summary(outdir, payload):
    with open(os.path.join(outdir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _measured_order(residuals):
    r = np.asarray(residuals, dtype=float)
    return [float(np.log2(r[k] / r[k + 1])) for k in range(len(r) - 1)]


# ---------------------------------------------------------------------------
# scenario implementations


def _run_stationary(cfg, outdir):
    grid, params, scf = _build_objects(cfg)
    H = build_hamiltonian(params, grid)
    state = scf_solve(params, H, scf,
                      poisson_tol=cfg["numerics"]["tol_poisson"])
    hpsi = apply_hamiltonian(state.psi.values, None, H)
    hnorm = float(np.sqrt(functional_integral(np.abs(hpsi) ** 2, grid).real))
    passed = state.residual_eom < 1e-6 * hnorm
    dump_field(outdir, "psi", state.psi.values, grid.shape)
    dump_field(outdir, "a_t", state.a_t, grid.shape)
    summary = {
        "omega": state.omega,
        "s_value": state.s_value,
        "q_total": state.q_total,
        "iterations": state.iterations,
        "residual_eom": state.residual_eom,
        "residual_gauss": state.residual_gauss,
        "h_psi_norm": hnorm,
        "pass": bool(passed),
    }
    return summary, passed


def _run_evolve(cfg, outdir):
    grid, params, scf = _build_objects(cfg)
    H = build_hamiltonian(params, grid)
    base = scf_solve(params, H, scf,
                     poisson_tol=cfg["numerics"]["tol_poisson"])
    kick = cfg["scenario"]["kick_strength"]
    psi = base.psi.values
    if kick:
        psi = psi * np.exp(1j * kick * grid.site_coordinate(
            cfg["scenario"]["kick_site"]))
    ev0 = initial_evolution_state(WaveFunctional(psi, grid), params,
                                  poisson_tol=cfg["numerics"]["tol_poisson"])
    final, trace = evolve(ev0, params, H, cfg["numerics"]["dt"],
                          cfg["numerics"]["n_steps"],
                          record_stride=cfg["output"]["record_stride"])
    rows = [[getattr(r, c) for c in TRACE_COLUMNS] for r in trace]
    write_csv(os.path.join(outdir, "trace.csv"), TRACE_COLUMNS, rows)
    dump_field(outdir, "psi_final", final.psi.values, grid.shape)
    dump_field(outdir, "a_phi_final", final.a_phi,
               (grid.n_sites,) + grid.shape)
    dump_field(outdir, "e_field_final", final.e_field,
               (grid.n_sites,) + grid.shape)
    summary = {
        "records": len(trace),
        "final_time": final.time,
        "s_param": final.s_param,
        "norm2_drift": trace[-1].norm2 - trace[0].norm2,
        "charge_integral_drift": (trace[-1].charge_integral
                                  - trace[0].charge_integral),
        "gauss_residual_growth": (trace[-1].gauss_residual
                                  - trace[0].gauss_residual),
        "clamp_count": trace[-1].clamp_count,
        "clamped": bool(trace[-1].clamp_count > 0),
        "pass": True,
    }
    return summary, True


def _run_ir_scan(cfg, outdir):
    grid, params, scf = _build_objects(cfg)
    H = build_hamiltonian(params, grid)
    result = ir_limit_scan(params, H, cfg["scenario"]["l_values"], scf)
    header = ["l", "omega_scf", "omega_linear", "delta_omega", "s_value",
              "q_total", "iterations", "residual_eom"]
    rows = [[r.l, r.omega_scf, r.omega_linear, r.delta_omega, r.s_value,
             r.q_total, r.iterations, r.residual_eom] for r in result.rows]
    write_csv(os.path.join(outdir, "scan.csv"), header, rows)
    all_converged = all(r.converged for r in result.rows)
    summary = {
        "slope": result.slope,
        "omega_uncoupled": result.omega_uncoupled,
        "slope_vs_uncoupled": result.slope_vs_uncoupled,
        "rows_converged": [bool(r.converged) for r in result.rows],
        "pass": bool(all_converged),
    }
    return summary, all_converged


def _run_gauge_check(cfg, outdir):
    grid, params, _ = _build_objects(cfg)
    rng = np.random.default_rng(cfg["numerics"]["seed"])
    m = grid.n_points
    psi_v = (rng.standard_normal(m) + 1j * rng.standard_normal(m))
    envelope = np.exp(-0.5 * sum(grid.site_coordinate(i) ** 2
                                 for i in range(grid.n_sites)))
    psi_v *= envelope
    psi = WaveFunctional(psi_v, grid).normalized()
    a_t = 0.3 * envelope
    a_phi = np.stack([0.2 * envelope for _ in range(grid.n_sites)])
    e = np.stack([-functional_derivative(a_t, i, grid)
                  for i in range(grid.n_sites)])
    gauge = GaugeState(a_t, a_phi, e, grid)
    rho0 = density(psi)
    s0 = charge_neutral_entropy(rho0, grid)
    _, q0 = charge_density_and_total(rho0, s0, params, grid)
    g0 = gauss_residual(e, rho0, s0, params, grid)

    checks = {}
    # constant gauge parameter: a global phase
    lam_c = np.full(m, 0.7)
    psi_c, gauge_c = gauge_transform(psi, gauge, lam_c, None)
    rho_c = density(psi_c)
    _, q_c = charge_density_and_total(rho_c, s0, params, grid)
    checks["const_density_invariant"] = bool(
        np.max(np.abs(rho_c - rho0)) <= 1e-15)
    checks["const_potentials_bit_identical"] = bool(
        np.array_equal(gauge_c.a_t, a_t) and np.array_equal(gauge_c.a_phi, a_phi))
    checks["const_e_field_bit_identical"] = bool(
        np.array_equal(gauge_c.e_field, e))
    checks["const_charge_invariant"] = bool(
        abs(q_c - q0) <= 1e-15 * max(1.0, abs(q0)))
    checks["const_gauss_residual_invariant"] = bool(
        abs(gauss_residual(gauge_c.e_field, rho_c, s0, params, grid) - g0)
        <= 1e-14 * max(1.0, g0))
    checks["const_phase_applied"] = bool(
        np.max(np.abs(psi_c.values - np.exp(-0.7j) * psi.values)) <= 1e-15)

    # smooth gauge parameter: covariance residuals shrink at second order
    def covariance(n_phi):
        gr = Grid(grid.n_sites, grid.spacing_a, n_phi, grid.phi_max)
        env = np.exp(-0.5 * sum(gr.site_coordinate(i) ** 2
                                for i in range(gr.n_sites)))
        pv = env * (1.0 + 0.3 * gr.site_coordinate(0)) * np.exp(
            0.2j * gr.site_coordinate(0))
        p = WaveFunctional(pv, gr).normalized()
        at = 0.4 * env
        ap = np.stack([0.25 * env for _ in range(gr.n_sites)])
        ef = np.stack([-functional_derivative(at, i, gr)
                       for i in range(gr.n_sites)])
        gg = GaugeState(at, ap, ef, gr)
        lam = 0.7 * np.exp(-sum(gr.site_coordinate(i) ** 2
                                for i in range(gr.n_sites)) / 4.0)
        p2, gg2 = gauge_transform(p, gg, lam, None)
        phase = np.exp(-1j * lam)
        rc = np.sqrt(functional_integral(np.abs(
            covariant_derivative(p2, gg2, 0)
            - phase * covariant_derivative(p, gg, 0)) ** 2, gr).real)
        rf = np.sqrt(functional_integral(np.abs(
            field_strength_apply(p2, gg2, 0)
            - phase * field_strength_apply(p, gg, 0)) ** 2, gr).real)
        return rc, rf

    levels = [grid.n_phi // 2 * 2 + 1]
    levels += [2 * levels[-1] - 1, 4 * levels[-1] - 3]
    pairs = [covariance(n) for n in levels]
    orders_c = _measured_order([p[0] for p in pairs])
    orders_f = _measured_order([p[1] for p in pairs])
    checks["smooth_covariant_derivative_order"] = bool(
        all(1.9 <= o <= 2.1 for o in orders_c))
    checks["smooth_field_strength_order"] = bool(
        all(1.9 <= o <= 2.1 for o in orders_f))

    passed = all(checks.values())
    summary = {"checks": checks,
               "covariance_orders_c": orders_c,
               "covariance_orders_f": orders_f,
               "levels": levels,
               "pass": bool(passed)}
    return summary, passed


def _run_variational(cfg, outdir):
    grid, params, scf = _build_objects(cfg)
    H = build_hamiltonian(params, grid)
    sig, om = variational_gaussian(
        params, H, (cfg["scenario"]["sigma_lo"], cfg["scenario"]["sigma_hi"]),
        poisson_tol=cfg["numerics"]["tol_poisson"])
    summary = {"sigma_opt": sig, "sigma_opt_sq": sig * sig, "omega_opt": om,
               "pass": True}
    return summary, True


def _run_superposition(cfg, outdir):
    grid, params, scf = _build_objects(cfg)
    H = build_hamiltonian(params, grid)
    rep = superposition_check(params, H, scf,
                              cfg["scenario"]["well_separation"])
    summary = {
        "overlap_max": rep.overlap_max,
        "residual_combined": rep.residual_combined,
        "residual_parts_sum": rep.residual_parts_sum,
        "bound": rep.bound,
        "omega1": rep.state1.omega,
        "omega2": rep.state2.omega,
        "pass": bool(rep.passed),
    }
    return summary, rep.passed


def _run_microcausality(cfg, outdir):
    grid, params, scf = _build_objects(cfg)
    H = build_hamiltonian(params, grid)
    base = scf_solve(params, H, scf,
                     poisson_tol=cfg["numerics"]["tol_poisson"])
    ev0 = initial_evolution_state(base.psi, params,
                                  poisson_tol=cfg["numerics"]["tol_poisson"])
    rep = microcausality_probe(ev0, params, H,
                               kick_site=cfg["scenario"]["kick_site"],
                               kick_strength=cfg["scenario"]["kick_strength"],
                               dt=cfg["numerics"]["dt"],
                               t_spread=cfg["scenario"]["t_spread"])
    far = rep.far_site_max_after
    ratio = rep.after_spread[rep.kick_site] / max(far, 1e-300)
    passed = bool(np.max(rep.immediate) < 1e-12 and ratio >= 10.0)
    summary = {
        "kick_site": rep.kick_site,
        "immediate": [float(x) for x in rep.immediate],
        "after_spread": [float(x) for x in rep.after_spread],
        "ratio_kicked_to_far": float(ratio),
        "pass": passed,
    }
    return summary, passed


def _run_invariants(cfg, outdir):
    grid, params, _ = _build_objects(cfg)
    rng = np.random.default_rng(cfg["numerics"]["seed"])
    m = grid.n_points
    f = rng.standard_normal(m)
    g = rng.standard_normal(m)
    checks = {}

    lf = config_laplacian(f, grid)
    lg = config_laplacian(g, grid)
    checks["laplacian_symmetric"] = bool(
        abs(functional_integral(f * lg, grid)
            - functional_integral(g * lf, grid))
        <= 1e-12 * max(1.0, abs(functional_integral(f * lf, grid))))
    checks["laplacian_negative"] = bool(
        functional_integral(f * lf, grid) <= 0.0)
    d_g = functional_derivative(g, 0, grid)
    d_f = functional_derivative(f, 0, grid)
    checks["derivative_antisymmetric"] = bool(
        abs(functional_integral(f * d_g, grid)
            + functional_integral(g * d_f, grid))
        <= 1e-12 * max(1.0, float(np.linalg.norm(f)) * float(np.linalg.norm(g))))

    H = build_hamiltonian(params, grid)
    psi_v = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    phi_v = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    hpsi = apply_hamiltonian(psi_v, None, H)
    hphi = apply_hamiltonian(phi_v, None, H)
    lhs = functional_integral(np.conj(phi_v) * hpsi, grid)
    rhs = np.conj(functional_integral(np.conj(psi_v) * hphi, grid))
    scale = float(np.linalg.norm(psi_v) * np.linalg.norm(phi_v))
    checks["hamiltonian_hermitian"] = bool(abs(lhs - rhs) < 1e-11 * scale)

    envelope = np.exp(-0.5 * sum(grid.site_coordinate(i) ** 2
                                 for i in range(grid.n_sites)))
    psi = WaveFunctional((rng.standard_normal(m) + 1j * rng.standard_normal(m))
                         * envelope, grid).normalized()
    rho = density(psi)
    s = charge_neutral_entropy(rho, grid)
    _, q = charge_density_and_total(rho, s, params, grid)
    checks["charge_neutral_entropy_zeroes_Q"] = bool(abs(q) < 1e-12)

    _, q1 = charge_density_and_total(rho, 0.0, params, grid)
    _, q2 = charge_density_and_total(4.0 * rho, 0.0, params, grid)
    checks["homogeneity_violated"] = bool(
        abs(q2 - 4.0 * q1) > 0.1 * max(abs(q1), 1e-30))

    summary = {"checks": checks, "pass": bool(all(checks.values()))}
    return summary, all(checks.values())


_RUNNERS = {
    "stationary": _run_stationary,
    "evolve": _run_evolve,
    "ir-scan": _run_ir_scan,
    "gauge-check": _run_gauge_check,
    "variational": _run_variational,
    "superposition": _run_superposition,
    "microcausality": _run_microcausality,
    "invariants": _run_invariants,
}


def run_scenario(command: str, config_path: str | None, overrides=(),
                 out_dir: str | None = None) -> int:
    """Execute one scenario; returns the process exit status."""
    if command not in COMMANDS:
        print(f"error: unknown command {command!r}; choose from "
              f"{', '.join(COMMANDS)}", file=sys.stderr)
        return 1
    try:
        cfg = load_config(config_path, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    outdir = (out_dir or cfg["output"]["directory"]
              or os.environ.get("GFSLAB_OUT") or ".")
    try:
        os.makedirs(outdir, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {outdir}: {exc}",
              file=sys.stderr)
        return 1

    base = {"command": command, "version": __version__, "config": cfg}
    try:
        summary, passed = _RUNNERS[command](cfg, outdir)
    except (ContractViolationError, ConvergenceError, EvolutionAborted,
            np.linalg.LinAlgError) as exc:
        base.update({"error": f"{type(exc).__name__}: {exc}", "pass": False})
        _write_summary(outdir, base)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    base.update(summary)
    _write_summary(outdir, base)
    print(f"{command}: {'pass' if passed else 'FAIL'} "
          f"(outputs in {os.path.abspath(outdir)})")
    return 0 if passed else 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gfslab",
        description="Scenario runner for the gauged functional Schrodinger "
                    "lattice laboratory.")
    parser.add_argument("command", help=f"one of: {', '.join(COMMANDS)}")
    parser.add_argument("--config", default=None,
                        help="INI-style scenario configuration file")
    parser.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
    parser.add_argument("--out", default=None,
                        help="output directory (default: output.directory, "
                             "then $GFSLAB_OUT, then '.')")
    args = parser.parse_args(argv)
    return run_scenario(args.command, args.config, args.overrides, args.out)


if __name__ == "__main__":
    sys.exit(main())
