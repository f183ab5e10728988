"""Config-driven command line front end.

Commands
--------
check      certify controllability at the configured equilibrium
plan       print the zigzag legs and the return-trajectory timeline
wave       build and sample one simple wave (testing aid)
run        full steering run: phi.csv psi.csv -> solution + traces
simulate   plain forward solve with frozen or replayed boundary data

Configuration is a flat INI-style file with sections [system],
[control], [grid], [tolerances], [run]; unknown keys are rejected and
every run writes a manifest echoing the fully resolved configuration.
Exit codes: 0 success, 1 validation, 2 numerical failure, 3 hypothesis
not certified, 4 tolerance not met (artifacts still written).
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys as _sys

import numpy as np

from . import core, models, pipeline, reachability, solver, waves
from .errors import (
    HypothesisNotCertified,
    NumericalError,
    SonicControlError,
    ToleranceNotMet,
    ValidationError,
)

MODEL_KEYS = {
    "saint_venant": {"g", "h_star"},
    "isentropic": {"K", "gamma", "rho_star"},
    "euler": {"k", "c_v", "R", "gamma", "rho_star", "s_star"},
    "ar": {"gamma", "rho_star"},
    "mar": {"gamma", "rho0", "rho_star"},
}

DEFAULTS = {
    "system": {
        "model": "saint_venant",
        "equilibrium": "sonic_right",
        "g": "1.0",
        "K": "1.0",
        "gamma": "1.4",
        "k": "1.0",
        "c_v": "1.0",
        "R": "1.0",
        "rho0": "2.0",
        "h_star": "1.0",
        "rho_star": "1.0",
        "s_star": "0.0",
    },
    "control": {
        "epsilon": "auto",
        "eta_ramp": "auto",      # auto = 0.5 * L
        "eta_plan": "1e-3",
        "bracket_depth": "2",
        "delta_target": "0.25",
        "nu_max": "0.01",
    },
    "grid": {
        "L": "1.0",
        "nx": "400",
        "cfl": "0.45",
        "window_margin": "0.5",
        "middle_coarsen": "4",
    },
    "tolerances": {
        "ode_tol": "1e-10",
        "root_tol": "1e-12",
    },
    "run": {
        "output_dir": "out",
        "solution_stride": "1",
        "t_end": "1.0",
        "dt": "auto",
        "family": "auto",
        "s_bar": "auto",
        "wave_nx": "200",
        "wave_nt": "41",
        "trajectory_csv": "false",
        "sample_nx": "100",
        "sample_nt": "200",
        "left_trace": "",
        "right_trace": "",
    },
}


class RunConfig:
    """Validated, fully-resolved configuration."""

    def __init__(self, path):
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        read = parser.read(path)
        if not read:
            raise ValidationError(f"config file not found: {path}")
        resolved = {sec: dict(vals) for sec, vals in DEFAULTS.items()}
        for sec in parser.sections():
            if sec not in resolved:
                raise ValidationError(
                    f"unknown config section [{sec}]; valid: {sorted(resolved)}")
            for key, value in parser.items(sec):
                if key not in resolved[sec]:
                    raise ValidationError(
                        f"unknown key '{key}' in [{sec}]; valid: "
                        f"{sorted(resolved[sec])}")
                resolved[sec][key] = value.strip()
        self.sections = resolved
        model = resolved["system"]["model"]
        if model not in MODEL_KEYS:
            raise ValidationError(
                f"unknown model '{model}'; valid models: {sorted(MODEL_KEYS)}")
        # model-specific keys: reject values set for a different model
        for key, value in resolved["system"].items():
            if key in ("model", "equilibrium"):
                continue
            if value != DEFAULTS["system"][key] and key not in MODEL_KEYS[model]:
                raise ValidationError(
                    f"key '{key}' in [system] does not apply to model '{model}'")

    def get(self, sec, key):
        return self.sections[sec][key]

    def get_float(self, sec, key):
        try:
            return float(self.sections[sec][key])
        except ValueError:
            raise ValidationError(f"[{sec}] {key} must be a number, got "
                                  f"{self.sections[sec][key]!r}") from None

    def get_int(self, sec, key):
        try:
            return int(self.sections[sec][key])
        except ValueError:
            raise ValidationError(f"[{sec}] {key} must be an integer") from None

    def get_bool(self, sec, key):
        val = self.sections[sec][key].lower()
        if val in ("true", "yes", "1", "on"):
            return True
        if val in ("false", "no", "0", "off"):
            return False
        raise ValidationError(f"[{sec}] {key} must be a boolean")

    def optional_float(self, sec, key):
        val = self.sections[sec][key]
        return None if val in ("auto", "") else self.get_float(sec, key)

    def write_manifest(self, path, command):
        lines = [f"command: {command}"]
        for sec in ("system", "control", "grid", "tolerances", "run"):
            lines.append(f"[{sec}]")
            for key in sorted(self.sections[sec]):
                lines.append(f"{key} = {self.sections[sec][key]}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def build_system(cfg: RunConfig):
    model = cfg.get("system", "model")
    eq = cfg.get("system", "equilibrium")
    if model == "saint_venant":
        params = models.SaintVenant(g=cfg.get_float("system", "g"))
        anchor = cfg.get_float("system", "h_star")
    elif model == "isentropic":
        params = models.Isentropic(K=cfg.get_float("system", "K"),
                                   gamma=cfg.get_float("system", "gamma"))
        anchor = cfg.get_float("system", "rho_star")
    elif model == "euler":
        params = models.Euler(k=cfg.get_float("system", "k"),
                              c_v=cfg.get_float("system", "c_v"),
                              R=cfg.get_float("system", "R"),
                              gamma=cfg.get_float("system", "gamma"))
        anchor = (cfg.get_float("system", "rho_star"),
                  cfg.get_float("system", "s_star"))
    elif model == "ar":
        params = models.Traffic(gamma=cfg.get_float("system", "gamma"))
        anchor = cfg.get_float("system", "rho_star")
    else:
        params = models.Traffic(gamma=cfg.get_float("system", "gamma"),
                                rho0=cfg.get_float("system", "rho0"))
        anchor = cfg.get_float("system", "rho_star")
    return models.build_model(params, eq, anchor)


def _control_params(cfg):
    L = cfg.get_float("grid", "L")
    eta_ramp = cfg.optional_float("control", "eta_ramp")
    return {
        "L": L,
        "nx": cfg.get_int("grid", "nx"),
        "epsilon": cfg.optional_float("control", "epsilon"),
        "eta_ramp": 0.5 * L if eta_ramp is None else eta_ramp,
        "eta_plan": cfg.get_float("control", "eta_plan"),
        "bracket_depth": cfg.get_int("control", "bracket_depth"),
        "delta_target": cfg.get_float("control", "delta_target"),
        "nu_max": cfg.get_float("control", "nu_max"),
        "cfl": cfg.get_float("grid", "cfl"),
        "margin": cfg.get_float("grid", "window_margin"),
        "coarsen": cfg.get_int("grid", "middle_coarsen"),
        "ode_tol": cfg.get_float("tolerances", "ode_tol"),
        "root_tol": cfg.get_float("tolerances", "root_tol"),
    }


def _prepare_output(cfg, command):
    out = cfg.get("run", "output_dir")
    os.makedirs(out, exist_ok=True)
    cfg.write_manifest(os.path.join(out, "manifest.txt"), command)
    return out


def _certify(cfg, sysdef):
    eps = cfg.optional_float("control", "epsilon")
    if eps is not None:
        return reachability.certify_hypothesis(
            sysdef, eps, bracket_depth=cfg.get_int("control", "bracket_depth"),
            ode_tol=cfg.get_float("tolerances", "ode_tol"))
    prob_eps = pipeline._pick_epsilon(
        sysdef, pipeline.ControlProblem(
            sys=sysdef,
            phi=pipeline.C1Data.constant(sysdef.u_star, cfg.get_float("grid", "L")),
            psi=pipeline.C1Data.constant(sysdef.u_star, cfg.get_float("grid", "L")),
            nx=cfg.get_int("grid", "nx")))
    return prob_eps[0]


def print_report(sysdef, report):
    print(f"system: {sysdef.name}  equilibrium u* = "
          f"{np.array2string(sysdef.u_star, precision=6)}  sonic family m = {sysdef.m}")
    for j in sorted(report.h1):
        if report.h1_natural is not None:
            print(f"H1[j={j}] = {report.h1_natural[j]:.6f}   "
                  f"(unit scaling: {report.h1[j]:.6f})")
        else:
            print(f"H1[j={j}] = {report.h1[j]:.6f}")
    if report.h2:
        for (j, k), val in sorted(report.h2.items()):
            print(f"H2[({j},{k})] = {val:.6f}")
    else:
        print("H2: no pair of non-sonic families")
    for word, val in sorted(report.h3.items()):
        if "[" in word:
            print(f"H3 word {word} = {val:.6f}")
    print(f"H3 satisfied up to depth {report.bracket_depth}: {report.h3_ok}")
    print(f"H4: bracket rank {report.h4_rank}/{sysdef.n}, "
          f"sonic-boundary membership {report.h4_boundary} -> {report.h4_ok}")
    verdict = "certified" if report.certified else "NOT certified"
    print(f"(H) {verdict}: lambda_m(z(1)) = {report.certified_value:.6f} "
          f"via {report.best_label} at eps = {report.epsilon:g}")


def cmd_check(cfg):
    sysdef = build_system(cfg)
    out = _prepare_output(cfg, "check")
    report = _certify(cfg, sysdef)
    print_report(sysdef, report)
    with open(os.path.join(out, "report.txt"), "w") as fh:
        import contextlib
        with contextlib.redirect_stdout(fh):
            print_report(sysdef, report)
    if not report.certified:
        raise HypothesisNotCertified(
            f"best |lambda_m(z(1))| = {abs(report.certified_value):.3e}")
    return 0


def _plan_trajectory(cfg, sysdef):
    report = _certify(cfg, sysdef)
    if not report.certified:
        raise HypothesisNotCertified(
            f"best |lambda_m(z(1))| = {abs(report.certified_value):.3e}")
    plan = reachability.plan_zigzag(sysdef, report.best_control,
                                    cfg.get_float("control", "eta_plan"),
                                    ode_tol=cfg.get_float("tolerances", "ode_tol"))
    L = cfg.get_float("grid", "L")
    eta_ramp = cfg.optional_float("control", "eta_ramp")
    traj = waves.build_return(sysdef, plan, L,
                              0.5 * L if eta_ramp is None else eta_ramp,
                              ode_tol=cfg.get_float("tolerances", "ode_tol"))
    return report, plan, traj


def cmd_plan(cfg):
    sysdef = build_system(cfg)
    out = _prepare_output(cfg, "plan")
    report, plan, traj = _plan_trajectory(cfg, sysdef)
    print(f"plan: {len(plan.legs)} leg(s), chop level {plan.chop_level}, "
          f"endpoint error {plan.error:.3e}, sum |t_l| = {plan.amplitude_sum:.6g}")
    for i, (fam, amp) in enumerate(plan.legs, start=1):
        print(f"  leg {i}: family {fam}, amplitude {amp:.6g}")
    lam_bar = core.eigendecompose(sysdef, traj.u_bar_star).lambdas
    print(f"plateau state u_bar = {np.array2string(traj.u_bar_star, precision=8)}")
    print(f"plateau speeds = {np.array2string(lam_bar, precision=8)}")
    print(f"middle extension beyond crossing-time default: {traj.middle_extension:.6g}")
    print("timeline:")
    for i, ph in enumerate(traj.phases, start=1):
        kind = type(ph).__name__
        print(f"  phase {i}: {kind} on [{ph.t0:.6g}, {ph.t1:.6g}]")
    if cfg.get_bool("run", "trajectory_csv"):
        nxs = cfg.get_int("run", "sample_nx")
        nts = cfg.get_int("run", "sample_nt")
        xs = np.linspace(0.0, traj.L, nxs + 1)
        ts = np.linspace(0.0, traj.T, nts + 1)
        vals = np.stack([traj.evaluate(t, xs) for t in ts])
        sol = solver.GridSolution(grid=None, t=ts, x=xs, values=vals,
                                  provenance="trajectory-sampled")
        pipeline.write_solution_csv(sol, os.path.join(out, "trajectory.csv"))
        print(f"wrote {os.path.join(out, 'trajectory.csv')}")
    return 0


def cmd_wave(cfg):
    sysdef = build_system(cfg)
    out = _prepare_output(cfg, "wave")
    L = cfg.get_float("grid", "L")
    eta_ramp = cfg.optional_float("control", "eta_ramp")
    eta_ramp = 0.5 * L if eta_ramp is None else eta_ramp
    fam_raw = cfg.get("run", "family")
    family = (sysdef.nonsonic_families[-1] if fam_raw == "auto"
              else cfg.get_int("run", "family"))
    if family == sysdef.m or not 1 <= family <= sysdef.n:
        raise ValidationError(f"wave family must be non-sonic, in 1..{sysdef.n}")
    s_raw = cfg.get("run", "s_bar")
    eps = cfg.optional_float("control", "epsilon")
    s_bar = (eps if s_raw == "auto" and eps is not None else
             0.05 if s_raw == "auto" else cfg.get_float("run", "s_bar"))
    u_plus = reachability.flow_map(sysdef, family, s_bar, sysdef.u_star,
                                   ode_tol=cfg.get_float("tolerances", "ode_tol"))
    lam_star = core.eigendecompose(sysdef, sysdef.u_star).lambdas[family - 1]
    orientation = "left" if lam_star < 0 else "right"
    spec0 = waves.WaveSpec(family=family, u_minus=sysdef.u_star, u_plus=u_plus,
                           s_bar=s_bar, eta_ramp=eta_ramp,
                           orientation=orientation, duration=0.0)
    profile = waves.make_profile(sysdef, spec0, L)
    duration = max(L / abs(lam_star) + 1.0,
                   (L + eta_ramp) / profile.min_abs_speed + 0.1)
    spec = waves.WaveSpec(family=family, u_minus=sysdef.u_star, u_plus=u_plus,
                          s_bar=s_bar, eta_ramp=eta_ramp,
                          orientation=orientation, duration=duration)
    nxs = cfg.get_int("run", "wave_nx")
    nts = cfg.get_int("run", "wave_nt")
    xs = np.linspace(0.0, L, nxs + 1)
    ts = np.linspace(0.0, duration, nts)
    vals = np.stack([waves.evaluate_wave(sysdef, spec, L, t, xs, profile=profile,
                                         root_tol=cfg.get_float("tolerances", "root_tol"))
                     for t in ts])
    sol = solver.GridSolution(grid=None, t=ts, x=xs, values=vals,
                              provenance="wave-sampled")
    sol.residual_stats = solver.residual(sysdef, sol)
    pipeline.write_solution_csv(sol, os.path.join(out, "wave.csv"))
    err_start = float(np.max(np.abs(vals[0] - sysdef.u_star)))
    err_end = float(np.max(np.abs(vals[-1] - u_plus)))
    print(f"wave: family {family}, s_bar {s_bar:g}, duration {duration:.6g}, "
          f"orientation {orientation}")
    print(f"start-state error {err_start:.3e}, end-state error {err_end:.3e}")
    print(f"residual max {sol.residual_stats.max_abs:.3e} "
          f"rms {sol.residual_stats.rms:.3e}")
    print(f"wrote {os.path.join(out, 'wave.csv')}")
    return 0


def read_data_csv(path, n):
    """Parse `x,u1..un` rows; raises with the offending line number."""
    xs, rows = [], []
    with open(path) as fh:
        header = fh.readline().strip()
        expected = "x," + ",".join(f"u{i + 1}" for i in range(n))
        if header.replace(" ", "") != expected:
            raise ValidationError(
                f"{path}:1: header must be '{expected}', got '{header}'")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != n + 1:
                raise ValidationError(
                    f"{path}:{lineno}: expected {n + 1} fields, got {len(parts)}")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ValidationError(
                    f"{path}:{lineno}: non-numeric field in '{line}'") from None
            xs.append(vals[0])
            rows.append(vals[1:])
    if len(xs) < 4:
        raise ValidationError(f"{path}: needs at least 4 data rows")
    return np.array(xs), np.array(rows)


def _load_c1(path, sysdef, L):
    xs, rows = read_data_csv(path, sysdef.n)
    if abs(xs[0]) > 1e-9 or abs(xs[-1] - L) > 1e-9:
        raise ValidationError(
            f"{path}: x must cover [0, {L:g}] (got [{xs[0]:g}, {xs[-1]:g}])")
    return pipeline.C1Data(xs, rows)


def _write_run_artifacts(out, cfg, result):
    stride = max(cfg.get_int("run", "solution_stride"), 1)
    pipeline.write_solution_csv(result.solution,
                                os.path.join(out, "solution.csv"), stride=stride)
    t, left, right = pipeline.extract_traces(result)
    pipeline.write_trace_csv(t, left, "left", os.path.join(out, "trace_left.csv"))
    pipeline.write_trace_csv(t, right, "right", os.path.join(out, "trace_right.csv"))
    pipeline.write_summary(result, os.path.join(out, "summary.txt"))


def cmd_run(cfg, phi_path, psi_path):
    sysdef = build_system(cfg)
    out = _prepare_output(cfg, "run")
    params = _control_params(cfg)
    phi = _load_c1(phi_path, sysdef, params["L"])
    psi = _load_c1(psi_path, sysdef, params["L"])
    problem = pipeline.ControlProblem(sys=sysdef, phi=phi, psi=psi,
                                      final_tol=5e-3, **params)
    try:
        result = pipeline.control(problem)
    except ToleranceNotMet as exc:
        result = getattr(exc, "result", None)
        if result is not None:
            _write_run_artifacts(out, cfg, result)
            print(f"wrote artifacts to {out} (tolerances NOT met)")
        raise
    _write_run_artifacts(out, cfg, result)
    d = result.diagnostics
    print(f"run complete: T = {d['T']:.6g}, final error = {d['final_error']:.3e}, "
          f"sup deviation = {d['sup_deviation']:.3e}")
    print(f"wrote artifacts to {out}")
    return 0


def read_trace_csv(path, n):
    ts, rows = [], []
    with open(path) as fh:
        header = fh.readline()
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != n + 2:
                raise ValidationError(
                    f"{path}:{lineno}: expected {n + 2} fields, got {len(parts)}")
            ts.append(float(parts[0]))
            rows.append([float(p) for p in parts[2:]])
    return np.array(ts), np.array(rows)


def cmd_simulate(cfg, data_path):
    sysdef = build_system(cfg)
    out = _prepare_output(cfg, "simulate")
    L = cfg.get_float("grid", "L")
    xs, rows = read_data_csv(data_path, sysdef.n)
    if abs(xs[0]) > 1e-9 or abs(xs[-1] - L) > 1e-9:
        raise ValidationError(f"{data_path}: x must cover [0, {L:g}]")
    t_end = cfg.get_float("run", "t_end")
    dt = cfg.optional_float("run", "dt")

    left_path = cfg.get("run", "left_trace")
    right_path = cfg.get("run", "right_trace")
    if left_path and right_path:
        tl, vl = read_trace_csv(left_path, sysdef.n)
        tr, vr = read_trace_csv(right_path, sysdef.n)

        def left_fn(t):
            return np.array([np.interp(t, tl, vl[:, c]) for c in range(sysdef.n)])

        def right_fn(t):
            return np.array([np.interp(t, tr, vr[:, c]) for c in range(sysdef.n)])
    else:
        frozen_l, frozen_r = rows[0].copy(), rows[-1].copy()
        left_fn = lambda t: frozen_l
        right_fn = lambda t: frozen_r

    sol = solver.ibvp_solve(sysdef, rows, left_fn, right_fn, 0.0, t_end, xs,
                            cfl=cfg.get_float("grid", "cfl"), dt=dt)
    pipeline.write_solution_csv(sol, os.path.join(out, "simulate.csv"),
                                stride=max(cfg.get_int("run", "solution_stride"), 1))
    print(f"simulate: {sol.t.size} rows, residual max "
          f"{sol.residual_stats.max_abs:.3e} rms {sol.residual_stats.rms:.3e}")
    print(f"wrote {os.path.join(out, 'simulate.csv')}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="soniccontrol",
        description="Boundary-control synthesis for quasilinear hyperbolic "
                    "systems with a sonic equilibrium")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="INI config file")
        p.add_argument("--output-dir", default=None)
        p.add_argument("--nx", type=int, default=None)
        p.add_argument("--epsilon", type=float, default=None)

    common(sub.add_parser("check", help="certify controllability"))
    common(sub.add_parser("plan", help="print legs and timeline"))
    common(sub.add_parser("wave", help="build and sample one simple wave"))
    p_run = sub.add_parser("run", help="full steering run")
    p_run.add_argument("phi", help="initial data CSV (x,u1..un)")
    p_run.add_argument("psi", help="final data CSV (x,u1..un)")
    common(p_run)
    p_sim = sub.add_parser("simulate", help="forward solve / trace replay")
    p_sim.add_argument("data", help="initial data CSV (x,u1..un)")
    common(p_sim)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig(args.config)
        if args.output_dir is not None:
            cfg.sections["run"]["output_dir"] = args.output_dir
        if args.nx is not None:
            cfg.sections["grid"]["nx"] = str(args.nx)
        if args.epsilon is not None:
            cfg.sections["control"]["epsilon"] = repr(args.epsilon)

        if args.command == "check":
            return cmd_check(cfg)
        if args.command == "plan":
            return cmd_plan(cfg)
        if args.command == "wave":
            return cmd_wave(cfg)
        if args.command == "run":
            return cmd_run(cfg, args.phi, args.psi)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.data)
        raise ValidationError(f"unknown command {args.command}")
    except ValidationError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 1
    except HypothesisNotCertified as exc:
        print(f"hypothesis not certified: {exc}", file=_sys.stderr)
        return 3
    except ToleranceNotMet as exc:
        print(f"tolerance not met: {exc}", file=_sys.stderr)
        return 4
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=_sys.stderr)
        return 2
    except SonicControlError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 2


if __name__ == "__main__":
    _sys.exit(main())
