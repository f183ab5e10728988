"""Acceptance suite: every criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one pass/fail
line per criterion.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import build_problem, fv_solve_sv
from soniccontrol import core, models, pipeline as pl, reachability as rb, solver, waves

ODE_TOL = rb.ODE_TOL
ROOT_TOL = 1e-12


def report(criterion, detail, ok=True):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {criterion}: {status} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="module")
def end_to_end(bundled):
    """Criterion-8 runs, shared with criterion 9."""
    results = {}
    for name, sysdef in bundled.items():
        start = time.time()
        results[name] = (pl.control(build_problem(sysdef, nx=400)),
                         time.time() - start)
    return results


def _natural_rescale(sysdef, j):
    """Factor turning a unit-scaled H1 product into the natural one."""
    r_nat = core.eigenvector(sysdef, j, sysdef.u_star, normalization="natural")
    r_unit = core.eigenvector(sysdef, j, sysdef.u_star)
    return float(np.linalg.norm(r_nat) * np.sign(r_unit @ r_nat))


def test_criterion_1_closed_form_first_order_products(isentropic14, euler, mar):
    cases = [
        (isentropic14, (3.0 - 1.4) / 2.0),
        (euler, -math.sqrt(2.0)),
        (mar, -2.0 * (1.0 - 0.5) ** -3.0),      # -gamma rho^-2 (1/rho - 1/rho0)^(-gamma-1)
    ]
    worst_analytic = 0.0
    worst_fd = 0.0
    slowest = 0.0
    for sysdef, expected in cases:
        start = time.time()
        val, j = models.analytic_h1_value(sysdef)
        worst_analytic = max(worst_analytic, abs(val - expected))
        # numeric finite-difference path, rescaled to the natural frame
        numeric = models.strip_analytic(sysdef)
        grad = core.grad_lambda(numeric, numeric.m, numeric.u_star, method="fd")
        r_unit = core.eigenvector(numeric, j, numeric.u_star, method="numeric")
        fd_val = float(grad @ r_unit) * _natural_rescale(sysdef, j)
        worst_fd = max(worst_fd, abs(fd_val - expected))
        slowest = max(slowest, time.time() - start)
    report(1, f"analytic dev {worst_analytic:.2e} (tol 1e-6), "
              f"numeric-FD dev {worst_fd:.2e} (tol 1e-4), "
              f"slowest {slowest:.2f}s (< 1s)",
           ok=(worst_analytic <= 1e-6 and worst_fd <= 1e-4 and slowest < 1.0))


def test_criterion_2_flow_maps(isentropic2, all_models):
    end = rb.flow_map(isentropic2, 2, 0.2, np.array([1.0, 1.0]), field="natural")
    closed_err = float(np.max(np.abs(end - [1.21, 1.2])))

    worst = 0.0
    for name in ("saint_venant", "isentropic", "euler", "ar", "mar"):
        sysdef = all_models[name]
        rng = np.random.default_rng(99)
        scale = np.maximum(np.abs(sysdef.u_star), 1.0)
        for _ in range(50):
            u = sysdef.u_star + 0.01 * scale * rng.uniform(-1, 1, sysdef.n)
            fam = rng.choice(sysdef.nonsonic_families)
            s = rng.uniform(-0.2, 0.2)
            fwd = rb.flow_map(sysdef, fam, s, u)
            inv = rb.flow_map(sysdef, fam, -s, fwd)
            worst = max(worst, float(np.max(np.abs(inv - u))))
            a = 0.4 * s
            two = rb.flow_map(sysdef, fam, s - a, rb.flow_map(sysdef, fam, a, u))
            worst = max(worst, float(np.max(np.abs(two - fwd))))
    report(2, f"closed-form dev {closed_err:.2e} (tol 1e-8), "
              f"inverse/semigroup dev {worst:.2e} (tol {10 * ODE_TOL:.0e})",
           ok=(closed_err <= 1e-8 and worst <= 10 * ODE_TOL))


def test_criterion_3_single_component_approximation():
    rng = np.random.default_rng(31)
    fams = (1, 3)
    exact, bound_ok = True, True
    for _ in range(20):
        q = int(rng.integers(1, 5))
        cuts = sorted(Fraction(int(c), 64) for c in
                      rng.choice(np.arange(1, 64), size=q - 1, replace=False))
        bps = [Fraction(0), *cuts, Fraction(1)]
        vals = rng.uniform(-1.0, 1.0, (q, 2))
        f = rb.PiecewiseControl(tuple(bps), vals, fams)
        k = int(rng.integers(1, 9))
        chopped = rb.chop(f, k)
        exact &= chopped.integral_per_family() == f.integral_per_family()
        legs = rb._legs_from(chopped)
        amp = sum(abs(a) for _, a in legs)
        bound_ok &= amp <= 2 * f.sup_norm() * (1.0 + 1e-9)

    # weak-* pairings against 5 smooth test functions decrease as k doubles
    f = rb.PiecewiseControl((0, Fraction(1, 3), 1),
                            [[0.9, -0.5], [-0.2, 0.7]], fams)
    tests = [
        (lambda t: t ** 2 / 2, np.array([1.0, 0.4])),
        (lambda t: t ** 3 / 3, np.array([-0.3, 1.0])),
        (lambda t: -np.cos(2 * np.pi * t) / (2 * np.pi), np.array([0.8, 0.8])),
        (lambda t: np.sin(3 * t) / 3, np.array([1.0, -1.0])),
        (lambda t: np.exp(t), np.array([0.5, 0.9])),
    ]

    def pairing(ctrl, anti, d):
        total = 0.0
        for i in range(ctrl.pieces):
            a, b = float(ctrl.breakpoints[i]), float(ctrl.breakpoints[i + 1])
            total += float(ctrl.values[i] @ d) * (anti(b) - anti(a))
        return total

    decreasing = True
    for anti, d in tests:
        base = pairing(f, anti, d)
        errs = [abs(pairing(rb.chop(f, k), anti, d) - base)
                for k in (1, 2, 4, 8, 16)]
        for e0, e1 in zip(errs, errs[1:]):
            decreasing &= e1 <= 0.75 * e0 + 1e-12
    report(3, f"integrals exact on 20 controls: {exact}; amplitude bound: "
              f"{bound_ok}; weak-* pairings decrease under k-doubling: {decreasing}",
           ok=(exact and bound_ok and decreasing))


def test_criterion_4_zigzag_and_certification(bundled, euler):
    rng = np.random.default_rng(47)
    plan_ok = True
    worst_k = 0
    for _ in range(3):
        a13 = rng.uniform(0.02, 0.05, 2) * rng.choice([-1, 1], 2)
        ctrl = rb.PiecewiseControl.constant(euler, {1: a13[0], 3: a13[1]})
        plan = rb.plan_zigzag(euler, ctrl, 1e-3)
        plan_ok &= plan.error <= 1e-3 and plan.chop_level <= 64
        worst_k = max(worst_k, plan.chop_level)

    clearances = {}
    for name, sysdef in bundled.items():
        rep = rb.certify_hypothesis(sysdef, 0.05)
        clearances[name] = abs(rep.certified_value)
    cert_ok = all(v >= 0.01 for v in clearances.values())
    report(4, f"zigzag error <= 1e-3 with k <= 64 (max k {worst_k}); "
              f"clearances at eps=0.05: "
              + ", ".join(f"{k}={v:.3f}" for k, v in clearances.items()),
           ok=(plan_ok and cert_ok))


def test_criterion_5_simple_wave_evaluator(sv, sv_phase):
    # residual convergence of the exact evaluator under grid halving
    residuals = []
    for nx in (100, 200, 400):
        xs = np.linspace(0.0, 1.0, nx + 1)
        dt = (1.0 / nx) / 2.0
        nt = int(round(0.4 / dt)) + 1
        ts = np.linspace(0.0, 0.4, nt)
        vals = np.stack([sv_phase.evaluate(sv_phase.t0 + t, xs) for t in ts])
        sol = solver.GridSolution(grid=None, t=ts, x=xs, values=vals,
                                  provenance="wave-sampled")
        residuals.append(solver.residual(sv, sol).max_abs)
    orders = [math.log2(residuals[i] / residuals[i + 1]) for i in range(2)]

    xs = np.linspace(0.0, 1.0, 64)
    dev_start = float(np.max(np.abs(sv_phase.evaluate(sv_phase.t0, xs)
                                    - sv_phase.start_state)))
    dev_end = float(np.max(np.abs(sv_phase.evaluate(sv_phase.t1, xs)
                                  - sv_phase.end_state)))

    # independent conservative finite-volume solve of the same data
    dx = 1.0 / 400
    spec = sv_phase.spec
    lam_max = 2.1
    t_cmp = 0.8
    x0 = -spec.eta_ramp - t_cmp * lam_max - 0.5
    x1 = 1.0 + t_cmp * lam_max + 0.5
    grid = solver.plan_cauchy_grid(sv, (0.0, t_cmp), (0.0, 1.0), dx=dx)
    pc = solver.cauchy_forward(sv, lambda x: sv_phase.evaluate(0.0, x), grid,
                               keep=(0.0, 1.0))
    scheme_err = 0.0
    for i in range(0, pc.t.size, max(pc.t.size // 16, 1)):
        exact = sv_phase.evaluate(float(pc.t[i]), pc.x)
        scheme_err = max(scheme_err, float(np.max(np.abs(pc.values[i] - exact))))
    x_fv, u_fv = fv_solve_sv(1.0, lambda x: sv_phase.evaluate(0.0, x),
                             x0, x1, dx, t_cmp)
    inside = (x_fv >= 0.0) & (x_fv <= 1.0)
    exact_fv = sv_phase.evaluate(t_cmp, x_fv[inside])
    fv_err = float(np.max(np.abs(u_fv[inside] - exact_fv)))

    report(5, f"residual orders {orders[0]:.2f}, {orders[1]:.2f} (>= 1.9); "
              f"sweep endpoint devs {dev_start:.1e}/{dev_end:.1e} "
              f"(tol {10 * (ODE_TOL + ROOT_TOL):.1e}); finite-volume dev "
              f"{fv_err:.2e} <= 5 x scheme error {scheme_err:.2e}",
           ok=(min(orders) >= 1.9
               and max(dev_start, dev_end) <= 10 * (ODE_TOL + ROOT_TOL)
               and fv_err <= 5 * scheme_err))


def test_criterion_6_return_trajectory(bundled):
    ok = True
    details = []
    for name, sysdef in bundled.items():
        rep = rb.certify_hypothesis(sysdef, 0.05)
        plan = rb.plan_zigzag(sysdef, rep.best_control, 1e-3)
        traj = waves.build_return(sysdef, plan, 1.0, 0.5)
        xs = np.linspace(0.0, 1.0, 41)
        d0 = float(np.max(np.abs(traj.evaluate(0.0, xs) - sysdef.u_star)))
        dT = float(np.max(np.abs(traj.evaluate(traj.T, xs) - sysdef.u_star)))
        p, (t0, t1) = traj.middle_slot
        mid = float(np.max(np.abs(traj.evaluate(0.5 * (t0 + t1), xs)
                                  - traj.u_bar_star)))
        jump = 0.0
        for i in range(1, len(traj.taus) - 1):
            tau = traj.taus[i]
            jump = max(jump, float(np.max(np.abs(
                traj.phases[i - 1].evaluate(tau, xs)
                - traj.phases[i].evaluate(tau, xs)))))
        lam_bar = core.eigendecompose(sysdef, traj.u_bar_star).lambdas
        need = float(np.max(1.0 / np.abs(lam_bar)))
        ok &= (d0 == 0.0 and dT == 0.0 and mid == 0.0
               and jump <= 10 * (ODE_TOL + ROOT_TOL)
               and (t1 - t0) >= need)
        details.append(f"{name}: jump {jump:.1e}, middle {t1 - t0:.1f} >= {need:.1f}")
    report(6, "; ".join(details), ok=ok)


def test_criterion_7_perturbation_linearity(sv, sv_phase):
    dx = 0.005
    t_end = 0.5
    grid = solver.plan_cauchy_grid(sv, (0.0, t_end), (0.0, 1.0), dx=dx)
    base = solver.cauchy_forward(sv, lambda x: sv_phase.evaluate(0.0, x),
                                 grid, keep=(0, 1))

    dists = []
    for nu in (1e-2, 5e-3, 2.5e-3):
        def data(x, nu=nu):
            out = sv_phase.evaluate(0.0, np.atleast_1d(x))
            xx = np.atleast_1d(x)
            out[:, 0] += nu * np.exp(-((xx - 0.5) / 0.12) ** 2)
            return out
        sol = solver.cauchy_forward(sv, data, grid, keep=(0, 1))
        dists.append(float(np.max(np.abs(sol.values[-1] - base.values[-1]))))
    ratios = [dists[i + 1] / dists[i] for i in range(2)]
    ok = all(0.35 <= r <= 0.65 for r in ratios)
    report(7, f"halving ratios {ratios[0]:.3f}, {ratios[1]:.3f} (0.5 +- 0.15)", ok=ok)


def test_criterion_8_end_to_end(bundled, end_to_end):
    ok = True
    details = []
    for name, sysdef in bundled.items():
        result, elapsed = end_to_end[name]
        d = result.diagnostics
        x = result.solution.x
        pert = np.zeros((x.size, sysdef.n))
        pert[:, 0] = 1e-3 * np.sin(np.pi * x)
        init_dev = float(np.max(np.abs(result.solution.values[0]
                                       - (sysdef.u_star + pert))))
        ok &= (init_dev < 1e-14 and d["final_error"] <= 5e-3
               and d["sup_deviation"] <= 0.25 and elapsed <= 300.0)
        details.append(f"{name}: final {d['final_error']:.1e}, "
                       f"sup {d['sup_deviation']:.3f}, {elapsed:.0f}s")
    report(8, "; ".join(details), ok=ok)


def test_criterion_9_trace_replay(sv, end_to_end):
    result, _ = end_to_end["saint_venant"]
    phase = result.trajectory.phases[0]
    grid = solver.plan_cauchy_grid(sv, (0.0, phase.t1), (0.0, 1.0), dx=1.0 / 400)
    sol = solver.cauchy_forward(sv, lambda x: phase.evaluate(0.0, x), grid,
                                keep=(0.0, 1.0))
    scheme_err = 0.0
    for i in range(0, sol.t.size, max(sol.t.size // 16, 1)):
        exact = phase.evaluate(float(sol.t[i]), sol.x)
        scheme_err = max(scheme_err, float(np.max(np.abs(sol.values[i] - exact))))
    rep = pl.replay_traces(result, sv)
    dev = rep["max_interior_deviation"]
    report(9, f"replay interior deviation {dev:.2e} <= "
              f"5 x scheme error {scheme_err:.2e}",
           ok=dev <= 5 * scheme_err)
