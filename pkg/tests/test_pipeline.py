import math

import numpy as np
import pytest

from conftest import build_problem
from soniccontrol import pipeline as pl, solver
from soniccontrol.errors import ValidationError


@pytest.fixture(scope="module")
def sv_result(sv):
    return pl.control(build_problem(sv, nx=200))


def test_data_size_gate(sv):
    prob = build_problem(sv, nx=200, amplitude=0.1)   # 10x over nu_max
    with pytest.raises(ValidationError) as err:
        pl.control(prob)
    assert "nu_max" in str(err.value)


def test_initial_row_is_data(sv, sv_result):
    x = sv_result.solution.x
    phi_row = sv_result.solution.values[0]
    expected = sv.u_star + np.stack(
        [1e-3 * np.sin(np.pi * x), np.zeros_like(x)], axis=1)
    assert np.max(np.abs(phi_row - expected)) < 1e-15
    assert sv_result.diagnostics["initial_error"] == 0.0


def test_final_and_sup_errors(sv, sv_result):
    d = sv_result.diagnostics
    assert d["final_error"] <= 5e-3
    assert d["sup_deviation"] <= 0.25
    assert d["nu_phi"] <= 0.01
    assert d["residual_max"] < 1e-4


def test_rows_are_monotone_and_cover_timeline(sv_result):
    t = sv_result.solution.t
    assert np.all(np.diff(t) > 0)
    assert t[0] == 0.0
    assert abs(t[-1] - sv_result.trajectory.T) < 1e-9
    assert len(sv_result.timeline) == len(sv_result.trajectory.phases)


def test_solution_tracks_reference_when_data_is_equilibrium(sv):
    x = np.linspace(0.0, 1.0, 201)
    phi = pl.C1Data.constant(sv.u_star, 1.0, num=201)
    psi = pl.C1Data.constant(sv.u_star, 1.0, num=201)
    res = pl.control(pl.ControlProblem(sys=sv, phi=phi, psi=psi,
                                       epsilon=0.05, nx=200))
    # with nu = 0 the run follows the reference trajectory to scheme error
    traj = res.trajectory
    dev = 0.0
    for i in range(0, res.solution.t.size, 40):
        t = min(res.solution.t[i], traj.T)
        ref = traj.evaluate(t, res.solution.x)
        dev = max(dev, float(np.max(np.abs(res.solution.values[i] - ref))))
    assert dev <= 5e-3
    assert res.diagnostics["final_error"] <= 5e-3


def test_traces_start_at_data(sv, sv_result):
    t, left, right = pl.extract_traces(sv_result)
    x = sv_result.solution.x
    assert np.allclose(left[0], sv.u_star + [1e-3 * np.sin(np.pi * x[0]), 0.0])
    assert np.allclose(right[0], sv.u_star + [1e-3 * np.sin(np.pi * x[-1]), 0.0])
    assert t[0] == 0.0


def test_phase_junction_continuity(sv_result):
    d = sv_result.diagnostics
    assert d["match"]["err_bottom"] <= 5e-3
    assert d["junction_top_error"] <= 5e-3


def test_envelope_constants_reported(sv_result):
    d = sv_result.diagnostics
    amp = sv_result.plan.amplitude_sum
    nu = max(d["nu_phi"], d["nu_psi"])
    assert d["sup_deviation"] <= (d["c1_env_constant"] * amp
                                  + d["c2_env_constant"] * nu + 5e-3)
    assert 0.0 < d["c1_env_constant"] < 5.0


def test_replay_reproduces_interior(sv, sv_result):
    # scheme error at this resolution: worst row error of a solve of the
    # exact first-phase wave, sampled while the ramp crosses [0, L]
    phase = sv_result.trajectory.phases[0]
    grid = solver.plan_cauchy_grid(sv, (0.0, phase.t1), (0.0, 1.0), dx=1.0 / 200)
    sol = solver.cauchy_forward(sv, lambda x: phase.evaluate(0.0, x), grid,
                                keep=(0.0, 1.0))
    scheme_err = 0.0
    for i in range(0, sol.t.size, max(sol.t.size // 16, 1)):
        exact = phase.evaluate(float(sol.t[i]), sol.x)
        scheme_err = max(scheme_err, float(np.max(np.abs(sol.values[i] - exact))))
    rep = pl.replay_traces(sv_result, sv)
    assert rep["max_interior_deviation"] <= 5 * scheme_err


def test_final_error_refines_at_order_1_5(sv):
    errs = []
    for nx in (100, 200):
        res = pl.control(build_problem(sv, nx=nx))
        errs.append(res.diagnostics["final_error"])
    order = math.log2(errs[0] / errs[1])
    assert order >= 1.5


def test_control_problem_validation(sv):
    phi = pl.C1Data.constant(sv.u_star, 1.0)
    with pytest.raises(ValidationError):
        pl.ControlProblem(sys=sv, phi=phi, psi=phi, nx=10, coarsen=4)


def test_c1_data_distance():
    x = np.linspace(0.0, 1.0, 401)
    vals = np.stack([1.0 + 1e-3 * np.sin(np.pi * x), np.ones_like(x)], axis=1)
    data = pl.C1Data(x, vals)
    dist = data.c1_distance(np.array([1.0, 1.0]))
    assert abs(dist - (1e-3 + 1e-3 * np.pi)) < 1e-5
