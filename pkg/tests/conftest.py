import numpy as np
import pytest

from soniccontrol import core, models, pipeline, reachability, solver, waves


@pytest.fixture(scope="session")
def sv():
    return models.build_model(models.SaintVenant(g=1.0), "sonic_right", 1.0)


@pytest.fixture(scope="session")
def isentropic14():
    return models.build_model(models.Isentropic(K=1.0, gamma=1.4), "sonic_right", 1.0)


@pytest.fixture(scope="session")
def isentropic2():
    # gamma = 2, K = 1/2: natural r_2 = (sqrt(rho), 1), flow in closed form
    return models.build_model(models.Isentropic(K=0.5, gamma=2.0), "sonic_right", 1.0)


@pytest.fixture(scope="session")
def euler():
    return models.build_model(models.Euler(k=1.0, c_v=1.0, R=1.0, gamma=2.0),
                              "rest", (1.0, 0.0))


@pytest.fixture(scope="session")
def ar():
    return models.build_model(models.Traffic(gamma=2.0), "sonic_right", 1.0)


@pytest.fixture(scope="session")
def mar():
    return models.build_model(models.Traffic(gamma=2.0, rho0=2.0), "rest", 1.0)


@pytest.fixture(scope="session")
def bundled(sv, isentropic14, euler, ar):
    """The four systems at the equilibria the whole suite exercises."""
    return {"saint_venant": sv, "isentropic": isentropic14,
            "euler": euler, "ar": ar}


@pytest.fixture(scope="session")
def all_models(bundled, mar, isentropic2):
    out = dict(bundled)
    out["mar"] = mar
    out["isentropic2"] = isentropic2
    return out


@pytest.fixture(scope="session")
def sv_phase(sv):
    """A standard Saint-Venant simple-wave phase (the certified leg)."""
    rep = reachability.certify_hypothesis(sv, 0.05)
    plan = reachability.plan_zigzag(sv, rep.best_control, 1e-3)
    traj = waves.build_return(sv, plan, L=1.0, eta_ramp=0.5)
    return traj.phases[0]


@pytest.fixture(scope="session")
def sv_trajectory(sv):
    rep = reachability.certify_hypothesis(sv, 0.05)
    plan = reachability.plan_zigzag(sv, rep.best_control, 1e-3)
    return waves.build_return(sv, plan, L=1.0, eta_ramp=0.5)


def build_problem(sysdef, nx=400, epsilon=0.05, L=1.0, amplitude=1e-3):
    """Acceptance-style problem: phi = u* + amplitude*(sin(pi x), 0, ...),
    psi = u*."""
    x = np.linspace(0.0, L, nx + 1)
    pert = np.zeros((nx + 1, sysdef.n))
    pert[:, 0] = amplitude * np.sin(np.pi * x / L)
    d_left = np.zeros(sysdef.n)
    d_left[0] = amplitude * np.pi / L
    d_right = np.zeros(sysdef.n)
    d_right[0] = -amplitude * np.pi / L
    phi = pipeline.C1Data(x, sysdef.u_star + pert, d_left=d_left, d_right=d_right)
    psi = pipeline.C1Data.constant(sysdef.u_star, L, num=nx + 1)
    return pipeline.ControlProblem(sys=sysdef, phi=phi, psi=psi,
                                   epsilon=epsilon, nx=nx, L=L)


@pytest.fixture(scope="session")
def burgers_toy():
    """Decoupled toy system: Burgers in component 1, constant speed 2 in
    component 2.  Sonic at the origin; genuinely focusing."""

    def lambdas(u):
        return np.array([u[0], 2.0])

    def right(u):
        return np.eye(2)

    def right_jac(u):
        return np.zeros((2, 2, 2))

    def grads(u):
        return np.array([[1.0, 0.0], [0.0, 0.0]])

    def lambdas_batch(s):
        return np.stack([s[:, 0], np.full(s.shape[0], 2.0)], axis=1)

    def a_batch(s):
        out = np.zeros(s.shape[:1] + (2, 2))
        out[:, 0, 0] = s[:, 0]
        out[:, 1, 1] = 2.0
        return out

    spec = core.AnalyticSpectral(2, lambdas, right, right_jac, grads,
                                 lambdas_batch=lambdas_batch, a_batch=a_batch)
    return core.SystemDef(
        n=2, m=1, u_star=np.zeros(2),
        A=lambda u: np.array([[u[0], 0.0], [0.0, 2.0]]),
        domain=core.DomainBox(np.array([-1.5, -1.5]), np.array([1.5, 1.5])),
        analytic_spectral=spec, name="burgers-toy")


def fv_solve_sv(g, data_fn, x0, x1, dx, t_end, cfl=0.45):
    """Independent finite-volume oracle for Saint-Venant.

    Conservative two-step (Richtmyer) scheme on the fluxes
    (H V, V^2/2 + g H) -- a different discretization and code path from
    the library's nonconservative solver.
    """
    nx = int(round((x1 - x0) / dx)) + 1
    x = np.linspace(x0, x1, nx)
    u = np.atleast_2d(data_fn(x)).astype(float)

    def flux(v):
        return np.stack([v[:, 0] * v[:, 1],
                         0.5 * v[:, 1] ** 2 + g * v[:, 0]], axis=1)

    vmax = np.max(np.abs(u[:, 1]) + np.sqrt(g * u[:, 0]))
    dt = cfl * dx / vmax
    nt = int(np.ceil(t_end / dt)) + 1
    ts = np.linspace(0.0, t_end, nt)
    dt = ts[1] - ts[0]
    for _ in range(nt - 1):
        f = flux(u)
        um = 0.5 * (u[1:] + u[:-1]) - (dt / (2 * dx)) * (f[1:] - f[:-1])
        fm = flux(um)
        u[1:-1] = u[1:-1] - (dt / dx) * (fm[1:] - fm[:-1])
    return x, u
