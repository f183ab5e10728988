"""Grid solvers: Cauchy marching in time, sideways marching in space,
and the nonzero-speed matching step that joins two data lines.

All schemes are two-step predictor-corrector (midpoint) discretizations
of the nonconservative quasilinear form, second order on the smooth
solutions this pipeline produces.  Cauchy solves run on a window wide
enough that the held far-field columns cannot influence the kept
region; the sideways solve marches x across [0, L] using the full state
on x = 0 plus characteristic data on the two time edges.

Each time (or space) step is a vectorized map over grid columns (rows),
and distinct solves are independent, so callers may run them
concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .core import SystemDef
from .errors import (
    CFLViolation,
    GradientBlowup,
    LeftDomain,
    MatchFailure,
    SonicInside,
    ValidationError,
)

DEFAULT_CFL = 0.45
SONIC_FLOOR = 1e-4          # sideways marching needs |lambda| above this
GRAD_BOUND_FACTOR = 100.0   # C1 safety bound multiplier
CHECK_EVERY = 10            # steps between CFL/domain/gradient checks
MATCH_TOL = 5e-4            # middle matching unit of grid tolerance


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid (node counts, inclusive endpoints)."""

    t0: float
    t1: float
    x0: float
    x1: float
    nt: int
    nx: int

    def __post_init__(self):
        if self.nt < 2 or self.nx < 2:
            raise ValidationError("grids need at least 2 nodes per axis")
        if not (self.t1 > self.t0 and self.x1 > self.x0):
            raise ValidationError("degenerate grid extents")

    @property
    def dt(self):
        return (self.t1 - self.t0) / (self.nt - 1)

    @property
    def dx(self):
        return (self.x1 - self.x0) / (self.nx - 1)

    @property
    def t_nodes(self):
        return np.linspace(self.t0, self.t1, self.nt)

    @property
    def x_nodes(self):
        return np.linspace(self.x0, self.x1, self.nx)


@dataclass
class ResidualStats:
    max_abs: float
    rms: float
    points: int


@dataclass
class GridSolution:
    """Sampled solution values with provenance and residual diagnostics.

    ``values`` has shape (nt, nx, n); ``final_full`` optionally keeps the
    last time row over the solver's full window for round trips.
    """

    grid: Optional[Grid]
    t: np.ndarray
    x: np.ndarray
    values: np.ndarray
    provenance: str
    residual_stats: Optional[ResidualStats] = None
    final_full: Optional[tuple] = None

    def row_at(self, t):
        i = int(np.argmin(np.abs(self.t - t)))
        return self.values[i]


def speed_bound(sys: SystemDef, samples=256, seed=0):
    """Conservative max |lambda| over the domain box."""
    rng = np.random.default_rng(seed)
    pts = sys.domain.sample(rng, samples)
    corners = np.array(np.meshgrid(*zip(sys.domain.lo, sys.domain.hi))).T.reshape(-1, sys.n)
    lams = sys.lambdas_batch(np.vstack([pts, corners]))
    return 1.05 * float(np.max(np.abs(lams)))


def directional_speeds(sys: SystemDef, states, inflate=0.05, bound=None):
    """Leftward/rightward propagation bounds (v_left, v_right) over the
    states a solve will visit, inflated for safety."""
    lams = sys.lambdas_batch(np.atleast_2d(states))
    if bound is None:
        bound = speed_bound(sys)
    pad = inflate * bound
    v_left = max(0.0, -float(lams.min())) * 1.1 + pad
    v_right = max(0.0, float(lams.max())) * 1.1 + pad
    return v_left, v_right


def plan_cauchy_grid(sys: SystemDef, interval, x_keep, dx, cfl=DEFAULT_CFL,
                     margin=0.5, bound=None, speeds=None, strip=0.0,
                     support=None, direction=1.0) -> Grid:
    """Grid for a Cauchy solve, keeping ``x_keep`` nodes on the grid.

    The window must contain everything nonconstant: the kept interval
    plus the blending ``strip`` on each side, and the reference's moving
    ``support`` interval (when given).  Without ``speeds`` it widens
    beyond that symmetrically by the crude bound
    (duration * max|lambda|).  With ``speeds = (v_left, v_right)`` (from
    :func:`directional_speeds`) each side widens only as far as data
    features and the back-flowing pollution of a held far-field column
    can actually reach; the constraint couples the outward and inward
    speeds into a harmonic-mean travel rate, which shrinks the window
    by orders of magnitude for near-sonic systems.  ``direction=-1``
    plans for a time-reversed solve, which swaps the two speeds.
    """
    t0, t1 = float(interval[0]), float(interval[1])
    duration = t1 - t0
    if bound is None:
        bound = speed_bound(sys)
    if not 0 < cfl < 1:
        raise CFLViolation(f"cfl must lie in (0, 1), got {cfl}")
    data_lo = x_keep[0] - strip
    data_hi = x_keep[1] + strip
    if support is not None:
        data_lo = min(data_lo, support[0])
        data_hi = max(data_hi, support[1])
    if speeds is None:
        travel = duration * bound
    else:
        v_left, v_right = speeds
        if direction < 0:
            v_left, v_right = v_right, v_left
        if v_left == 0.0 or v_right == 0.0:
            travel = 0.0
        else:
            travel = duration * (v_left * v_right) / (v_left + v_right)
    x0_want = data_lo - travel - margin
    x1_want = data_hi + travel + margin
    k_l = int(math.ceil((x_keep[0] - x0_want) / dx)) + 2
    k_r = int(math.ceil((x1_want - x_keep[1]) / dx)) + 2
    x0 = x_keep[0] - k_l * dx
    x1 = x_keep[1] + k_r * dx
    nx = int(round((x1 - x0) / dx)) + 1
    dt_max = cfl * dx / bound
    nt = int(math.ceil((t1 - t0) / dt_max)) + 1
    return Grid(t0=t0, t1=t1, x0=x0, x1=x1, nt=nt, nx=nx)


def _advance_time(sys, u, dt, dx, sign=1.0):
    """One two-step midpoint update of u_t + sign*A(u) u_x = 0.

    Interface predictor at (t + dt/2, x_{j+1/2}), centered corrector;
    edge columns are held (constant far field)."""
    um = 0.5 * (u[1:] + u[:-1])
    du = u[1:] - u[:-1]
    am = sys.a_batch(um)
    uh = um - sign * (dt / (2.0 * dx)) * np.einsum("xij,xj->xi", am, du)
    uc = 0.5 * (uh[1:] + uh[:-1])
    duh = uh[1:] - uh[:-1]
    ac = sys.a_batch(uc)
    out = u.copy()
    out[1:-1] = u[1:-1] - sign * (dt / dx) * np.einsum("xij,xj->xi", ac, duh)
    return out


def _run_cauchy(sys, data, grid, keep, cfl, provenance, sign,
                compute_residual=True, check_every=CHECK_EVERY):
    x = grid.x_nodes
    u = np.atleast_2d(np.asarray(data(x), dtype=float))
    if u.shape != (grid.nx, sys.n):
        raise ValidationError(f"data returned shape {u.shape}, expected {(grid.nx, sys.n)}")
    dt, dx = grid.dt, grid.dx

    if keep is None:
        keep_idx = np.arange(grid.nx)
    else:
        keep_idx = np.nonzero((x >= keep[0] - 1e-9 * dx) & (x <= keep[1] + 1e-9 * dx))[0]
        if keep_idx.size == 0:
            raise ValidationError("keep range contains no grid nodes")

    c1_0 = max(float(np.max(np.abs(u))),
               float(np.max(np.abs(np.diff(u, axis=0)))) / dx)
    grad_bound = GRAD_BOUND_FACTOR * max(c1_0, 1e-12)

    rows = np.empty((grid.nt, keep_idx.size, sys.n))
    rows[0] = u[keep_idx]
    for step in range(1, grid.nt):
        if (step - 1) % check_every == 0:
            lam = sys.lambdas_batch(u)
            vmax = float(np.max(np.abs(lam)))
            if dt > cfl * dx / max(vmax, 1e-300):
                raise CFLViolation(
                    f"dt={dt:.3e} exceeds cfl*dx/max|lambda|={cfl * dx / vmax:.3e} "
                    f"at t={grid.t0 + (step - 1) * dt:.4g}")
            if sys.domain.first_outside(u) is not None:
                raise LeftDomain(f"{provenance} solution left the domain box",
                                 exit_parameter=grid.t0 + (step - 1) * dt)
            gmax = float(np.max(np.abs(np.diff(u, axis=0)))) / dx
            if max(gmax, float(np.max(np.abs(u)))) > grad_bound:
                raise GradientBlowup(
                    f"C1 norm exceeded {grad_bound:.3g} at t={grid.t0 + (step - 1) * dt:.4g}")
        u = _advance_time(sys, u, dt, dx, sign=sign)
        rows[step] = u[keep_idx]

    sol = GridSolution(grid=grid, t=grid.t_nodes, x=x[keep_idx], values=rows,
                       provenance=provenance, final_full=(x.copy(), u.copy()))
    if compute_residual and keep_idx.size >= 3 and grid.nt >= 3:
        sol.residual_stats = residual(sys, sol)
    return sol


def cauchy_forward(sys: SystemDef, data: Callable, grid: Grid, keep=None,
                   cfl=DEFAULT_CFL, compute_residual=True) -> GridSolution:
    """March u_t + A(u) u_x = 0 forward from ``data`` (a vectorized
    callable of x) over the grid; rows outside ``keep`` are dropped."""
    return _run_cauchy(sys, data, grid, keep, cfl, "cauchy", sign=1.0,
                       compute_residual=compute_residual)


def cauchy_backward(sys: SystemDef, data: Callable, grid: Grid, keep=None,
                    cfl=DEFAULT_CFL, compute_residual=True) -> GridSolution:
    """Solve backward from final data at grid.t1 (time reversal: march
    v_t - A(v) v_x = 0 forward in reversed time) and return rows in
    ascending physical time, so values[0] sits at grid.t0."""
    sol = _run_cauchy(sys, data, grid, keep, cfl, "backward", sign=-1.0,
                      compute_residual=False)
    sol.values = sol.values[::-1].copy()
    first_full = sol.final_full
    sol.final_full = first_full  # full row now corresponds to grid.t0
    if compute_residual and sol.values.shape[1] >= 3 and grid.nt >= 3:
        sol.residual_stats = residual(sys, sol)
    return sol


def residual(sys: SystemDef, sol: GridSolution, chunk=256) -> ResidualStats:
    """Centered-difference residual max/RMS of u_t + A(u) u_x on interior
    stencils.  Requires uniform row spacing."""
    t, x, v = sol.t, sol.x, sol.values
    if len(t) < 3 or len(x) < 3:
        raise ValidationError("residual needs at least a 3x3 grid")
    dts = np.diff(t)
    if np.max(np.abs(dts - dts[0])) > 1e-9 * abs(dts[0]):
        raise ValidationError("residual needs uniform time rows")
    dt, dx = dts[0], x[1] - x[0]
    max_abs, sq_sum, count = 0.0, 0.0, 0
    for lo in range(1, len(t) - 1, chunk):
        hi = min(lo + chunk, len(t) - 1)
        ut = (v[lo + 1:hi + 1] - v[lo - 1:hi - 1]) / (2.0 * dt)
        ux = (v[lo:hi, 2:] - v[lo:hi, :-2]) / (2.0 * dx)
        mid = v[lo:hi, 1:-1]
        flat = mid.reshape(-1, sys.n)
        a = sys.a_batch(flat).reshape(mid.shape[0], mid.shape[1], sys.n, sys.n)
        res = ut[:, 1:-1] + np.einsum("txij,txj->txi", a, ux)
        norms = np.linalg.norm(res, axis=-1)
        max_abs = max(max_abs, float(norms.max()))
        sq_sum += float(np.sum(norms ** 2))
        count += norms.size
    return ResidualStats(max_abs=max_abs, rms=math.sqrt(sq_sum / count), points=count)


# --- data extension -------------------------------------------------------

def _hermite_decay(d, dprime, span, xi):
    """C1 decay of (value d, slope dprime) to (0, 0) over [0, span]."""
    th = np.clip(xi / span, 0.0, 1.0)[:, None]
    h00 = 1.0 - 3.0 * th ** 2 + 2.0 * th ** 3
    h10 = th - 2.0 * th ** 2 + th ** 3
    return h00 * d + h10 * span * dprime


def blend_to_reference(x_phys, values, ref_fn, strip) -> Callable:
    """Extend row data on [x_phys[0], x_phys[-1]] to all of R.

    Inside the physical interval the returned callable reproduces
    ``values`` exactly at the given nodes (cubic spline of the
    difference to the reference); over a strip of width ``strip`` on
    each side the difference decays C1-smoothly to zero; beyond, the
    data follows ``ref_fn`` itself.
    """
    x_phys = np.asarray(x_phys, dtype=float)
    values = np.asarray(values, dtype=float)
    ref_at = np.atleast_2d(ref_fn(x_phys))
    diff = values - ref_at
    spline = CubicSpline(x_phys, diff, axis=0)
    a, b = x_phys[0], x_phys[-1]
    d_a, d_b = diff[0], diff[-1]
    dp_a = spline(a, 1)
    dp_b = spline(b, 1)

    def data(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.atleast_2d(ref_fn(x)).astype(float).copy()
        inside = (x >= a) & (x <= b)
        if np.any(inside):
            out[inside] += spline(x[inside])
        left = x < a
        if np.any(left):
            out[left] += _hermite_decay(d_a, -dp_a, strip, a - x[left])
        right = x > b
        if np.any(right):
            out[right] += _hermite_decay(d_b, dp_b, strip, x[right] - b)
        return out

    return data


def constant_reference(state):
    state = np.asarray(state, dtype=float)

    def ref(x):
        return np.tile(state, (np.size(x), 1))

    return ref


def row_slopes(x, values):
    """Second-order one-sided slopes of a data row at its two ends."""
    dx = x[1] - x[0]
    left = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dx)
    right = (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * dx)
    return left, right


# --- sideways marching ----------------------------------------------------

def sideways_speeds(sys: SystemDef, u):
    """Marching speeds of the x-evolution: eigenvalues of A(u)^-1 are
    exactly the reciprocals of the time speeds."""
    lam = np.asarray(sys.lambdas_batch(np.atleast_2d(u))[0])
    return 1.0 / lam


def _advance_space(sys, col, dt, dx):
    """One two-step midpoint update of u_x + A(u)^-1 u_t = 0 along x.

    Ghost rows come from quadratic extrapolation; callers overwrite the
    edge rows with characteristic data afterwards."""
    g0 = 3.0 * col[0] - 3.0 * col[1] + col[2]
    g1 = 3.0 * col[-1] - 3.0 * col[-2] + col[-3]
    ext = np.vstack([g0[None], col, g1[None]])
    vm = 0.5 * (ext[1:] + ext[:-1])
    dv = ext[1:] - ext[:-1]
    am = sys.a_batch(vm)
    bdv = np.linalg.solve(am, dv[..., None])[..., 0]
    vh = vm - (dx / (2.0 * dt)) * bdv
    vc = 0.5 * (vh[1:] + vh[:-1])
    dvh = vh[1:] - vh[:-1]
    ac = sys.a_batch(vc)
    bdvh = np.linalg.solve(ac, dvh[..., None])[..., 0]
    return ext[1:-1] - (dx / dt) * bdvh


def _impose_characteristics(sys, computed, target, ingoing):
    """Replace the ingoing characteristic components of ``computed`` by
    those of ``target`` (projection in the eigenbasis at the target)."""
    if not np.any(ingoing):
        return computed
    from . import core as _core
    spec = _core.eigendecompose(sys, target)
    w = spec.left @ (target - computed)
    fix = spec.right[:, ingoing] @ w[ingoing]
    return computed + fix


def sideways_solve(sys: SystemDef, left_values, t_nodes, bottom_data,
                   top_data, x_nodes, cfl=DEFAULT_CFL,
                   sonic_floor=SONIC_FLOOR, ref_state=None,
                   compute_residual=True) -> GridSolution:
    """March x across [x_nodes[0], x_nodes[-1]] from full state data on
    the left edge.

    ``left_values`` holds the state at every time node of the left edge;
    ``bottom_data``/``top_data`` (vectorized callables of x) supply the
    characteristic data entering through the two time edges: components
    with lambda_i > 0 enter through the bottom, lambda_i < 0 through the
    top (signs read at ``ref_state``, default the central left value).
    """
    t_nodes = np.asarray(t_nodes, dtype=float)
    x_nodes = np.asarray(x_nodes, dtype=float)
    col = np.array(left_values, dtype=float)
    nt, nx = t_nodes.size, x_nodes.size
    if col.shape != (nt, sys.n):
        raise ValidationError("left_values shape must be (nt, n)")
    if nt < 4:
        raise ValidationError("sideways marching needs at least 4 time rows")
    dt = t_nodes[1] - t_nodes[0]
    dx = x_nodes[1] - x_nodes[0]

    if ref_state is None:
        ref_state = col[nt // 2]
    lam_ref = sys.lambdas_batch(np.atleast_2d(ref_state))[0]
    ingoing_bottom = lam_ref > 0
    ingoing_top = lam_ref < 0

    bottom = np.atleast_2d(bottom_data(x_nodes))
    top = np.atleast_2d(top_data(x_nodes))

    out = np.empty((nt, nx, sys.n))
    out[:, 0] = col
    for k in range(1, nx):
        lam = sys.lambdas_batch(col)
        amin = float(np.min(np.abs(lam)))
        if amin < sonic_floor:
            raise SonicInside(
                f"|lambda| dropped to {amin:.3e} (< {sonic_floor:g}) at "
                f"x={x_nodes[k - 1]:.4g}; sideways construction invalid")
        if dx > cfl * dt * amin:
            raise CFLViolation(
                f"dx={dx:.3e} exceeds cfl*dt*min|lambda|={cfl * dt * amin:.3e} "
                f"at x={x_nodes[k - 1]:.4g}")
        col = _advance_space(sys, col, dt, dx)
        col[0] = _impose_characteristics(sys, col[0], bottom[k], ingoing_bottom)
        col[-1] = _impose_characteristics(sys, col[-1], top[k], ingoing_top)
        out[:, k] = col

    sol = GridSolution(grid=Grid(t0=t_nodes[0], t1=t_nodes[-1],
                                 x0=x_nodes[0], x1=x_nodes[-1], nt=nt, nx=nx),
                       t=t_nodes, x=x_nodes, values=out, provenance="sideways")
    if compute_residual and nt >= 3 and nx >= 3:
        sol.residual_stats = residual(sys, sol)
    return sol


# --- the matching step ----------------------------------------------------

@dataclass
class MatchSpec:
    """Data lines to join: states at t0 and t1 on common x nodes, plus
    the bridge placement inside (t0, t1)."""

    x: np.ndarray
    bottom: np.ndarray
    top: np.ndarray
    t0: float
    t1: float
    tau_mid: float
    delta_bridge: float
    u_ref: np.ndarray

    def validate(self, sys: SystemDef, c1_max=0.05):
        for label, row in (("bottom", self.bottom), ("top", self.top)):
            dev = float(np.max(np.abs(row - self.u_ref)))
            slope = float(np.max(np.abs(np.diff(row, axis=0)))) / (self.x[1] - self.x[0])
            if max(dev, slope) > c1_max:
                raise MatchFailure(
                    f"{label} data is not C1-close to the plateau "
                    f"(max(|d|, |d'|) = {max(dev, slope):.3g} > {c1_max:g})")
        lo, hi = match_window(sys, self.u_ref, self.t0, self.t1,
                              float(self.x[-1] - self.x[0]), self.delta_bridge)
        if not lo <= self.tau_mid <= hi:
            raise MatchFailure(
                f"bridge center {self.tau_mid:.4g} outside the feasible "
                f"window [{lo:.4g}, {hi:.4g}]")


def match_window(sys: SystemDef, u_ref, t0, t1, span, delta):
    """Feasible bridge centers: the bridge's influence cone must clear
    both edges.  Characteristics with lambda < 0 run down in t as x
    grows (top-to-bottom), so they bound the center from below;
    lambda > 0 characteristics run up and bound it from above."""
    lam = sys.lambdas_batch(np.atleast_2d(u_ref))[0]
    pos = lam[lam > 0]
    neg = lam[lam < 0]
    lo = t0 + delta + (span / float(np.min(np.abs(neg))) if neg.size else 0.0)
    hi = t1 - delta - (span / float(np.min(pos)) if pos.size else 0.0)
    if lo >= hi:
        raise MatchFailure(
            f"interval of length {t1 - t0:.4g} cannot host the bridge cone "
            f"(needs > {lo - t0 + t1 - hi:.4g}); extend the middle slot")
    return lo, hi


def _quintic_bridge(t0, v0, s0, t1, v1, s1):
    """Quintic C1 bridge: smoothstep blend of the two linear
    extrapolations, so values and slopes match at both ends."""
    span = t1 - t0

    def bridge(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        th = np.clip((t - t0) / span, 0.0, 1.0)[:, None]
        h = 10.0 * th ** 3 - 15.0 * th ** 4 + 6.0 * th ** 5
        a = v0 + np.outer(t - t0, s0)
        b = v1 + np.outer(t - t1, s1)
        return (1.0 - h) * a + h * b

    return bridge


def _trace_interp(sol: GridSolution, column=0):
    """Linear time interpolant of one stored column of a solve."""
    t, vals = sol.t, sol.values[:, column, :]

    def f(tt):
        tt = np.atleast_1d(np.asarray(tt, dtype=float))
        out = np.empty((tt.size, vals.shape[1]))
        for c in range(vals.shape[1]):
            out[:, c] = np.interp(tt, t, vals[:, c])
        return out

    def slope(tt):
        i = int(np.clip(np.searchsorted(t, tt) - 1, 1, len(t) - 3))
        return (vals[i + 1] - vals[i - 1]) / (t[i + 1] - t[i - 1])

    f.slope = slope
    return f


def match_middle(sys: SystemDef, mspec: MatchSpec, dx, cfl=DEFAULT_CFL,
                 coarsen=4, margin=0.5, match_tol=MATCH_TOL,
                 sonic_floor=SONIC_FLOOR, c1_max=0.05):
    """Join the two data lines of ``mspec`` by one PDE solution.

    Builds the left-edge trace from a forward solve of the bottom data
    and a backward solve of the top data, bridges the two traces with a
    quintic over [tau_mid +- delta], and marches sideways.  Outside the
    bridge's influence cone the sideways solution coincides with those
    solves, so it meets the bottom and top data; the achieved endpoint
    errors are asserted against ``10 * match_tol`` and reported.

    Returns ``(solution, diagnostics)``.
    """
    mspec.validate(sys, c1_max=c1_max)
    x = mspec.x
    t0, t1 = mspec.t0, mspec.t1
    tau_mid, delta = mspec.tau_mid, mspec.delta_bridge
    if (len(x) - 1) % coarsen:
        raise ValidationError("node count - 1 must be divisible by the coarsening factor")

    xc = x[::coarsen]
    ref = constant_reference(mspec.u_ref)
    strip = 0.25 * float(x[-1] - x[0])
    bot_fn = blend_to_reference(xc, mspec.bottom[::coarsen], ref, strip)
    top_fn = blend_to_reference(xc, mspec.top[::coarsen], ref, strip)
    dxc = xc[1] - xc[0]
    bound = speed_bound(sys)
    speeds = directional_speeds(sys, np.vstack([mspec.bottom, mspec.top]),
                                bound=bound)

    # forward solve of the bottom line, up to just past the bridge start
    v_end = min(tau_mid + delta + 1e-9, t1)
    v_grid = plan_cauchy_grid(sys, (t0, v_end), (x[0], x[0]), dxc, cfl=cfl,
                              margin=margin, strip=strip, bound=bound,
                              speeds=speeds)
    v_sol = cauchy_forward(sys, bot_fn, v_grid, keep=(x[0], x[0]), cfl=cfl,
                           compute_residual=False)
    v_trace = _trace_interp(v_sol)

    # backward solve of the top line, down to just below the bridge end
    w_start = max(tau_mid - delta - 1e-9, t0)
    w_grid = plan_cauchy_grid(sys, (w_start, t1), (x[0], x[0]), dxc, cfl=cfl,
                              margin=margin, strip=strip, bound=bound,
                              speeds=speeds, direction=-1.0)
    w_sol = cauchy_backward(sys, top_fn, w_grid, keep=(x[0], x[0]), cfl=cfl,
                            compute_residual=False)
    w_trace = _trace_interp(w_sol)

    # left-edge trace: forward below the bridge, backward above, quintic between
    ta, tb = tau_mid - delta, tau_mid + delta
    bridge = _quintic_bridge(ta, v_trace(ta)[0], v_trace.slope(ta),
                             tb, w_trace(tb)[0], w_trace.slope(tb))

    lam_ref = sys.lambdas_batch(np.atleast_2d(mspec.u_ref))[0]
    amin = float(np.min(np.abs(lam_ref)))
    if amin < sonic_floor:
        raise SonicInside(f"plateau speeds contain {amin:.3e}; matching invalid")
    # 0.75 leaves headroom for |lambda| dipping below its plateau value
    dt_side = dx / (0.75 * cfl * amin)
    nt_side = max(int(math.ceil((t1 - t0) / dt_side)) + 1, 4)
    t_side = np.linspace(t0, t1, nt_side)

    a_vals = np.empty((nt_side, sys.n))
    below = t_side <= ta
    above = t_side >= tb
    mid = ~(below | above)
    a_vals[below] = v_trace(t_side[below])
    a_vals[above] = w_trace(t_side[above])
    a_vals[mid] = bridge(t_side[mid])

    bottom_fine = blend_to_reference(x, mspec.bottom, ref, strip)
    top_fine = blend_to_reference(x, mspec.top, ref, strip)
    sol = sideways_solve(sys, a_vals, t_side, bottom_fine, top_fine, x,
                         cfl=cfl, sonic_floor=sonic_floor,
                         ref_state=mspec.u_ref)

    err_bottom = float(np.max(np.abs(sol.values[0] - mspec.bottom)))
    err_top = float(np.max(np.abs(sol.values[-1] - mspec.top)))
    if max(err_bottom, err_top) > 10.0 * match_tol:
        raise MatchFailure(
            f"matching endpoint errors (bottom {err_bottom:.3e}, top "
            f"{err_top:.3e}) exceed {10.0 * match_tol:.3e}")
    diag = {
        "tau_mid": tau_mid,
        "delta_bridge": delta,
        "err_bottom": err_bottom,
        "err_top": err_top,
        "nt_side": nt_side,
        "trace_grid_dx": dxc,
    }
    return sol, diag


def plan_match_spec(sys: SystemDef, x, bottom, top, t0, t1, u_ref,
                    bridge_frac=0.05) -> MatchSpec:
    """Place the bridge at the center of the feasible window."""
    delta = bridge_frac * (t1 - t0)
    lo, hi = match_window(sys, u_ref, t0, t1, float(x[-1] - x[0]), delta)
    return MatchSpec(x=np.asarray(x, dtype=float), bottom=np.asarray(bottom, dtype=float),
                     top=np.asarray(top, dtype=float), t0=float(t0), t1=float(t1),
                     tau_mid=0.5 * (lo + hi), delta_bridge=delta,
                     u_ref=np.asarray(u_ref, dtype=float))


# --- initial-boundary-value replay ---------------------------------------

def ibvp_solve(sys: SystemDef, init_row, left_fn, right_fn, t0, t1, x_nodes,
               cfl=DEFAULT_CFL, dt=None, compute_residual=True) -> GridSolution:
    """Forward solve on [x0, x1] with prescribed boundary traces.

    ``left_fn``/``right_fn`` map a time to the full boundary state; the
    interior advances with the two-step scheme and the boundary nodes
    are overwritten from the traces each step.  Intended for replaying
    extracted boundary controls (the traces must be consistent with an
    actual solution).
    """
    x_nodes = np.asarray(x_nodes, dtype=float)
    u = np.array(init_row, dtype=float)
    if u.shape != (x_nodes.size, sys.n):
        raise ValidationError("init_row shape must be (nx, n)")
    dx = x_nodes[1] - x_nodes[0]
    bound = speed_bound(sys)
    if dt is None:
        dt = cfl * dx / bound
    nt = int(math.ceil((t1 - t0) / dt)) + 1
    t = np.linspace(t0, t1, nt)
    dt = t[1] - t[0]
    if dt > cfl * dx / bound:
        raise CFLViolation(
            f"dt={dt:.3e} exceeds cfl*dx/max|lambda|={cfl * dx / bound:.3e}")
    rows = np.empty((nt, x_nodes.size, sys.n))
    rows[0] = u
    for step in range(1, nt):
        u = _advance_time(sys, u, dt, dx)
        u[0] = left_fn(t[step])
        u[-1] = right_fn(t[step])
        rows[step] = u
    sol = GridSolution(grid=Grid(t0=t0, t1=t1, x0=x_nodes[0], x1=x_nodes[-1],
                                 nt=nt, nx=x_nodes.size),
                       t=t, x=x_nodes, values=rows, provenance="ibvp")
    if compute_residual:
        sol.residual_stats = residual(sys, sol)
    return sol
