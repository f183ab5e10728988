"""Exact simple waves and the piecewise return trajectory.

A simple wave of family j connects two states on one rarefaction curve
through a C2 ramp profile and is constant along straight
j-characteristics, so it can be evaluated exactly (up to a root-finding
tolerance) at any (t, x).  Composing one wave per zigzag leg, a constant
plateau in the middle, and the time-and-space reflections of the
forward waves yields a trajectory that starts and ends at the
equilibrium on [0, L] while passing through a plateau state where every
characteristic speed is nonzero.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from . import core, reachability
from .core import SystemDef
from .errors import BlowUp, Focusing, LeftDomain, MiddleNotSonicFree, ValidationError

SONIC_FLOOR = 1e-4        # |lambda_i(plateau)| below this is "still sonic"
BRIDGE_FRAC = 0.05        # bridge half-width as a fraction of the middle span
FOCUS_SAFETY = 0.95       # stay below this fraction of the focusing time
CURVE_SAMPLES = 257


def bump(theta):
    """C2 bump 140 theta^3 (1-theta)^3 on (0,1), zero outside, unit mass."""
    theta = np.asarray(theta, dtype=float)
    inside = (theta > 0.0) & (theta < 1.0)
    out = np.zeros_like(theta)
    t = theta[inside]
    out[inside] = 140.0 * t ** 3 * (1.0 - t) ** 3
    return out if out.ndim else float(out)


def bump_integral(theta):
    """Antiderivative of :func:`bump`, clamped to [0, 1].

    Integer-coefficient Horner form, exact (= 1) at theta = 1."""
    theta = np.clip(np.asarray(theta, dtype=float), 0.0, 1.0)
    out = theta ** 4 * (35.0 + theta * (-84.0 + theta * (70.0 - 20.0 * theta)))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class WaveSpec:
    """One simple-wave phase: data for an exact evaluator.

    ``orientation`` is "left" when the family's speed is negative (the
    ramp is anchored just right of x = L and sweeps leftward) and
    "right" for the mirrored construction.
    """

    family: int
    u_minus: np.ndarray
    u_plus: np.ndarray
    s_bar: float
    eta_ramp: float
    orientation: str
    duration: float


class WaveProfile:
    """The initial profile phi of a simple wave, callable on all of R.

    phi equals u_minus on the side facing [0, L], follows the
    rarefaction curve through a bump-shaped ramp of width eta_ramp, and
    equals u_plus beyond.  The curve is integrated once at tolerance
    ``ode_tol`` and interpolated with splines, so repeated evaluation is
    cheap and vectorized.
    """

    def __init__(self, sys: SystemDef, spec: WaveSpec, L: float,
                 ode_tol=reachability.ODE_TOL):
        self.sys = sys
        self.spec = spec
        self.L = float(L)
        eta = spec.eta_ramp
        if spec.orientation == "left":
            self.xi_lo, self.xi_hi = self.L, self.L + eta
            self.below, self.above = spec.u_minus, spec.u_plus
        elif spec.orientation == "right":
            self.xi_lo, self.xi_hi = -eta, 0.0
            self.below, self.above = spec.u_plus, spec.u_minus
        else:
            raise ValidationError(f"unknown orientation {spec.orientation!r}")

        s_bar = spec.s_bar
        if s_bar == 0.0:
            self._curve = None
            self._lam = None
            lam = core.eigendecompose(sys, spec.u_minus).lambdas[spec.family - 1]
            self._lam_range = (lam, lam)
        else:
            rhs = lambda _, u: core.eigenvector(sys, spec.family, u,
                                                check_domain=False)
            sol = solve_ivp(rhs, (0.0, s_bar), spec.u_minus, method="DOP853",
                            rtol=ode_tol, atol=ode_tol,
                            t_eval=np.linspace(0.0, s_bar, CURVE_SAMPLES))
            if not sol.success:
                raise BlowUp(f"rarefaction curve integration failed: {sol.message}")
            states = sol.y.T
            idx = sys.domain.first_outside(states)
            if idx is not None:
                raise LeftDomain("rarefaction curve left the domain box",
                                 exit_parameter=float(sol.t[idx]))
            order = np.argsort(sol.t)
            ss = sol.t[order]
            self._curve = CubicSpline(ss, states[order], axis=0)
            lams = sys.lambdas_batch(states)[:, spec.family - 1]
            self._lam = CubicSpline(ss, lams[order])
            self._lam_range = (float(lams.min()), float(lams.max()))

        self.min_abs_speed = min(abs(v) for v in self._lam_range)
        if self.min_abs_speed == 0.0:
            raise ValidationError("wave family speed crosses zero on the profile")

        # Steepest compression of the speed profile at t = 0 bounds the
        # focusing time from below.
        xs = np.linspace(self.xi_lo, self.xi_hi, 801)
        vs = self.speed(xs)
        slope = np.diff(vs) / np.diff(xs)
        worst = float(slope.min())
        self.focus_time = math.inf if worst >= 0.0 else -1.0 / worst

    def _sigma(self, x):
        theta = ((x - self.xi_lo) if self.spec.orientation == "left"
                 else (self.xi_hi - x)) / self.spec.eta_ramp
        return self.spec.s_bar * bump_integral(theta)

    def __call__(self, x):
        """Profile states at x (scalar or array) -> (..., n)."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        out = np.empty((x.size, self.sys.n))
        out[x <= self.xi_lo] = self.below
        out[x >= self.xi_hi] = self.above
        mid = (x > self.xi_lo) & (x < self.xi_hi)
        if np.any(mid):
            if self._curve is None:
                out[mid] = self.below
            else:
                out[mid] = self._curve(self._sigma(x[mid]))
        return out[0] if scalar else out

    def speed(self, x):
        """Characteristic speed of the wave family along the profile."""
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        lam_lo = float(self.sys.lambdas_batch(self.below[None])[0, self.spec.family - 1])
        lam_hi = float(self.sys.lambdas_batch(self.above[None])[0, self.spec.family - 1])
        out = np.empty(x.size)
        out[x <= self.xi_lo] = lam_lo
        out[x >= self.xi_hi] = lam_hi
        mid = (x > self.xi_lo) & (x < self.xi_hi)
        if np.any(mid):
            out[mid] = lam_lo if self._lam is None else self._lam(self._sigma(x[mid]))
        return float(out[0]) if scalar else out


def make_profile(sys: SystemDef, spec: WaveSpec, L: float,
                 ode_tol=reachability.ODE_TOL) -> WaveProfile:
    """Build the callable initial profile of a simple wave."""
    return WaveProfile(sys, spec, L, ode_tol=ode_tol)


def _trace_back(profile: WaveProfile, t: float, x, root_tol):
    """Feet of the characteristics through (t, x): solve xi + t v(xi) = x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lo, hi = profile.xi_lo, profile.xi_hi
    v_lo = profile.speed(lo - 1.0)
    v_hi = profile.speed(hi + 1.0)
    g_lo = lo + t * v_lo
    g_hi = hi + t * v_hi
    xi = np.empty_like(x)
    below = x <= g_lo
    above = x >= g_hi
    xi[below] = x[below] - t * v_lo
    xi[above] = x[above] - t * v_hi
    mid = ~(below | above)
    if np.any(mid):
        a = np.full(int(mid.sum()), lo)
        b = np.full(int(mid.sum()), hi)
        xm = x[mid]
        # strict monotonicity of xi -> xi + t v(xi) is guaranteed by the
        # focusing check, so plain bisection converges unconditionally
        iters = max(10, int(math.ceil(math.log2((hi - lo) / root_tol))) + 1)
        for _ in range(iters):
            c = 0.5 * (a + b)
            too_low = c + t * profile.speed(c) < xm
            a = np.where(too_low, c, a)
            b = np.where(too_low, b, c)
        xi[mid] = 0.5 * (a + b)
    return xi


def evaluate_wave(sys: SystemDef, spec: WaveSpec, L: float, t: float, x,
                  profile: Optional[WaveProfile] = None, root_tol=1e-12):
    """Exact simple-wave state at (t, x); x may be an array.

    The value is constant along straight characteristics, so it equals
    the profile at the unique foot of the characteristic through (t, x).
    Raises :class:`Focusing` if characteristics cross before ``t``.
    Pass a prebuilt ``profile`` to amortize the curve integration.
    """
    if profile is None:
        profile = make_profile(sys, spec, L)
    if not 0.0 <= t <= spec.duration:
        raise ValidationError(
            f"t={t} outside the wave's time span [0, {spec.duration}]")
    if t >= FOCUS_SAFETY * profile.focus_time:
        raise Focusing(
            f"characteristics of family {spec.family} cross near "
            f"t={profile.focus_time:.3g}; amplitude too large for this ramp")
    xi = _trace_back(profile, t, x, root_tol)
    vals = profile(xi)
    return vals if np.ndim(x) else vals[0]


@dataclass(frozen=True)
class SimpleWavePhase:
    """A simple wave occupying the time slot [t0, t1] of a trajectory."""

    sys: SystemDef
    spec: WaveSpec
    profile: WaveProfile
    L: float
    t0: float
    t1: float

    def evaluate(self, t, x, root_tol=1e-12):
        return evaluate_wave(self.sys, self.spec, self.L, t - self.t0, x,
                             profile=self.profile, root_tol=root_tol)

    def support_hull(self, ta, tb):
        """Smallest interval containing the moving ramp over [ta, tb].

        Ramp edges ride straight characteristics at the two edge-state
        speeds, so the support at any time is exact."""
        v_lo = self.profile.speed(self.profile.xi_lo - 1.0)
        v_hi = self.profile.speed(self.profile.xi_hi + 1.0)

        def support(t):
            dt = t - self.t0
            return self.profile.xi_lo + dt * v_lo, self.profile.xi_hi + dt * v_hi

        a0, b0 = support(ta)
        a1, b1 = support(tb)
        return min(a0, a1), max(b0, b1)

    @property
    def start_state(self):
        return self.spec.u_minus

    @property
    def end_state(self):
        return self.spec.u_plus


@dataclass(frozen=True)
class ConstantPhase:
    sys: SystemDef
    state: np.ndarray
    t0: float
    t1: float

    def evaluate(self, t, x, root_tol=1e-12):
        if np.ndim(x):
            return np.tile(self.state, (np.size(x), 1))
        return self.state.copy()

    def support_hull(self, ta, tb):
        return None

    @property
    def start_state(self):
        return self.state

    @property
    def end_state(self):
        return self.state


@dataclass(frozen=True)
class ReflectedPhase:
    """Time-and-space reflection v(t, x) = w(t0_src + (t1 - t), L - x).

    Both partial derivatives flip sign, so reflections of solutions are
    solutions again; evaluation reuses the forward phase's code path.
    """

    source: SimpleWavePhase
    L: float
    t0: float
    t1: float

    def evaluate(self, t, x, root_tol=1e-12):
        src_t = self.source.t0 + (self.t1 - t)
        x = np.asarray(x, dtype=float)
        return self.source.evaluate(src_t, self.L - x, root_tol=root_tol)

    def support_hull(self, ta, tb):
        sa = self.source.t0 + (self.t1 - tb)
        sb = self.source.t0 + (self.t1 - ta)
        lo, hi = self.source.support_hull(min(sa, sb), max(sa, sb))
        return self.L - hi, self.L - lo

    @property
    def start_state(self):
        return self.source.end_state

    @property
    def end_state(self):
        return self.source.start_state


@dataclass(frozen=True)
class ReturnTrajectory:
    """Piecewise trajectory: forward waves, plateau, reflected waves.

    On [0, L] it equals u_star at t=0 and t=T exactly and the plateau
    state on the whole middle slot.  ``taus`` holds the 2p+2 phase
    boundaries; ``middle_extension`` is the amount (if any) by which the
    middle slot was stretched beyond the crossing-time default so the
    matching step's influence cones fit.
    """

    sys: SystemDef
    phases: tuple
    taus: np.ndarray
    u_bar_star: np.ndarray
    legs: tuple
    L: float
    eta_ramp: float
    middle_extension: float

    @property
    def T(self):
        return float(self.taus[-1])

    @property
    def p(self):
        return len(self.legs)

    @property
    def middle_slot(self):
        return self.p, (float(self.taus[self.p]), float(self.taus[self.p + 1]))

    def phase_index(self, t):
        if not -1e-12 <= t <= self.T + 1e-12:
            raise ValidationError(f"t={t} outside [0, {self.T}]")
        i = bisect.bisect_right(self.taus.tolist(), t) - 1
        return min(max(i, 0), len(self.phases) - 1)

    def evaluate(self, t, x, root_tol=1e-12):
        return self.phases[self.phase_index(t)].evaluate(t, x, root_tol=root_tol)

    def states_chain(self):
        """Constant states on [0, L] at every phase boundary."""
        chain = [self.phases[0].start_state]
        chain.extend(ph.end_state for ph in self.phases)
        return chain


def build_return(sys: SystemDef, plan: reachability.ZigzagPlan, L: float,
                 eta_ramp: float, ode_tol=reachability.ODE_TOL,
                 sonic_floor=SONIC_FLOOR, bridge_frac=BRIDGE_FRAC) -> ReturnTrajectory:
    """Assemble the return trajectory realizing a zigzag plan.

    Forward phase l rides the wave from state u_{l-1} to u_l over
    T_l = L/|lambda_{i_l}(u*)| + 1 (stretched when the ramp needs longer
    to cross [0, L]); the middle slot holds the plateau for at least the
    crossing-time maximum plus one, stretched further when the sideways
    matching step's influence cones would not fit; the second half
    reflects the forward phases in reverse order.
    """
    if L <= 0 or eta_ramp <= 0:
        raise ValidationError("L and eta_ramp must be positive")
    if not plan.legs:
        raise MiddleNotSonicFree(
            "empty plan: the plateau would sit at the sonic equilibrium")

    states = list(plan.states)
    if not states:
        states = [sys.u_star.copy()]
        for fam, amp in plan.legs:
            states.append(reachability.flow_map(sys, fam, amp, states[-1],
                                                ode_tol=ode_tol))
    u_bar = states[-1]
    lam_bar = core.eigendecompose(sys, u_bar).lambdas
    if np.min(np.abs(lam_bar)) <= sonic_floor:
        raise MiddleNotSonicFree(
            f"plateau speeds {lam_bar} contain a near-zero entry "
            f"(floor {sonic_floor:g})")

    lam_star = core.eigendecompose(sys, sys.u_star).lambdas
    p = len(plan.legs)

    forward = []
    t_cursor = 0.0
    durations = []
    for l, (fam, amp) in enumerate(plan.legs, start=1):
        u_minus, u_plus = states[l - 1], states[l]
        lam_j = lam_star[fam - 1]
        orientation = "left" if lam_j < 0 else "right"
        spec0 = WaveSpec(family=fam, u_minus=u_minus, u_plus=u_plus,
                         s_bar=amp, eta_ramp=eta_ramp,
                         orientation=orientation, duration=0.0)
        profile = WaveProfile(sys, spec0, L, ode_tol=ode_tol)
        t_default = L / abs(lam_j) + 1.0 if lam_j != 0 else math.inf
        t_cross = (L + eta_ramp) / profile.min_abs_speed
        duration = max(t_default, t_cross + 0.1)
        if duration >= FOCUS_SAFETY * profile.focus_time:
            raise Focusing(
                f"leg {l} (family {fam}, amplitude {amp:g}) focuses near "
                f"t={profile.focus_time:.3g} < required duration {duration:.3g}")
        spec = WaveSpec(family=fam, u_minus=u_minus, u_plus=u_plus,
                        s_bar=amp, eta_ramp=eta_ramp,
                        orientation=orientation, duration=duration)
        forward.append(SimpleWavePhase(sys=sys, spec=spec, profile=profile,
                                       L=L, t0=t_cursor, t1=t_cursor + duration))
        durations.append(duration)
        t_cursor += duration

    # Middle slot: long enough for every family to cross [0, L], and for
    # the sideways matching cones (bridge half-width is bridge_frac of
    # the slot, hence the 1/(1 - 2*bridge_frac) stretch).
    d_default = float(np.max(L / np.abs(lam_bar))) + 1.0
    pos = lam_bar[lam_bar > 0]
    neg = lam_bar[lam_bar < 0]
    l_sum = ((L / pos.min() if pos.size else 0.0)
             + (L / np.abs(neg).min() if neg.size else 0.0))
    d_required = (l_sum + 0.1) / (1.0 - 2.0 * bridge_frac) + 0.01
    d_middle = max(d_default, d_required)
    middle_extension = max(0.0, d_middle - d_default)

    taus = [0.0]
    for d in durations:
        taus.append(taus[-1] + d)
    taus.append(taus[-1] + d_middle)
    for d in reversed(durations):
        taus.append(taus[-1] + d)

    phases = list(forward)
    phases.append(ConstantPhase(sys=sys, state=u_bar,
                                t0=taus[p], t1=taus[p + 1]))
    for b in range(1, p + 1):
        src = forward[p - b]
        phases.append(ReflectedPhase(source=src, L=L,
                                     t0=taus[p + b], t1=taus[p + 1 + b]))

    return ReturnTrajectory(sys=sys, phases=tuple(phases),
                            taus=np.array(taus), u_bar_star=u_bar,
                            legs=tuple(plan.legs), L=L, eta_ramp=eta_ramp,
                            middle_extension=middle_extension)
