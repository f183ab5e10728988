"""Finite-dimensional reachability along the eigenvector fields.

This is the ODE side of the construction: flow maps of single
eigenvector fields (rarefaction curves), the controlled ODE
``dz/ds = sum_j alpha_j(s) r_j(z)`` driven by the non-sonic families,
the single-component chop that approximates any piecewise-constant
control in the weak-* sense, zigzag planning (replacing a mixed control
by a finite composition of single-family flows), and certification that
the vanishing speed can be driven away from zero.

Flow parameters are arclengths (unit-scaled fields) unless
``field="natural"`` is requested; closed-form checks against the model
catalog use the natural scaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import core
from .core import SystemDef
from .errors import BlowUp, LeftDomain, NoConvergence, SonicFamilyForbidden

ODE_TOL = 1e-10
H1_TOL = 1e-7        # nonzero thresholds for the analytic/FD conditions
H2_TOL = 1e-6
DEEP_WORD_TOL = 1e-3  # nested-FD brackets are noisier
CLEARANCE_TOL = 1e-9  # |lambda_m(z(1))| needed to certify


def _as_fraction(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    return Fraction(float(x))


@dataclass(frozen=True)
class PiecewiseControl:
    """Piecewise-constant control on (0,1) over the non-sonic families.

    ``breakpoints`` are exact Fractions 0 = s_0 < ... < s_q = 1 (floats
    convert exactly), ``values`` is a (q, n-1) array whose columns follow
    ``families`` (ascending, sonic family excluded).
    """

    breakpoints: tuple
    values: np.ndarray
    families: tuple

    def __post_init__(self):
        bps = tuple(_as_fraction(b) for b in self.breakpoints)
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if len(bps) < 2 or bps[0] != 0 or bps[-1] != 1:
            raise ValueError("breakpoints must run from 0 to 1")
        if any(b1 <= b0 for b0, b1 in zip(bps, bps[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if vals.shape != (len(bps) - 1, len(self.families)):
            raise ValueError("values shape must be (pieces, families)")
        if not np.all(np.isfinite(vals)):
            raise ValueError("control values must be finite")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "families", tuple(int(f) for f in self.families))

    @classmethod
    def constant(cls, sys: SystemDef, value_by_family: dict):
        fams = sys.nonsonic_families
        row = [float(value_by_family.get(f, 0.0)) for f in fams]
        return cls((0, 1), np.array([row]), fams)

    @classmethod
    def from_pieces(cls, sys: SystemDef, breakpoints, rows):
        return cls(tuple(breakpoints), np.asarray(rows, dtype=float),
                   sys.nonsonic_families)

    @property
    def pieces(self):
        return self.values.shape[0]

    def sup_norm(self):
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def value_at(self, s):
        """Row of per-family values at parameter s (right-continuous)."""
        for i in range(self.pieces):
            if s < float(self.breakpoints[i + 1]) or i == self.pieces - 1:
                return self.values[i]
        return self.values[-1]

    def integral_per_family(self):
        """Exact per-family integrals as Fractions."""
        totals = [Fraction(0)] * len(self.families)
        for i in range(self.pieces):
            d = self.breakpoints[i + 1] - self.breakpoints[i]
            for c in range(len(self.families)):
                totals[c] += _as_fraction(self.values[i, c]) * d
        return totals

    def scaled(self, factor):
        return PiecewiseControl(self.breakpoints, self.values * float(factor),
                                self.families)


class SingleComponentControl(PiecewiseControl):
    """Piecewise-constant control with at most one active family per piece."""

    def __post_init__(self):
        super().__post_init__()
        if np.any(np.count_nonzero(self.values, axis=1) > 1):
            raise ValueError("each piece may drive at most one family")


def chop(f: PiecewiseControl, k: int) -> SingleComponentControl:
    """Single-component approximation of ``f`` at refinement level k.

    Every multi-component piece is cut into k periods of N = (#families)
    slots; slot i of each period drives family i alone with N times that
    family's value, so per-family integrals are preserved exactly (all
    breakpoint arithmetic is done in Fractions).  Pieces that are
    already single-component pass through unchanged.
    """
    if k < 1:
        raise ValueError("chop level k must be >= 1")
    nfam = len(f.families)
    bps = [f.breakpoints[0]]
    rows = []
    for i in range(f.pieces):
        a, b = f.breakpoints[i], f.breakpoints[i + 1]
        row = f.values[i]
        if np.count_nonzero(row) <= 1:
            bps.append(b)
            rows.append(row.copy())
            continue
        slot = (b - a) / (k * nfam)
        for period in range(k):
            for c in range(nfam):
                bps.append(a + slot * (period * nfam + c + 1))
                out = np.zeros(nfam)
                out[c] = nfam * row[c]
                rows.append(out)
    return SingleComponentControl(tuple(bps), np.array(rows), f.families)


# --- flows ----------------------------------------------------------------

def _field(sys, j, normalization):
    def rhs(_, u):
        return core.eigenvector(sys, j, u, normalization=normalization,
                                method="auto", check_domain=False)
    return rhs


def _check_path_in_domain(sys, dense, s0, s1, samples=33):
    ss = np.linspace(s0, s1, samples)
    states = dense(ss).T
    idx = sys.domain.first_outside(states)
    if idx is not None:
        raise LeftDomain(
            f"flow left the domain of {sys.name} near s={ss[idx]:.6g}",
            exit_parameter=float(ss[idx]))


def flow_map(sys: SystemDef, j: int, s: float, u0, field="unit",
             ode_tol=ODE_TOL, dense=False):
    """Point reached after flowing along family j for parameter s.

    ``field`` chooses the scaling of the eigenvector field ("unit" or
    "natural"); the two trace the same rarefaction curve with different
    parameterizations.  With ``dense=True`` returns ``(endpoint,
    path)`` where ``path(sigma)`` evaluates the orbit at any
    intermediate parameter.
    """
    u0 = np.asarray(u0, dtype=float)
    if s == 0.0:
        return (u0.copy(), lambda sig: np.tile(u0, (np.size(sig), 1)).T) if dense else u0.copy()
    sol = solve_ivp(_field(sys, j, field), (0.0, s), u0, method="DOP853",
                    rtol=ode_tol, atol=ode_tol, dense_output=True)
    if not sol.success:
        raise BlowUp(f"flow integration failed: {sol.message}")
    _check_path_in_domain(sys, sol.sol, 0.0, s)
    end = sol.y[:, -1].copy()
    return (end, sol.sol) if dense else end


class ControlPath:
    """Solution path of the controlled ODE, queryable on [0, 1]."""

    def __init__(self, segments, breakpoints):
        self._segments = segments          # dense solutions per piece
        self._bps = breakpoints            # floats, len = pieces + 1
        self.endpoint = segments[-1](self._bps[-1]) if segments else None

    def at(self, s):
        s = float(np.clip(s, 0.0, 1.0))
        for i in range(len(self._segments)):
            if s <= self._bps[i + 1] or i == len(self._segments) - 1:
                return np.asarray(self._segments[i](s), dtype=float)
        raise AssertionError("unreachable")


def control_flow(sys: SystemDef, control: PiecewiseControl, u0,
                 field="unit", ode_tol=ODE_TOL) -> ControlPath:
    """Integrate dz/ds = sum_j alpha_j(s) r_j(z) from u0 over [0, 1].

    The control is piecewise constant, so each piece is integrated
    separately and the dense pieces are stitched into a queryable path.
    """
    u0 = np.asarray(u0, dtype=float)
    fams = control.families
    if sys.m in fams:
        raise SonicFamilyForbidden("controls must not drive the sonic family")

    segments = []
    bps_f = [float(b) for b in control.breakpoints]
    state = u0
    for i in range(control.pieces):
        a, b = bps_f[i], bps_f[i + 1]
        row = control.values[i]

        def rhs(_, u, row=row):
            out = np.zeros(sys.n)
            for c, fam in enumerate(fams):
                if row[c] != 0.0:
                    out += row[c] * core.eigenvector(sys, fam, u, field,
                                                     check_domain=False)
            return out

        if np.all(row == 0.0):
            frozen = state.copy()
            segments.append(lambda s, v=frozen: v)
        else:
            sol = solve_ivp(rhs, (a, b), state, method="DOP853",
                            rtol=ode_tol, atol=ode_tol, dense_output=True)
            if not sol.success:
                raise BlowUp(f"control ODE failed on piece {i}: {sol.message}")
            _check_path_in_domain(sys, sol.sol, a, b)
            segments.append(lambda s, d=sol.sol: d(s))
            state = sol.y[:, -1]
        state = np.asarray(segments[-1](b), dtype=float)
    return ControlPath(segments, bps_f)


# --- zigzag planning ------------------------------------------------------

@dataclass(frozen=True)
class ZigzagPlan:
    """Finite composition of single-family flows hitting z(1) within
    ``error``; ``states`` chains u* through every leg endpoint."""

    legs: tuple                      # ((family, amplitude), ...)
    target: np.ndarray
    achieved: np.ndarray
    error: float
    amplitude_sum: float
    chop_level: int
    states: tuple = field(repr=False, default=())


def _legs_from(chopped: SingleComponentControl):
    legs = []
    for i in range(chopped.pieces):
        row = chopped.values[i]
        nz = np.nonzero(row)[0]
        if nz.size == 0:
            continue
        c = int(nz[0])
        amp = _as_fraction(row[c]) * (chopped.breakpoints[i + 1] - chopped.breakpoints[i])
        legs.append((chopped.families[c], float(amp)))
    return legs


def plan_zigzag(sys: SystemDef, control: PiecewiseControl, eta_plan: float,
                k_max: int = 1024, ode_tol=ODE_TOL) -> ZigzagPlan:
    """Plan single-family flow legs whose composition lands within
    ``eta_plan`` of the controlled-ODE endpoint, doubling the chop level
    until it does."""
    if eta_plan <= 0:
        raise ValueError("eta_plan must be positive")
    target = control_flow(sys, control, sys.u_star, ode_tol=ode_tol).endpoint
    sup = control.sup_norm()
    bound = (sys.n - 1) * sup * (1.0 + 1e-9)

    k = 1
    while k <= k_max:
        legs = _legs_from(chop(control, k))
        state = sys.u_star.copy()
        states = [state]
        for fam, amp in legs:
            state = flow_map(sys, fam, amp, state, ode_tol=ode_tol)
            states.append(state)
        err = float(np.linalg.norm(target - state))
        amp_sum = float(sum(abs(a) for _, a in legs))
        if amp_sum > bound and sup > 0:
            raise AssertionError("chop amplitude bound violated")
        if err <= eta_plan:
            return ZigzagPlan(legs=tuple(legs), target=target, achieved=state,
                              error=err, amplitude_sum=amp_sum, chop_level=k,
                              states=tuple(states))
        k *= 2
    raise NoConvergence(
        f"zigzag endpoint error stayed above {eta_plan:g} up to chop level {k_max}")


# --- certification --------------------------------------------------------

@dataclass
class HypothesisReport:
    """Status of the analytic conditions plus the constructive check.

    ``certified`` is the constructive verdict: some simulated control
    with sup-norm epsilon moved the sonic speed strictly away from
    zero.  The analytic layers (first-order h1, commutator h2, deeper
    bracket words h3, spanning h4) are evidence, reported separately.
    Unit-scaled values are always present; natural-scaled h1 values are
    included for systems with closed-form eigenvectors.
    """

    epsilon: float
    h1: dict
    h1_natural: Optional[dict]
    h1_ok: bool
    h1_witness: Optional[int]
    h2: dict
    h2_ok: bool
    h2_witness: Optional[tuple]
    h3: dict
    h3_ok: bool
    h3_witness: Optional[str]
    bracket_depth: int
    h4_rank: int
    h4_span: bool
    h4_boundary: bool
    h4_ok: bool
    certified: bool
    certified_value: float
    best_control: Optional[PiecewiseControl]
    best_label: str


def _word_value(sys, word, u):
    """Evaluate a bracket word at u (unit fields, FD for nested parts)."""
    if isinstance(word, int):
        return core.eigenvector(sys, word, u)

    def field_of(w):
        if isinstance(w, int):
            return lambda v: core.eigenvector(sys, w, v)
        return lambda v: _word_value(sys, w, v)

    f, g = field_of(word[0]), field_of(word[1])

    def jac(fun, v):
        steps = core.fd_steps(v)
        out = np.empty((sys.n, sys.n))
        for c in range(sys.n):
            up = v.copy(); up[c] += steps[c]
            dn = v.copy(); dn[c] -= steps[c]
            out[:, c] = (fun(up) - fun(dn)) / (2 * steps[c])
        return out

    return jac(g, u) @ f(u) - jac(f, u) @ g(u)


def _word_label(word):
    if isinstance(word, int):
        return str(word)
    return f"[{_word_label(word[0])},{_word_label(word[1])}]"


def _bracket_words(families, depth):
    """Breadth-first bracket words: depth-1 words are the base fields."""
    levels = [[(f,) if False else f for f in families]]
    for d in range(2, depth + 1):
        level = []
        for lo_depth in range(1, d):
            hi_depth = d - lo_depth
            if lo_depth > hi_depth:
                continue
            for w1 in levels[lo_depth - 1]:
                for w2 in levels[hi_depth - 1]:
                    if lo_depth == hi_depth and _word_label(w1) >= _word_label(w2):
                        continue
                    level.append((w1, w2))
        levels.append(level)
    return levels


def certify_hypothesis(sys: SystemDef, epsilon: float, bracket_depth: int = 2,
                       ode_tol=ODE_TOL, clearance_tol=CLEARANCE_TOL) -> HypothesisReport:
    """Certify that small non-sonic controls can move lambda_m off zero.

    Analytic layers are evaluated at u*: first-order products
    grad(lambda_m).r_j, commutators, then breadth-first bracket words up
    to ``bracket_depth``.  Independently, candidate controls (constant
    pulses per family, then commutator zigzags per pair) are simulated
    at sup-norm ``epsilon`` and the largest resulting |lambda_m(z(1))|
    is recorded; certification is this constructive check.  Never
    raises on failure -- the report carries ``certified=False``.
    """
    u_star = sys.u_star
    fams = sys.nonsonic_families
    grad_m = core.grad_lambda(sys, sys.m, u_star)

    h1 = {j: float(grad_m @ core.eigenvector(sys, j, u_star)) for j in fams}
    h1_natural = None
    if sys.analytic_spectral is not None:
        nat = sys.analytic_spectral.natural_right(u_star)
        h1_natural = {j: float(grad_m @ nat[:, j - 1]) for j in fams}
    h1_witness = max(h1, key=lambda j: abs(h1[j]), default=None)
    h1_ok = h1_witness is not None and abs(h1[h1_witness]) > H1_TOL

    h2 = {}
    for a in range(len(fams)):
        for b in range(a + 1, len(fams)):
            j, k = fams[a], fams[b]
            h2[(j, k)] = float(grad_m @ core.lie_bracket(sys, j, k, u_star))
    h2_witness = max(h2, key=lambda p: abs(h2[p]), default=None)
    h2_ok = h2_witness is not None and abs(h2[h2_witness]) > H2_TOL

    levels = _bracket_words(fams, max(bracket_depth, 1))
    h3 = {}
    vectors = []
    for depth, level in enumerate(levels, start=1):
        tol = H1_TOL if depth == 1 else (H2_TOL if depth == 2 else DEEP_WORD_TOL)
        for word in level:
            vec = _word_value(sys, word, u_star)
            vectors.append(vec)
            val = float(grad_m @ vec)
            h3[_word_label(word)] = val if abs(val) > tol else val
    h3_witness = max(h3, key=lambda w: abs(h3[w]), default=None)
    h3_ok = any(
        abs(v) > (H1_TOL if "[" not in w else (H2_TOL if w.count("[") == 1 else DEEP_WORD_TOL))
        for w, v in h3.items())

    h4_rank = int(np.linalg.matrix_rank(np.array(vectors), tol=1e-6)) if vectors else 0
    h4_span = h4_rank == sys.n
    h4_boundary = _near_sonic_boundary(sys)
    h4_ok = h4_span and h4_boundary

    best_value = 0.0
    best_control = None
    best_label = "none"
    if epsilon > 0:
        candidates = []
        for j in fams:
            for sign in (+1.0, -1.0):
                candidates.append((
                    f"pulse({'+' if sign > 0 else '-'}eps, family {j})",
                    PiecewiseControl.constant(sys, {j: sign * epsilon})))
        for a in range(len(fams)):
            for b in range(len(fams)):
                if a == b:
                    continue
                j, k = fams[a], fams[b]
                rows = np.zeros((4, len(fams)))
                rows[0, a] = epsilon
                rows[1, b] = epsilon
                rows[2, a] = -epsilon
                rows[3, b] = -epsilon
                candidates.append((
                    f"commutator zigzag (families {j},{k})",
                    PiecewiseControl.from_pieces(
                        sys, (0, Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), 1), rows)))
        for label, cand in candidates:
            try:
                z1 = control_flow(sys, cand, u_star, ode_tol=ode_tol).endpoint
            except (LeftDomain, BlowUp):
                continue
            lam_m = float(core.eigendecompose(sys, z1).lambdas[sys.m - 1])
            if abs(lam_m) > abs(best_value):
                best_value, best_control, best_label = lam_m, cand, label

    certified = abs(best_value) > clearance_tol
    return HypothesisReport(
        epsilon=float(epsilon), h1=h1, h1_natural=h1_natural, h1_ok=h1_ok,
        h1_witness=h1_witness, h2=h2, h2_ok=h2_ok, h2_witness=h2_witness,
        h3=h3, h3_ok=h3_ok, h3_witness=h3_witness, bracket_depth=bracket_depth,
        h4_rank=h4_rank, h4_span=h4_span, h4_boundary=h4_boundary, h4_ok=h4_ok,
        certified=certified, certified_value=best_value,
        best_control=best_control, best_label=best_label)


def _near_sonic_boundary(sys, radius=1e-3, samples=32):
    """Is u* in the closure of the non-sonic set?  Probe a small sphere."""
    rng = np.random.default_rng(12345)
    dirs = rng.normal(size=(samples, sys.n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    scale = np.maximum(np.abs(sys.u_star), 1.0)
    for d in dirs:
        u = sys.u_star + radius * d * scale
        if not sys.domain.contains(u):
            continue
        lam = core.eigendecompose(sys, u).lambdas[sys.m - 1]
        if abs(lam) > 1e-12:
            return True
    return False
