"""The bundled model systems and their closed-form spectral data.

Four families of 1-D quasilinear systems, each with an equilibrium at
which one characteristic speed vanishes:

* Saint-Venant (shallow water), sonic equilibria ``V* = +-sqrt(g H*)``.
* Isentropic gas dynamics ``p = K rho^gamma``, sonic equilibria
  ``u* = +-sqrt(p'(rho*))``.  Saint-Venant is the special case
  ``p = g rho^2 / 2``.
* Full polytropic gas dynamics in ``(rho, u, S)``, rest equilibrium
  ``u* = 0`` where the middle (particle) speed vanishes.
* Traffic flow with velocity offset ``p``: power-law ``p = rho^gamma``
  (unbounded jam density) or saturating
  ``p = (1/rho - 1/rho_0)^(-gamma)``; sonic equilibrium
  ``u* = rho* p'(rho*)`` or rest ``u* = 0``.

Eigenvectors are stored in their closed-form "natural" scaling next to
the library-wide unit scaling (see :mod:`soniccontrol.core`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .core import AnalyticSpectral, DomainBox, SystemDef, eigendecompose, validate_system
from .errors import EquilibriumNotSonic, InvalidParams, Unsupported

DENSITY_FLOOR_FRAC = 0.1   # default lower bound: rho >= 0.1 rho*
SONIC_EQ_TOL = 1e-9


@dataclass(frozen=True)
class SaintVenant:
    g: float = 1.0

    def __post_init__(self):
        if self.g <= 0:
            raise InvalidParams("gravity g must be positive")


@dataclass(frozen=True)
class Isentropic:
    K: float = 1.0
    gamma: float = 1.4

    def __post_init__(self):
        if self.K <= 0:
            raise InvalidParams("K must be positive")
        if not 1.0 < self.gamma < 3.0:
            raise InvalidParams("gamma must lie in (1, 3)")


@dataclass(frozen=True)
class Euler:
    k: float = 1.0
    c_v: float = 1.0
    R: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        if self.k <= 0 or self.c_v <= 0 or self.R <= 0:
            raise InvalidParams("k, c_v, R must be positive")
        if not 1.0 < self.gamma < 3.0:
            raise InvalidParams("gamma must lie in (1, 3)")


@dataclass(frozen=True)
class Traffic:
    """gamma > 0; rho_0 = inf selects the power-law pressure."""

    gamma: float = 2.0
    rho0: float = math.inf

    def __post_init__(self):
        if self.gamma <= 0:
            raise InvalidParams("gamma must be positive")
        if not self.rho0 > 0:
            raise InvalidParams("rho0 must be positive (inf for power-law)")


ModelParams = Union[SaintVenant, Isentropic, Euler, Traffic]


@dataclass(frozen=True)
class ModelInfo:
    """What build_model was asked for; carried on SystemDef.info."""

    params: ModelParams
    equilibrium: str
    anchor: tuple


# --- pressure laws -------------------------------------------------------

def _isentropic_pressure(K, gamma):
    def p(rho):
        return K * rho ** gamma

    def dp(rho):
        return K * gamma * rho ** (gamma - 1.0)

    def d2p(rho):
        return K * gamma * (gamma - 1.0) * rho ** (gamma - 2.0)

    return p, dp, d2p


def _traffic_pressure(gamma, rho0):
    if math.isinf(rho0):
        def p(rho):
            return rho ** gamma

        def dp(rho):
            return gamma * rho ** (gamma - 1.0)

        def d2p(rho):
            return gamma * (gamma - 1.0) * rho ** (gamma - 2.0)
    else:
        def p(rho):
            return (1.0 / rho - 1.0 / rho0) ** -gamma

        def dp(rho):
            return gamma * rho ** -2.0 * (1.0 / rho - 1.0 / rho0) ** (-gamma - 1.0)

        def d2p(rho):
            w = 1.0 / rho - 1.0 / rho0
            return gamma * (-2.0 * rho ** -3.0 * w ** (-gamma - 1.0)
                            + (gamma + 1.0) * rho ** -4.0 * w ** (-gamma - 2.0))
    return p, dp, d2p


# --- closed-form spectral data per model ---------------------------------

def _isentropic_forms(K, gamma):
    """Shared by Saint-Venant (K = g/2, gamma = 2) and isentropic gas."""
    _, dp, d2p = _isentropic_pressure(K, gamma)

    def lambdas(u):
        rho, v = u
        c = math.sqrt(dp(rho))
        return np.array([v - c, v + c])

    def right(u):
        rho, _ = u
        a = rho / math.sqrt(dp(rho))
        return np.array([[a, a], [-1.0, 1.0]])

    def right_jac(u):
        rho, _ = u
        da = (2.0 * dp(rho) - rho * d2p(rho)) / (2.0 * dp(rho) ** 1.5)
        j = np.zeros((2, 2, 2))
        j[0, 0, 0] = da
        j[1, 0, 0] = da
        return j

    def grads(u):
        rho, _ = u
        gl = d2p(rho) / (2.0 * math.sqrt(dp(rho)))
        return np.array([[-gl, 1.0], [gl, 1.0]])

    def lambdas_batch(states):
        rho, v = states[:, 0], states[:, 1]
        c = np.sqrt(K * gamma * rho ** (gamma - 1.0))
        return np.stack([v - c, v + c], axis=1)

    def a_batch(states):
        rho, v = states[:, 0], states[:, 1]
        out = np.empty(states.shape[:1] + (2, 2))
        out[:, 0, 0] = v
        out[:, 0, 1] = rho
        out[:, 1, 0] = K * gamma * rho ** (gamma - 2.0)
        out[:, 1, 1] = v
        return out

    def a_point(u):
        rho, v = u
        return np.array([[v, rho], [dp(rho) / rho, v]])

    return a_point, AnalyticSpectral(2, lambdas, right, right_jac, grads,
                                     lambdas_batch=lambdas_batch, a_batch=a_batch)


def _euler_forms(k, c_v, gamma):
    def pressure(rho, s):
        return k * np.exp(s / c_v) * rho ** gamma

    def lambdas(u):
        rho, v, s = u
        c = math.sqrt(gamma * pressure(rho, s) / rho)
        return np.array([v - c, v, v + c])

    def right(u):
        rho, _, s = u
        p = pressure(rho, s)
        p_rho = gamma * p / rho
        p_s = p / c_v
        c = math.sqrt(p_rho)
        return np.array([[rho, p_s, rho],
                         [-c, 0.0, c],
                         [0.0, -p_rho, 0.0]])

    def right_jac(u):
        rho, _, s = u
        p = pressure(rho, s)
        p_rho = gamma * p / rho
        p_s = p / c_v
        p_rr = gamma * (gamma - 1.0) * p / rho ** 2
        p_rs = gamma * p / (rho * c_v)
        c = math.sqrt(p_rho)
        c_rho = p_rr / (2.0 * c)
        c_s = p_rs / (2.0 * c)
        j = np.zeros((3, 3, 3))
        j[0] = [[1.0, 0.0, 0.0], [-c_rho, 0.0, -c_s], [0.0, 0.0, 0.0]]
        j[1] = [[p_rs, 0.0, p_s / c_v], [0.0, 0.0, 0.0], [-p_rr, 0.0, -p_rs]]
        j[2] = [[1.0, 0.0, 0.0], [c_rho, 0.0, c_s], [0.0, 0.0, 0.0]]
        return j

    def grads(u):
        rho, _, s = u
        p = pressure(rho, s)
        c = math.sqrt(gamma * p / rho)
        c_rho = gamma * (gamma - 1.0) * p / rho ** 2 / (2.0 * c)
        c_s = gamma * p / (rho * c_v) / (2.0 * c)
        return np.array([[-c_rho, 1.0, -c_s],
                         [0.0, 1.0, 0.0],
                         [c_rho, 1.0, c_s]])

    def lambdas_batch(states):
        rho, v, s = states[:, 0], states[:, 1], states[:, 2]
        c = np.sqrt(gamma * k * np.exp(s / c_v) * rho ** (gamma - 1.0))
        return np.stack([v - c, v, v + c], axis=1)

    def a_batch(states):
        rho, v, s = states[:, 0], states[:, 1], states[:, 2]
        p = k * np.exp(s / c_v) * rho ** gamma
        out = np.zeros(states.shape[:1] + (3, 3))
        out[:, 0, 0] = v
        out[:, 0, 1] = rho
        out[:, 1, 0] = gamma * p / rho ** 2
        out[:, 1, 1] = v
        out[:, 1, 2] = p / (c_v * rho)
        out[:, 2, 2] = v
        return out

    def a_point(u):
        rho, v, s = u
        p = pressure(rho, s)
        return np.array([[v, rho, 0.0],
                         [gamma * p / rho ** 2, v, p / (c_v * rho)],
                         [0.0, 0.0, v]])

    return a_point, AnalyticSpectral(3, lambdas, right, right_jac, grads,
                                     lambdas_batch=lambdas_batch, a_batch=a_batch)


def _traffic_forms(gamma, rho0):
    _, dp, d2p = _traffic_pressure(gamma, rho0)

    def lambdas(u):
        rho, v = u
        return np.array([v - rho * dp(rho), v])

    def right(u):
        rho, _ = u
        return np.array([[1.0, 1.0], [-dp(rho), 0.0]])

    def right_jac(u):
        rho, _ = u
        j = np.zeros((2, 2, 2))
        j[0, 1, 0] = -d2p(rho)
        return j

    def grads(u):
        rho, _ = u
        return np.array([[-dp(rho) - rho * d2p(rho), 1.0], [0.0, 1.0]])

    def lambdas_batch(states):
        rho, v = states[:, 0], states[:, 1]
        return np.stack([v - rho * dp(rho), v], axis=1)

    def a_batch(states):
        rho, v = states[:, 0], states[:, 1]
        out = np.zeros(states.shape[:1] + (2, 2))
        out[:, 0, 0] = v
        out[:, 0, 1] = rho
        out[:, 1, 1] = v - rho * dp(rho)
        return out

    def a_point(u):
        rho, v = u
        return np.array([[v, rho], [0.0, v - rho * dp(rho)]])

    return a_point, AnalyticSpectral(2, lambdas, right, right_jac, grads,
                                     lambdas_batch=lambdas_batch, a_batch=a_batch)


def _saint_venant_a(g):
    def a_point(u):
        h, v = u
        return np.array([[v, h], [g, v]])
    return a_point


# --- domain boxes ---------------------------------------------------------

def _shrink_until_valid(lambdas_batch, m, u_star, lo, hi, shrink_axes, seed=0):
    """Halve the box half-widths on ``shrink_axes`` until the non-sonic
    speeds keep their sign on a sampled box."""
    rng = np.random.default_rng(seed)
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    n = lo.size
    for _ in range(10):
        grid = lo + (hi - lo) * rng.random((256, n))
        corners = np.array(np.meshgrid(*zip(lo, hi))).T.reshape(-1, n)
        pts = np.vstack([grid, corners])
        lams = lambdas_batch(pts)
        ok = True
        for j in range(1, n + 1):
            if j < m and np.max(lams[:, j - 1]) >= 0:
                ok = False
            if j > m and np.min(lams[:, j - 1]) <= 0:
                ok = False
        if ok and np.min(np.diff(lams, axis=1)) > 0:
            return DomainBox(lo, hi)
        for ax in shrink_axes:
            c = u_star[ax]
            lo[ax] = c - 0.5 * (c - lo[ax])
            hi[ax] = c + 0.5 * (hi[ax] - c)
    raise InvalidParams("could not find a domain box with uniform speed signs")


# --- construction ---------------------------------------------------------

def build_model(params: ModelParams, equilibrium: str, anchor) -> SystemDef:
    """Instantiate one of the bundled systems at a named equilibrium.

    ``anchor`` fixes the free coordinates of the equilibrium: H* for
    Saint-Venant, rho* for isentropic/traffic, (rho*, S*) for the full
    gas system (a bare float means S* = 0).

    The returned SystemDef carries analytic spectral data, a validated
    domain box, and a ModelInfo record in ``info``.
    """
    if equilibrium not in ("sonic_right", "sonic_left", "rest"):
        raise InvalidParams(f"unknown equilibrium {equilibrium!r}")

    if isinstance(params, SaintVenant):
        h_star = float(_scalar_anchor(anchor, "H*"))
        a_point = _saint_venant_a(params.g)
        _, spectral = _isentropic_forms(params.g / 2.0, 2.0)
        c_star = math.sqrt(params.g * h_star)
        if equilibrium == "sonic_right":
            u_star, m = np.array([h_star, c_star]), 1
        elif equilibrium == "sonic_left":
            u_star, m = np.array([h_star, -c_star]), 2
        else:
            raise Unsupported("Saint-Venant has no rest equilibrium with a "
                              "vanishing speed; use sonic_right/sonic_left")
        box = _density_velocity_box(spectral, m, u_star,
                                    rho_range=(DENSITY_FLOOR_FRAC * h_star, 3.0 * h_star),
                                    v_halfwidth=0.5 * max(abs(u_star[1]), c_star))
        name = f"saint_venant(g={params.g:g})"

    elif isinstance(params, Isentropic):
        rho_star = float(_scalar_anchor(anchor, "rho*"))
        a_point, spectral = _isentropic_forms(params.K, params.gamma)
        c_star = math.sqrt(params.K * params.gamma * rho_star ** (params.gamma - 1.0))
        if equilibrium == "sonic_right":
            u_star, m = np.array([rho_star, c_star]), 1
        elif equilibrium == "sonic_left":
            u_star, m = np.array([rho_star, -c_star]), 2
        else:
            raise Unsupported("isentropic gas has no rest equilibrium with a "
                              "vanishing speed; use sonic_right/sonic_left")
        box = _density_velocity_box(spectral, m, u_star,
                                    rho_range=(DENSITY_FLOOR_FRAC * rho_star, 3.0 * rho_star),
                                    v_halfwidth=0.5 * max(abs(u_star[1]), c_star))
        name = f"isentropic(K={params.K:g},gamma={params.gamma:g})"

    elif isinstance(params, Euler):
        rho_star, s_star = _pair_anchor(anchor)
        if equilibrium != "rest":
            raise Unsupported("the full gas system is bundled at its rest "
                              "equilibrium only")
        a_point, spectral = _euler_forms(params.k, params.c_v, params.gamma)
        u_star, m = np.array([rho_star, 0.0, s_star]), 2
        c_star = math.sqrt(params.gamma * params.k * math.exp(s_star / params.c_v)
                           * rho_star ** (params.gamma - 1.0))
        lo = [DENSITY_FLOOR_FRAC * rho_star, -0.5 * c_star, s_star - 0.5 * params.c_v]
        hi = [3.0 * rho_star, 0.5 * c_star, s_star + 0.5 * params.c_v]
        box = _shrink_until_valid(spectral.lambdas_batch, m, u_star, lo, hi, shrink_axes=(1,))
        name = (f"euler(k={params.k:g},c_v={params.c_v:g},R={params.R:g},"
                f"gamma={params.gamma:g})")

    elif isinstance(params, Traffic):
        rho_star = float(_scalar_anchor(anchor, "rho*"))
        if not math.isinf(params.rho0) and rho_star >= params.rho0:
            raise InvalidParams("rho* must be below the jam density rho0")
        a_point, spectral = _traffic_forms(params.gamma, params.rho0)
        _, dp, _ = _traffic_pressure(params.gamma, params.rho0)
        if equilibrium == "sonic_right":
            u_star, m = np.array([rho_star, rho_star * dp(rho_star)]), 1
            rho_lo = DENSITY_FLOOR_FRAC * rho_star
            v_hw = 0.5 * u_star[1]
        elif equilibrium == "rest":
            u_star, m = np.array([rho_star, 0.0]), 2
            # keep rho away from zero so lambda_1 = u - rho p' stays negative
            rho_lo = 0.5 * rho_star
            v_hw = 0.5 * min(r * dp(r) for r in (rho_lo, rho_star))
        else:
            raise Unsupported("traffic flow is bundled at sonic_right or rest")
        rho_hi = 3.0 * rho_star if equilibrium == "sonic_right" else 2.5 * rho_star
        if not math.isinf(params.rho0):
            rho_hi = min(rho_hi, rho_star + 0.9 * (params.rho0 - rho_star))
        lo = [rho_lo, u_star[1] - v_hw]
        hi = [rho_hi, u_star[1] + v_hw]
        box = _shrink_until_valid(spectral.lambdas_batch, m, u_star, lo, hi, shrink_axes=(1,))
        kind = "ar" if math.isinf(params.rho0) else f"mar(rho0={params.rho0:g})"
        name = f"traffic_{kind}(gamma={params.gamma:g})"

    else:
        raise InvalidParams(f"unknown model parameter type {type(params).__name__}")

    sys = SystemDef(n=u_star.size, m=m, u_star=u_star, A=a_point, domain=box,
                    analytic_spectral=spectral, name=name,
                    info=ModelInfo(params=params, equilibrium=equilibrium,
                                   anchor=tuple(np.atleast_1d(anchor).astype(float))))
    lam_star = eigendecompose(sys, sys.u_star).lambdas[m - 1]
    if abs(lam_star) > SONIC_EQ_TOL:
        raise EquilibriumNotSonic(
            f"lambda_{m}(u*) = {lam_star:.3e} at the requested equilibrium")
    validate_system(sys, samples=128)
    return sys


def _density_velocity_box(spectral, m, u_star, rho_range, v_halfwidth):
    lo = [rho_range[0], u_star[1] - v_halfwidth]
    hi = [rho_range[1], u_star[1] + v_halfwidth]
    return _shrink_until_valid(spectral.lambdas_batch, m, u_star, lo, hi, shrink_axes=(1,))


def _scalar_anchor(anchor, label):
    arr = np.atleast_1d(np.asarray(anchor, dtype=float))
    if arr.size != 1 or arr[0] <= 0:
        raise InvalidParams(f"{label} must be a single positive number")
    return arr[0]


def _pair_anchor(anchor):
    arr = np.atleast_1d(np.asarray(anchor, dtype=float))
    if arr.size == 1:
        rho_star, s_star = arr[0], 0.0
    elif arr.size == 2:
        rho_star, s_star = arr
    else:
        raise InvalidParams("full gas anchor is rho* or (rho*, S*)")
    if rho_star <= 0:
        raise InvalidParams("rho* must be positive")
    return float(rho_star), float(s_star)


def analytic_h1_value(sys: SystemDef):
    """Closed-form first-order certificate at the bundled equilibria.

    Returns ``(value, j)`` where value = grad(lambda_m)(u*) . r_j(u*)
    in the model's natural eigenvector scaling, and j is the witness
    family.  Raises :class:`Unsupported` for systems that were not
    produced by :func:`build_model`.
    """
    info = sys.info
    if not isinstance(info, ModelInfo):
        raise Unsupported("analytic H1 value is only catalogued for bundled models")
    params, eq = info.params, info.equilibrium

    if isinstance(params, (SaintVenant, Isentropic)):
        gamma = 2.0 if isinstance(params, SaintVenant) else params.gamma
        if eq == "sonic_right":
            return (3.0 - gamma) / 2.0, 2
        return (gamma - 3.0) / 2.0, 1

    if isinstance(params, Euler):
        rho_star, _, s_star = sys.u_star
        c = math.sqrt(params.gamma * params.k * math.exp(s_star / params.c_v)
                      * rho_star ** (params.gamma - 1.0))
        return -c, 1

    if isinstance(params, Traffic):
        _, dp, d2p = _traffic_pressure(params.gamma, params.rho0)
        rho_star = sys.u_star[0]
        if eq == "sonic_right":
            return -dp(rho_star) - rho_star * d2p(rho_star), 2
        return -dp(rho_star), 1

    raise Unsupported(f"no catalogued H1 value for {type(params).__name__}")


def strip_analytic(sys: SystemDef) -> SystemDef:
    """Copy of ``sys`` forced onto the numeric spectral path (testing)."""
    return SystemDef(n=sys.n, m=sys.m, u_star=sys.u_star.copy(), A=sys.A,
                     domain=sys.domain, analytic_spectral=None,
                     name=sys.name + "[numeric]", info=sys.info)
