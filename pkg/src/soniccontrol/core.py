"""Spectral machinery for strictly hyperbolic quasilinear systems.

A system is described by its matrix field A(u) on a box-shaped state
domain together with the index ``m`` of the characteristic family whose
speed vanishes at the reference equilibrium ``u_star``.  Every other
family keeps a fixed sign on the whole box: negative below ``m``,
positive above.

Family indices are 1-based in the public API (families ``1..n``, sonic
family ``m``); array storage is 0-based internally.

Two eigenvector scalings coexist:

* ``"unit"`` -- unit Euclidean length, sign fixed so that the
  largest-magnitude component at ``u_star`` is positive.  This is the
  single convention used by the flow/planning/wave modules, so flow
  parameters are arclengths.
* ``"natural"`` -- the closed-form scaling in which each bundled model
  states its eigenvectors.  Only available when the system carries
  analytic spectral data; used to reproduce the models' textbook
  values verbatim.

Left eigenvectors are always the dual basis (rows of the inverse of
the right-eigenvector matrix), so ``l_i . r_j = delta_ij`` holds by
construction in either scaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    ComplexOrRepeatedEigenvalues,
    OutOfDomain,
    SonicFamilyForbidden,
    Unsupported,
)

EIG_SEPARATION_MIN = 1e-8     # repeated-eigenvalue guard
SPECTRAL_TOL = 1e-9           # |lambda_m(u*)| check in validate_system


def fd_steps(u):
    """Per-coordinate central-difference steps: h = max(1e-6, 1e-6*|u_k|)."""
    u = np.asarray(u, dtype=float)
    return np.maximum(1e-6, 1e-6 * np.abs(u))


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned closed box of admissible states."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo/hi must be 1-D arrays of equal length")
        if not np.all(lo < hi):
            raise ValueError("empty domain box")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def n(self):
        return self.lo.size

    def contains(self, u, margin=0.0):
        """True if u (a state or an array of states, last axis n) is inside.

        ``margin`` shrinks the box by an absolute amount on every face.
        """
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lo + margin) and np.all(u <= self.hi - margin))

    def first_outside(self, states):
        """Index of the first row of ``states`` outside the box, or None."""
        states = np.atleast_2d(states)
        bad = np.any((states < self.lo) | (states > self.hi), axis=1)
        idx = np.nonzero(bad)[0]
        return int(idx[0]) if idx.size else None

    def sample(self, rng, size, margin_frac=0.0):
        """Uniform interior samples; margin_frac shrinks each side."""
        span = self.hi - self.lo
        lo = self.lo + margin_frac * span
        hi = self.hi - margin_frac * span
        return lo + (hi - lo) * rng.random((size, self.n))


@dataclass(frozen=True)
class Spectral:
    """Full eigenstructure of A(u) at one state.

    ``right`` stores the unit-scaled right eigenvectors as columns,
    ``left`` the dual left covectors as rows.  ``natural_right`` holds
    the model's closed-form columns when analytic data is available.
    """

    at: np.ndarray
    lambdas: np.ndarray
    right: np.ndarray
    left: np.ndarray
    natural_right: Optional[np.ndarray] = None


class AnalyticSpectral:
    """Closed-form spectral data for one system.

    Wraps per-model callables (eigenvalues, natural-form right
    eigenvectors with hand-derived Jacobians, eigenvalue gradients) and
    derives the oriented unit frame from them.  Instances are callable,
    mapping a state to a :class:`Spectral`.
    """

    def __init__(self, n, lambdas, right_natural, right_natural_jac,
                 grad_lambdas, lambdas_batch=None, a_batch=None):
        self.n = n
        self._lambdas = lambdas                  # u -> (n,)
        self._right = right_natural              # u -> (n, n) columns
        self._right_jac = right_natural_jac      # u -> (n, n, n); [i] = D r_i
        self._grad = grad_lambdas                # u -> (n, n) rows
        self.lambdas_batch = lambdas_batch       # (m, n) states -> (m, n)
        self.a_batch = a_batch                   # (m, n) states -> (m, n, n)
        self._signs = None                       # fixed at u_star on first use

    def bind_orientation(self, u_star):
        """Fix unit-frame signs: largest-|component| at u_star positive."""
        r = self._right(np.asarray(u_star, dtype=float))
        signs = np.empty(self.n)
        for i in range(self.n):
            col = r[:, i]
            signs[i] = 1.0 if col[np.argmax(np.abs(col))] >= 0 else -1.0
        self._signs = signs

    def _require_signs(self):
        if self._signs is None:
            raise RuntimeError("orientation not bound; call bind_orientation(u_star)")
        return self._signs

    def lambdas(self, u):
        return np.asarray(self._lambdas(np.asarray(u, dtype=float)), dtype=float)

    def natural_right(self, u):
        return np.asarray(self._right(np.asarray(u, dtype=float)), dtype=float)

    def natural_jacobian(self, j, u):
        """Jacobian of the natural-form field of family j (1-based)."""
        return np.asarray(self._right_jac(np.asarray(u, dtype=float)), dtype=float)[j - 1]

    def grad_lambda(self, i, u):
        return np.asarray(self._grad(np.asarray(u, dtype=float)), dtype=float)[i - 1]

    def unit_right(self, u):
        signs = self._require_signs()
        r = self.natural_right(u)
        return signs * r / np.linalg.norm(r, axis=0)

    def unit_vector(self, j, u):
        signs = self._require_signs()
        col = self.natural_right(u)[:, j - 1]
        return signs[j - 1] * col / np.linalg.norm(col)

    def unit_jacobian(self, j, u):
        """Exact Jacobian of the unit field via the quotient rule."""
        signs = self._require_signs()
        r = self.natural_right(u)[:, j - 1]
        jac = self.natural_jacobian(j, u)
        norm = np.linalg.norm(r)
        nhat = r / norm
        return signs[j - 1] * (np.eye(self.n) - np.outer(nhat, nhat)) @ jac / norm

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        lams = self.lambdas(u)
        right = self.unit_right(u)
        left = np.linalg.inv(right)
        return Spectral(at=u, lambdas=lams, right=right, left=left,
                        natural_right=self.natural_right(u))


@dataclass(frozen=True)
class SystemDef:
    """A quasilinear system u_t + A(u) u_x = 0 on a state box.

    ``m`` is the 1-based index of the family whose speed vanishes at
    ``u_star``.  Immutable after construction; all operations on it are
    pure, so instances can be shared freely between tasks.
    """

    n: int
    m: int
    u_star: np.ndarray
    A: Callable[[np.ndarray], np.ndarray]
    domain: DomainBox
    analytic_spectral: Optional[AnalyticSpectral] = None
    name: str = "system"
    info: object = field(default=None, compare=False)

    def __post_init__(self):
        u = np.array(self.u_star, dtype=float)
        u.flags.writeable = False
        object.__setattr__(self, "u_star", u)
        if not 1 <= self.m <= self.n:
            raise ValueError(f"sonic family m={self.m} outside 1..{self.n}")
        if self.domain.n != self.n:
            raise ValueError("domain dimension mismatch")
        if not self.domain.contains(self.u_star):
            raise ValueError("u_star outside the domain box")
        if self.analytic_spectral is not None:
            self.analytic_spectral.bind_orientation(u)

    @property
    def families(self):
        """All family indices, 1-based."""
        return tuple(range(1, self.n + 1))

    @property
    def nonsonic_families(self):
        return tuple(j for j in self.families if j != self.m)

    def a_batch(self, states):
        """A(u) for an (m, n) array of states -> (m, n, n)."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if self.analytic_spectral is not None and self.analytic_spectral.a_batch is not None:
            return self.analytic_spectral.a_batch(states)
        return np.stack([np.asarray(self.A(u), dtype=float) for u in states])

    def lambdas_batch(self, states):
        """Eigenvalues for an (m, n) array of states -> (m, n), sorted."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if self.analytic_spectral is not None and self.analytic_spectral.lambdas_batch is not None:
            return self.analytic_spectral.lambdas_batch(states)
        return np.stack([eigendecompose(self, u).lambdas for u in states])


def _check_in_domain(sys, u, margin=0.0):
    if not sys.domain.contains(u, margin=margin):
        raise OutOfDomain(f"state {np.asarray(u)} outside domain of {sys.name}")


def _numeric_spectral(sys, u):
    a = np.asarray(sys.A(u), dtype=float)
    vals, vecs = np.linalg.eig(a)
    scale = max(1.0, np.max(np.abs(vals.real)))
    if np.max(np.abs(vals.imag)) > 1e-9 * scale:
        raise ComplexOrRepeatedEigenvalues(
            f"complex eigenvalues at u={u}: {vals}")
    vals = vals.real
    order = np.argsort(vals)
    vals = vals[order]
    vecs = vecs[:, order].real
    if np.min(np.diff(vals)) < EIG_SEPARATION_MIN:
        raise ComplexOrRepeatedEigenvalues(
            f"eigenvalue separation below {EIG_SEPARATION_MIN} at u={u}: {vals}")

    # Orient against the frame at u_star so the field is continuous on
    # the (small, connected) box.  At u_star itself fall back to the
    # largest-|component|-positive rule.
    vecs /= np.linalg.norm(vecs, axis=0)
    if np.allclose(u, sys.u_star):
        ref = None
    else:
        ref = _numeric_spectral(sys, sys.u_star).right
    for i in range(sys.n):
        col = vecs[:, i]
        if ref is None:
            s = 1.0 if col[np.argmax(np.abs(col))] >= 0 else -1.0
        else:
            d = float(col @ ref[:, i])
            if d != 0.0:
                s = np.sign(d)
            else:
                s = 1.0 if col[np.argmax(np.abs(col))] >= 0 else -1.0
        vecs[:, i] = s * col
    left = np.linalg.inv(vecs)
    return Spectral(at=np.asarray(u, dtype=float), lambdas=vals,
                    right=vecs, left=left)


def eigendecompose(sys: SystemDef, u, method="auto") -> Spectral:
    """Eigenvalues (sorted ascending) and oriented dual eigenbases at u.

    ``method`` is "auto" (analytic when the system has closed forms),
    "analytic", or "numeric" (dense eigensolver; used by tests to
    cross-check the closed forms).
    """
    u = np.asarray(u, dtype=float)
    _check_in_domain(sys, u)
    if method == "auto":
        method = "analytic" if sys.analytic_spectral is not None else "numeric"
    if method == "analytic":
        if sys.analytic_spectral is None:
            raise Unsupported(f"{sys.name} has no analytic spectral data")
        return sys.analytic_spectral(u)
    if method == "numeric":
        return _numeric_spectral(sys, u)
    raise ValueError(f"unknown method {method!r}")


def eigenvector(sys: SystemDef, j, u, normalization="unit", method="auto",
                check_domain=True):
    """Right eigenvector of family j (1-based) at u, in either scaling.

    ``check_domain=False`` skips the box check; flow integrators use it
    so that transient evaluations just outside the box (reported
    afterwards as LeftDomain) do not abort mid-step.
    """
    if not 1 <= j <= sys.n:
        raise ValueError(f"family {j} outside 1..{sys.n}")
    if normalization == "natural":
        if sys.analytic_spectral is None:
            raise Unsupported("natural scaling requires analytic spectral data")
        if check_domain:
            _check_in_domain(sys, u)
        return sys.analytic_spectral.natural_right(np.asarray(u, dtype=float))[:, j - 1]
    if normalization != "unit":
        raise ValueError(f"unknown normalization {normalization!r}")
    if method == "auto" and sys.analytic_spectral is not None:
        if check_domain:
            _check_in_domain(sys, u)
        return sys.analytic_spectral.unit_vector(j, np.asarray(u, dtype=float))
    if not check_domain and method == "auto":
        method = "numeric"
    if not check_domain:
        return _numeric_spectral(sys, u).right[:, j - 1]
    return eigendecompose(sys, u, method=method).right[:, j - 1]


def eigvec_jacobian(sys: SystemDef, j, u, normalization="unit",
                    method="auto", fd_step=None):
    """Jacobian of u -> r_j(u).

    Analytic systems get the exact hand-derived Jacobian (with the
    quotient-rule correction for the unit scaling); otherwise a central
    finite difference of :func:`eigenvector` with the step rule from
    :func:`fd_steps` (overridable via ``fd_step`` for convergence
    studies).
    """
    u = np.asarray(u, dtype=float)
    if method == "auto":
        method = "analytic" if sys.analytic_spectral is not None else "fd"
    if method == "analytic":
        if sys.analytic_spectral is None:
            raise Unsupported(f"{sys.name} has no analytic spectral data")
        _check_in_domain(sys, u)
        if normalization == "natural":
            return sys.analytic_spectral.natural_jacobian(j, u)
        return sys.analytic_spectral.unit_jacobian(j, u)
    if method != "fd":
        raise ValueError(f"unknown method {method!r}")
    steps = np.full(sys.n, fd_step) if fd_step is not None else fd_steps(u)
    for k in range(sys.n):
        probe = u.copy()
        probe[k] += steps[k]
        ok_hi = sys.domain.contains(probe)
        probe[k] -= 2 * steps[k]
        if not (ok_hi and sys.domain.contains(probe)):
            raise OutOfDomain(f"finite-difference stencil leaves the box at u={u}")
    jac = np.empty((sys.n, sys.n))
    for k in range(sys.n):
        up = u.copy(); up[k] += steps[k]
        dn = u.copy(); dn[k] -= steps[k]
        jac[:, k] = (eigenvector(sys, j, up, normalization)
                     - eigenvector(sys, j, dn, normalization)) / (2 * steps[k])
    return jac


def lie_bracket(sys: SystemDef, j, k, u, normalization="unit", method="auto",
                allow_sonic=False):
    """[r_j, r_k](u) = (D r_k) r_j - (D r_j) r_k.

    Reachability only ever brackets non-sonic families, so passing the
    sonic one raises unless ``allow_sonic`` is set (the bracket itself
    is well defined for any pair; the guard catches planner misuse).
    """
    if not allow_sonic and (j == sys.m or k == sys.m):
        raise SonicFamilyForbidden(
            f"brackets use only non-sonic families (m={sys.m})")
    u = np.asarray(u, dtype=float)
    rj = eigenvector(sys, j, u, normalization)
    rk = eigenvector(sys, k, u, normalization)
    djac = eigvec_jacobian(sys, k, u, normalization, method=method)
    dji = eigvec_jacobian(sys, j, u, normalization, method=method)
    return djac @ rj - dji @ rk


def grad_lambda(sys: SystemDef, i, u, method="auto", fd_step=None):
    """Gradient of the i-th characteristic speed at u."""
    u = np.asarray(u, dtype=float)
    if method == "auto":
        method = "analytic" if sys.analytic_spectral is not None else "fd"
    if method == "analytic":
        if sys.analytic_spectral is None:
            raise Unsupported(f"{sys.name} has no analytic spectral data")
        _check_in_domain(sys, u)
        return sys.analytic_spectral.grad_lambda(i, u)
    if method != "fd":
        raise ValueError(f"unknown method {method!r}")
    steps = np.full(sys.n, fd_step) if fd_step is not None else fd_steps(u)
    grad = np.empty(sys.n)
    for c in range(sys.n):
        up = u.copy(); up[c] += steps[c]
        dn = u.copy(); dn[c] -= steps[c]
        if not (sys.domain.contains(up) and sys.domain.contains(dn)):
            raise OutOfDomain(f"finite-difference stencil leaves the box at u={u}")
        grad[c] = (eigendecompose(sys, up).lambdas[i - 1]
                   - eigendecompose(sys, dn).lambdas[i - 1]) / (2 * steps[c])
    return grad


def validate_system(sys: SystemDef, samples=200, seed=0):
    """Check the SystemDef invariants on sampled states.

    Verifies that lambda_m(u_star) vanishes, that eigenvalues stay
    sorted and separated, and that every non-sonic family keeps its
    sign on the sampled box.  Raises on violation.
    """
    spec = eigendecompose(sys, sys.u_star)
    if abs(spec.lambdas[sys.m - 1]) > SPECTRAL_TOL:
        raise EquilibriumNotSonicError(sys, spec.lambdas)
    rng = np.random.default_rng(seed)
    pts = sys.domain.sample(rng, samples)
    lams = sys.lambdas_batch(pts)
    if np.min(np.diff(lams, axis=1)) <= 0:
        raise ComplexOrRepeatedEigenvalues("eigenvalue ordering fails on sampled box")
    for j in range(1, sys.n + 1):
        if j < sys.m and np.max(lams[:, j - 1]) >= 0:
            raise InvalidSignPattern(sys, j, "negative")
        if j > sys.m and np.min(lams[:, j - 1]) <= 0:
            raise InvalidSignPattern(sys, j, "positive")
    return True


def EquilibriumNotSonicError(sys, lambdas):
    from .errors import EquilibriumNotSonic
    return EquilibriumNotSonic(
        f"lambda_{sys.m}(u_star) = {lambdas[sys.m - 1]:.3e} is not zero for {sys.name}")


def InvalidSignPattern(sys, j, wanted):
    from .errors import InvalidParams
    return InvalidParams(
        f"family {j} of {sys.name} is not uniformly {wanted} on the domain box")
