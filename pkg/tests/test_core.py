import numpy as np
import pytest

from soniccontrol import core, models
from soniccontrol.errors import (
    ComplexOrRepeatedEigenvalues,
    OutOfDomain,
    SonicFamilyForbidden,
)


def diagonal_system():
    a = np.diag([-1.0, 2.0])
    return core.SystemDef(n=2, m=1, u_star=np.zeros(2), A=lambda u: a,
                          domain=core.DomainBox(np.array([-1.0, -1.0]),
                                                np.array([1.0, 1.0])),
                          name="diagonal")


def diagonal_system3():
    a = np.diag([-1.0, 0.0, 2.0])
    return core.SystemDef(n=3, m=2, u_star=np.zeros(3), A=lambda u: a,
                          domain=core.DomainBox(-np.ones(3), np.ones(3)),
                          name="diagonal3")


def test_eigendecompose_diagonal():
    sysdef = diagonal_system()
    spec = core.eigendecompose(sysdef, np.array([0.2, -0.3]))
    assert np.allclose(spec.lambdas, [-1.0, 2.0])
    assert np.allclose(np.abs(spec.right), np.eye(2))
    assert np.allclose(spec.left @ spec.right, np.eye(2), atol=1e-14)


def test_eigendecompose_saint_venant_rest_point(sv):
    # at (H, V) = (1, 0) with g = 1 the eigenvectors are (1, -1), (1, 1);
    # wrap the same A-matrix in a raw SystemDef whose box contains V = 0
    numeric = core.SystemDef(n=2, m=1, u_star=np.array([1.0, 0.0]), A=sv.A,
                             domain=core.DomainBox(np.array([0.1, -2.0]),
                                                   np.array([3.0, 2.0])),
                             name="sv-raw")
    spec = core.eigendecompose(numeric, np.array([1.0, 0.0]), method="numeric")
    assert np.allclose(spec.lambdas, [-1.0, 1.0], atol=1e-12)
    r1, r2 = spec.right[:, 0], spec.right[:, 1]
    assert abs(abs(r1 @ [1, -1]) / np.sqrt(2) - 1) < 1e-12
    assert abs(abs(r2 @ [1, 1]) / np.sqrt(2) - 1) < 1e-12


def test_eigendecompose_euler_vs_charpoly_oracle(euler):
    u = euler.u_star
    spec = core.eigendecompose(euler, u)
    assert np.allclose(spec.lambdas, [-np.sqrt(2), 0.0, np.sqrt(2)], atol=1e-12)
    roots = np.sort(np.roots(np.poly(euler.A(u))).real)
    assert np.allclose(spec.lambdas, roots, atol=1e-9)


def test_eigendecompose_domain_and_degenerate_errors():
    sysdef = diagonal_system()
    with pytest.raises(OutOfDomain):
        core.eigendecompose(sysdef, np.array([5.0, 0.0]))
    rot = core.SystemDef(n=2, m=1, u_star=np.zeros(2),
                         A=lambda u: np.array([[0.0, -1.0], [1.0, 0.0]]),
                         domain=core.DomainBox(np.array([-1, -1.0]), np.array([1, 1.0])),
                         name="rotation")
    with pytest.raises(ComplexOrRepeatedEigenvalues):
        core.eigendecompose(rot, np.zeros(2))
    rep = core.SystemDef(n=2, m=1, u_star=np.zeros(2),
                         A=lambda u: np.eye(2),
                         domain=core.DomainBox(np.array([-1, -1.0]), np.array([1, 1.0])),
                         name="repeated")
    with pytest.raises(ComplexOrRepeatedEigenvalues):
        core.eigendecompose(rep, np.zeros(2))


def test_eigvec_jacobian_constant_field_is_zero():
    sysdef = diagonal_system()
    jac = core.eigvec_jacobian(sysdef, 1, np.array([0.1, 0.2]), method="fd")
    assert np.max(np.abs(jac)) < 1e-9


def test_eigvec_jacobian_isentropic_closed_form(isentropic2):
    # natural r_2 = (sqrt(rho), 1): d/drho = 1/(2 sqrt(rho)), everything else 0
    u = np.array([1.3, 1.0])
    jac = core.eigvec_jacobian(isentropic2, 2, u, normalization="natural")
    expected = np.array([[1.0 / (2.0 * np.sqrt(1.3)), 0.0], [0.0, 0.0]])
    assert np.allclose(jac, expected, atol=1e-12)
    r2 = core.eigenvector(isentropic2, 2, u, normalization="natural")
    assert np.allclose(r2, [np.sqrt(1.3), 1.0], atol=1e-12)


def test_eigvec_jacobian_fd_second_order(isentropic2):
    # halving h must shrink the FD error by ~4x against the exact Jacobian
    u = np.array([1.2, 1.1])
    exact = core.eigvec_jacobian(isentropic2, 2, u, normalization="natural")
    errs = []
    for h in (1e-3, 5e-4):
        fd = core.eigvec_jacobian(isentropic2, 2, u, normalization="natural",
                                  method="fd", fd_step=h)
        errs.append(np.max(np.abs(fd - exact)))
    order = np.log2(errs[0] / errs[1])
    assert order >= 1.8


def test_eigvec_jacobian_euler_density_column(euler):
    # natural r_3 = (rho, c, 0): d/drho = (1, c_rho, 0)
    u = euler.u_star
    jac = core.eigvec_jacobian(euler, 3, u, normalization="natural")
    c = np.sqrt(2.0)
    c_rho = (2.0 * 1.0 * 1.0 / 1.0) / (2.0 * c)   # p_rr / (2c), gamma=2, p=1
    assert np.allclose(jac[:, 0], [1.0, c_rho, 0.0], atol=1e-12)


def test_eigvec_jacobian_stencil_out_of_domain(isentropic2):
    lo = isentropic2.domain.lo.copy()
    with pytest.raises(OutOfDomain):
        core.eigvec_jacobian(isentropic2, 2, lo, method="fd")


def test_lie_bracket_constant_fields_vanish():
    sysdef = diagonal_system3()
    b = core.lie_bracket(sysdef, 1, 3, np.array([0.1, -0.2, 0.3]))
    assert np.max(np.abs(b)) < 1e-9


def test_lie_bracket_isentropic_natural_vanishes(isentropic14):
    # both natural fields depend only on rho and share their first
    # component, so the bracket cancels identically (family 1 is the
    # sonic one here, hence the explicit override)
    rng = np.random.default_rng(7)
    pts = isentropic14.domain.sample(rng, 10, margin_frac=0.2)
    for u in pts:
        b_analytic = core.lie_bracket(isentropic14, 1, 2, u,
                                      normalization="natural", allow_sonic=True)
        b_fd = core.lie_bracket(isentropic14, 1, 2, u, normalization="natural",
                                method="fd", allow_sonic=True)
        assert np.max(np.abs(b_analytic)) < 1e-12
        assert np.max(np.abs(b_fd)) < 1e-5


def test_lie_bracket_euler_closed_form(euler):
    # [r_1, r_3] = (0, 2 rho c_rho, 0) in the natural scaling
    u = euler.u_star
    b = core.lie_bracket(euler, 1, 3, u, normalization="natural")
    c = np.sqrt(2.0)
    expected = np.array([0.0, 2.0 / (2.0 * c) * 2.0, 0.0])   # 2 c_rho, rho=1
    assert np.allclose(b, expected, atol=1e-10)
    b_fd = core.lie_bracket(euler, 1, 3, u, normalization="natural", method="fd")
    assert np.allclose(b_fd, expected, atol=1e-5)


def test_lie_bracket_antisymmetry(euler):
    rng = np.random.default_rng(3)
    for u in euler.domain.sample(rng, 5, margin_frac=0.2):
        b13 = core.lie_bracket(euler, 1, 3, u)
        b31 = core.lie_bracket(euler, 3, 1, u)
        scale = max(np.max(np.abs(b13)), 1e-30)
        assert np.max(np.abs(b13 + b31)) / scale < 1e-9


def test_lie_bracket_sonic_family_forbidden(euler):
    with pytest.raises(SonicFamilyForbidden):
        core.lie_bracket(euler, 1, 2, euler.u_star)


def test_grad_lambda_diagonal_zero():
    sysdef = diagonal_system()
    g = core.grad_lambda(sysdef, 1, np.zeros(2), method="fd")
    assert np.max(np.abs(g)) < 1e-9


def test_grad_lambda_isentropic_sonic(isentropic2):
    # grad lambda_1 = (-p''/(2 sqrt(p')), 1); gamma=2, K=1/2, rho*=1 -> (-1/2, 1)
    g = core.grad_lambda(isentropic2, 1, isentropic2.u_star)
    assert np.allclose(g, [-0.5, 1.0], atol=1e-12)
    g_fd = core.grad_lambda(isentropic2, 1, isentropic2.u_star, method="fd")
    assert np.allclose(g_fd, [-0.5, 1.0], atol=1e-6)


def test_grad_lambda_traffic_power_law(ar):
    # grad lambda_1 = (-p' - rho p'', 1) with p = rho^2
    u = np.array([1.2, 2.0])
    g = core.grad_lambda(ar, 1, u)
    expected = np.array([-2.0 * 1.2 - 1.2 * 2.0, 1.0])
    assert np.allclose(g, expected, atol=1e-12)


def _orientation_aligned(a, b):
    signs = np.sign(np.sum(a * b, axis=0))
    signs[signs == 0] = 1.0
    return b * signs


@pytest.mark.parametrize("name", ["saint_venant", "isentropic", "euler", "ar"])
def test_duality_and_sign_invariants(bundled, name):
    sysdef = bundled[name]
    numeric = models.strip_analytic(sysdef)
    rng = np.random.default_rng(42)
    pts = sysdef.domain.sample(rng, 200)
    for u in pts:
        spec = core.eigendecompose(sysdef, u)
        assert np.max(np.abs(spec.left @ spec.right - np.eye(sysdef.n))) <= 1e-10
        assert np.all(np.diff(spec.lambdas) > 0)
        for j in range(1, sysdef.n + 1):
            if j < sysdef.m:
                assert spec.lambdas[j - 1] < 0
            elif j > sysdef.m:
                assert spec.lambdas[j - 1] > 0
        # eigen residuals in both diagonalizations
        a = sysdef.A(u)
        assert np.max(np.abs(a @ spec.right - spec.right * spec.lambdas)) < 1e-9
        assert np.max(np.abs(spec.left @ a - spec.lambdas[:, None] * spec.left)) < 1e-9
    for u in pts[:40]:
        spec_n = core.eigendecompose(numeric, u, method="numeric")
        assert np.max(np.abs(spec_n.left @ spec_n.right - np.eye(sysdef.n))) <= 1e-6
