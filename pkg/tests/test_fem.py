"""Tests for quadrature, P1 assembly, and the iterative solvers."""

import math

import numpy as np
import pytest
import scipy.sparse as sp

from pnphom.fem import (
    AssemblyError,
    ConvergenceFailure,
    P1Interpolator,
    SparseMatrix,
    assemble_interface_load,
    assemble_mass,
    assemble_stiffness,
    bicgstab_solve,
    cg_solve,
    edge_quadrature_points,
    map_triangle_quadrature,
    newton_solve,
    quadrature,
    tri_geometry,
)
from pnphom.geometry import UnitCellSpec, build_template_cell


def reference_triangle():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2]])
    return verts, tris


@pytest.fixture(scope="module")
def fluid_template():
    cell = build_template_cell(
        UnitCellSpec(n_interface_segments=32, target_edge_length=1.0 / 8))
    ids, tris, _ = _fluid_region(cell)
    return cell, ids, tris


def _fluid_region(cell):
    from pnphom.geometry import FLUID

    mask = cell.tri_phase == FLUID
    tris = cell.triangles[mask]
    ids = np.unique(tris)
    g2l = -np.ones(len(cell.vertices), dtype=np.int64)
    g2l[ids] = np.arange(len(ids))
    return ids, g2l[tris], g2l


# ---------------------------------------------------------------------------
# quadrature


def test_quadrature_weight_sums():
    assert quadrature("triangle-3pt").weights.sum() == pytest.approx(0.5, abs=1e-15)
    assert quadrature("triangle-7pt").weights.sum() == pytest.approx(0.5, abs=1e-15)
    for k in (2, 4, 8):
        assert quadrature("edge-gauss-%d" % k).weights.sum() == pytest.approx(
            1.0, abs=1e-15)


def test_quadrature_unknown_kind():
    with pytest.raises(AssemblyError):
        quadrature("triangle-9pt")
    with pytest.raises(AssemblyError):
        quadrature("edge-gauss-3")


def _ref_integral(a, b):
    # exact integral of x^a y^b over the reference triangle
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@pytest.mark.parametrize("kind,degree", [("triangle-3pt", 2), ("triangle-7pt", 5)])
def test_triangle_rule_polynomial_exactness(kind, degree):
    rule = quadrature(kind)
    x = rule.points[:, 0]
    y = rule.points[:, 1]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            approx = float((rule.weights * x ** a * y ** b).sum())
            assert approx == pytest.approx(_ref_integral(a, b), abs=1e-15)


@pytest.mark.parametrize("k,degree", [(2, 3), (4, 7), (8, 15)])
def test_edge_rule_polynomial_exactness(k, degree):
    rule = quadrature("edge-gauss-%d" % k)
    t = rule.points[:, 0]
    for a in range(degree + 1):
        approx = float((rule.weights * t ** a).sum())
        assert approx == pytest.approx(1.0 / (a + 1), rel=1e-14)


def test_mapped_quadrature_measures():
    verts, tris = reference_triangle()
    pts, wts = map_triangle_quadrature(verts, tris, quadrature("triangle-3pt"))
    assert wts.sum() == pytest.approx(0.5, abs=1e-15)
    areas, grads = tri_geometry(verts, tris)
    assert areas[0] == pytest.approx(0.5, abs=1e-16)
    # hat gradients of the reference triangle
    assert np.allclose(grads[0], [[-1, -1], [1, 0], [0, 1]])


# ---------------------------------------------------------------------------
# stiffness


def test_stiffness_reference_triangle():
    verts, tris = reference_triangle()
    A = assemble_stiffness(verts, tris)
    expected = 0.5 * np.array([[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
    assert np.allclose(A.csr.toarray(), expected, atol=1e-15)
    assert np.allclose(A.row_sums(), 0.0, atol=1e-15)


def test_stiffness_kernel_contains_constants(fluid_template):
    cell, ids, tris = fluid_template
    A = assemble_stiffness(cell.vertices[ids], tris)
    ones = np.ones(len(ids))
    assert np.abs(A.matvec(ones)).max() <= 1e-12


def test_stiffness_energy_of_linear_field():
    # u = x1 on the unit square: u^T A u = int |grad u|^2 = 1
    cell = build_template_cell(
        UnitCellSpec(inclusion_radius=0.0, target_edge_length=1.0 / 8))
    A = assemble_stiffness(cell.vertices, cell.triangles)
    u = cell.vertices[:, 0].copy()
    assert u.dot(A.matvec(u)) == pytest.approx(1.0, abs=1e-10)


def test_stiffness_tensor_coefficient():
    cell = build_template_cell(
        UnitCellSpec(inclusion_radius=0.0, target_edge_length=1.0 / 8))
    tensor = np.array([[2.0, 0.0], [0.0, 1.0]])
    A = assemble_stiffness(cell.vertices, cell.triangles, coefficient=tensor)
    u = cell.vertices[:, 0].copy()
    v = cell.vertices[:, 1].copy()
    assert u.dot(A.matvec(u)) == pytest.approx(2.0, abs=1e-10)
    assert v.dot(A.matvec(v)) == pytest.approx(1.0, abs=1e-10)


def test_stiffness_varying_coefficient_exact():
    # a(x) = 1 + x1, u = x1: energy = int_0^1 (1 + x1) dx1 = 1.5
    cell = build_template_cell(
        UnitCellSpec(inclusion_radius=0.0, target_edge_length=1.0 / 8))

    def coef(p):
        return 1.0 + p[:, 0]

    A = assemble_stiffness(cell.vertices, cell.triangles, coefficient=coef)
    u = cell.vertices[:, 0].copy()
    assert u.dot(A.matvec(u)) == pytest.approx(1.5, abs=1e-12)
    assert np.abs(A.matvec(np.ones(len(cell.vertices)))).max() <= 1e-12


def test_stiffness_degenerate_triangle():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    tris = np.array([[0, 1, 2]])
    with pytest.raises(AssemblyError):
        assemble_stiffness(verts, tris)


def test_stiffness_empty_region():
    verts, _ = reference_triangle()
    with pytest.raises(AssemblyError):
        assemble_stiffness(verts, np.zeros((0, 3), dtype=np.int64))


# ---------------------------------------------------------------------------
# mass


def test_mass_total_is_area(fluid_template):
    cell, ids, tris = fluid_template
    M = assemble_mass(cell.vertices[ids], tris)
    assert M.total() == pytest.approx(cell.fluid_area, abs=1e-12)
    Ml = assemble_mass(cell.vertices[ids], tris, lumped=True)
    assert Ml.total() == pytest.approx(cell.fluid_area, abs=1e-12)
    d = Ml.diagonal()
    assert d.min() > 0.0
    # lumping preserves row sums
    assert np.allclose(M.row_sums(), Ml.row_sums(), atol=1e-14)


def test_mass_weighted():
    cell = build_template_cell(
        UnitCellSpec(inclusion_radius=0.0, target_edge_length=1.0 / 8))

    def coef(p):
        return p[:, 0]

    M = assemble_mass(cell.vertices, cell.triangles, coefficient=coef)
    assert M.total() == pytest.approx(0.5, abs=1e-12)
    # quadratic form: int x1^3 over the square is 1/4 but x1^2 is not in the
    # P1 space; use 1^T M u with u = x1 -> int x1 * x1 = 1/3 exactly since
    # the integrand is quadratic and the default rule has degree 2
    u = cell.vertices[:, 0].copy()
    assert np.ones(len(u)).dot(M.matvec(u)) == pytest.approx(1.0 / 3.0, abs=1e-12)


# ---------------------------------------------------------------------------
# interface load


def test_interface_load_total_length(fluid_template):
    cell, _, _ = fluid_template
    b = assemble_interface_load(cell.vertices, cell.interface_edges)
    assert b.sum() == pytest.approx(cell.interface_length, abs=1e-12)
    b5 = assemble_interface_load(cell.vertices, cell.interface_edges, density=5.0)
    assert b5.sum() == pytest.approx(5.0 * cell.interface_length, abs=1e-12)


def test_interface_load_linear_density_exact(fluid_template):
    cell, _, _ = fluid_template

    def density(p):
        return p[:, 0]

    b = assemble_interface_load(cell.vertices, cell.interface_edges, density=density)
    # by symmetry the centroid of the polygon boundary is the center
    assert b.sum() == pytest.approx(0.5 * cell.interface_length, abs=1e-12)


def test_interface_load_zero_length_edge():
    verts = np.array([[0.0, 0.0], [0.0, 0.0]])
    edges = np.array([[0, 1]])
    with pytest.raises(AssemblyError):
        assemble_interface_load(verts, edges)


def test_edge_quadrature_points(fluid_template):
    cell, _, _ = fluid_template
    pts, wts = edge_quadrature_points(cell.vertices, cell.interface_edges)
    assert wts.sum() == pytest.approx(cell.interface_length, abs=1e-12)
    # all quadrature points lie near the inscribed circle
    r = np.linalg.norm(pts.reshape(-1, 2) - 0.5, axis=1)
    assert np.all(r <= 0.25 + 1e-12)
    assert np.all(r >= 0.25 * math.cos(math.pi / 32) - 1e-12)


# ---------------------------------------------------------------------------
# sparse matrix wrapper


def test_sparse_matrix_symmetry_check():
    bad = sp.csr_matrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(AssemblyError):
        SparseMatrix(bad, symmetric=True)
    ok = SparseMatrix(bad, symmetric=False)
    assert ok.shape == (2, 2)


def test_sparse_matrix_dump(tmp_path):
    A = SparseMatrix(sp.csr_matrix(np.array([[1.5, 0.0], [0.25, 2.0]])))
    path = tmp_path / "mat.txt"
    A.dump(path)
    rows = [line.split() for line in open(path)]
    assert ["0", "0", "1.5"] in rows
    assert len(rows) == 3  # explicit zero dropped


# ---------------------------------------------------------------------------
# solvers


def test_cg_identity():
    A = SparseMatrix(sp.identity(5, format="csr"))
    b = np.arange(5.0)
    res = cg_solve(A, b, tol=1e-14)
    assert res.converged
    assert res.iterations <= 1
    assert np.allclose(res.x, b, atol=1e-14)


def test_cg_tridiagonal_vs_dense():
    n = 100
    main = 2.0 * np.ones(n)
    off = -1.0 * np.ones(n - 1)
    A = sp.diags([off, main, off], [-1, 0, 1], format="csr")
    b = np.ones(n)
    x_ref = np.linalg.solve(A.toarray(), b)
    res = cg_solve(SparseMatrix(A, symmetric=True), b, tol=1e-12)
    assert np.linalg.norm(res.x - x_ref) <= 1e-8
    res_j = cg_solve(SparseMatrix(A, symmetric=True), b, tol=1e-12, jacobi=True)
    assert np.linalg.norm(res_j.x - x_ref) <= 1e-8


def test_cg_singular_incompatible():
    # Neumann-type singular matrix with incompatible rhs
    A = sp.csr_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    b = np.array([1.0, 1.0])  # not mean-zero
    with pytest.raises(ConvergenceFailure) as err:
        cg_solve(SparseMatrix(A), b, tol=1e-12, max_iter=50)
    assert err.value.residual > 0.0
    res = cg_solve(SparseMatrix(A), b, tol=1e-12, max_iter=50, raise_on_fail=False)
    assert not res.converged


def test_cg_deflated_neumann(fluid_template):
    cell, ids, tris = fluid_template
    A = assemble_stiffness(cell.vertices[ids], tris)
    rng = np.random.default_rng(3)
    b = rng.normal(size=A.shape[0])
    b -= b.mean()
    res = cg_solve(A, b, tol=1e-11, deflate=True, jacobi=True)
    assert res.converged
    assert abs(res.x.mean()) <= 1e-12
    r = b - A.matvec(res.x)
    assert np.linalg.norm(r) / np.linalg.norm(b) <= 1e-10


def test_cg_determinism(fluid_template):
    cell, ids, tris = fluid_template
    A = assemble_stiffness(cell.vertices[ids], tris)
    b = np.sin(np.arange(A.shape[0]) * 0.1)
    b -= b.mean()
    r1 = cg_solve(A, b, tol=1e-11, deflate=True)
    r2 = cg_solve(A, b, tol=1e-11, deflate=True)
    assert np.array_equal(r1.x, r2.x)
    assert r1.iterations == r2.iterations


def test_bicgstab_nonsymmetric():
    rng = np.random.default_rng(0)
    n = 60
    A = np.eye(n) * 4.0 + 0.5 * rng.normal(size=(n, n)) / math.sqrt(n)
    b = rng.normal(size=n)
    x_ref = np.linalg.solve(A, b)
    res = bicgstab_solve(SparseMatrix(sp.csr_matrix(A)), b, tol=1e-12)
    assert np.linalg.norm(res.x - x_ref) <= 1e-8
    res_j = bicgstab_solve(SparseMatrix(sp.csr_matrix(A)), b, tol=1e-12, jacobi=True)
    assert np.linalg.norm(res_j.x - x_ref) <= 1e-8


def test_bicgstab_failure():
    A = sp.csr_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    with pytest.raises(ConvergenceFailure):
        bicgstab_solve(SparseMatrix(A), np.array([1.0, 1.0]), max_iter=20)


def test_newton_saturated_system():
    # F(x) = A x + 0.3 tanh(x) - b, solved to 1e-10
    rng = np.random.default_rng(2)
    n = 20
    Ad = np.eye(n) * 2.0 + 0.1 * rng.normal(size=(n, n))
    Ad = 0.5 * (Ad + Ad.T)
    A = sp.csr_matrix(Ad)
    b = rng.normal(size=n)

    def residual(x):
        return A.dot(x) + 0.3 * np.tanh(x) - b

    def solve_lin(x, f):
        J = Ad + np.diag(0.3 / np.cosh(x) ** 2)
        return np.linalg.solve(J, f)

    res = newton_solve(residual, solve_lin, np.zeros(n))
    assert res.converged
    assert np.linalg.norm(residual(res.x)) <= 1e-9
    assert res.iterations <= 10


def test_newton_failure_reported():
    def residual(x):
        return np.array([x[0] ** 2 + 1.0])  # no real root

    def solve_lin(x, f):
        return f / max(2.0 * x[0], 0.1)

    with pytest.raises(ConvergenceFailure):
        newton_solve(residual, solve_lin, np.array([1.0]), max_iter=10)


# ---------------------------------------------------------------------------
# interpolation


def test_p1_interpolator_linear_exact():
    cell = build_template_cell(
        UnitCellSpec(inclusion_radius=0.0, target_edge_length=1.0 / 8))
    values = 2.0 * cell.vertices[:, 0] - 3.0 * cell.vertices[:, 1] + 0.25
    interp = P1Interpolator(cell.vertices, cell.triangles)
    rng = np.random.default_rng(4)
    pts = rng.random((200, 2))
    got = interp(values, pts)
    want = 2.0 * pts[:, 0] - 3.0 * pts[:, 1] + 0.25
    assert np.allclose(got, want, atol=1e-12)
