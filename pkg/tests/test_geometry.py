"""Tests for the unit-cell mesher and periodic tiling."""

import io
import math

import numpy as np
import pytest

from pnphom.geometry import (
    FLUID,
    SOLID,
    DomainError,
    MeshConstructionError,
    PerforatedMesh,
    UnitCellSpec,
    build_template_cell,
    dump_mesh,
    fluid_components,
    load_mesh,
    locate_phase,
    tile_domain,
)


@pytest.fixture(scope="module")
def default_cell():
    return build_template_cell(UnitCellSpec())


@pytest.fixture(scope="module")
def coarse_cell():
    spec = UnitCellSpec(n_interface_segments=32, target_edge_length=1.0 / 8)
    return build_template_cell(spec)


def test_polygon_area_formula():
    spec = UnitCellSpec(inclusion_radius=0.25, n_interface_segments=64)
    expected = 0.5 * 64 * 0.25 ** 2 * math.sin(2.0 * math.pi / 64)
    assert spec.polygon_area() == pytest.approx(expected, abs=1e-15)
    # close to the disc it approximates
    assert abs(spec.polygon_area() - math.pi * 0.0625) < 1e-3


def test_polygon_perimeter_formula():
    spec = UnitCellSpec(inclusion_radius=0.25, n_interface_segments=64)
    expected = 2 * 64 * 0.25 * math.sin(math.pi / 64)
    assert spec.polygon_perimeter() == pytest.approx(expected, abs=1e-15)
    assert abs(spec.polygon_perimeter() - 2.0 * math.pi * 0.25) < 2e-3


def test_template_areas_exact(default_cell):
    cell = default_cell
    spec = cell.spec
    assert cell.solid_area == pytest.approx(spec.polygon_area(), abs=1e-12)
    assert cell.fluid_area + cell.solid_area == pytest.approx(1.0, abs=1e-12)
    assert cell.porosity == pytest.approx(1.0 - spec.polygon_area(), abs=1e-12)


def test_template_interface_length_exact(default_cell):
    cell = default_cell
    assert cell.interface_length == pytest.approx(
        cell.spec.polygon_perimeter(), abs=1e-12
    )


def test_template_min_angle(default_cell):
    p = default_cell.vertices
    t = default_cell.triangles
    v0, v1, v2 = p[t[:, 0]], p[t[:, 1]], p[t[:, 2]]
    min_angle = math.inf
    for a, b, c in ((v0, v1, v2), (v1, v2, v0), (v2, v0, v1)):
        u = b - a
        w = c - a
        cosang = np.sum(u * w, axis=1) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1)
        )
        ang = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
        min_angle = min(min_angle, ang.min())
    assert min_angle >= 15.0


def test_template_orientation(default_cell):
    p = default_cell.vertices
    t = default_cell.triangles
    d1 = p[t[:, 1]] - p[t[:, 0]]
    d2 = p[t[:, 2]] - p[t[:, 0]]
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    assert np.all(cross > 0.0)


def test_interface_edges_separate_phases(default_cell):
    cell = default_cell
    # each interface edge adjoins one fluid and one solid triangle
    edge_map = {}
    for ti, tri in enumerate(cell.triangles):
        for k in range(3):
            key = tuple(sorted((tri[k], tri[(k + 1) % 3])))
            edge_map.setdefault(key, []).append(ti)
    for e in cell.interface_edges:
        owners = edge_map[tuple(sorted(e))]
        phases = {cell.tri_phase[ti] for ti in owners}
        assert phases == {FLUID, SOLID}


def test_periodic_pairing(default_cell):
    cell = default_cell
    pairs = cell.periodic_pairs()
    n_side = len(cell.side_vertices["left"]) - 1
    assert len(pairs["x"]) == n_side + 1
    assert len(pairs["y"]) == n_side + 1
    p = cell.vertices
    for a, b in pairs["x"]:
        assert p[a, 0] == 0.0 and p[b, 0] == 1.0
        assert p[a, 1] == p[b, 1]
    for a, b in pairs["y"]:
        assert p[a, 1] == 0.0 and p[b, 1] == 1.0
        assert p[a, 0] == p[b, 0]


def test_square_cell_all_fluid():
    spec = UnitCellSpec(inclusion_radius=0.0, target_edge_length=1.0 / 8)
    cell = build_template_cell(spec)
    assert cell.solid_area == 0.0
    assert cell.fluid_area == pytest.approx(1.0, abs=1e-12)
    assert len(cell.interface_edges) == 0
    assert np.all(cell.tri_phase == FLUID)


def test_tiling_counts(coarse_cell):
    mesh = tile_domain(coarse_cell, 2)
    assert isinstance(mesh, PerforatedMesh)
    assert mesh.n == 2
    assert mesh.epsilon == 0.5
    assert len(mesh.triangles) == 4 * len(coarse_cell.triangles)
    assert len(mesh.interface_edges) == 4 * len(coarse_cell.interface_edges)
    # inclusions = number of cells
    lengths = np.linalg.norm(
        mesh.vertices[mesh.interface_edges[:, 1]]
        - mesh.vertices[mesh.interface_edges[:, 0]],
        axis=1,
    )
    assert lengths.sum() == pytest.approx(
        2 * coarse_cell.interface_length, rel=1e-12
    )


@pytest.mark.parametrize("n", [1, 2, 4])
def test_tiling_area_and_interface(coarse_cell, n):
    mesh = tile_domain(coarse_cell, n)
    p = mesh.vertices
    t = mesh.triangles
    d1 = p[t[:, 1]] - p[t[:, 0]]
    d2 = p[t[:, 2]] - p[t[:, 0]]
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    assert np.all(areas > 0.0)
    assert math.fsum(areas) == pytest.approx(1.0, abs=1e-11)
    fluid_area = math.fsum(areas[mesh.tri_phase == FLUID])
    assert fluid_area == pytest.approx(coarse_cell.porosity, abs=1e-11)
    # interface length scales like 1/eps * template length ... n cells of
    # perimeter (template length / n) each
    ie = mesh.interface_edges
    L = np.sum(np.linalg.norm(p[ie[:, 1]] - p[ie[:, 0]], axis=1))
    assert L == pytest.approx(n * coarse_cell.interface_length, rel=1e-12)


def test_tiling_boundary_classes(coarse_cell):
    mesh = tile_domain(coarse_cell, 2)
    assert set(np.unique(mesh.boundary_edge_class)) <= {0, 1}
    p = mesh.vertices
    for e, cls in zip(mesh.boundary_edges, mesh.boundary_edge_class):
        x0, x1 = p[e[0]], p[e[1]]
        on_bnd = (
            (x0[0] == x1[0] and x0[0] in (0.0, 1.0))
            or (x0[1] == x1[1] and x0[1] in (0.0, 1.0))
        )
        assert on_bnd
        assert cls == 0  # all exterior edges adjoin fluid for this geometry


def test_locate_phase_examples(coarse_cell):
    mesh = tile_domain(coarse_cell, 2)
    eps = mesh.epsilon
    # center of each cell is inside the inclusion
    for a in range(2):
        for b in range(2):
            x = (eps * (a + 0.5), eps * (b + 0.5))
            assert locate_phase(mesh, x) == "solid"
    # cell corners are fluid
    assert locate_phase(mesh, (0.01 * eps, 0.01 * eps)) == "fluid"
    assert locate_phase(mesh, (0.5, 0.5)) == "fluid"
    with pytest.raises(DomainError):
        locate_phase(mesh, (1.5, 0.5))
    with pytest.raises(DomainError):
        locate_phase(mesh, (-0.2, 0.2))


def test_locate_phase_volume_fraction(coarse_cell):
    mesh = tile_domain(coarse_cell, 2)
    rng = np.random.default_rng(7)
    pts = rng.random((10000, 2))
    hits = sum(1 for x in pts if locate_phase(mesh, x) == "fluid")
    frac = hits / len(pts)
    theta = coarse_cell.porosity
    stderr = math.sqrt(theta * (1 - theta) / len(pts))
    assert abs(frac - theta) <= 3.0 * stderr


def test_fluid_submesh(coarse_cell):
    mesh = tile_domain(coarse_cell, 2)
    fluid_ids, fluid_tris, g2l = mesh.fluid_submesh()
    assert len(fluid_tris) == np.sum(mesh.tri_phase == FLUID)
    # submesh references every listed vertex
    assert set(np.unique(fluid_tris)) == set(range(len(fluid_ids)))
    # round trip local -> global
    assert np.all(g2l[fluid_ids] == np.arange(len(fluid_ids)))
    ncomp = fluid_components(mesh)
    assert ncomp == 1


def test_dump_load_round_trip(coarse_cell, tmp_path):
    mesh = tile_domain(coarse_cell, 2)
    path = tmp_path / "mesh.txt"
    dump_mesh(mesh, path)
    loaded = load_mesh(path)
    assert np.array_equal(loaded.vertices, mesh.vertices)
    assert np.array_equal(loaded.triangles, mesh.triangles)
    assert np.array_equal(loaded.tri_phase, mesh.tri_phase)
    assert np.array_equal(loaded.interface_edges, mesh.interface_edges)
    assert np.array_equal(loaded.boundary_edges, mesh.boundary_edges)
    assert np.array_equal(loaded.boundary_edge_class, mesh.boundary_edge_class)


def test_dump_format(coarse_cell, tmp_path):
    mesh = tile_domain(coarse_cell, 1)
    path = tmp_path / "mesh.txt"
    dump_mesh(mesh, path)
    kinds = {"v": 0, "t": 0, "ei": 0, "eb": 0}
    with open(path) as fh:
        for line in fh:
            tok = line.split()
            assert tok[0] in kinds
            kinds[tok[0]] += 1
            if tok[0] == "v":
                float(tok[1]), float(tok[2])
            elif tok[0] == "t":
                assert tok[4] in ("fluid", "solid")
            elif tok[0] == "eb":
                assert tok[3] in ("fext", "sext")
    assert kinds["v"] == len(mesh.vertices)
    assert kinds["t"] == len(mesh.triangles)
    assert kinds["ei"] == len(mesh.interface_edges)
    assert kinds["eb"] == len(mesh.boundary_edges)


def test_invalid_specs():
    with pytest.raises(DomainError):
        UnitCellSpec(inclusion_radius=0.55).validate()
    with pytest.raises(DomainError):
        UnitCellSpec(inclusion_radius=-0.1).validate()
    with pytest.raises(DomainError):
        UnitCellSpec(inclusion_radius=0.49, target_edge_length=1.0 / 32).validate()
    with pytest.raises(DomainError):
        UnitCellSpec(n_interface_segments=10).validate()
    with pytest.raises(DomainError):
        UnitCellSpec(n_interface_segments=33).validate()
    with pytest.raises(DomainError):
        UnitCellSpec(target_edge_length=0.3).validate()


def test_tile_domain_bad_n(coarse_cell):
    with pytest.raises(DomainError):
        tile_domain(coarse_cell, 0)
    with pytest.raises(DomainError):
        tile_domain(coarse_cell, -3)


@pytest.mark.parametrize("radius", [0.1, 0.2, 0.3, 0.4])
def test_radius_sweep_builds(radius):
    spec = UnitCellSpec(
        inclusion_radius=radius,
        n_interface_segments=32,
        target_edge_length=1.0 / 16,
    )
    cell = build_template_cell(spec)
    assert cell.solid_area == pytest.approx(spec.polygon_area(), abs=1e-12)
    assert cell.fluid_area + cell.solid_area == pytest.approx(1.0, abs=1e-12)


def test_d4_symmetry_of_template(default_cell):
    """The vertex set maps to itself under the symmetries of the square."""
    from scipy.spatial import cKDTree

    p = default_cell.vertices
    tree = cKDTree(p)
    images = {
        "diagonal": p[:, ::-1],
        "xflip": np.column_stack([1.0 - p[:, 0], p[:, 1]]),
        "yflip": np.column_stack([p[:, 0], 1.0 - p[:, 1]]),
        "rot90": np.column_stack([1.0 - p[:, 1], p[:, 0]]),
    }
    for name, q in images.items():
        d, _ = tree.query(q)
        assert d.max() < 1e-12, "vertex set not symmetric under %s" % name
