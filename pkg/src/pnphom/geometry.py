"""Periodic unit-cell meshing and its scaled tiling over the unit square.

The unit cell Y = [0,1]^2 carries a polygonal solid inclusion (an inscribed
regular polygon of a disk) centered in the cell; the complement is the fluid
phase.  The cell is triangulated once and then tiled n x n to produce the
perforated domain at scale eps = 1/n, with exact vertex stitching across cell
faces (shared coordinates are computed by a single owner formula, never by
coordinate hashing).

The fluid annulus between the polygon and the square boundary is meshed with
four transfinite patches (one per square side); the solid disk with
concentric rings whose vertex counts halve toward the center, closed by a
fan.  Diagonals alternate in a union-jack pattern and ring counts stay
multiples of 8, which keeps the whole construction equivariant under the
symmetry group of the square; the discrete effective tensors inherit
isotropy from that.
"""

import logging
import math

import numpy as np

logger = logging.getLogger(__name__)

FLUID = 0
SOLID = 1

PHASE_NAMES = {FLUID: "fluid", SOLID: "solid"}
PHASE_CODES = {"fluid": FLUID, "solid": SOLID}

MIN_ANGLE_DEG = 15.0
_AREA_TOL = 1e-14


class MeshConstructionError(Exception):
    """Raised when mesh construction violates a geometric invariant."""


class DomainError(ValueError):
    """Raised when a query point lies outside the macro domain."""


class UnitCellSpec:
    """Parameters of the periodic unit cell.

    Parameters
    ----------
    inclusion_radius : float
        Radius r of the disk inscribed by the solid polygon, 0 <= r < 0.5.
        r = 0 means no inclusion (pure fluid cell).
    inclusion_center : pair of float
        Center of the inclusion, default (0.5, 0.5).
    n_interface_segments : int
        Number of edges of the polygonal interface; even, >= 16.
    target_edge_length : float
        Requested mesh size h of the template triangulation.
    """

    def __init__(self, inclusion_radius=0.25, inclusion_center=(0.5, 0.5),
                 n_interface_segments=64, target_edge_length=1.0 / 32.0):
        self.inclusion_radius = float(inclusion_radius)
        self.inclusion_center = (float(inclusion_center[0]), float(inclusion_center[1]))
        self.n_interface_segments = int(n_interface_segments)
        self.target_edge_length = float(target_edge_length)
        self.validate()

    def validate(self):
        r = self.inclusion_radius
        h = self.target_edge_length
        cx, cy = self.inclusion_center
        if not 0.0 <= r < 0.5:
            raise DomainError("inclusion_radius must lie in [0, 0.5), got %g" % r)
        if h <= 0 or h > 0.25:
            raise DomainError("target_edge_length must lie in (0, 0.25], got %g" % h)
        if r > 0:
            margin = min(cx, cy, 1.0 - cx, 1.0 - cy)
            if r + h >= margin:
                raise DomainError(
                    "inclusion not strictly interior: r + h = %g >= %g" % (r + h, margin))
            n = self.n_interface_segments
            if n < 16 or n % 2 != 0:
                raise DomainError(
                    "n_interface_segments must be even and >= 16, got %d" % n)

    def polygon_area(self):
        """Exact area of the inscribed regular polygon."""
        if self.inclusion_radius == 0.0:
            return 0.0
        n = self.n_interface_segments
        return 0.5 * n * self.inclusion_radius ** 2 * math.sin(2.0 * math.pi / n)

    def polygon_perimeter(self):
        """Exact perimeter of the inscribed regular polygon."""
        if self.inclusion_radius == 0.0:
            return 0.0
        n = self.n_interface_segments
        return 2.0 * n * self.inclusion_radius * math.sin(math.pi / n)


class TemplateCell:
    """Triangulated unit cell with phase markers and periodic pairing.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array
    tri_phase : (nt,) int array of FLUID/SOLID markers
    interface_edges : (ne, 2) int array, edges on the polygon boundary
    boundary_edges : (nb, 2) int array, edges on the cell boundary
    boundary_edge_class : (nb,) int array (FLUID/SOLID of adjacent triangle)
    side_vertices : dict side -> int array of vertex ids ordered by the
        side coordinate; sides are 'left', 'right', 'bottom', 'top'.  The
        arrays define the periodic pairing left<->right and bottom<->top
        slot by slot.
    """

    def __init__(self, spec, vertices, triangles, tri_phase, interface_edges,
                 boundary_edges, boundary_edge_class, side_vertices):
        self.spec = spec
        self.vertices = vertices
        self.triangles = triangles
        self.tri_phase = tri_phase
        self.interface_edges = interface_edges
        self.boundary_edges = boundary_edges
        self.boundary_edge_class = boundary_edge_class
        self.side_vertices = side_vertices
        self._locator = None

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def triangle_areas(self):
        v = self.vertices
        t = self.triangles
        d1 = v[t[:, 1]] - v[t[:, 0]]
        d2 = v[t[:, 2]] - v[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def fluid_area(self):
        areas = self.triangle_areas()
        return float(np.sum(areas[self.tri_phase == FLUID]))

    @property
    def solid_area(self):
        areas = self.triangle_areas()
        return float(np.sum(areas[self.tri_phase == SOLID]))

    @property
    def porosity(self):
        return self.fluid_area

    @property
    def interface_length(self):
        if self.interface_edges.shape[0] == 0:
            return 0.0
        v = self.vertices
        e = self.interface_edges
        return float(np.sum(np.hypot(*(v[e[:, 1]] - v[e[:, 0]]).T)))

    def periodic_pairs(self):
        """Vertex index pairs (master, slave) keyed by pairing direction.

        ``pairs["x"]`` matches the left side to the right side and
        ``pairs["y"]`` matches the bottom side to the top side.
        """
        lr = np.column_stack([self.side_vertices["left"], self.side_vertices["right"]])
        bt = np.column_stack([self.side_vertices["bottom"], self.side_vertices["top"]])
        return {"x": lr, "y": bt}

    def locator(self):
        if self._locator is None:
            self._locator = _TriangleLocator(self.vertices, self.triangles)
        return self._locator


class PerforatedMesh:
    """The template cell tiled n x n over the unit square, eps = 1/n.

    Vertex coordinates of shared cell-face vertices are produced by a single
    owner formula, so the tiling is exact: no tolerance-based stitching.
    """

    def __init__(self, template, n, vertices, triangles, tri_phase,
                 interface_edges, boundary_edges, boundary_edge_class,
                 cell_index, cell_vertex_maps):
        self.template = template
        self.n = int(n)
        self.epsilon = 1.0 / float(n)
        self.vertices = vertices
        self.triangles = triangles
        self.tri_phase = tri_phase
        self.interface_edges = interface_edges
        self.boundary_edges = boundary_edges
        self.boundary_edge_class = boundary_edge_class
        self.cell_index = cell_index
        # (n*n, nv_template) int array: template vertex -> global vertex per cell
        self.cell_vertex_maps = cell_vertex_maps
        self._fluid_cache = None

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def triangle_areas(self):
        v = self.vertices
        t = self.triangles
        d1 = v[t[:, 1]] - v[t[:, 0]]
        d2 = v[t[:, 2]] - v[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def fluid_area(self):
        areas = self.triangle_areas()
        return float(np.sum(areas[self.tri_phase == FLUID]))

    @property
    def interface_length(self):
        if self.interface_edges.shape[0] == 0:
            return 0.0
        v = self.vertices
        e = self.interface_edges
        return float(np.sum(np.hypot(*(v[e[:, 1]] - v[e[:, 0]]).T)))

    def fluid_submesh(self):
        """Restrict to fluid triangles.

        Returns
        -------
        fluid_vertex_ids : int array, global ids of vertices used by fluid
            triangles (sorted ascending).
        fluid_triangles : (ntf, 3) int array in local (submesh) numbering.
        global_to_local : int array of length n_vertices, -1 off the fluid.
        """
        if self._fluid_cache is None:
            mask = self.tri_phase == FLUID
            tris = self.triangles[mask]
            ids = np.unique(tris)
            g2l = np.full(self.n_vertices, -1, dtype=np.int64)
            g2l[ids] = np.arange(ids.shape[0])
            self._fluid_cache = (ids, g2l[tris], g2l)
        return self._fluid_cache


def build_template_cell(spec):
    """Build the triangulated unit cell for a :class:`UnitCellSpec`.

    Returns a validated :class:`TemplateCell`.  Raises
    :class:`MeshConstructionError` when the construction produces degenerate
    or low-quality triangles.
    """
    if spec.inclusion_radius == 0.0:
        cell = _build_square_cell(spec)
    else:
        cell = _build_perforated_cell(spec)
    _validate_template(cell)
    logger.info("template cell: %d vertices, %d triangles, porosity %.6f",
                cell.n_vertices, cell.n_triangles, cell.porosity)
    return cell


def _grid_counts(spec):
    """Side subdivision count and angular loop count, tied together.

    The loop around the annulus uses m = n_interface_segments * sub points
    (each polygon segment subdivided into `sub` colinear mesh edges), and the
    square boundary uses m/4 intervals per side, so the transfinite patches
    are logically rectangular.  m is forced to a multiple of 8 to keep the
    union-jack pattern equivariant under quarter turns.
    """
    nseg = spec.n_interface_segments
    target_side = max(4, int(round(1.0 / spec.target_edge_length)))
    sub = max(1, int(round(4.0 * target_side / nseg)))
    while (nseg * sub) % 8 != 0:
        sub += 1
    m = nseg * sub
    return m // 4, sub, m


def _build_square_cell(spec):
    """Uniform union-jack grid for the r = 0 (no inclusion) case."""
    n = max(4, int(round(1.0 / spec.target_edge_length)))
    n += n % 2
    # vertex id (i, j) -> i*(n+1) + j, coordinates (i/n, j/n)
    i_idx = np.repeat(np.arange(n + 1), n + 1)
    j_idx = np.tile(np.arange(n + 1), n + 1)
    verts = np.column_stack([i_idx / float(n), j_idx / float(n)])

    def vid(i, j):
        return i * (n + 1) + j

    tris = []
    for j in range(n):
        for i in range(n):
            a = vid(i, j)
            b = vid(i + 1, j)
            c = vid(i + 1, j + 1)
            d = vid(i, j + 1)
            if (i + j) % 2 == 0:
                tris.append((a, b, c))
                tris.append((a, c, d))
            else:
                tris.append((b, c, d))
                tris.append((b, d, a))
    tris = np.array(tris, dtype=np.int64)
    phase = np.zeros(tris.shape[0], dtype=np.int64)

    side_vertices = {
        "left": np.array([vid(0, j) for j in range(n + 1)], dtype=np.int64),
        "right": np.array([vid(n, j) for j in range(n + 1)], dtype=np.int64),
        "bottom": np.array([vid(i, 0) for i in range(n + 1)], dtype=np.int64),
        "top": np.array([vid(i, n) for i in range(n + 1)], dtype=np.int64),
    }
    bedges = []
    for j in range(n):
        bedges.append((vid(0, j), vid(0, j + 1)))
        bedges.append((vid(n, j), vid(n, j + 1)))
    for i in range(n):
        bedges.append((vid(i, 0), vid(i + 1, 0)))
        bedges.append((vid(i, n), vid(i + 1, n)))
    bedges = np.array(bedges, dtype=np.int64)
    bclass = np.zeros(bedges.shape[0], dtype=np.int64)

    iface = np.zeros((0, 2), dtype=np.int64)
    return TemplateCell(spec, verts, tris, phase, iface, bedges, bclass, side_vertices)


def _polygon_loop(spec, m, sub):
    """Loop of m points along the polygonal interface, CCW from angle 0."""
    nseg = spec.n_interface_segments
    cx, cy = spec.inclusion_center
    r = spec.inclusion_radius
    ang = 2.0 * math.pi * np.arange(nseg) / nseg
    corners = np.column_stack([cx + r * np.cos(ang), cy + r * np.sin(ang)])
    pts = np.empty((m, 2))
    for q in range(nseg):
        p0 = corners[q]
        p1 = corners[(q + 1) % nseg]
        for s in range(sub):
            t = s / float(sub)
            pts[q * sub + s] = (1.0 - t) * p0 + t * p1
    return pts


def _boundary_loop(n_side, m):
    """Loop of m = 4*n_side points along the square boundary.

    Ordered CCW by angle seen from the cell center, starting at the middle of
    the right side so that loop index a corresponds to angle 2*pi*a/m.  All
    coordinates are of the exact form j/n_side.
    """
    pts = np.empty((m, 2))
    sides = np.empty(m, dtype=np.int64)   # 0 right, 1 top, 2 left, 3 bottom
    slots = np.empty(m, dtype=np.int64)   # coordinate index j along the side
    half = n_side // 2
    for a in range(m):
        # patch p covers loop indices [p*n_side - half, (p+1)*n_side - half)
        p = ((a + half) // n_side) % 4
        k = (a + half) % n_side  # offset from the patch's starting corner
        if p == 0:      # right side, from (1,0) to (1,1)
            j = k
            pts[a] = (1.0, j / float(n_side))
        elif p == 1:    # top side, from (1,1) to (0,1)
            j = n_side - k
            pts[a] = (j / float(n_side), 1.0)
        elif p == 2:    # left side, from (0,1) to (0,0)
            j = n_side - k
            pts[a] = (0.0, j / float(n_side))
        else:           # bottom side, from (0,0) to (1,0)
            j = k
            pts[a] = (j / float(n_side), 0.0)
        sides[a] = p
        slots[a] = j
    return pts, sides, slots


def _solid_rings(r, m, h):
    """Radii and vertex counts of the solid rings, outermost first."""
    rings = [(r, m)]
    cur_r, cur_m = r, m
    while True:
        spacing = 2.0 * math.pi * cur_r / cur_m
        step = min(h, 1.5 * spacing)
        nxt = cur_r - step
        if nxt <= 0.6 * step or (cur_m == 8 and cur_r <= 1.8 * h):
            break
        nm = cur_m
        if nm > 8 and 2.0 * math.pi * nxt / nm < 0.55 * h:
            nm //= 2
        rings.append((nxt, nm))
        cur_r, cur_m = nxt, nm
    return rings


def _quad_rows(tris, inner, outer, row_parity):
    """Union-jack triangulation between two loops of equal length.

    Quad corners in CCW order are (inner[a], outer[a], outer[b], inner[b]);
    the diagonal alternates with ``a`` so the pattern is symmetric under
    the dihedral symmetries of the loop.
    """
    m = len(inner)
    for a in range(m):
        b = (a + 1) % m
        va, vb = inner[a], outer[a]
        vc, vd = outer[b], inner[b]
        if (a + row_parity) % 2 == 0:
            tris.append((va, vb, vc))
            tris.append((va, vc, vd))
        else:
            tris.append((va, vb, vd))
            tris.append((vb, vc, vd))


def _triforce_row(tris, coarse, fine):
    """2:1 transition between a coarse inner loop and a fine outer loop."""
    mc = len(coarse)
    if len(fine) != 2 * mc:
        raise MeshConstructionError("triforce row needs a 2:1 count ratio")
    for j in range(mc):
        c0 = coarse[j]
        c1 = coarse[(j + 1) % mc]
        f0 = fine[2 * j]
        f1 = fine[2 * j + 1]
        f2 = fine[(2 * j + 2) % (2 * mc)]
        tris.append((c0, f0, f1))
        tris.append((c0, f1, c1))
        tris.append((c1, f1, f2))
    return tris


def _graded_fractions(span, w_in, w_out, h):
    """Radial row positions in [0, 1] for the polygon-to-boundary blend.

    The local radial step tracks min(1.25 h, 1.45 w(u)) where w(u) is the
    angular spacing interpolated between the polygon spacing ``w_in`` and
    the boundary spacing ``w_out``.  The same fractions are used on every
    spoke, which preserves the dihedral symmetry of the ring pattern.
    """
    u = np.linspace(0.0, 1.0, 4097)
    w = (1.0 - u) * w_in + u * w_out
    dens = 1.0 / np.minimum(1.25 * h, 1.45 * w)
    du = u[1] - u[0]
    cum = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) * 0.5 * du)])
    n_f = max(4, int(math.ceil(cum[-1] * span)))
    targets = np.linspace(0.0, cum[-1], n_f + 1)
    fr = np.interp(targets, cum, u)
    fr[0] = 0.0
    fr[-1] = 1.0
    return fr


def _build_perforated_cell(spec):
    n_side, sub, m = _grid_counts(spec)
    r = spec.inclusion_radius
    h = spec.target_edge_length
    cx, cy = spec.inclusion_center

    poly = _polygon_loop(spec, m, sub)
    bnd, bnd_sides, bnd_slots = _boundary_loop(n_side, m)

    verts = [np.array([[cx, cy]])]
    next_id = 1
    center_id = 0

    rings = _solid_rings(r, m, h)  # outermost (the polygon) first
    ring_ids = []
    cxy = np.array([cx, cy])
    for radius, count in reversed(rings[1:]):
        ang = 2.0 * math.pi * np.arange(count) / count
        pts = cxy + radius * np.column_stack([np.cos(ang), np.sin(ang)])
        verts.append(pts)
        ring_ids.append(np.arange(next_id, next_id + count))
        next_id += count
    poly_ids = np.arange(next_id, next_id + m)
    verts.append(poly)
    next_id += m
    ring_ids.append(poly_ids)

    solid_tris = []
    if len(ring_ids) >= 1:
        inner0 = ring_ids[0]
        for j in range(len(inner0)):
            solid_tris.append((center_id, inner0[j], inner0[(j + 1) % len(inner0)]))
    for k in range(len(ring_ids) - 1):
        inner, outer = ring_ids[k], ring_ids[k + 1]
        if len(outer) == len(inner):
            _quad_rows(solid_tris, inner, outer, row_parity=k % 2)
        else:
            _triforce_row(solid_tris, inner, outer)

    # fluid rings: radial blend polygon -> square boundary, all m points.
    # Row thickness is graded so quads keep a bounded aspect ratio: near
    # the polygon the angular spacing is the polygon spacing, near the
    # square boundary it is the (coarser) boundary spacing.
    corner_dist = math.hypot(max(cx, 1 - cx), max(cy, 1 - cy))
    span = corner_dist - r
    w_in = spec.polygon_perimeter() / m
    w_out = 4.0 / m
    fractions = _graded_fractions(span, w_in, w_out, h)
    n_f = len(fractions) - 1
    fluid_ring_ids = [poly_ids]
    for i in range(1, n_f):
        t = fractions[i]
        pts = poly + t * (bnd - poly)
        verts.append(pts)
        fluid_ring_ids.append(np.arange(next_id, next_id + m))
        next_id += m
    bnd_ids = np.arange(next_id, next_id + m)
    verts.append(bnd)
    next_id += m
    fluid_ring_ids.append(bnd_ids)

    fluid_tris = []
    for i in range(n_f):
        _quad_rows(fluid_tris, fluid_ring_ids[i], fluid_ring_ids[i + 1], row_parity=i % 2)

    vertices = np.vstack(verts)
    solid_tris = np.array(solid_tris, dtype=np.int64)
    fluid_tris = np.array(fluid_tris, dtype=np.int64)
    triangles = np.vstack([solid_tris, fluid_tris])
    tri_phase = np.concatenate([
        np.full(solid_tris.shape[0], SOLID, dtype=np.int64),
        np.full(fluid_tris.shape[0], FLUID, dtype=np.int64),
    ])

    iface = np.column_stack([poly_ids, np.roll(poly_ids, -1)])

    bedges = np.column_stack([bnd_ids, np.roll(bnd_ids, -1)])
    bclass = np.full(bedges.shape[0], FLUID, dtype=np.int64)

    # side tables ordered by coordinate; bnd vertex with side s, slot j
    side_vertices = {}
    for name, code in (("right", 0), ("top", 1), ("left", 2), ("bottom", 3)):
        ids = np.full(n_side + 1, -1, dtype=np.int64)
        for a in range(m):
            if bnd_sides[a] == code:
                ids[bnd_slots[a]] = bnd_ids[a]
        # the side's end slots are the square corners, each constructed once
        # under the side that owns it in the loop; fill from the coordinates
        for j in (0, n_side):
            if ids[j] < 0:
                target = {
                    "right": (1.0, j / float(n_side)),
                    "left": (0.0, j / float(n_side)),
                    "top": (j / float(n_side), 1.0),
                    "bottom": (j / float(n_side), 0.0),
                }[name]
                match = np.nonzero((vertices[bnd_ids][:, 0] == target[0])
                                   & (vertices[bnd_ids][:, 1] == target[1]))[0]
                if match.shape[0] != 1:
                    raise MeshConstructionError("corner vertex lookup failed on side %s" % name)
                ids[j] = bnd_ids[match[0]]
        side_vertices[name] = ids

    cell = TemplateCell(spec, vertices, triangles, tri_phase, iface,
                        bedges, bclass, side_vertices)
    return cell


def _tri_min_angles(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    a = np.linalg.norm(p1 - p2, axis=1)
    b = np.linalg.norm(p0 - p2, axis=1)
    c = np.linalg.norm(p0 - p1, axis=1)
    angles = np.empty((triangles.shape[0], 3))
    for i, (u, v, w) in enumerate(((a, b, c), (b, a, c), (c, a, b))):
        cosang = (v ** 2 + w ** 2 - u ** 2) / (2.0 * v * w)
        angles[:, i] = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return angles.min(axis=1)


def _validate_template(cell):
    areas = cell.triangle_areas()
    if np.any(areas <= _AREA_TOL):
        bad = int(np.argmax(areas <= _AREA_TOL))
        raise MeshConstructionError(
            "degenerate triangle %d (area %.3e) in %s region"
            % (bad, areas[bad], PHASE_NAMES[int(cell.tri_phase[bad])]))
    total = math.fsum(areas.tolist())
    if abs(total - 1.0) > 1e-12:
        raise MeshConstructionError("cell areas sum to %.17g, expected 1" % total)
    min_angle = _tri_min_angles(cell.vertices, cell.triangles)
    worst = int(np.argmin(min_angle))
    if min_angle[worst] < MIN_ANGLE_DEG:
        raise MeshConstructionError(
            "triangle %d in %s region has min angle %.2f deg < %.1f"
            % (worst, PHASE_NAMES[int(cell.tri_phase[worst])],
               min_angle[worst], MIN_ANGLE_DEG))
    # every interface edge must separate one fluid and one solid triangle
    if cell.interface_edges.shape[0] > 0:
        edge_map = {}
        for t_idx in range(cell.n_triangles):
            tri = cell.triangles[t_idx]
            for k in range(3):
                key = (min(tri[k], tri[(k + 1) % 3]), max(tri[k], tri[(k + 1) % 3]))
                edge_map.setdefault(key, []).append(int(cell.tri_phase[t_idx]))
        for e in cell.interface_edges:
            key = (min(e[0], e[1]), max(e[0], e[1]))
            phases = sorted(edge_map.get(key, []))
            if phases != [FLUID, SOLID]:
                raise MeshConstructionError(
                    "interface edge %s not shared by one fluid and one solid triangle" % (key,))
    for name_a, name_b in (("left", "right"), ("bottom", "top")):
        ids_a = cell.side_vertices[name_a]
        ids_b = cell.side_vertices[name_b]
        if ids_a.shape != ids_b.shape or np.unique(ids_a).shape != ids_a.shape:
            raise MeshConstructionError("periodic pairing %s<->%s is not a bijection"
                                        % (name_a, name_b))
        fixed = 0 if name_a == "left" else 1
        moving = 1 - fixed
        ca = cell.vertices[ids_a]
        cb = cell.vertices[ids_b]
        if (np.max(np.abs(ca[:, moving] - cb[:, moving])) > 1e-12
                or np.max(np.abs(ca[:, fixed])) > 1e-12
                or np.max(np.abs(cb[:, fixed] - 1.0)) > 1e-12):
            raise MeshConstructionError("periodic pairing %s<->%s mismatched coordinates"
                                        % (name_a, name_b))


def tile_domain(cell, n):
    """Tile the template cell n x n into the perforated unit square.

    Global vertex coordinates are produced as (cell_index + local)/n from the
    owner cell, so vertices shared between neighboring cells coincide
    bitwise.

    Parameters
    ----------
    cell : TemplateCell
    n : int
        Number of cells per direction; eps = 1/n.
    """
    n = int(n)
    if n < 1:
        raise DomainError("n must be >= 1")
    nv = cell.n_vertices
    left = cell.side_vertices["left"]
    right = cell.side_vertices["right"]
    bottom = cell.side_vertices["bottom"]
    top = cell.side_vertices["top"]
    n_side = left.shape[0] - 1

    # template vertex classification
    kind = np.zeros(nv, dtype=np.int64)       # 0 interior, 1 vface, 2 hface, 3 corner
    slot = np.full(nv, -1, dtype=np.int64)
    corner_pos = np.full((nv, 2), -1, dtype=np.int64)
    corners = {}
    for ids, side in ((left, "left"), (right, "right"), (bottom, "bottom"), (top, "top")):
        for j, v in enumerate(ids):
            if j in (0, n_side):
                corners.setdefault(int(v), set()).add(side)
    corner_of = {}
    for v, sides in corners.items():
        ci = 1 if "right" in sides else 0
        cj = 1 if "top" in sides else 0
        corner_of[v] = (ci, cj)
        kind[v] = 3
        corner_pos[v] = (ci, cj)
    for ids, k in ((left, 1), (right, 1), (bottom, 2), (top, 2)):
        for j, v in enumerate(ids):
            if kind[v] == 3:
                continue
            kind[v] = k
            slot[v] = j
    interior_ids = np.nonzero(kind == 0)[0]
    interior_slot = np.full(nv, -1, dtype=np.int64)
    interior_slot[interior_ids] = np.arange(interior_ids.shape[0])
    n_int = interior_ids.shape[0]
    n_fslot = n_side - 1  # interior slots per face

    # global id layout
    n_lattice = (n + 1) * (n + 1)
    n_vface = (n + 1) * n * n_fslot
    n_hface = n * (n + 1) * n_fslot

    def lattice_id(a, b):
        return a * (n + 1) + b

    def vface_id(a, b, j):
        return n_lattice + (a * n + b) * n_fslot + (j - 1)

    def hface_id(a, b, j):
        return n_lattice + n_vface + (b * n + a) * n_fslot + (j - 1)

    def interior_base(a, b):
        return n_lattice + n_vface + n_hface + (b * n + a) * n_int

    n_global = n_lattice + n_vface + n_hface + n * n * n_int
    gverts = np.empty((n_global, 2))
    inv_n = 1.0 / float(n)
    for a in range(n + 1):
        for b in range(n + 1):
            gverts[lattice_id(a, b)] = (a * inv_n, b * inv_n)
    # face and interior coordinates: owner formula (cell + local)/n
    lv = cell.vertices[left]
    bv = cell.vertices[bottom]
    for a in range(n + 1):
        for b in range(n):
            base = vface_id(a, b, 1)
            ys = (b + lv[1:n_side, 1]) * inv_n
            gverts[base:base + n_fslot, 0] = a * inv_n
            gverts[base:base + n_fslot, 1] = ys
    for b in range(n + 1):
        for a in range(n):
            base = hface_id(a, b, 1)
            xs = (a + bv[1:n_side, 0]) * inv_n
            gverts[base:base + n_fslot, 0] = xs
            gverts[base:base + n_fslot, 1] = b * inv_n
    int_coords = cell.vertices[interior_ids]
    for b in range(n):
        for a in range(n):
            base = interior_base(a, b)
            gverts[base:base + n_int, 0] = (a + int_coords[:, 0]) * inv_n
            gverts[base:base + n_int, 1] = (b + int_coords[:, 1]) * inv_n

    # per-cell template->global vertex maps
    cell_maps = np.empty((n * n, nv), dtype=np.int64)
    for b in range(n):
        for a in range(n):
            cmap = np.empty(nv, dtype=np.int64)
            cmap[interior_ids] = interior_base(a, b) + np.arange(n_int)
            for v in range(nv):
                k = kind[v]
                if k == 0:
                    continue
                if k == 3:
                    ci, cj = corner_pos[v]
                    cmap[v] = lattice_id(a + ci, b + cj)
                elif k == 1:
                    face_a = a if cell.vertices[v, 0] == 0.0 else a + 1
                    cmap[v] = vface_id(face_a, b, slot[v])
                else:
                    face_b = b if cell.vertices[v, 1] == 0.0 else b + 1
                    cmap[v] = hface_id(a, face_b, slot[v])
            cell_maps[b * n + a] = cmap

    nt = cell.n_triangles
    gtris = np.empty((n * n * nt, 3), dtype=np.int64)
    gphase = np.empty(n * n * nt, dtype=np.int64)
    gcell = np.empty(n * n * nt, dtype=np.int64)
    for c in range(n * n):
        cmap = cell_maps[c]
        gtris[c * nt:(c + 1) * nt] = cmap[cell.triangles]
        gphase[c * nt:(c + 1) * nt] = cell.tri_phase
        gcell[c * nt:(c + 1) * nt] = c

    ne = cell.interface_edges.shape[0]
    giface = np.empty((n * n * ne, 2), dtype=np.int64)
    for c in range(n * n):
        cmap = cell_maps[c]
        giface[c * ne:(c + 1) * ne] = cmap[cell.interface_edges]

    bedges = []
    bclass = []
    tmpl_b = cell.boundary_edges
    tmpl_bc = cell.boundary_edge_class
    v0x = cell.vertices[tmpl_b[:, 0], 0]
    v1x = cell.vertices[tmpl_b[:, 1], 0]
    v0y = cell.vertices[tmpl_b[:, 0], 1]
    v1y = cell.vertices[tmpl_b[:, 1], 1]
    on_left = (v0x == 0.0) & (v1x == 0.0)
    on_right = (v0x == 1.0) & (v1x == 1.0)
    on_bottom = (v0y == 0.0) & (v1y == 0.0)
    on_top = (v0y == 1.0) & (v1y == 1.0)
    for b in range(n):
        for a in range(n):
            sel = np.zeros(tmpl_b.shape[0], dtype=bool)
            if a == 0:
                sel |= on_left
            if a == n - 1:
                sel |= on_right
            if b == 0:
                sel |= on_bottom
            if b == n - 1:
                sel |= on_top
            if not np.any(sel):
                continue
            cmap = cell_maps[b * n + a]
            bedges.append(cmap[tmpl_b[sel]])
            bclass.append(tmpl_bc[sel])
    gbedges = np.vstack(bedges) if bedges else np.zeros((0, 2), dtype=np.int64)
    gbclass = np.concatenate(bclass) if bclass else np.zeros(0, dtype=np.int64)

    mesh = PerforatedMesh(cell, n, gverts, gtris, gphase, giface,
                          gbedges, gbclass, gcell, cell_maps)
    _validate_tiling(mesh)
    logger.info("tiled mesh n=%d: %d vertices, %d triangles", n,
                mesh.n_vertices, mesh.n_triangles)
    return mesh


def _validate_tiling(mesh):
    areas = mesh.triangle_areas()
    if np.any(areas <= 0.0):
        raise MeshConstructionError("tiling produced a non-positive triangle area; "
                                    "vertex stitching mismatch")
    total = math.fsum(areas.tolist())
    if abs(total - 1.0) > 1e-11:
        raise MeshConstructionError("tiled areas sum to %.17g, expected 1" % total)
    expected_fluid = mesh.template.fluid_area
    if abs(mesh.fluid_area - expected_fluid) > 1e-11:
        raise MeshConstructionError("tiled fluid area %.17g != template porosity %.17g"
                                    % (mesh.fluid_area, expected_fluid))


class _TriangleLocator:
    """Uniform bin grid over [0,1]^2 for point-in-triangle queries."""

    def __init__(self, vertices, triangles, n_bins=None):
        self.vertices = vertices
        self.triangles = triangles
        nt = triangles.shape[0]
        if n_bins is None:
            n_bins = max(8, int(math.sqrt(nt / 2.0)))
        self.n_bins = n_bins
        bins = [[] for _ in range(n_bins * n_bins)]
        pts = vertices[triangles]  # (nt, 3, 2)
        lo = np.clip(np.floor(pts.min(axis=1) * n_bins - 1e-12).astype(np.int64), 0, n_bins - 1)
        hi = np.clip(np.floor(pts.max(axis=1) * n_bins + 1e-12).astype(np.int64), 0, n_bins - 1)
        for t in range(nt):
            for bi in range(lo[t, 0], hi[t, 0] + 1):
                for bj in range(lo[t, 1], hi[t, 1] + 1):
                    bins[bi * n_bins + bj].append(t)
        self.bins = [np.array(sorted(b), dtype=np.int64) for b in bins]

    def candidates(self, y):
        nb = self.n_bins
        bi = min(max(int(y[0] * nb), 0), nb - 1)
        bj = min(max(int(y[1] * nb), 0), nb - 1)
        return self.bins[bi * nb + bj]

    def find(self, y, tol=1e-12):
        """Lowest-index triangle containing y, or -1."""
        for t in self.candidates(y):
            if _bary_inside(self.vertices, self.triangles[t], y, tol):
                return int(t)
        # robust fallback: full scan with a looser tolerance
        for t in range(self.triangles.shape[0]):
            if _bary_inside(self.vertices, self.triangles[t], y, 1e-9):
                return int(t)
        return -1


def _bary_inside(vertices, tri, y, tol):
    p0, p1, p2 = vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]
    det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])
    if det == 0.0:
        return False
    l1 = ((y[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (y[1] - p0[1])) / det
    l2 = ((p1[0] - p0[0]) * (y[1] - p0[1]) - (y[0] - p0[0]) * (p1[1] - p0[1])) / det
    return l1 >= -tol and l2 >= -tol and (1.0 - l1 - l2) >= -tol


def locate_phase(mesh, x):
    """Phase marker ('fluid' or 'solid') of the triangle containing x.

    Points on shared edges resolve to the lowest containing triangle index.
    Raises :class:`DomainError` for points outside the closed unit square.
    """
    x0, x1 = float(x[0]), float(x[1])
    tol = 1e-12
    if not (-tol <= x0 <= 1.0 + tol and -tol <= x1 <= 1.0 + tol):
        raise DomainError("point (%g, %g) outside the unit square" % (x0, x1))
    n = mesh.n
    loc = mesh.template.locator()
    nt_t = mesh.template.n_triangles
    # candidate cells: all cells whose closed square contains x (1, 2 or 4),
    # visited in ascending cell index = ascending global triangle index
    cand_a = _cells_containing(x0, n)
    cand_b = _cells_containing(x1, n)
    best = -1
    for b in cand_b:
        for a in cand_a:
            y = (x0 * n - a, x1 * n - b)
            t = loc.find(y)
            if t >= 0:
                gt = (b * n + a) * nt_t + t
                if best < 0 or gt < best:
                    best = gt
    if best < 0:
        raise DomainError("point (%g, %g) not located in any triangle" % (x0, x1))
    return PHASE_NAMES[int(mesh.tri_phase[best])]


def _cells_containing(coord, n):
    c = coord * n
    k = int(math.floor(c))
    cells = []
    for cand in (k - 1, k, k + 1):
        if 0 <= cand < n and cand <= c + 1e-9 and c <= cand + 1 + 1e-9:
            cells.append(cand)
    return cells


def dump_mesh(obj, path):
    """Write a mesh (TemplateCell or PerforatedMesh) as plain text.

    One record per line: ``v x y``, ``t i j k phase``, ``ei i j``,
    ``eb i j class`` with class in {fext, sext}; 0-based indices, floats with
    17 significant digits.
    """
    lines = []
    for p in obj.vertices:
        lines.append("v %.17g %.17g" % (p[0], p[1]))
    for tri, ph in zip(obj.triangles, obj.tri_phase):
        lines.append("t %d %d %d %s" % (tri[0], tri[1], tri[2], PHASE_NAMES[int(ph)]))
    for e in obj.interface_edges:
        lines.append("ei %d %d" % (e[0], e[1]))
    for e, c in zip(obj.boundary_edges, obj.boundary_edge_class):
        cls = "fext" if int(c) == FLUID else "sext"
        lines.append("eb %d %d %s" % (e[0], e[1], cls))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


class LoadedMesh:
    """Plain container for a mesh read back from a dump file."""

    def __init__(self, vertices, triangles, tri_phase, interface_edges,
                 boundary_edges, boundary_edge_class):
        self.vertices = vertices
        self.triangles = triangles
        self.tri_phase = tri_phase
        self.interface_edges = interface_edges
        self.boundary_edges = boundary_edges
        self.boundary_edge_class = boundary_edge_class


def load_mesh(path):
    verts, tris, phases, iface, bedge, bclass = [], [], [], [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            tag = parts[0]
            if tag == "v":
                verts.append((float(parts[1]), float(parts[2])))
            elif tag == "t":
                tris.append((int(parts[1]), int(parts[2]), int(parts[3])))
                phases.append(PHASE_CODES[parts[4]])
            elif tag == "ei":
                iface.append((int(parts[1]), int(parts[2])))
            elif tag == "eb":
                bedge.append((int(parts[1]), int(parts[2])))
                bclass.append(FLUID if parts[3] == "fext" else SOLID)
            else:
                raise ValueError("unknown mesh record %r" % tag)
    return LoadedMesh(
        np.array(verts), np.array(tris, dtype=np.int64),
        np.array(phases, dtype=np.int64),
        np.array(iface, dtype=np.int64).reshape(-1, 2),
        np.array(bedge, dtype=np.int64).reshape(-1, 2),
        np.array(bclass, dtype=np.int64))


def fluid_components(cell_or_mesh):
    """Number of connected components of the fluid triangle adjacency graph."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    tris = cell_or_mesh.triangles[cell_or_mesh.tri_phase == FLUID]
    if tris.shape[0] == 0:
        return 0
    ids = np.unique(tris)
    remap = np.full(int(ids.max()) + 1, -1, dtype=np.int64)
    remap[ids] = np.arange(ids.shape[0])
    t = remap[tris]
    rows = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
    cols = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    g = coo_matrix((np.ones(rows.shape[0]), (rows, cols)),
                   shape=(ids.shape[0], ids.shape[0]))
    ncomp, _ = connected_components(g, directed=False)
    return int(ncomp)
