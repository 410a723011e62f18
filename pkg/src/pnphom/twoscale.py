"""Empirical verification of volume and surface oscillation limits.

Evaluates Monte Carlo / quadrature estimates of

    volume:   int_Omega int_Lambda |a(x, T(x/eps) w, x/eps^2)|^p dx dmu
    surface:  eps int_{Gamma_eps} int_Lambda |a^eps|^p dS dmu

for separable integrands a(x, w, y) = f(x) g(w) h(y) and compares them with
exact reference values.  The volume estimate uses a composite midpoint grid
fine enough to resolve the eps^2 oscillation (refused otherwise); the
surface estimate uses Gauss quadrature on the interface facets of a
perforated mesh.

On the eps-periodic interface the shift T(x/eps) w reduces to z + w where z
is the position inside the unit cell, so cross-cell averaging never mixes
the sample point; the surface limit therefore carries |Gamma| times the
cell-mean of the fast factor, and that is the reference computed here.  The
fast factor h(x/eps^2) restricted to the interface equidistributes over the
unit cell as eps shrinks.
"""

import logging
import math

import numpy as np

from .fem import edge_quadrature_points, quadrature
from .geometry import tile_domain
from .randomfield import sample_omega

log = logging.getLogger(__name__)


class ResolutionError(ValueError):
    """Raised when the volume quadrature cannot resolve the eps^2 scale.

    Attributes
    ----------
    required : int
        Minimum admissible points per axis.
    """

    def __init__(self, message, required):
        super().__init__(message)
        self.required = required


def _eps_to_n(eps):
    n = int(round(1.0 / eps))
    if n < 1 or abs(n * eps - 1.0) > 1e-12:
        raise ValueError("eps must be the reciprocal of an integer, got %r" % eps)
    return n


# ---------------------------------------------------------------------------
# separable factors


class TrigFactor:
    """Trigonometric polynomial c0 + sum amp * cos(2 pi k.u + phase) on the torus.

    Terms are (amplitude, (k1, k2), phase) with integer frequencies; sin
    modes are cos modes with phase -pi/2.  Closed under products.
    """

    def __init__(self, const=0.0, terms=()):
        self.const = float(const)
        self.terms = [(float(a), (int(k[0]), int(k[1])), float(ph))
                      for a, k, ph in terms]

    @classmethod
    def from_modes(cls, const=1.0, cos_modes=(), sin_modes=()):
        terms = [(a, k, 0.0) for k, a in cos_modes]
        terms += [(a, k, -0.5 * math.pi) for k, a in sin_modes]
        return cls(const, terms)

    def value(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.full(pts.shape[:-1], self.const)
        for a, (k1, k2), ph in self.terms:
            out = out + a * np.cos(
                2.0 * math.pi * (k1 * pts[..., 0] + k2 * pts[..., 1]) + ph)
        return out

    def value_outer(self, u1, u2):
        """Evaluate on the tensor grid u1 x u2 via per-axis factorization."""
        out = np.full((len(u1), len(u2)), self.const)
        for a, (k1, k2), ph in self.terms:
            A = 2.0 * math.pi * k1 * np.asarray(u1)
            B = 2.0 * math.pi * k2 * np.asarray(u2) + ph
            out += a * (np.outer(np.cos(A), np.cos(B))
                        - np.outer(np.sin(A), np.sin(B)))
        return out

    def integral(self):
        """Exact mean over the torus."""
        total = self.const
        for a, k, ph in self.terms:
            if k == (0, 0):
                total += a * math.cos(ph)
        return total

    def max_frequency(self):
        return max([max(abs(k[0]), abs(k[1])) for _, k, _ in self.terms] or [0])

    def min_bound(self):
        lo = self.const
        for a, k, ph in self.terms:
            lo -= abs(a)
        return lo

    def is_constant(self):
        return all(k == (0, 0) for _, k, _ in self.terms)

    def __mul__(self, other):
        if np.isscalar(other):
            return TrigFactor(self.const * other,
                              [(a * other, k, ph) for a, k, ph in self.terms])
        if not isinstance(other, TrigFactor):
            return NotImplemented
        # product-to-sum: cos X cos Y = (cos(X+Y) + cos(X-Y)) / 2
        terms = [(a * other.const, k, ph) for a, k, ph in self.terms]
        terms += [(a * self.const, k, ph) for a, k, ph in other.terms]
        for a1, (p1, p2), f1 in self.terms:
            for a2, (q1, q2), f2 in other.terms:
                terms.append((0.5 * a1 * a2, (p1 + q1, p2 + q2), f1 + f2))
                terms.append((0.5 * a1 * a2, (p1 - q1, p2 - q2), f1 - f2))
        return TrigFactor(self.const * other.const, terms)

    __rmul__ = __mul__

    def abs_power_integral(self, p):
        return _abs_power_integral(self, p, torus=True)


class CosProductFactor:
    """Slow factor sum amp * cos(pi q1 x1) cos(pi q2 x2) on the unit square.

    The (0,0) term is the constant.  The half-period cosine products form an
    orthogonal family on [0,1]^2, so means and squared means are closed form.
    """

    def __init__(self, terms):
        self.terms = [(float(a), (int(q[0]), int(q[1]))) for a, q in terms]

    @classmethod
    def from_modes(cls, const=1.0, modes=()):
        terms = [(const, (0, 0))] if const else []
        terms += [(a, q) for q, a in modes]
        return cls(terms)

    def value(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1])
        for a, (q1, q2) in self.terms:
            out += (a * np.cos(math.pi * q1 * pts[..., 0])
                    * np.cos(math.pi * q2 * pts[..., 1]))
        return out

    def value_outer(self, u1, u2):
        out = np.zeros((len(u1), len(u2)))
        for a, (q1, q2) in self.terms:
            out += a * np.outer(np.cos(math.pi * q1 * np.asarray(u1)),
                                np.cos(math.pi * q2 * np.asarray(u2)))
        return out

    def integral(self):
        return sum(a for a, q in self.terms if q == (0, 0))

    def squared_integral(self):
        def w(q):
            return 1.0 if q == 0 else 0.5
        # terms with the same (q1,q2) pair combine; distinct pairs are orthogonal
        acc = {}
        for a, q in self.terms:
            acc[q] = acc.get(q, 0.0) + a
        return sum(a * a * w(q1) * w(q2) for (q1, q2), a in acc.items())

    def max_frequency(self):
        return max([max(abs(q[0]), abs(q[1])) for _, q in self.terms] or [0])

    def min_bound(self):
        lo = 0.0
        for a, (q1, q2) in self.terms:
            if q1 == 0 and q2 == 0:
                lo += a
            else:
                lo -= abs(a)
        return lo

    def is_constant(self):
        return all(q == (0, 0) for _, q in self.terms)

    def __mul__(self, other):
        if np.isscalar(other):
            return CosProductFactor([(a * other, q) for a, q in self.terms])
        if not isinstance(other, CosProductFactor):
            return NotImplemented
        terms = []
        for a1, (p1, p2) in self.terms:
            for a2, (q1, q2) in other.terms:
                for s1 in ((p1 + q1,), (abs(p1 - q1),)):
                    for s2 in ((p2 + q2,), (abs(p2 - q2),)):
                        terms.append((0.25 * a1 * a2, (s1[0], s2[0])))
        return CosProductFactor(terms)

    __rmul__ = __mul__

    def abs_power_integral(self, p):
        return _abs_power_integral(self, p, torus=False)


class PolynomialFactor:
    """Slow factor sum amp * x1^d1 x2^d2 on the unit square."""

    def __init__(self, terms):
        self.terms = [(float(a), (int(d[0]), int(d[1]))) for a, d in terms]
        if any(d[0] < 0 or d[1] < 0 for _, d in self.terms):
            raise ValueError("polynomial degrees must be nonnegative")

    def value(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1])
        for a, (d1, d2) in self.terms:
            out += a * pts[..., 0] ** d1 * pts[..., 1] ** d2
        return out

    def value_outer(self, u1, u2):
        out = np.zeros((len(u1), len(u2)))
        for a, (d1, d2) in self.terms:
            out += a * np.outer(np.asarray(u1) ** d1, np.asarray(u2) ** d2)
        return out

    def integral(self):
        return sum(a / ((d1 + 1.0) * (d2 + 1.0)) for a, (d1, d2) in self.terms)

    def squared_integral(self):
        total = 0.0
        for a1, (p1, p2) in self.terms:
            for a2, (q1, q2) in self.terms:
                total += a1 * a2 / ((p1 + q1 + 1.0) * (p2 + q2 + 1.0))
        return total

    def max_frequency(self):
        return 0

    def min_bound(self):
        lo = 0.0
        for a, (d1, d2) in self.terms:
            if d1 == 0 and d2 == 0:
                lo += a
            else:
                lo += min(0.0, a)
        return lo

    def is_constant(self):
        return all(d == (0, 0) for _, d in self.terms)

    def __mul__(self, other):
        if np.isscalar(other):
            return PolynomialFactor([(a * other, d) for a, d in self.terms])
        if not isinstance(other, PolynomialFactor):
            return NotImplemented
        terms = [(a1 * a2, (p1 + q1, p2 + q2))
                 for a1, (p1, p2) in self.terms
                 for a2, (q1, q2) in other.terms]
        return PolynomialFactor(terms)

    __rmul__ = __mul__

    def abs_power_integral(self, p):
        return _abs_power_integral(self, p, torus=False)


def constant_factor(value, kind="trig"):
    if kind == "trig":
        return TrigFactor(const=value)
    if kind == "cos":
        return CosProductFactor([(value, (0, 0))])
    return PolynomialFactor([(value, (0, 0))])


def _abs_power_integral(factor, p, torus):
    """Mean of |factor|^p over the unit square, closed form when available."""
    if p == 1 and factor.min_bound() >= 0.0:
        return factor.integral()
    if p == 2 and hasattr(factor, "squared_integral"):
        return factor.squared_integral()
    if p == 2 and isinstance(factor, TrigFactor):
        prod = factor * factor
        return prod.integral()
    # numeric fallback on a fine midpoint grid (the |.| kink forbids a
    # spectral argument); cached per (factor, p)
    cache = getattr(factor, "_abs_cache", None)
    if cache is None:
        cache = factor._abs_cache = {}
    if p not in cache:
        N = 4096
        u = (np.arange(N) + 0.5) / N
        vals = np.abs(factor.value_outer(u, u)) ** p
        cache[p] = float(vals.mean())
    return cache[p]


# TrigFactor squared integral via self-product (exact)
def _trig_squared_integral(self):
    return (self * self).integral()


TrigFactor.squared_integral = _trig_squared_integral


# ---------------------------------------------------------------------------
# integrand


class TestIntegrand:
    """Separable admissible integrand a(x, w, y) = f(x) g(w) h(y), power p.

    Parameters
    ----------
    f : CosProductFactor or PolynomialFactor (slow variable x in Omega)
    g : TrigFactor (sample variable w on the torus)
    h : TrigFactor (fast periodic variable y)
    p : exponent >= 1; closed-form references exist for p = 1 with
        nonnegative factors and for p = 2; other powers use a cached fine
        quadrature per factor.
    name : label used in reports.
    """

    __test__ = False  # not a pytest case despite the class name

    def __init__(self, f=None, g=None, h=None, p=1, name="integrand"):
        self.f = f if f is not None else constant_factor(1.0, "cos")
        self.g = g if g is not None else TrigFactor(const=1.0)
        self.h = h if h is not None else TrigFactor(const=1.0)
        self.p = float(p)
        if self.p < 1:
            raise ValueError("exponent p must be >= 1, got %g" % self.p)
        self.name = name
        if not isinstance(self.g, TrigFactor) or not isinstance(self.h, TrigFactor):
            raise ValueError("g and h must be trigonometric polynomials")

    def omega_independent(self):
        return self.g.is_constant()

    def evaluate(self, x, omega, eps):
        """Pointwise |a(x, T(x/eps) w, x/eps^2)|^p at points x (n, 2)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        w = np.mod(np.asarray(omega, dtype=float) + x / eps, 1.0)
        y = np.mod(x / (eps * eps), 1.0)
        vals = self.f.value(x) * self.g.value(w) * self.h.value(y)
        return np.abs(vals) ** self.p if self.p != 1 else np.abs(vals)

    def volume_reference(self):
        """Exact triple integral int |f|^p dx int |g|^p dmu int |h|^p dy."""
        return (self.f.abs_power_integral(self.p)
                * self.g.abs_power_integral(self.p)
                * self.h.abs_power_integral(self.p))

    def surface_reference(self, interface_length):
        """Limit of the eps-scaled interface integral.

        Equals int |f|^p dx times the ensemble mean int |g|^p dmu times
        |Gamma| times the cell mean int |h|^p dy; the fast factor
        equidistributes over the cell along the interface family.
        """
        return (self.f.abs_power_integral(self.p)
                * self.g.abs_power_integral(self.p)
                * interface_length
                * self.h.abs_power_integral(self.p))

    def __repr__(self):
        return "TestIntegrand(%r, p=%g)" % (self.name, self.p)


def bundled_suite():
    """The default separable integrand suite: constant, x-only, y-only, triple.

    The fast factor uses the difference cos(2 pi y1) - cos(2 pi y2), whose
    interface integral vanishes for the reflection-symmetric inclusion at
    every eps, so surface references are exact for the suite.
    """
    f_x = CosProductFactor.from_modes(const=1.0, modes=[((1, 1), -0.5)])
    h_y = TrigFactor.from_modes(
        const=1.0, cos_modes=[((1, 0), 0.5), ((0, 1), -0.5)])
    g_w = TrigFactor.from_modes(const=1.0, sin_modes=[((1, 1), 0.1)])
    return [
        TestIntegrand(name="constant"),
        TestIntegrand(f=f_x, name="x_only"),
        TestIntegrand(h=h_y, name="y_only"),
        TestIntegrand(f=f_x, g=g_w, h=h_y, name="triple"),
    ]


# ---------------------------------------------------------------------------
# estimators


class OscillationEstimate:
    """One Monte Carlo estimate of an oscillation integral."""

    def __init__(self, value, stderr, M, eps, detail=""):
        self.value = value
        self.stderr = stderr
        self.M = M
        self.eps = eps
        self.detail = detail

    def __repr__(self):
        return "OscillationEstimate(eps=%g, value=%.8g +- %.2g, M=%d)" % (
            self.eps, self.value, self.stderr, self.M)


def _mc_samples(M, base_seed):
    return [sample_omega(base_seed + i).omega for i in range(M)]


def volume_oscillation(a, eps, M=64, base_seed=0, resolution=None):
    """Estimate the volume oscillation integral of a at scale eps.

    Uses a composite midpoint grid with ``resolution`` points per axis
    (default 8 n^2, the coarsest admissible) and Monte Carlo over the
    sample space with a fixed seed schedule.  For sample-independent
    integrands a single sample is evaluated and the standard error is zero.

    Raises ResolutionError when the grid spacing exceeds eps^2 / 8.
    """
    n = _eps_to_n(eps)
    required = 8 * n * n
    N = required if resolution is None else int(resolution)
    if N < required:
        raise ResolutionError(
            "grid spacing 1/%d exceeds eps^2/8; need at least %d points per axis"
            % (N, required), required)
    x1 = (np.arange(N) + 0.5) / N
    # slow and fast factors are sample independent: precompute their product
    F = a.f.value_outer(x1, x1)
    y1 = np.mod(n * n * x1, 1.0)
    H = a.h.value_outer(y1, y1)
    FH = F * H
    M_eff = 1 if a.omega_independent() else M
    vals = np.empty(M_eff)
    p = a.p
    for i, w in enumerate(_mc_samples(M_eff, base_seed)):
        G = _shifted_trig_outer(a.g, w, n * x1, n * x1)
        prod = FH * G
        if p == 1.0:
            np.abs(prod, out=prod)
        elif p == 2.0:
            np.square(prod, out=prod)
        else:
            prod = np.abs(prod) ** p
        vals[i] = prod.mean()
    value = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(M_eff)) if M_eff > 1 else 0.0
    return OscillationEstimate(value, stderr, M_eff, eps, detail="N=%d" % N)


def _shifted_trig_outer(g, w, u1, u2):
    """Evaluate g(w + u) on the tensor grid u1 x u2 for a TrigFactor g."""
    out = np.full((len(u1), len(u2)), g.const)
    for amp, (k1, k2), ph in g.terms:
        psi = 2.0 * math.pi * (k1 * w[0] + k2 * w[1]) + ph
        A = 2.0 * math.pi * k1 * u1
        B = 2.0 * math.pi * k2 * u2 + psi
        out += amp * (np.outer(np.cos(A), np.cos(B))
                      - np.outer(np.sin(A), np.sin(B)))
    return out


def surface_oscillation(a, mesh, eps, M=64, base_seed=0, rule="edge-gauss-8"):
    """Estimate the eps-scaled interface oscillation integral.

    Gauss quadrature along every interface facet of the perforated mesh,
    Monte Carlo over the sample space with the same fixed seed schedule as
    the volume estimator.
    """
    n = _eps_to_n(eps)
    if mesh.n != n:
        raise ValueError("mesh was tiled at eps=1/%d, asked for eps=1/%d"
                         % (mesh.n, n))
    if mesh.interface_edges.shape[0] == 0:
        raise ValueError("mesh has an empty interface")
    pts, wts = edge_quadrature_points(
        mesh.vertices, mesh.interface_edges, quadrature(rule))
    P = pts.reshape(-1, 2)
    w_q = wts.ravel()
    F = a.f.value(P)
    H = a.h.value(np.mod(n * n * P, 1.0))
    FH = F * H
    shift_arg = n * P  # T(x/eps) w = w + x/eps, cosines absorb the mod
    M_eff = 1 if a.omega_independent() else M
    vals = np.empty(M_eff)
    p = a.p
    for i, w in enumerate(_mc_samples(M_eff, base_seed)):
        G = a.g.value(w[None, :] + shift_arg)
        prod = FH * G
        if p == 1.0:
            np.abs(prod, out=prod)
        elif p == 2.0:
            np.square(prod, out=prod)
        else:
            prod = np.abs(prod) ** p
        vals[i] = eps * float(w_q.dot(prod))
    value = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(M_eff)) if M_eff > 1 else 0.0
    return OscillationEstimate(value, stderr, M_eff, eps,
                               detail="facets=%d" % mesh.interface_edges.shape[0])


# ---------------------------------------------------------------------------
# convergence tables


class OscillationReport:
    """Convergence table of one integrand against its reference value.

    Rows are ordered by decreasing eps.  ``growth_flags`` marks rows whose
    relative error exceeds twice the previous row's.
    """

    def __init__(self, kind, name, reference, rows, growth_flags):
        self.kind = kind
        self.name = name
        self.reference = reference
        self.rows = rows
        self.growth_flags = growth_flags

    def rel_errors(self):
        return [r["rel_error"] for r in self.rows]

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("eps,M,value,reference,rel_error,mc_stderr\n")
            for r in self.rows:
                fh.write("%.17g,%d,%.17g,%.17g,%.17g,%.17g\n" % (
                    r["eps"], r["M"], r["value"], r["reference"],
                    r["rel_error"], r["mc_stderr"]))

    def format_table(self):
        lines = ["%s oscillation: %s (reference %.10g)"
                 % (self.kind, self.name, self.reference),
                 "%-10s %-6s %-22s %-12s %-12s" % (
                     "eps", "M", "value", "rel_error", "mc_stderr")]
        for r, flag in zip(self.rows, self.growth_flags):
            lines.append("%-10.6g %-6d %-22.12g %-12.4g %-12.4g%s" % (
                r["eps"], r["M"], r["value"], r["rel_error"], r["mc_stderr"],
                "  [error grew >2x]" if flag else ""))
        return "\n".join(lines)


def convergence_table(kind, a, eps_list, M=64, cell=None, base_seed=0,
                      resolution=None, rule="edge-gauss-8"):
    """Empirical convergence table for one integrand.

    Parameters
    ----------
    kind : 'volume' or 'surface'
    a : TestIntegrand
    eps_list : strictly decreasing reciprocals of integers
    cell : TemplateCell, required for the surface kind (each eps is tiled)
    """
    eps_list = list(eps_list)
    ns = [_eps_to_n(e) for e in eps_list]
    if sorted(ns) != ns or len(set(ns)) != len(ns):
        raise ValueError("eps list must be strictly decreasing")
    if kind == "surface":
        if cell is None:
            raise ValueError("surface tables need a template cell")
        reference = a.surface_reference(cell.interface_length)
    elif kind == "volume":
        reference = a.volume_reference()
    else:
        raise ValueError("kind must be 'volume' or 'surface'")

    rows = []
    floor = 1e-12
    for eps, n in zip(eps_list, ns):
        if kind == "volume":
            est = volume_oscillation(a, eps, M=M, base_seed=base_seed,
                                     resolution=resolution)
        else:
            mesh = tile_domain(cell, n)
            est = surface_oscillation(a, mesh, eps, M=M, base_seed=base_seed,
                                      rule=rule)
        denom = max(abs(reference), floor)
        rows.append({
            "eps": eps,
            "M": est.M,
            "value": est.value,
            "reference": reference,
            "rel_error": abs(est.value - reference) / denom,
            "mc_stderr": est.stderr,
        })
    flags = [False]
    for prev, cur in zip(rows, rows[1:]):
        grew = cur["rel_error"] > 2.0 * max(prev["rel_error"], floor)
        flags.append(bool(grew))
    return OscillationReport(kind, a.name, reference, rows, flags)


def count_error_inversions(rel_errors, floor=1e-12):
    """Number of adjacent increases in a supposedly decreasing error list.

    Increases within the floor are ignored (machine-level jitter around an
    exact value is not a convergence failure).
    """
    inv = 0
    for prev, cur in zip(rel_errors, rel_errors[1:]):
        if cur > prev and cur > floor:
            inv += 1
    return inv
