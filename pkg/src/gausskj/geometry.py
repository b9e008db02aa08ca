"""Convex domains in dimension 1 and 2, their meshes and Gaussian quadrature."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import integrate as spint, sparse
from scipy.spatial import Delaunay

from .special import gaussian_cdf, gaussian_tail

# 1D: truncation length of a half-line, measured from max(s, 0)
HALFLINE_TRUNCATION = 12.0

_GL20_X, _GL20_W = np.polynomial.legendre.leggauss(20)

# 2D meshing knobs: lattice spacing as a fraction of h, smoothing sweeps
_LATTICE_FRACTION = 0.65
_SMOOTHING_SWEEPS = 8


class ValidationError(ValueError):
    """Raised for degenerate domains or mismatched mesh data."""


def _density(x: np.ndarray) -> np.ndarray:
    """Standard Gaussian density in the dimension given by the last axis."""
    d = x.shape[-1]
    return np.exp(-0.5 * np.sum(x * x, axis=-1)) / (2.0 * np.pi) ** (d / 2.0)


def _interval_measure(a, b):
    """gamma([a, b]) computed on the side of 0 that avoids cancellation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.where(a > 0.0, gaussian_tail(a) - gaussian_tail(b), gaussian_cdf(b) - gaussian_cdf(a))


# --------------------------------------------------------------------------
# Domains
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Interval:
    a: float
    b: float
    kind = "interval"
    dimension = 1
    convex = True

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b) and self.a < self.b):
            raise ValidationError(f"Interval requires finite a < b, got ({self.a}, {self.b})")

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class HalfLine:
    """The half-space ``{x_1 >= s}`` (line case)."""

    s: float
    kind = "halfline"
    dimension = 1
    convex = True

    def __post_init__(self):
        if not math.isfinite(self.s):
            raise ValidationError(f"HalfLine requires a finite offset, got {self.s}")

    @property
    def truncation(self) -> float:
        return max(self.s, 0.0) + HALFLINE_TRUNCATION

    def to_dict(self):
        return {"kind": self.kind, "s": self.s}


@dataclass(frozen=True)
class ConvexPolygon:
    """Polygon given by its vertices in order (either orientation).

    ``override_convexity=True`` accepts non-convex vertex lists; such domains
    report ``convex = False`` and every result computed on them is flagged as
    not satisfying the hypothesis of the main comparison theorem.
    """

    vertices: tuple
    override_convexity: bool = False
    kind = "polygon"
    dimension = 2

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValidationError("ConvexPolygon needs at least 3 vertices in the plane")
        if not np.all(np.isfinite(v)):
            raise ValidationError("ConvexPolygon vertices must be finite")
        if len({tuple(p) for p in v.tolist()}) != len(v):
            raise ValidationError("ConvexPolygon has repeated vertices")
        convex = _is_strictly_convex(v)
        if not convex and not self.override_convexity:
            raise ValidationError("ConvexPolygon vertices do not describe a strictly convex polygon")
        if not convex and not _is_simple(v):
            raise ValidationError("polygon edges intersect each other")
        if abs(_signed_area(v)) <= 0.0:
            raise ValidationError("ConvexPolygon is degenerate (zero area)")
        # store counter-clockwise
        if _signed_area(v) < 0:
            v = v[::-1]
        object.__setattr__(self, "vertices", tuple(map(tuple, v.tolist())))
        object.__setattr__(self, "convex", convex)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    def to_dict(self):
        return {"kind": self.kind, "vertices": [list(p) for p in self.vertices]}


@dataclass(frozen=True)
class Disk:
    center: tuple
    radius: float
    kind = "disk"
    dimension = 2
    convex = True

    def __post_init__(self):
        c = tuple(float(x) for x in self.center)
        if len(c) != 2 or not all(map(math.isfinite, c)):
            raise ValidationError("Disk center must be a finite point in the plane")
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValidationError(f"Disk radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", c)

    def to_dict(self):
        return {"kind": self.kind, "center": list(self.center), "radius": self.radius}


Domain = Union[Interval, HalfLine, ConvexPolygon, Disk]


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _is_strictly_convex(v: np.ndarray) -> bool:
    e = np.roll(v, -1, axis=0) - v
    cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    if not (np.all(cross > 0) or np.all(cross < 0)):
        return False
    # a star-shaped self-intersecting polygon can pass the turn test; total turning must be 2 pi
    ang = np.arctan2(e[:, 1], e[:, 0])
    turn = np.diff(np.concatenate([ang, ang[:1]]))
    turn = (turn + np.pi) % (2 * np.pi) - np.pi
    return bool(abs(abs(turn.sum()) - 2 * np.pi) < 1e-9)


def domain_from_dict(data: dict, override_convexity: bool = False) -> Domain:
    """Build a domain from its JSON description.

    ``{"kind": "interval", "a": .., "b": ..}``, ``{"kind": "halfline", "s": ..}``,
    ``{"kind": "polygon", "vertices": [[x, y], ...]}`` or
    ``{"kind": "disk", "center": [x, y], "radius": r}``.
    """
    if not isinstance(data, dict) or "kind" not in data:
        raise ValidationError("/kind: domain description must be an object with a 'kind' field")
    kind = data["kind"]
    required = {"interval": ("a", "b"), "halfline": ("s",), "polygon": ("vertices",), "disk": ("center", "radius")}
    if kind not in required:
        raise ValidationError(f"/kind: unknown domain kind {kind!r}; expected one of {sorted(required)}")
    for key in required[kind]:
        if key not in data:
            raise ValidationError(f"/{key}: missing field for kind {kind!r}")
    extra = set(data) - set(required[kind]) - {"kind"}
    if extra:
        raise ValidationError(f"/{sorted(extra)[0]}: unexpected field for kind {kind!r}")
    # field blamed for a failed invariant
    pointer = {"interval": "/b", "halfline": "/s", "polygon": "/vertices", "disk": "/radius"}[kind]
    try:
        if kind == "interval":
            return Interval(float(data["a"]), float(data["b"]))
        if kind == "halfline":
            return HalfLine(float(data["s"]))
        if kind == "polygon":
            return ConvexPolygon(tuple(tuple(float(c) for c in p) for p in data["vertices"]),
                                 override_convexity=override_convexity)
        pointer = "/center"
        center = tuple(float(c) for c in data["center"])
        pointer = "/radius" if len(center) == 2 and all(map(math.isfinite, center)) else "/center"
        return Disk(center, float(data["radius"]))
    except ValidationError as exc:
        raise ValidationError(f"{pointer}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{pointer}: malformed {kind} description: {exc}") from exc


# --------------------------------------------------------------------------
# Gaussian measure of a domain
# --------------------------------------------------------------------------

def _is_simple(v: np.ndarray) -> bool:
    """No two non-adjacent edges meet (quadratic check, fine for hand-written polygons)."""
    n = len(v)

    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    for i in range(n):
        p1, p2 = v[i], v[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            q1, q2 = v[j], v[(j + 1) % n]
            if (orient(p1, p2, q1) * orient(p1, p2, q2) <= 0) and (orient(q1, q2, p1) * orient(q1, q2, p2) <= 0):
                return False
    return True


def _inside_polygon(pts: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Even-odd ray casting."""
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    p, q = v, np.roll(v, -1, axis=0)
    straddle = (p[None, :, 1] > y) != (q[None, :, 1] > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = p[None, :, 0] + (y - p[None, :, 1]) * (q[None, :, 0] - p[None, :, 0]) / (q[None, :, 1] - p[None, :, 1])
    return np.sum(straddle & (x < xc), axis=1) % 2 == 1


def _segment_distance(pts: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Distance from each point to the polygon boundary."""
    d = np.full(len(pts), np.inf)
    for p, q in zip(v, np.roll(v, -1, axis=0)):
        e = q - p
        t = np.clip((pts - p) @ e / (e @ e), 0.0, 1.0)
        d = np.minimum(d, np.linalg.norm(pts - p - t[:, None] * e, axis=1))
    return d


def _polygon_measure(v: np.ndarray, convex: bool = True) -> float:
    """gamma(P) for a polygon via int phi(x) [Phi(y_hi(x)) - Phi(y_lo(x))] dx.

    Non-convex (simple) polygons sum over the pairs of edge crossings.

    Between consecutive vertex abscissae the integrand is analytic, so each
    such slab (split into pieces of width <= 0.25) gets a 20-point
    Gauss-Legendre rule.
    """
    n = len(v)
    p, q = v, np.roll(v, -1, axis=0)
    slanted = p[:, 0] != q[:, 0]
    p, q = p[slanted], q[slanted]
    xs = np.unique(v[:, 0])
    breaks = [xs[0]]
    for a, b in zip(xs[:-1], xs[1:]):
        k = max(int(math.ceil((b - a) / 0.25)), 1)
        breaks.extend(a + (b - a) * np.arange(1, k + 1) / k)
    breaks = np.asarray(breaks)
    mid = 0.5 * (breaks[:-1] + breaks[1:])
    half = 0.5 * (breaks[1:] - breaks[:-1])
    x = (mid[:, None] + half[:, None] * _GL20_X[None, :]).ravel()
    # y of every slanted edge at every x; keep edges whose x-range covers the sample
    lo_e, hi_e = np.minimum(p[:, 0], q[:, 0]), np.maximum(p[:, 0], q[:, 0])
    t = (x[:, None] - p[None, :, 0]) / (q[None, :, 0] - p[None, :, 0])
    y = p[None, :, 1] + t * (q[None, :, 1] - p[None, :, 1])
    inside = (x[:, None] >= lo_e[None, :]) & (x[:, None] <= hi_e[None, :])
    if convex:
        y_lo = np.where(inside, y, np.inf).min(axis=1)
        y_hi = np.where(inside, y, -np.inf).max(axis=1)
        cover = _interval_measure(y_lo, y_hi)
    else:
        # crossings sorted along each vertical line, paired by the even-odd rule
        ys = np.sort(np.where(inside, y, np.inf), axis=1)
        cover = np.zeros(len(x))
        for k in range(0, ys.shape[1] - 1, 2):
            ok = np.isfinite(ys[:, k + 1])
            cover[ok] += _interval_measure(ys[ok, k], ys[ok, k + 1])
    f = np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi) * cover
    return float(np.sum(f.reshape(len(mid), -1) @ _GL20_W * half))


def _disk_measure(center, r) -> float:
    cx, cy = center
    if cx == 0.0 and cy == 0.0:
        return -math.expm1(-0.5 * r * r)

    def integrand(x):
        w = math.sqrt(max(r * r - (x - cx) ** 2, 0.0))
        return math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi) * float(_interval_measure(cy - w, cy + w))

    val, _ = spint.quad(integrand, cx - r, cx + r, epsabs=1e-15, epsrel=1e-12, limit=200)
    return val


def gaussian_measure(domain: Domain) -> float:
    """Gaussian measure ``gamma(K)`` of a domain (exact in 1D, adaptive quadrature in 2D)."""
    if isinstance(domain, Interval):
        return float(_interval_measure(domain.a, domain.b))
    if isinstance(domain, HalfLine):
        return float(gaussian_tail(domain.s))
    if isinstance(domain, ConvexPolygon):
        return _polygon_measure(domain.array, domain.convex)
    if isinstance(domain, Disk):
        return _disk_measure(domain.center, domain.radius)
    raise TypeError(f"unsupported domain {domain!r}")


# --------------------------------------------------------------------------
# Meshes
# --------------------------------------------------------------------------

_GAUSS3_X = np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GAUSS3_W = np.array([5.0, 8.0, 5.0]) / 9.0

# degree-4 six point rule on the reference triangle (barycentric, weights sum to 1)
_A1, _B1, _W1 = 0.445948490915965, 0.108103018168070, 0.223381589678011
_A2, _B2, _W2 = 0.091576213509771, 0.816847572980459, 0.109951743655322
TRI6_BARY = np.array([
    [_B1, _A1, _A1], [_A1, _B1, _A1], [_A1, _A1, _B1],
    [_B2, _A2, _A2], [_A2, _B2, _A2], [_A2, _A2, _B2],
])
TRI6_W = np.array([_W1, _W1, _W1, _W2, _W2, _W2])


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh with Gaussian-weighted quadrature.

    ``qweights[e, q]`` already include the Gaussian density, so
    ``qweights.sum() + point_masses.sum()`` approximates ``gamma(K)``.
    ``shape[q, i]`` is the value of the i-th local hat function at
    quadrature point ``q`` (identical for every element).

    ``point_mass_nodes``/``point_masses`` carry measure that lives outside the
    meshed region: for a truncated half-line, the tail ``gamma({x_1 > X})`` is
    attached to the end node.  They enter integrals and the mass form, not
    the Dirichlet form.
    """

    dimension: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary_nodes: np.ndarray
    qpoints: np.ndarray
    qweights: np.ndarray
    shape: np.ndarray
    grads: np.ndarray
    volumes: np.ndarray
    h: float
    domain: Domain
    point_mass_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    point_masses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    geometric_error: float = 0.0
    measure_tolerance: float = 0.0

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def interior_nodes(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = False
        return np.flatnonzero(mask)

    @property
    def element_measures(self) -> np.ndarray:
        return self.qweights.sum(axis=1)

    @property
    def total_weight(self) -> float:
        return float(self.qweights.sum() + self.point_masses.sum())

    @property
    def max_diameter(self) -> float:
        x = self.nodes[self.elements]
        k = self.elements.shape[1]
        return float(max(np.linalg.norm(x[:, i] - x[:, j], axis=-1).max()
                         for i in range(k) for j in range(i + 1, k)))

    def obtuse_fraction(self) -> float:
        """Fraction of triangles with an angle above 90 degrees (0 in 1D)."""
        if self.dimension == 1:
            return 0.0
        x = self.nodes[self.elements]
        obtuse = np.zeros(len(x), dtype=bool)
        for i in range(3):
            u = x[:, (i + 1) % 3] - x[:, i]
            w = x[:, (i + 2) % 3] - x[:, i]
            obtuse |= np.einsum("ij,ij->i", u, w) < -1e-12 * np.einsum("ij,ij->i", u, u)
        return float(obtuse.mean())


def _mesh_1d(domain, h: float) -> Mesh:
    if isinstance(domain, Interval):
        a, b = domain.a, domain.b
    else:
        a, b = domain.s, domain.truncation
    n = max(int(math.ceil((b - a) / h - 1e-9)), 1)
    x = np.linspace(a, b, n + 1)
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    left, right = x[:-1], x[1:]
    half = 0.5 * (right - left)
    mid = 0.5 * (right + left)
    qp = mid[:, None] + half[:, None] * _GAUSS3_X[None, :]
    qw = half[:, None] * _GAUSS3_W[None, :] * _density(qp[..., None])
    ref = 0.5 * (1.0 + _GAUSS3_X)
    shape = np.column_stack([1.0 - ref, ref])
    length = right - left
    grads = np.stack([-1.0 / length, 1.0 / length], axis=1)[..., None]
    if isinstance(domain, Interval):
        boundary = np.array([0, n])
        pm_nodes, pm = np.zeros(0, dtype=int), np.zeros(0)
    else:
        boundary = np.array([0])
        pm_nodes, pm = np.array([n]), np.array([float(gaussian_tail(b))])
    mesh = Mesh(1, x[:, None], elements, boundary, qp[..., None], qw, shape, grads, length, h, domain,
                pm_nodes, pm)
    return _with_tolerance(mesh, 0.0, gaussian_measure(domain))


def _boundary_points(v: np.ndarray, spacing: float) -> np.ndarray:
    pts = []
    n = len(v)
    for i in range(n):
        p, q = v[i], v[(i + 1) % n]
        k = max(int(math.ceil(np.linalg.norm(q - p) / spacing - 1e-9)), 1)
        for j in range(k):
            pts.append(p + (q - p) * (j / k))
    return np.array(pts)


def _triangulate_convex(v: np.ndarray, h: float, convex: bool = True, fraction: float = _LATTICE_FRACTION):
    """Hexagonal lattice clipped to the polygon, Laplacian-smoothed, then Delaunay.

    For non-convex polygons (override path) triangles whose centroid falls
    outside are dropped, and the result must tile the polygon exactly.
    """
    a = fraction * h
    bpts = _boundary_points(v, a)
    lo, hi = v.min(axis=0), v.max(axis=0)
    dy = a * math.sqrt(3.0) / 2.0
    rows = []
    for j, y in enumerate(np.arange(lo[1], hi[1] + dy, dy)):
        xs = np.arange(lo[0] + (0.5 * a if j % 2 else 0.0), hi[0] + a, a)
        rows.append(np.column_stack([xs, np.full_like(xs, y)]))
    lat = np.vstack(rows)
    if convex:
        dist = np.full(len(lat), np.inf)
        n = len(v)
        for i in range(n):
            p, q = v[i], v[(i + 1) % n]
            e = q - p
            normal = np.array([e[1], -e[0]]) / np.linalg.norm(e)
            dist = np.minimum(dist, -(lat - p) @ normal)
    else:
        dist = np.where(_inside_polygon(lat, v), _segment_distance(lat, v), -1.0)
    lat = lat[dist > 0.5 * a]
    nb = len(bpts)
    pts = np.vstack([bpts, lat])

    def triangles():
        tri = Delaunay(pts).simplices
        if not convex:
            tri = tri[_inside_polygon(pts[tri].mean(axis=1), v)]
        return tri

    for _ in range(_SMOOTHING_SWEEPS):
        tri = triangles()
        i = tri.ravel()
        j = tri[:, [1, 2, 0]].ravel()
        adj = sparse.coo_matrix((np.ones(len(i)), (i, j)), shape=(len(pts), len(pts))).tocsr()
        adj = ((adj + adj.T) > 0).astype(float)
        deg = np.asarray(adj.sum(axis=1)).ravel()
        pts[nb:] = (adj @ pts)[nb:] / deg[nb:, None]
    tri = triangles()
    for _ in range(4):  # neighbouring dead triangles need a second pass
        n_before = len(tri)
        pts, tri = _split_dead_corners(pts, tri, nb)
        if len(tri) == n_before:
            break
    x = pts[tri]
    area2 = (x[:, 1, 0] - x[:, 0, 0]) * (x[:, 2, 1] - x[:, 0, 1]) - (x[:, 2, 0] - x[:, 0, 0]) * (x[:, 1, 1] - x[:, 0, 1])
    tri = np.where((area2 < 0)[:, None], tri[:, [0, 2, 1]], tri)
    if np.any(np.abs(area2) <= 1e-12 * h * h):
        raise ValidationError("triangulation produced a degenerate element")
    if not convex and abs(0.5 * np.abs(area2).sum() - abs(_signed_area(v))) > 1e-9 * abs(_signed_area(v)):
        raise ValidationError("triangulation does not tile the polygon; try a smaller h")
    return pts, tri, np.arange(nb)


def _split_dead_corners(pts: np.ndarray, tri: np.ndarray, nb: int):
    """Bisect the inner edge of triangles whose three vertices all lie on the boundary.

    Delaunay cuts convex corners off with such triangles; a P1 field
    vanishing on the boundary is identically zero on them, so they would
    drop out of every superlevel set.  The midpoint of the chord becomes an
    interior node; the two triangles sharing the chord are split in two,
    which cannot increase any element diameter.
    """
    dead = np.flatnonzero(np.all(tri < nb, axis=1))
    if len(dead) == 0:
        return pts, tri
    owner = {}
    for k, t in enumerate(tri):
        for j in range(3):
            owner.setdefault(frozenset((t[j], t[(j + 1) % 3])), []).append(k)
    new_pts, keep, extra = [], np.ones(len(tri), bool), []
    for k in dead:
        if not keep[k]:
            continue
        t = tri[k]
        for j in range(3):
            b1, b2 = t[j], t[(j + 1) % 3]
            pair = owner[frozenset((b1, b2))]
            if len(pair) != 2 or not all(keep[q] for q in pair):
                continue
            mid = len(pts) + len(new_pts)
            new_pts.append(0.5 * (pts[b1] + pts[b2]))
            for q in pair:
                c = next(n for n in tri[q] if n != b1 and n != b2)
                extra += [(b1, mid, c), (mid, b2, c)]
                keep[q] = False
            break
    if not new_pts:
        return pts, tri
    return np.vstack([pts, new_pts]), np.vstack([tri[keep], np.array(extra, dtype=tri.dtype)])


def _mesh_2d(domain, h: float) -> Mesh:
    if isinstance(domain, Disk):
        r = domain.radius
        spacing = _LATTICE_FRACTION * h
        n_side = max(int(math.ceil(math.pi / math.asin(min(1.0, spacing / (2 * r))))), 8)
        th = 2 * math.pi * np.arange(n_side) / n_side
        v = np.column_stack([domain.center[0] + r * np.cos(th), domain.center[1] + r * np.sin(th)])
        covered = _polygon_measure(v)
        geom_err = gaussian_measure(domain) - covered
    else:
        v = domain.array
        geom_err = 0.0
        covered = _polygon_measure(v, domain.convex)
    fraction = _LATTICE_FRACTION
    for _ in range(12):
        # smoothing can stretch a few elements past h on coarse meshes: refine the lattice
        nodes, elements, boundary = _triangulate_convex(v, h, getattr(domain, "convex", True), fraction)
        x = nodes[elements]
        if max(np.linalg.norm(x[:, i] - x[:, (i + 1) % 3], axis=1).max() for i in range(3)) <= h:
            break
        fraction *= 0.9
    else:
        raise ValidationError(f"could not mesh {domain!r} with element diameter <= {h}")
    x = nodes[elements]
    jac = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=-1)  # columns are edge vectors
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    area = 0.5 * det
    qp = np.einsum("qk,ekd->eqd", TRI6_BARY, x)
    qw = area[:, None] * TRI6_W[None, :] * _density(qp)
    inv_t = np.linalg.inv(jac).transpose(0, 2, 1)  # maps reference gradients to physical
    ref_grads = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    grads = np.einsum("kr,edr->ekd", ref_grads, inv_t)
    mesh = Mesh(2, nodes, elements, boundary, qp, qw, TRI6_BARY.copy(), grads, area, h, domain,
                geometric_error=float(geom_err))
    return _with_tolerance(mesh, abs(geom_err), covered)


def _with_tolerance(mesh: Mesh, geom: float, covered: float) -> Mesh:
    # advertised tolerance = measured quadrature defect on the meshed region (x2) + geometric defect
    quad_err = abs(mesh.total_weight - covered)
    object.__setattr__(mesh, "measure_tolerance", geom + 2.0 * quad_err + 1e-14)
    return mesh


def build_mesh(domain: Domain, h: float) -> Mesh:
    """Quasi-uniform mesh of ``domain`` with element diameter at most ``h``.

    Intervals are split uniformly; a half-line ``{x >= s}`` is truncated at
    ``max(s, 0) + 12`` and the tail measure is attached to the end node.
    Polygons are triangulated from a smoothed hexagonal lattice; disks are
    replaced by an inscribed regular polygon (chords <= h) and the committed
    measure defect is reported in ``Mesh.geometric_error``.
    """
    if not (h > 0 and math.isfinite(h)):
        raise ValidationError(f"mesh size must be positive, got {h}")
    if domain.dimension == 1:
        return _mesh_1d(domain, h)
    return _mesh_2d(domain, h)


# --------------------------------------------------------------------------
# Fields and integration
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScalarField:
    """Piecewise-linear field given by nodal values on a mesh."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.mesh.n_nodes,):
            raise ValidationError(
                f"field has {vals.shape} values but the mesh has {self.mesh.n_nodes} nodes")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, mesh: Mesh, func) -> "ScalarField":
        return cls(mesh, np.asarray(func(mesh.nodes), dtype=float).reshape(mesh.n_nodes))

    def gradients(self) -> np.ndarray:
        """Elementwise constant gradients, shape (n_elements, dimension)."""
        return np.einsum("ek,ekd->ed", self.values[self.mesh.elements], self.mesh.grads)

    def at_quadrature(self) -> np.ndarray:
        return self.values[self.mesh.elements] @ self.mesh.shape.T

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(self.mesh, self.values * c)

    __rmul__ = __mul__


def integrate_field(mesh: Mesh, field: ScalarField) -> float:
    """``int_K u dgamma`` by the mesh quadrature (exact for the P1 field against the rule)."""
    if field.mesh is not mesh:
        raise ValidationError("field is defined on a different mesh")
    vals = field.at_quadrature()
    return float(np.sum(mesh.qweights * vals) + np.dot(mesh.point_masses, field.values[mesh.point_mass_nodes]))


# short alias
integrate = integrate_field
