"""Exact periodic geometry kernel.

Inclusion shapes (spheres, flat-capped cylinders) living in a periodic unit
cell, minimum-image arithmetic, pairwise overlap predicates with penetration
depth, and point-membership queries (imperfection-aware).  All types are
immutable values and every operation is pure.

Conventions
-----------
* Cell coordinates are dimensionless in [0, 1); the cell edge is 1.
* Overlap predicates return a penetration depth: 0.0 means disjoint, and a
  grazing (exactly touching) pair is classified as disjoint.
* Every inclusion must fit inside a half-cell ball (circumradius < 0.5) so
  that a single periodic image suffices for membership; pair predicates
  still search neighbor images because two circumradii may exceed 0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from itertools import product

import numpy as np

_GJK_TOL = 1e-12
_GJK_MAX_ITER = 96


def wrap_unit(x):
    """Map coordinates into [0, 1)."""
    return np.asarray(x, dtype=float) % 1.0


def wrap_half(x):
    """Map coordinates into [-0.5, 0.5)."""
    x = np.asarray(x, dtype=float)
    return x - np.floor(x + 0.5)


@dataclass(frozen=True)
class PeriodicCell:
    """Cubic periodic cell; the toolkit works in normalized units."""

    edge_length: float = 1.0

    def __post_init__(self):
        if self.edge_length <= 0:
            raise ValueError("edge_length must be positive")


UNIT_CELL = PeriodicCell()


def periodic_displacement(a, b, cell: PeriodicCell = UNIT_CELL) -> np.ndarray:
    """Shortest displacement b - a, each component wrapped into [-0.5, 0.5)."""
    return wrap_half(np.asarray(b, dtype=float) - np.asarray(a, dtype=float)) * (
        cell.edge_length
    )


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    phase: int = 1

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not 0.0 < self.radius < 0.5:
            raise ValueError("sphere radius must lie in (0, 0.5)")

    @property
    def circumradius(self) -> float:
        return self.radius

    @property
    def volume(self) -> float:
        return 4.0 * math.pi * self.radius**3 / 3.0


@dataclass(frozen=True)
class Cylinder:
    """Flat-capped finite cylinder: |axial| <= half_length, radial <= radius."""

    center: np.ndarray
    axis: np.ndarray
    radius: float
    half_length: float
    phase: int = 1

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        axis = np.asarray(self.axis, dtype=float)
        norm = float(np.linalg.norm(axis))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError("cylinder axis must be a unit vector")
        object.__setattr__(self, "axis", axis)
        if self.radius <= 0 or self.half_length <= 0:
            raise ValueError("cylinder radius and half_length must be positive")

    @property
    def aspect_ratio(self) -> float:
        """Length over diameter."""
        return self.half_length / self.radius

    @property
    def circumradius(self) -> float:
        return math.hypot(self.radius, self.half_length)

    @property
    def volume(self) -> float:
        return 2.0 * math.pi * self.radius**2 * self.half_length


Inclusion = Sphere | Cylinder


@dataclass(frozen=True)
class SurfaceWaves:
    """Deterministic sinusoidal surface modulation applied to all inclusions.

    Spheres get r_eff = r * (1 + a*sin(m*theta)*sin(m*phi)); cylinders get a
    lateral modulation r_eff(z) = r * (1 + a*sin(m*pi*z/h)) with caps kept
    flat.  volume_factor_* record the resulting drift of the shape volume
    relative to nominal.
    """

    amplitude: float
    mode_count: int
    volume_factor_sphere: float = 1.0
    volume_factor_cylinder: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.amplitude < 1.0:
            raise ValueError("wave amplitude must lie in [0, 1)")
        if self.mode_count < 0:
            raise ValueError("wave mode count must be >= 0")


@dataclass(frozen=True)
class Microstructure:
    """Vector-form periodic microstructure.

    `inclusions` is the nominal non-overlapping population.  Imperfections are
    overlaid on membership queries: surface waves modulate inclusion radii,
    material inside `defect_zones` is suppressed, and `compensation_spheres`
    re-add the suppressed volume elsewhere in the matrix.
    """

    inclusions: tuple
    cell: PeriodicCell = UNIT_CELL
    waves: SurfaceWaves | None = None
    defect_zones: tuple = ()
    compensation_spheres: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "inclusions", tuple(self.inclusions))
        object.__setattr__(self, "defect_zones", tuple(self.defect_zones))
        object.__setattr__(
            self, "compensation_spheres", tuple(self.compensation_spheres)
        )
        for inc in self.inclusions:
            if inc.circumradius >= 0.5:
                raise ValueError("inclusion circumradius must stay below 0.5")

    @property
    def phase_count(self) -> int:
        phases = [inc.phase for inc in self.inclusions] + [
            s.phase for s in self.compensation_spheres
        ]
        return max(phases, default=0) + 1

    def with_imperfections(self, **kwargs) -> "Microstructure":
        return replace(self, **kwargs)


# ---------------------------------------------------------------------------
# membership
# ---------------------------------------------------------------------------


def sphere_mask(disp: np.ndarray, radius: float, waves: SurfaceWaves | None = None):
    """Inside test for displacements (already wrapped) relative to the center."""
    d = np.asarray(disp, dtype=float)
    r2 = np.einsum("...i,...i->...", d, d)
    if waves is None or waves.amplitude == 0.0 or waves.mode_count == 0:
        return r2 < radius * radius
    rn = np.sqrt(r2)
    safe = np.where(rn > 0.0, rn, 1.0)
    theta = np.arccos(np.clip(d[..., 2] / safe, -1.0, 1.0))
    phi = np.arctan2(d[..., 1], d[..., 0])
    m = waves.mode_count
    r_eff = radius * (1.0 + waves.amplitude * np.sin(m * theta) * np.sin(m * phi))
    return rn < r_eff


def cylinder_mask(
    disp: np.ndarray,
    axis: np.ndarray,
    radius: float,
    half_length: float,
    waves: SurfaceWaves | None = None,
):
    """Inside test for a flat-capped cylinder, optional lateral wave."""
    d = np.asarray(disp, dtype=float)
    ax = np.einsum("...i,i->...", d, np.asarray(axis, dtype=float))
    rad2 = np.einsum("...i,...i->...", d, d) - ax * ax
    rad2 = np.maximum(rad2, 0.0)
    if waves is None or waves.amplitude == 0.0 or waves.mode_count == 0:
        r_eff = radius
    else:
        m = waves.mode_count
        r_eff = radius * (
            1.0 + waves.amplitude * np.sin(m * math.pi * ax / half_length)
        )
    return (np.abs(ax) < half_length) & (rad2 < r_eff * r_eff)


def inclusion_mask(inc: Inclusion, disp: np.ndarray, waves: SurfaceWaves | None):
    if isinstance(inc, Sphere):
        return sphere_mask(disp, inc.radius, waves)
    return cylinder_mask(disp, inc.axis, inc.radius, inc.half_length, waves)


def points_phase(points: np.ndarray, m: Microstructure) -> np.ndarray:
    """Phase labels for an (..., 3) array of points in [0, 1)^3.

    Order-independent composition: the highest phase id wins on (transient)
    overlaps, defect zones suppress inclusion material, compensation spheres
    re-add material afterwards.
    """
    points = np.asarray(points, dtype=float)
    labels = np.zeros(points.shape[:-1], dtype=np.uint8)
    for inc in m.inclusions:
        disp = wrap_half(points - inc.center)
        hit = inclusion_mask(inc, disp, m.waves)
        labels = np.maximum(labels, np.where(hit, np.uint8(inc.phase), np.uint8(0)))
    if m.defect_zones:
        in_zone = np.zeros(points.shape[:-1], dtype=bool)
        for zone in m.defect_zones:
            in_zone |= sphere_mask(wrap_half(points - zone.center), zone.radius)
        labels = np.where(in_zone, np.uint8(0), labels)
    for patch in m.compensation_spheres:
        hit = sphere_mask(wrap_half(points - patch.center), patch.radius)
        labels = np.maximum(labels, np.where(hit, np.uint8(patch.phase), np.uint8(0)))
    return labels


def point_in_microstructure(p, m: Microstructure) -> int:
    """Phase id at a point (0 = matrix), minimum-image and imperfection-aware."""
    return int(points_phase(np.asarray(p, dtype=float)[None, :], m)[0])


def analytic_volume_fraction(m: Microstructure) -> np.ndarray:
    """Closed-form phase volume fractions of the nominal inclusion population.

    Exact for non-overlapping structures; an upper bound per phase when
    overlaps are permitted.  Imperfections are not included (the wave volume
    factors and the defect bookkeeping track their drift separately).
    """
    n_phases = max(m.phase_count, 1)
    fractions = np.zeros(n_phases)
    cell_volume = m.cell.edge_length**3
    for inc in m.inclusions:
        fractions[inc.phase] += inc.volume / cell_volume
    fractions[0] = 1.0 - fractions[1:].sum()
    return fractions


# ---------------------------------------------------------------------------
# wave volume drift (Gauss quadrature over the modulated shapes)
# ---------------------------------------------------------------------------


def wave_volume_factor_sphere(amplitude: float, mode_count: int, order: int = 64):
    """Volume of a wave-modulated unit sphere relative to the unperturbed one."""
    if amplitude == 0.0 or mode_count == 0:
        return 1.0
    u, wu = np.polynomial.legendre.leggauss(order)  # u = cos(theta)
    phi = (np.arange(4 * order) + 0.5) * (2.0 * math.pi / (4 * order))
    theta = np.arccos(u)
    s = np.sin(mode_count * theta)[:, None] * np.sin(mode_count * phi)[None, :]
    integrand = (1.0 + amplitude * s) ** 3
    inner = integrand.mean(axis=1) * 2.0 * math.pi
    return float((wu @ inner) / (4.0 * math.pi))


def wave_volume_factor_cylinder(amplitude: float, mode_count: int, order: int = 64):
    """Volume of a wave-modulated cylinder lateral profile relative to nominal."""
    if amplitude == 0.0 or mode_count == 0:
        return 1.0
    u, wu = np.polynomial.legendre.leggauss(order)  # u = z / h in [-1, 1]
    profile = (1.0 + amplitude * np.sin(mode_count * math.pi * u)) ** 2
    return float((wu @ profile) / 2.0)


# ---------------------------------------------------------------------------
# scalar closest-point helpers (hot path for packing)
# ---------------------------------------------------------------------------


def _segment_segment(p1, d1, l1, p2, d2, l2):
    """Closest points of segments p_i + t*d_i, t in [0, l_i].

    Returns (dist, s, t, c1, c2); the clamped-parameter algorithm is robust
    for parallel and degenerate configurations.
    """
    r = p1 - p2
    a = l1 * l1
    e = l2 * l2
    b = float(np.dot(d1, d2)) * l1 * l2
    c = float(np.dot(d1, r)) * l1
    f = float(np.dot(d2, r)) * l2
    denom = a * e - b * b
    if denom > 1e-14 * a * e:
        s = min(max((b * f - c * e) / denom, 0.0), 1.0)
    else:
        s = 0.0
    t = (b * s + f) / e
    if t < 0.0:
        t = 0.0
        s = min(max(-c / a, 0.0), 1.0)
    elif t > 1.0:
        t = 1.0
        s = min(max((b - c) / a, 0.0), 1.0)
    c1 = p1 + (s * l1) * d1
    c2 = p2 + (t * l2) * d2
    return float(np.linalg.norm(c1 - c2)), s, t, c1, c2


def _point_capped_signed_distance(disp, axis, radius, half_length):
    """Signed Euclidean distance from a point to a capped-cylinder boundary.

    Negative inside the solid.  disp is the point position relative to the
    cylinder center.
    """
    ax = float(np.dot(disp, axis))
    rad = math.sqrt(max(float(np.dot(disp, disp)) - ax * ax, 0.0))
    da = abs(ax) - half_length
    dr = rad - radius
    if da > 0.0 or dr > 0.0:
        return math.hypot(max(da, 0.0), max(dr, 0.0))
    return max(da, dr)


def _cylinder_support(center, axis, radius, half_length, direction):
    """Farthest point of a capped cylinder in a given direction."""
    da = float(np.dot(direction, axis))
    p = center + (half_length if da >= 0.0 else -half_length) * axis
    perp = direction - da * axis
    norm = float(np.linalg.norm(perp))
    if norm > 1e-12:
        p = p + (radius / norm) * perp
    return p


def _closest_on_simplex(points):
    """Min-norm point of the convex hull of <= 4 points.

    Enumerates the faces of the simplex, solving the equality-constrained
    least-squares problem on each affine hull and keeping feasible
    (barycentric >= 0) candidates.  Returns (v, kept_points).
    """
    best = None
    n = len(points)
    for bits in range(1, 1 << n):
        subset = [points[i] for i in range(n) if bits >> i & 1]
        m = len(subset)
        if m == 1:
            lam = [1.0]
        else:
            x0 = subset[0]
            vs = [p - x0 for p in subset[1:]]
            g = np.array([[float(np.dot(u, w)) for w in vs] for u in vs])
            rhs = np.array([-float(np.dot(u, x0)) for u in vs])
            try:
                sol = np.linalg.solve(g, rhs)
            except np.linalg.LinAlgError:
                continue
            lam = [1.0 - float(sol.sum())] + [float(x) for x in sol]
        if min(lam) < -1e-12:
            continue
        v = sum(l * p for l, p in zip(lam, subset))
        d2 = float(np.dot(v, v))
        if best is None or d2 < best[0] - 1e-18:
            best = (d2, v, subset)
    return best[1], best[2]


def _gjk_distance(sup_a, sup_b, start_dir):
    """GJK distance between two convex solids given by support functions.

    Returns 0.0 when the solids intersect, else the separation distance.
    """
    d = np.asarray(start_dir, dtype=float)
    if float(np.dot(d, d)) < 1e-20:
        d = np.array([1.0, 0.0, 0.0])
    v = sup_a(d) - sup_b(-d)
    simplex = [v]
    dist2 = float(np.dot(v, v))
    for _ in range(_GJK_MAX_ITER):
        if dist2 < _GJK_TOL * _GJK_TOL:
            return 0.0
        w = sup_a(-v) - sup_b(v)
        # support-plane certificate: no further progress possible
        if dist2 - float(np.dot(v, w)) <= 1e-10 * max(dist2, 1e-12):
            return math.sqrt(dist2)
        simplex.append(w)
        v, simplex = _closest_on_simplex(simplex)
        new_dist2 = float(np.dot(v, v))
        if new_dist2 >= dist2 - 1e-18:
            return math.sqrt(new_dist2)
        dist2 = new_dist2
        if len(simplex) == 4:
            return 0.0  # origin enclosed by a full tetrahedron
    return math.sqrt(dist2)


def _capped_cylinders_distance(c1: Cylinder, c2_center, c2: Cylinder):
    """GJK distance between two capped cylinders (c2 translated to c2_center)."""
    sup_a = lambda d: _cylinder_support(
        c1.center, c1.axis, c1.radius, c1.half_length, d
    )
    sup_b = lambda d: _cylinder_support(
        c2_center, c2.axis, c2.radius, c2.half_length, d
    )
    return _gjk_distance(sup_a, sup_b, c2_center - c1.center)


def _cylinder_pair_depth(c1: Cylinder, c2: Cylinder, d):
    """Penetration measure for two capped cylinders at center offset d.

    Lateral contacts use (r1 + r2) - axis distance; cap-involved contacts use
    the tightest translation bound over a set of candidate contact normals.
    Returns (depth, normal, contact_point) with depth 0.0 when disjoint;
    the normal pushes body 2 away from body 1.
    """
    p1 = -c1.half_length * c1.axis
    p2 = d - c2.half_length * c2.axis
    dist, s, t, q1, q2 = _segment_segment(
        p1, c1.axis, 2.0 * c1.half_length, p2, c2.axis, 2.0 * c2.half_length
    )
    rsum = c1.radius + c2.radius
    if dist >= rsum:
        return 0.0, None, None
    eps = 1e-12
    interior = eps < s < 1.0 - eps and eps < t < 1.0 - eps
    if interior:
        if dist > eps:
            normal = (q2 - q1) / dist
        else:
            normal = np.cross(c1.axis, c2.axis)
            nn = float(np.linalg.norm(normal))
            normal = normal / nn if nn > 1e-9 else _any_perpendicular(c1.axis)
        return rsum - dist, normal, 0.5 * (q1 + q2)
    if _capped_cylinders_distance(c1, d, c2) > 0.0:
        return 0.0, None, None
    # cap-involved overlap: translation bound over candidate normals
    candidates = []
    if dist > eps:
        candidates.append((q2 - q1) / dist)
    cr = np.cross(c1.axis, c2.axis)
    nn = float(np.linalg.norm(cr))
    if nn > 1e-9:
        candidates.append(cr / nn)
    candidates.append(c1.axis)
    candidates.append(c2.axis)
    for axis in (c1.axis, c2.axis):
        perp = d - float(np.dot(d, axis)) * axis
        nn = float(np.linalg.norm(perp))
        if nn > 1e-9:
            candidates.append(perp / nn)
    best_depth = None
    best_normal = None
    for n in candidates:
        s1 = c1.half_length * abs(float(np.dot(n, c1.axis))) + c1.radius * math.sqrt(
            max(0.0, 1.0 - float(np.dot(n, c1.axis)) ** 2)
        )
        s2 = c2.half_length * abs(float(np.dot(n, c2.axis))) + c2.radius * math.sqrt(
            max(0.0, 1.0 - float(np.dot(n, c2.axis)) ** 2)
        )
        p = s1 + s2 - abs(float(np.dot(d, n)))
        if best_depth is None or p < best_depth:
            best_depth = p
            best_normal = n if float(np.dot(d, n)) >= 0.0 else -n
    best_depth = max(best_depth, _GJK_TOL)
    point = 0.5 * (
        _cylinder_support(np.zeros(3), c1.axis, c1.radius, c1.half_length, best_normal)
        + _cylinder_support(d, c2.axis, c2.radius, c2.half_length, -best_normal)
    )
    return best_depth, best_normal, point


def _any_perpendicular(v):
    w = np.array([1.0, 0.0, 0.0]) if abs(v[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    p = np.cross(v, w)
    return p / float(np.linalg.norm(p))


def _sphere_cylinder_depth(s: Sphere, c: Cylinder, d):
    """Depth, normal (pushing the cylinder away) and contact point.

    d is the sphere-center position relative to the cylinder center; the
    signed point-to-solid distance makes the depth grow to s.radius + c.radius
    for a sphere swallowing the axis.
    """
    sd = _point_capped_signed_distance(d, c.axis, c.radius, c.half_length)
    depth = s.radius - sd
    if depth <= 0.0:
        return 0.0, None, None
    ax = float(np.dot(d, c.axis))
    rad_vec = d - ax * c.axis
    rad = float(np.linalg.norm(rad_vec))
    if sd >= 0.0 or c.radius - rad <= c.half_length - abs(ax):
        # lateral feature closest (also covers outside configurations)
        if rad > 1e-12:
            normal = -rad_vec / rad
        else:
            normal = -_any_perpendicular(c.axis)
        if abs(ax) > c.half_length:  # cap region: blend axial component
            axial_out = abs(ax) - c.half_length
            n = rad_vec / rad if rad > 1e-12 else np.zeros(3)
            n = n * max(rad - c.radius, 0.0) + c.axis * math.copysign(axial_out, ax)
            nn = float(np.linalg.norm(n))
            if nn > 1e-12:
                normal = -n / nn
    else:
        normal = -c.axis if ax >= 0.0 else c.axis
    # application point: closest point of the cylinder solid to the sphere
    ax_cl = min(max(ax, -c.half_length), c.half_length)
    rad_cl = min(rad, c.radius)
    rad_dir = rad_vec / rad if rad > 1e-12 else np.zeros(3)
    contact = ax_cl * c.axis + rad_cl * rad_dir
    return depth, normal, contact


# ---------------------------------------------------------------------------
# public overlap predicates (minimum image + neighbor images)
# ---------------------------------------------------------------------------

_IMAGE_OFFSETS = np.array(list(product((-1.0, 0.0, 1.0), repeat=3)))


def _candidate_offsets(base, reach):
    """Neighbor-image displacements whose norm can still allow contact."""
    shifted = base[None, :] + _IMAGE_OFFSETS
    keep = np.einsum("ij,ij->i", shifted, shifted) < reach * reach
    return shifted[keep]


def sphere_sphere_overlap(
    s1: Sphere, s2: Sphere, cell: PeriodicCell = UNIT_CELL
) -> float:
    """Penetration depth (r1 + r2 - distance), 0.0 when disjoint or touching."""
    base = wrap_half(s2.center - s1.center)
    rsum = s1.radius + s2.radius
    depth = 0.0
    for d in _candidate_offsets(base, rsum):
        dist = float(np.linalg.norm(d))
        if dist < rsum:
            depth = max(depth, rsum - dist)
    return depth


def sphere_cylinder_overlap(
    s: Sphere, c: Cylinder, cell: PeriodicCell = UNIT_CELL
) -> float:
    """Depth of a sphere against the closed capped-cylinder solid."""
    base = wrap_half(s.center - c.center)
    reach = s.radius + c.circumradius
    depth = 0.0
    for d in _candidate_offsets(base, reach):
        got, _, _ = _sphere_cylinder_depth(s, c, d)
        depth = max(depth, got)
    return depth


def cylinder_cylinder_overlap(
    c1: Cylinder, c2: Cylinder, cell: PeriodicCell = UNIT_CELL
) -> float:
    """Depth of two capped-cylinder solids (exact disjoint/overlap split)."""
    base = wrap_half(c2.center - c1.center)
    reach = c1.circumradius + c2.circumradius
    depth = 0.0
    for d in _candidate_offsets(base, reach):
        got, _, _ = _cylinder_pair_depth(c1, c2, d)
        depth = max(depth, got)
    return depth


def overlap_depth(a: Inclusion, b: Inclusion, cell: PeriodicCell = UNIT_CELL) -> float:
    """Penetration depth between two inclusions of any shape mix."""
    if isinstance(a, Sphere) and isinstance(b, Sphere):
        return sphere_sphere_overlap(a, b, cell)
    if isinstance(a, Sphere) and isinstance(b, Cylinder):
        return sphere_cylinder_overlap(a, b, cell)
    if isinstance(a, Cylinder) and isinstance(b, Sphere):
        return sphere_cylinder_overlap(b, a, cell)
    return cylinder_cylinder_overlap(a, b, cell)


@dataclass(frozen=True)
class Contact:
    """One image contact: depth, unit normal pushing body 2 off body 1, and a
    representative application point relative to body 1's center."""

    depth: float
    normal: np.ndarray
    point: np.ndarray
    offset: np.ndarray  # image displacement of body 2's center used


def pair_contacts(a: Inclusion, b: Inclusion, cell: PeriodicCell = UNIT_CELL):
    """All neighbor-image contacts between two inclusions (for relaxation)."""
    swap = isinstance(a, Cylinder) and isinstance(b, Sphere)
    if swap:
        a, b = b, a
    base = wrap_half(b.center - a.center)
    reach = a.circumradius + b.circumradius
    contacts = []
    for d in _candidate_offsets(base, reach):
        if isinstance(a, Sphere) and isinstance(b, Sphere):
            dist = float(np.linalg.norm(d))
            rsum = a.radius + b.radius
            if dist >= rsum:
                continue
            normal = d / dist if dist > 1e-12 else np.array([1.0, 0.0, 0.0])
            contacts.append(Contact(rsum - dist, normal, 0.5 * d, d))
        elif isinstance(a, Sphere):
            # cylinder frame: -d is the sphere position seen from the
            # image-shifted cylinder center; the returned normal already
            # pushes the cylinder (body 2) away from the sphere.
            depth, normal_c, point = _sphere_cylinder_depth(a, b, -d)
            if depth <= 0.0:
                continue
            contacts.append(Contact(depth, normal_c, point + d, d))
        else:
            depth, normal, point = _cylinder_pair_depth(a, b, d)
            if depth <= 0.0:
                continue
            contacts.append(Contact(depth, normal, point, d))
    if swap:
        contacts = [
            Contact(c.depth, -c.normal, c.point - c.offset, -c.offset)
            for c in contacts
        ]
    return contacts


def max_overlap_depth(m: Microstructure) -> float:
    """Largest pairwise penetration depth in a microstructure."""
    worst = 0.0
    incs = m.inclusions
    for i in range(len(incs)):
        for j in range(i + 1, len(incs)):
            worst = max(worst, overlap_depth(incs[i], incs[j], m.cell))
    return worst


# ---------------------------------------------------------------------------
# vector-form serialization (bit-exact at 17 significant digits)
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def to_vector_text(m: Microstructure) -> str:
    """Serialize to the plain-text vector form.

    Header line carries the cell edge and the phase count; one record per
    inclusion (S/C), then imperfection records: W (waves), Z (defect zone),
    P (compensation sphere).
    """
    lines = [f"{_fmt(m.cell.edge_length)} {max(m.phase_count, 2)}"]
    for inc in m.inclusions:
        if isinstance(inc, Sphere):
            c = inc.center
            lines.append(f"S {_fmt(c[0])} {_fmt(c[1])} {_fmt(c[2])} {_fmt(inc.radius)}")
        else:
            c, a = inc.center, inc.axis
            lines.append(
                "C "
                + " ".join(_fmt(v) for v in (c[0], c[1], c[2], a[0], a[1], a[2]))
                + f" {_fmt(inc.radius)} {_fmt(inc.half_length)}"
            )
    if m.waves is not None:
        w = m.waves
        lines.append(
            f"W {_fmt(w.amplitude)} {w.mode_count} "
            f"{_fmt(w.volume_factor_sphere)} {_fmt(w.volume_factor_cylinder)}"
        )
    for z in m.defect_zones:
        c = z.center
        lines.append(f"Z {_fmt(c[0])} {_fmt(c[1])} {_fmt(c[2])} {_fmt(z.radius)}")
    for p in m.compensation_spheres:
        c = p.center
        lines.append(f"P {_fmt(c[0])} {_fmt(c[1])} {_fmt(c[2])} {_fmt(p.radius)}")
    return "\n".join(lines) + "\n"


def from_vector_text(text: str) -> Microstructure:
    """Parse the vector form written by to_vector_text."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty vector-form input")
    head = lines[0].split()
    edge = float(head[0])
    inclusions = []
    waves = None
    zones = []
    patches = []
    for ln in lines[1:]:
        parts = ln.split()
        tag, vals = parts[0], [float(x) for x in parts[1:]]
        if tag == "S":
            inclusions.append(Sphere(np.array(vals[0:3]), vals[3]))
        elif tag == "C":
            inclusions.append(
                Cylinder(np.array(vals[0:3]), np.array(vals[3:6]), vals[6], vals[7])
            )
        elif tag == "W":
            waves = SurfaceWaves(vals[0], int(parts[2]), vals[2], vals[3])
        elif tag == "Z":
            zones.append(Sphere(np.array(vals[0:3]), vals[3]))
        elif tag == "P":
            patches.append(Sphere(np.array(vals[0:3]), vals[3]))
        else:
            raise ValueError(f"unknown record tag {tag!r}")
    return Microstructure(
        tuple(inclusions),
        PeriodicCell(edge),
        waves=waves,
        defect_zones=tuple(zones),
        compensation_spheres=tuple(patches),
    )


def save_vector_file(m: Microstructure, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(to_vector_text(m))


def load_vector_file(path) -> Microstructure:
    with open(path, "r", encoding="ascii") as fh:
        return from_vector_text(fh.read())
