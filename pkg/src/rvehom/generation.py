"""Random microstructure generation.

Two packing routes produce non-overlapping sphere/cylinder mixtures in the
periodic unit cell: sequential rejection placement (fast up to moderate
volume fractions) and relaxation of an initially overlapping population by
pairwise repulsive displacements (reaches dense fractions).  Imperfection
operators overlay surface waves and defect zones on a packed structure.

Generation of a single microstructure is a sequential stochastic process;
distinct generations with distinct seeds share no mutable state.  All
randomness flows through an explicitly passed numpy Generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    Cylinder,
    Microstructure,
    Sphere,
    SurfaceWaves,
    max_overlap_depth,
    overlap_depth,
    pair_contacts,
    points_phase,
    wave_volume_factor_cylinder,
    wave_volume_factor_sphere,
    wrap_unit,
)


class GenerationError(Exception):
    """Base class for generation failures."""


class GenerationStalled(GenerationError):
    """Rejection sampling exhausted its attempt budget.

    Carries the counts achieved before stalling.
    """

    def __init__(self, message, placed_cylinders=0, placed_spheres=0):
        super().__init__(message)
        self.placed_cylinders = placed_cylinders
        self.placed_spheres = placed_spheres


class RelaxationFailed(GenerationError):
    """Relaxation hit the step budget with overlap energy above threshold."""

    def __init__(self, message, energy=None, steps=None):
        super().__init__(message)
        self.energy = energy
        self.steps = steps


class CompensationFailed(GenerationError):
    """Defect-zone compensation volume could not be placed in the matrix."""


@dataclass(frozen=True)
class GenerationSpec:
    """Target composition of one random microstructure."""

    f_sp: float = 0.0
    f_cyl: float = 0.0
    n_sp: int = 0
    n_cyl: int = 0
    aspect_ratio: float = 3.0
    rng_seed: int = 0
    method: str = "rsa"

    def __post_init__(self):
        if not 0.0 <= self.f_sp <= 0.6 or not 0.0 <= self.f_cyl <= 0.6:
            raise ValueError("family volume fractions must lie in [0, 0.6]")
        if self.f_sp + self.f_cyl > 0.6:
            raise ValueError("total volume fraction must not exceed 0.6")
        if self.n_sp < 0 or self.n_cyl < 0 or self.n_sp + self.n_cyl < 1:
            raise ValueError("need at least one inclusion")
        if self.f_sp > 0 and self.n_sp == 0 or self.f_cyl > 0 and self.n_cyl == 0:
            raise ValueError("nonzero volume fraction needs a nonzero count")
        if self.aspect_ratio <= 0:
            raise ValueError("aspect ratio must be positive")
        if self.method not in ("rsa", "md"):
            raise ValueError("method must be 'rsa' or 'md'")

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


@dataclass(frozen=True)
class RsaLimits:
    max_attempts_per_inclusion: int = 1_000_000

    def __post_init__(self):
        if self.max_attempts_per_inclusion < 1:
            raise ValueError("attempt budget must be >= 1")


@dataclass(frozen=True)
class MdParams:
    """Relaxation parameters.

    dt is the dimensionless fraction of each contact's penetration depth a
    body moves per step; per-step displacement is capped at a fraction of the
    smallest radius so stacked contacts cannot overshoot.
    """

    epsilon_stop: float = 1e-12
    dt: float = 0.2
    max_steps: int = 20_000
    damping: float = 1.0
    max_move_fraction: float = 0.3

    def __post_init__(self):
        if self.epsilon_stop <= 0:
            raise ValueError("epsilon_stop must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_move_fraction <= 0:
            raise ValueError("max_move_fraction must be positive")


@dataclass(frozen=True)
class ImperfectionSpec:
    wave_amplitude: float = 0.0
    wave_count: int = 0
    defect_zone_fraction: float = 0.0
    defect_zone_count: int = 0

    def __post_init__(self):
        if not 0.0 <= self.wave_amplitude < 1.0:
            raise ValueError("wave amplitude must lie in [0, 1)")
        if self.wave_count < 0 or self.defect_zone_count < 0:
            raise ValueError("counts must be >= 0")
        if not 0.0 <= self.defect_zone_fraction <= 0.2:
            raise ValueError("defect zone fraction must lie in [0, 0.2]")


@dataclass(frozen=True)
class InclusionDimensions:
    sphere_radius: float | None
    cyl_radius: float | None
    cyl_half_length: float | None


def compute_inclusion_dimensions(spec: GenerationSpec) -> InclusionDimensions:
    """Equal-size inclusion dimensions realizing the target fractions.

    sphere_radius = (3 f_sp / (4 pi n_sp))^(1/3); the cylinder radius solves
    2 pi * aspect * r^3 * n_cyl = f_cyl with half_length = aspect * r (the
    aspect ratio is length over diameter).
    """
    sphere_radius = None
    cyl_radius = None
    cyl_half = None
    if spec.f_sp > 0:
        sphere_radius = (3.0 * spec.f_sp / (4.0 * math.pi * spec.n_sp)) ** (1.0 / 3.0)
        if sphere_radius >= 0.5:
            raise GenerationError(
                f"sphere radius {sphere_radius:.4f} exceeds the cell half-width"
            )
    if spec.f_cyl > 0:
        cyl_radius = (
            spec.f_cyl / (2.0 * math.pi * spec.aspect_ratio * spec.n_cyl)
        ) ** (1.0 / 3.0)
        cyl_half = spec.aspect_ratio * cyl_radius
        if math.hypot(cyl_radius, cyl_half) >= 0.5:
            raise GenerationError(
                f"cylinder half-diagonal {math.hypot(cyl_radius, cyl_half):.4f} "
                "exceeds the cell half-width"
            )
    return InclusionDimensions(sphere_radius, cyl_radius, cyl_half)


def _random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    n = float(np.linalg.norm(v))
    while n < 1e-12:
        v = rng.normal(size=3)
        n = float(np.linalg.norm(v))
    return v / n


def generate_rsa(
    spec: GenerationSpec,
    limits: RsaLimits = RsaLimits(),
    rng: np.random.Generator | None = None,
) -> Microstructure:
    """Sequential rejection packing: cylinders first, then spheres.

    Each proposed inclusion is redrawn until it clears every previously
    accepted one; the result is deterministic for a fixed seed.  Raises
    GenerationStalled when a single inclusion exhausts the attempt budget.
    """
    if rng is None:
        rng = spec.make_rng()
    dims = compute_inclusion_dimensions(spec)
    placed: list = []
    n_cyl_placed = 0
    for _ in range(spec.n_cyl if spec.f_cyl > 0 else 0):
        for attempt in range(limits.max_attempts_per_inclusion):
            cand = Cylinder(
                rng.random(3), _random_unit_vector(rng), dims.cyl_radius,
                dims.cyl_half_length,
            )
            if all(overlap_depth(cand, other) == 0.0 for other in placed):
                placed.append(cand)
                n_cyl_placed += 1
                break
        else:
            raise GenerationStalled(
                f"cylinder placement stalled after "
                f"{limits.max_attempts_per_inclusion} attempts",
                placed_cylinders=n_cyl_placed,
            )
    n_sp_placed = 0
    for _ in range(spec.n_sp if spec.f_sp > 0 else 0):
        for attempt in range(limits.max_attempts_per_inclusion):
            cand = Sphere(rng.random(3), dims.sphere_radius)
            if all(overlap_depth(cand, other) == 0.0 for other in placed):
                placed.append(cand)
                n_sp_placed += 1
                break
        else:
            raise GenerationStalled(
                f"sphere placement stalled after "
                f"{limits.max_attempts_per_inclusion} attempts",
                placed_cylinders=n_cyl_placed,
                placed_spheres=n_sp_placed,
            )
    return Microstructure(tuple(placed))


def _initial_placement(spec: GenerationSpec, rng: np.random.Generator) -> list:
    """Random placement disregarding overlaps (cylinders first)."""
    dims = compute_inclusion_dimensions(spec)
    placed = []
    for _ in range(spec.n_cyl if spec.f_cyl > 0 else 0):
        placed.append(
            Cylinder(
                rng.random(3), _random_unit_vector(rng), dims.cyl_radius,
                dims.cyl_half_length,
            )
        )
    for _ in range(spec.n_sp if spec.f_sp > 0 else 0):
        placed.append(Sphere(rng.random(3), dims.sphere_radius))
    return placed


def _relaxation_state(inclusions):
    centers = np.array([inc.center for inc in inclusions])
    axes = [
        np.array(inc.axis) if isinstance(inc, Cylinder) else None
        for inc in inclusions
    ]
    return centers, axes


def _rebuild(inclusions, centers, axes):
    out = []
    for inc, c, a in zip(inclusions, centers, axes):
        if isinstance(inc, Cylinder):
            out.append(Cylinder(wrap_unit(c), a, inc.radius, inc.half_length))
        else:
            out.append(Sphere(wrap_unit(c), inc.radius))
    return out


def _near_pairs(inclusions, centers, circum):
    """Upper-triangular pairs whose minimum-image distance allows contact."""
    diff = centers[None, :, :] - centers[:, None, :]
    diff -= np.floor(diff + 0.5)
    dist2 = np.einsum("ijk,ijk->ij", diff, diff)
    reach = circum[:, None] + circum[None, :]
    iu, ju = np.triu_indices(len(inclusions), k=1)
    close = dist2[iu, ju] < reach[iu, ju] ** 2
    return iu[close], ju[close]


def _relaxation_step(inclusions, centers, circum, dt, damping, max_move):
    """One damped explicit step of the pairwise repulsion; returns energy.

    Forces are linear in penetration depth and act along the contact normal
    at the closest points; cylinders additionally receive a torque that
    rotates the axis on the unit sphere.  Each body's displacement (and
    rotation angle) per step is capped at max_move.
    """
    n = len(inclusions)
    axes = [
        np.array(inc.axis) if isinstance(inc, Cylinder) else None
        for inc in inclusions
    ]
    forces = np.zeros((n, 3))
    torques = np.zeros((n, 3))
    energy = 0.0
    for i, j in zip(*_near_pairs(inclusions, centers, circum)):
        for contact in pair_contacts(inclusions[i], inclusions[j]):
            energy += contact.depth * contact.depth
            f = contact.depth * contact.normal
            forces[i] -= f
            forces[j] += f
            if axes[i] is not None:
                torques[i] += np.cross(contact.point, -f)
            if axes[j] is not None:
                # lever arm about body j's image center
                arm = contact.point - contact.offset
                torques[j] += np.cross(arm, f)
    if energy == 0.0:
        return inclusions, 0.0
    step = dt * damping
    moves = step * forces
    norms = np.linalg.norm(moves, axis=1)
    over = norms > max_move
    if np.any(over):
        moves[over] *= (max_move / norms[over])[:, None]
    new_centers = centers + moves
    new_axes = []
    for a, tq in zip(axes, torques):
        if a is None:
            new_axes.append(None)
            continue
        omega = step * tq
        angle = float(np.linalg.norm(omega))
        if angle > max_move:
            omega *= max_move / angle
        rotated = a + np.cross(omega, a)
        new_axes.append(rotated / float(np.linalg.norm(rotated)))
    return _rebuild(inclusions, new_centers, new_axes), energy


def _separation_pass(inclusions, max_passes=200):
    """Nudge residual overlapping pairs apart until exact predicates clear.

    Pushes overshoot by 10% and carry an absolute floor so machine-epsilon
    contacts separate to strictly positive clearance.
    """
    circum = np.array([inc.circumradius for inc in inclusions])
    for _ in range(max_passes):
        centers, axes = _relaxation_state(inclusions)
        moved = False
        for i, j in zip(*_near_pairs(inclusions, centers, circum)):
            for contact in pair_contacts(inclusions[i], inclusions[j]):
                push = (0.55 * contact.depth + 1e-12) * contact.normal
                centers[i] -= push
                centers[j] += push
                moved = True
        if not moved:
            return inclusions
        inclusions = _rebuild(inclusions, centers, axes)
    return inclusions


def generate_md(
    spec: GenerationSpec,
    md: MdParams = MdParams(),
    rng: np.random.Generator | None = None,
    energy_log: list | None = None,
) -> Microstructure:
    """Relaxation packing: place everything at random, then drive the total
    overlap energy (sum of squared penetration depths) below the threshold.

    Deterministic for a fixed seed and parameter set.  Raises
    RelaxationFailed when the step budget runs out first.
    """
    if rng is None:
        rng = spec.make_rng()
    inclusions = _initial_placement(spec, rng)
    max_move = md.max_move_fraction * min(inc.radius for inc in inclusions)
    circum = np.array([inc.circumradius for inc in inclusions])
    energy = math.inf
    for step in range(md.max_steps):
        centers = np.array([inc.center for inc in inclusions])
        new_inclusions, energy = _relaxation_step(
            inclusions, centers, circum, md.dt, md.damping, max_move
        )
        if energy_log is not None:
            energy_log.append(energy)
        if energy <= md.epsilon_stop:
            break  # pre-move configuration already satisfies the criterion
        inclusions = new_inclusions
    else:
        raise RelaxationFailed(
            f"overlap energy {energy:.3e} above threshold after {md.max_steps} steps",
            energy=energy,
            steps=md.max_steps,
        )
    inclusions = _separation_pass(inclusions)
    result = Microstructure(tuple(inclusions))
    if max_overlap_depth(result) > 0.0:
        raise RelaxationFailed("separation pass left residual overlap")
    return result


def generate(
    spec: GenerationSpec,
    rng: np.random.Generator | None = None,
    limits: RsaLimits = RsaLimits(),
    md: MdParams = MdParams(),
) -> Microstructure:
    """Dispatch on the spec's method field."""
    if spec.method == "rsa":
        return generate_rsa(spec, limits, rng)
    return generate_md(spec, md, rng)


# ---------------------------------------------------------------------------
# imperfections
# ---------------------------------------------------------------------------


def apply_surface_waves(m: Microstructure, imp: ImperfectionSpec) -> Microstructure:
    """Mark every inclusion with the sinusoidal radial modulation.

    Membership queries honor the modulation; the recorded volume factors
    track the drift of each family's shape volume from nominal.
    """
    if imp.wave_amplitude == 0.0 or imp.wave_count == 0:
        return m
    waves = SurfaceWaves(
        imp.wave_amplitude,
        imp.wave_count,
        volume_factor_sphere=wave_volume_factor_sphere(
            imp.wave_amplitude, imp.wave_count
        ),
        volume_factor_cylinder=wave_volume_factor_cylinder(
            imp.wave_amplitude, imp.wave_count
        ),
    )
    return m.with_imperfections(waves=waves)


_ZONE_RADIUS_RANGE = (0.05, 0.1)
_PATCH_RADIUS = 0.02
_SUPPRESSED_SAMPLES = 20_000


def _sample_inside(inc, rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform points inside one inclusion (absolute cell coordinates)."""
    if isinstance(inc, Sphere):
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = inc.radius * rng.random(n) ** (1.0 / 3.0)
        return wrap_unit(inc.center + d * r[:, None])
    axis = inc.axis
    e1 = _perp_basis(axis)
    e2 = np.cross(axis, e1)
    z = inc.half_length * (2.0 * rng.random(n) - 1.0)
    phi = 2.0 * math.pi * rng.random(n)
    rad = inc.radius * np.sqrt(rng.random(n))
    pts = (
        inc.center
        + z[:, None] * axis
        + (rad * np.cos(phi))[:, None] * e1
        + (rad * np.sin(phi))[:, None] * e2
    )
    return wrap_unit(pts)


def _perp_basis(axis):
    w = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, w)
    return e1 / float(np.linalg.norm(e1))


def apply_defect_zones(
    m: Microstructure, imp: ImperfectionSpec, rng: np.random.Generator
) -> Microstructure:
    """Suppress inclusion material inside random spherical zones and re-add
    an equal volume of small spheres in the matrix.

    Zone radii are drawn uniformly from [0.05, 0.1] and rescaled so the zone
    volumes sum to the requested fraction.  The suppressed volume is measured
    by sampling inside each inclusion; compensation uses spheres of radius
    0.02 plus one remainder sphere so the re-added volume matches exactly.
    """
    if imp.defect_zone_fraction == 0.0 or imp.defect_zone_count == 0:
        return m
    raw = rng.uniform(*_ZONE_RADIUS_RANGE, size=imp.defect_zone_count)
    scale = (
        imp.defect_zone_fraction / (4.0 * math.pi / 3.0 * np.sum(raw**3))
    ) ** (1.0 / 3.0)
    zones = tuple(
        Sphere(rng.random(3), float(r)) for r in raw * scale
    )
    # sampled estimate of the suppressed inclusion volume
    suppressed = 0.0
    factor_sp = m.waves.volume_factor_sphere if m.waves else 1.0
    factor_cyl = m.waves.volume_factor_cylinder if m.waves else 1.0
    for inc in m.inclusions:
        pts = _sample_inside(inc, rng, _SUPPRESSED_SAMPLES)
        in_zone = np.zeros(len(pts), dtype=bool)
        for z in zones:
            d = pts - z.center
            d -= np.floor(d + 0.5)
            in_zone |= np.einsum("ij,ij->i", d, d) < z.radius * z.radius
        factor = factor_sp if isinstance(inc, Sphere) else factor_cyl
        suppressed += inc.volume * factor * float(np.mean(in_zone))
    if suppressed <= 0.0:
        return m.with_imperfections(defect_zones=zones)
    patch_vol = 4.0 * math.pi / 3.0 * _PATCH_RADIUS**3
    n_full = int(suppressed // patch_vol)
    remainder = suppressed - n_full * patch_vol
    radii = [_PATCH_RADIUS] * n_full
    if remainder > 1e-12:
        radii.append((3.0 * remainder / (4.0 * math.pi)) ** (1.0 / 3.0))
    patches: list = []
    obstacles = list(m.inclusions)
    for r in radii:
        for attempt in range(100_000):
            cand = Sphere(rng.random(3), r)
            if any(overlap_depth(cand, other) > 0.0 for other in obstacles):
                continue
            if any(
                overlap_depth(cand, z) > 0.0 for z in zones
            ) or any(overlap_depth(cand, p) > 0.0 for p in patches):
                continue
            patches.append(cand)
            break
        else:
            raise CompensationFailed(
                f"could not place compensation sphere r={r:.4f} "
                f"({len(patches)}/{len(radii)} placed)"
            )
    return m.with_imperfections(
        defect_zones=zones, compensation_spheres=tuple(patches)
    )


def discrete_family_fractions(m: Microstructure, resolution: int = 200):
    """Voxel-sampled (sphere, cylinder) phase fractions; diagnostic helper."""
    xs = (np.arange(resolution) + 0.5) / resolution
    grid = np.stack(np.meshgrid(xs, xs, xs, indexing="ij"), axis=-1)
    sphere_only = Microstructure(
        tuple(i for i in m.inclusions if isinstance(i, Sphere)), m.cell, m.waves
    )
    cyl_only = Microstructure(
        tuple(i for i in m.inclusions if isinstance(i, Cylinder)), m.cell, m.waves
    )
    f_sp = float(np.mean(points_phase(grid, sphere_only) > 0))
    f_cyl = float(np.mean(points_phase(grid, cyl_only) > 0))
    return f_sp, f_cyl
