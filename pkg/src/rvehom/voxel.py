"""Rasterization of vector microstructures onto periodic voxel grids.

The grid stores one phase label per voxel (uint8), sampled at voxel centers
((i + 0.5)/n, ...).  Rasterization visits each shape's periodic bounding box
only, so grids at 200^3 and beyond stay cheap.  A grid is written once and
immutable afterwards; the binary format doubles as the import path for
externally segmented images.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .geometry import (
    Cylinder,
    Microstructure,
    Sphere,
    inclusion_mask,
    sphere_mask,
    wrap_half,
)

_MAGIC = b"RVOXGRID"
_VERSION = 1


@dataclass(frozen=True)
class VoxelGrid:
    """Dense periodic grid of phase labels, indexed [i, j, k] along x, y, z."""

    labels: np.ndarray

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if labels.ndim != 3:
            raise ValueError("labels must be a 3-d array")
        object.__setattr__(self, "labels", labels)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    @property
    def phase_count(self) -> int:
        return int(self.labels.max()) + 1


def discrete_volume_fraction(grid: VoxelGrid, n_phases: int | None = None):
    """Label counts over total voxels; sums to 1."""
    n = n_phases if n_phases is not None else grid.phase_count
    counts = np.bincount(grid.labels.ravel(), minlength=n)
    return counts / grid.labels.size


def _axis_extent(inc) -> np.ndarray:
    """Half-extent of the shape's bounding box along each cell axis."""
    if isinstance(inc, Sphere):
        return np.full(3, inc.radius)
    a = np.abs(inc.axis)
    return inc.half_length * a + inc.radius * np.sqrt(np.maximum(1.0 - a * a, 0.0))


def _box_indices(center: float, extent: float, n: int) -> np.ndarray:
    """Voxel indices (mod n) whose centers may fall within +-extent."""
    lo = math.floor((center - extent) * n - 0.5)
    hi = math.ceil((center + extent) * n - 0.5)
    if hi - lo + 1 >= n:
        return np.arange(n)
    return np.arange(lo, hi + 1) % n


def _paint(mask_grid: np.ndarray, shape, waves, dims, margin=0.0) -> None:
    """OR the shape's membership into mask_grid, visiting its box only."""
    n1, n2, n3 = dims
    ext = _axis_extent(shape) * (1.0 + margin)
    ii = _box_indices(shape.center[0], ext[0], n1)
    jj = _box_indices(shape.center[1], ext[1], n2)
    kk = _box_indices(shape.center[2], ext[2], n3)
    xs = (ii + 0.5) / n1 - shape.center[0]
    ys = (jj + 0.5) / n2 - shape.center[1]
    zs = (kk + 0.5) / n3 - shape.center[2]
    disp = np.empty((len(ii), len(jj), len(kk), 3))
    disp[..., 0] = wrap_half(xs)[:, None, None]
    disp[..., 1] = wrap_half(ys)[None, :, None]
    disp[..., 2] = wrap_half(zs)[None, None, :]
    hit = inclusion_mask(shape, disp, waves)
    sub = mask_grid[np.ix_(ii, jj, kk)]
    mask_grid[np.ix_(ii, jj, kk)] = sub | hit


def _rasterize_at(m: Microstructure, dims, offset=0.5):
    """Phase labels sampled at (i + offset)/n points (offset may be array-like)."""
    n1, n2, n3 = dims
    labels = np.zeros(dims, dtype=np.uint8)
    wave_margin = m.waves.amplitude if m.waves is not None else 0.0
    phases = sorted({inc.phase for inc in m.inclusions})
    for phase in phases:
        mask = np.zeros(dims, dtype=bool)
        for inc in m.inclusions:
            if inc.phase == phase:
                _paint(mask, inc, m.waves, dims, margin=wave_margin)
        labels = np.maximum(labels, np.where(mask, np.uint8(phase), np.uint8(0)))
    if m.defect_zones:
        zone_mask = np.zeros(dims, dtype=bool)
        for zone in m.defect_zones:
            _paint(zone_mask, zone, None, dims)
        labels[zone_mask] = 0
    for patch in m.compensation_spheres:
        mask = np.zeros(dims, dtype=bool)
        _paint(mask, patch, None, dims)
        labels = np.maximum(
            labels, np.where(mask, np.uint8(patch.phase), np.uint8(0))
        )
    return labels


def voxelize(m: Microstructure, dims, supersample: bool = False) -> VoxelGrid:
    """Rasterize a microstructure at the given resolution.

    dims may be an int (cubic grid) or a triple; each dimension must be at
    least 8.  With supersample=True each voxel is decided by majority vote
    over a 2x2x2 sub-grid (ties resolve to the inclusion phase), otherwise a
    single center sample is used.
    """
    if np.isscalar(dims):
        dims = (int(dims),) * 3
    dims = tuple(int(d) for d in dims)
    if any(d < 8 for d in dims):
        raise ValueError("resolution must be at least 8 per axis")
    if not supersample:
        return VoxelGrid(_rasterize_at(m, dims))
    fine = _rasterize_at(m, tuple(2 * d for d in dims))
    blocks = fine.reshape(dims[0], 2, dims[1], 2, dims[2], 2)
    votes = (blocks > 0).sum(axis=(1, 3, 5))
    # majority of the sub-samples; the dominant nonzero phase fills the voxel
    phase = np.max(blocks, axis=(1, 3, 5))
    labels = np.where(votes >= 4, phase, 0).astype(np.uint8)
    return VoxelGrid(labels)


# ---------------------------------------------------------------------------
# binary voxel format: 16-byte header (magic, version, phase count),
# three little-endian uint32 dims, then raw labels, x-fastest
# ---------------------------------------------------------------------------


def save_voxels(grid: VoxelGrid, path) -> None:
    n1, n2, n3 = grid.dims
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, grid.phase_count))
        fh.write(struct.pack("<III", n1, n2, n3))
        fh.write(grid.labels.transpose(2, 1, 0).tobytes(order="C"))


def load_voxels(path) -> VoxelGrid:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _MAGIC:
            raise ValueError(f"not a voxel file (bad magic {magic!r})")
        version, _phase_count = struct.unpack("<II", fh.read(8))
        if version != _VERSION:
            raise ValueError(f"unsupported voxel format version {version}")
        n1, n2, n3 = struct.unpack("<III", fh.read(12))
        raw = fh.read(n1 * n2 * n3)
        if len(raw) != n1 * n2 * n3:
            raise ValueError("voxel payload truncated")
    flat = np.frombuffer(raw, dtype=np.uint8)
    return VoxelGrid(flat.reshape(n3, n2, n1).transpose(2, 1, 0).copy())
