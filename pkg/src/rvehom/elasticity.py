"""Isotropic linear-elastic algebra in an orthonormal (Mandel) 6-vector basis.

Symmetric second-order tensors are stored as 6-vectors
(11, 22, 33, sqrt2*23, sqrt2*13, sqrt2*12) so that the 6-vector dot product
equals the full tensor double contraction and 6x6 matrices compose like
fourth-order tensors.  Everything here is pure value algebra and thread-safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SQRT2 = np.sqrt(2.0)

# (i, j) index pairs behind each Mandel slot
MANDEL_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))

# unit trace vector: Mandel image of the 3x3 identity
IDENTITY6 = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])

# hydrostatic / deviatoric projectors (J + K = I, J K = 0)
J_PROJECTOR = np.outer(IDENTITY6, IDENTITY6) / 3.0
K_PROJECTOR = np.eye(6) - J_PROJECTOR


class SingularDifference(ValueError):
    """Phase and reference stiffness coincide on a projector eigenspace."""


@dataclass(frozen=True)
class IsotropicMaterial:
    """Isotropic material given by Lame coefficients.

    Physical phases need mu > 0 and bulk > 0; reference media used by the
    accelerated spectral scheme intentionally violate both, so no sign
    check is applied here.
    """

    lam: float
    mu: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and np.isfinite(self.mu)):
            raise ValueError("Lame coefficients must be finite")

    @classmethod
    def from_young_poisson(cls, young: float, poisson: float) -> "IsotropicMaterial":
        lam = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
        mu = young / (2.0 * (1.0 + poisson))
        return cls(lam, mu)

    @classmethod
    def from_bulk_shear(cls, bulk: float, shear: float) -> "IsotropicMaterial":
        return cls(bulk - 2.0 * shear / 3.0, shear)

    @property
    def bulk(self) -> float:
        return self.lam + 2.0 * self.mu / 3.0

    @property
    def young(self) -> float:
        return self.mu * (3.0 * self.lam + 2.0 * self.mu) / (self.lam + self.mu)

    @property
    def poisson(self) -> float:
        return 0.5 * self.lam / (self.lam + self.mu)

    def scaled(self, ratio: float) -> "IsotropicMaterial":
        """Contrast scaling: both Lame coefficients multiplied, Poisson kept."""
        if ratio <= 0.0:
            raise ValueError("contrast ratio must be positive")
        return IsotropicMaterial(self.lam * ratio, self.mu * ratio)


def tensor_to_mandel(t: np.ndarray) -> np.ndarray:
    """Symmetric 3x3 tensor -> orthonormal 6-vector."""
    t = np.asarray(t)
    return np.array(
        [t[0, 0], t[1, 1], t[2, 2], SQRT2 * t[1, 2], SQRT2 * t[0, 2], SQRT2 * t[0, 1]]
    )


def mandel_to_tensor(v: np.ndarray) -> np.ndarray:
    """Orthonormal 6-vector -> symmetric 3x3 tensor."""
    v = np.asarray(v)
    t = np.empty((3, 3))
    t[0, 0], t[1, 1], t[2, 2] = v[0], v[1], v[2]
    t[1, 2] = t[2, 1] = v[3] / SQRT2
    t[0, 2] = t[2, 0] = v[4] / SQRT2
    t[0, 1] = t[1, 0] = v[5] / SQRT2
    return t


def tensor4_to_mandel(c: np.ndarray) -> np.ndarray:
    """Minor-symmetric fourth-order 3x3x3x3 tensor -> 6x6 Mandel matrix."""
    m = np.empty((6, 6))
    for a, (i, j) in enumerate(MANDEL_PAIRS):
        wa = 1.0 if a < 3 else SQRT2
        for b, (k, l) in enumerate(MANDEL_PAIRS):
            wb = 1.0 if b < 3 else SQRT2
            m[a, b] = wa * wb * c[i, j, k, l]
    return m


def stiffness_from_material(m: IsotropicMaterial) -> np.ndarray:
    """6x6 Mandel stiffness c = 3*bulk*J + 2*mu*K of an isotropic material."""
    return 3.0 * m.bulk * J_PROJECTOR + 2.0 * m.mu * K_PROJECTOR


def apply_isotropic(lam, mu, field: np.ndarray) -> np.ndarray:
    """Apply c = lam*tr()*I + 2*mu*() to a Mandel field of shape (6, ...).

    lam and mu may be scalars or arrays broadcastable against field[0];
    per-voxel isotropic action never materializes 6x6 matrices.
    """
    trace = field[0] + field[1] + field[2]
    out = 2.0 * np.asarray(mu) * field
    out[:3] += np.asarray(lam) * trace
    return out


def isotropic_projection(c: np.ndarray) -> tuple[float, float, float]:
    """Project a 6x6 stiffness onto its closest isotropic tensor.

    Returns (bulk, shear, anisotropy_index) where the moduli come from the
    orthogonal projection onto the J/K eigenspaces and the anisotropy index
    is ||c - c_iso||_F / ||c||_F.
    """
    c = np.asarray(c, dtype=float)
    bulk = float(np.sum(J_PROJECTOR * c)) / 3.0  # <J,c>/<J,J> = 3K, tr J = 1
    shear = float(np.sum(K_PROJECTOR * c)) / 10.0  # <K,c>/<K,K> = 2mu, tr K = 5
    c_iso = 3.0 * bulk * J_PROJECTOR + 2.0 * shear * K_PROJECTOR
    denom = np.linalg.norm(c)
    anisotropy = float(np.linalg.norm(c - c_iso) / denom) if denom > 0 else 0.0
    return bulk, shear, anisotropy


@dataclass(frozen=True)
class IsotropicOperator:
    """Isotropic fourth-order operator a*J + b*K given by its two eigenvalues."""

    hydrostatic: float  # eigenvalue on the J (trace) eigenspace
    deviatoric: float  # eigenvalue on the K (deviatoric) eigenspace

    def apply(self, field: np.ndarray) -> np.ndarray:
        field = np.asarray(field, dtype=float)
        hyd = (field[0] + field[1] + field[2]) / 3.0
        out = self.deviatoric * field
        out[:3] += (self.hydrostatic - self.deviatoric) * hyd
        return out

    def as_matrix(self) -> np.ndarray:
        return self.hydrostatic * J_PROJECTOR + self.deviatoric * K_PROJECTOR


def phase_stiffness_difference_inverse(
    phase: IsotropicMaterial, ref: IsotropicMaterial, rel_tol: float = 1e-14
) -> IsotropicOperator:
    """Closed-form inverse of (c_phase - c_ref) for isotropic operands.

    Acts as 1/(3*dBulk) on the hydrostatic eigenspace and 1/(2*dMu) on the
    deviatoric one.  Raises SingularDifference when either eigenvalue of the
    difference vanishes (relative to the operand scale).
    """
    d_bulk = phase.bulk - ref.bulk
    d_mu = phase.mu - ref.mu
    scale_b = max(abs(phase.bulk), abs(ref.bulk), 1e-300)
    scale_m = max(abs(phase.mu), abs(ref.mu), 1e-300)
    if abs(d_bulk) <= rel_tol * scale_b or abs(d_mu) <= rel_tol * scale_m:
        raise SingularDifference(
            f"stiffness difference is singular (dBulk={d_bulk:g}, dMu={d_mu:g})"
        )
    return IsotropicOperator(1.0 / (3.0 * d_bulk), 1.0 / (2.0 * d_mu))


def voigt_reuss_bounds(
    materials: list[IsotropicMaterial], fractions: np.ndarray
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Reuss/Voigt bracket ((K_lo, K_hi), (mu_lo, mu_hi)) for a phase mixture."""
    f = np.asarray(fractions, dtype=float)
    bulks = np.array([m.bulk for m in materials])
    shears = np.array([m.mu for m in materials])
    k_voigt = float(f @ bulks)
    mu_voigt = float(f @ shears)
    k_reuss = float(1.0 / (f @ (1.0 / bulks)))
    mu_reuss = float(1.0 / (f @ (1.0 / shears)))
    return (k_reuss, k_voigt), (mu_reuss, mu_voigt)
