"""Accelerated spectral scheme for periodic linear elasticity.

Solves the periodic corrector problem on a voxel grid by the accelerated
fixed-point iteration built on a negative reference medium (geometric mean
rule), evaluating the isotropic Green operator frequency-wise and the
constitutive law voxel-wise.  Six independent macroscopic strains yield the
homogenized stiffness.

Numerical conventions
---------------------
* Forward transforms are unnormalized, inverses carry 1/N; residuals are
  always formed from physical-space means.
* Frequencies are the classical signed integer lattice times 2*pi, with the
  Nyquist index of even dimensions represented as +n/2.
* Real fields are kept in half-spectrum (rfft) layout.  On the self-conjugate
  planes of the half spectrum the Green application is Hermitian-symmetrized
  so spectral fields always correspond to real ones; aliased Nyquist bins do
  not admit a well-defined signed frequency, so the equilibrium residual
  averages over the uniquely represented (non-Nyquist) modes only.

Each load case solves independently; fields are owned by one solve and the
per-voxel stages are data-parallel.  The transform backend may thread
internally (``fft_workers``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .elasticity import (
    IsotropicMaterial,
    phase_stiffness_difference_inverse,
    tensor4_to_mandel,
)
from .voxel import VoxelGrid

SQRT2 = math.sqrt(2.0)


class SolverError(Exception):
    """Base class for solver failures."""


class DegenerateReference(SolverError):
    """Reference medium makes the Green operator singular."""


class MaxIterationsExceeded(SolverError):
    """Fixed point iteration ran out of budget; carries the last report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SolverConfig:
    acc: float = 1e-6
    max_iterations: int = 1000
    reference_override: tuple[float, float] | None = None  # (lambda0, mu0)
    fft_workers: int = 1
    keep_trace: bool = False

    def __post_init__(self):
        if self.acc <= 0:
            raise ValueError("acc must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class SolveReport:
    iterations: int
    eps_eq: float
    eps_comp: float
    mean_stress: np.ndarray
    mean_strain: np.ndarray
    converged: bool
    trace: list = field(default_factory=list)


def reference_medium(
    m1: IsotropicMaterial, m2: IsotropicMaterial
) -> IsotropicMaterial:
    """Optimal reference for the accelerated scheme: negative geometric mean
    of the phase Lame coefficients (lambda may be zero)."""
    if m1.lam < 0 or m2.lam < 0 or m1.mu <= 0 or m2.mu <= 0:
        raise ValueError("phase materials must have lambda >= 0 and mu > 0")
    return IsotropicMaterial(
        -math.sqrt(m1.lam * m2.lam), -math.sqrt(m1.mu * m2.mu)
    )


def signed_frequencies(n: int) -> np.ndarray:
    """2*pi*s(k) with s(k) = k for k <= n/2, k - n otherwise."""
    k = np.arange(n)
    s = np.where(k <= n // 2, k, k - n)
    return 2.0 * math.pi * s.astype(float)


_plan_cache: dict = {}


def _spectral_plan(dims: tuple[int, int, int]):
    """Frequency arrays and mode bookkeeping for the half-spectrum layout."""
    plan = _plan_cache.get(dims)
    if plan is not None:
        return plan
    n1, n2, n3 = dims
    nh = n3 // 2 + 1
    f1 = signed_frequencies(n1)
    f2 = signed_frequencies(n2)
    f3 = signed_frequencies(n3)[:nh]
    x1 = f1[:, None, None]
    x2 = f2[None, :, None]
    x3 = f3[None, None, :]
    xsq = x1 * x1 + x2 * x2 + x3 * x3
    xsq_safe = xsq.copy()
    xsq_safe[0, 0, 0] = 1.0
    # bins with any component at an even-dimension Nyquist index
    ny1 = np.zeros(n1, dtype=bool)
    ny2 = np.zeros(n2, dtype=bool)
    ny3 = np.zeros(nh, dtype=bool)
    if n1 % 2 == 0:
        ny1[n1 // 2] = True
    if n2 % 2 == 0:
        ny2[n2 // 2] = True
    if n3 % 2 == 0:
        ny3[n3 // 2] = True
    nyquist = (
        ny1[:, None, None] | ny2[None, :, None] | ny3[None, None, :]
    )
    # multiplicity of each stored bin in the full spectrum
    weights = np.full(nh, 2.0)
    weights[0] = 1.0
    if n3 % 2 == 0:
        weights[nh - 1] = 1.0
    eq_mask = ~nyquist
    eq_mask[0, 0, 0] = False
    eq_weights = np.broadcast_to(weights[None, None, :], eq_mask.shape) * eq_mask
    plan = {
        "x": (x1, x2, x3),
        "xsq_safe": xsq_safe,
        "eq_weights": eq_weights,
        "eq_count": float(eq_weights.sum()),
        "self_conjugate_planes": [0] + ([nh - 1] if n3 % 2 == 0 else []),
    }
    _plan_cache[dims] = plan
    return plan


def _hermitize_planes(spec: np.ndarray, planes) -> None:
    """Average self-conjugate planes with their flipped conjugates in place.

    Restores exact Hermitian symmetry that per-bin application loses on
    aliased (Nyquist) bins, so fields stay transforms of real data.
    """
    for t in planes:
        plane = spec[..., t]
        flipped = np.conj(
            np.roll(plane[..., ::-1, :][..., :, ::-1], shift=(1, 1), axis=(-2, -1))
        )
        spec[..., t] = 0.5 * (plane + flipped)


def green_matrix(xi, ref: IsotropicMaterial) -> np.ndarray:
    """Dense 6x6 Mandel matrix of the Green operator at one frequency."""
    lam0, mu0 = ref.lam, ref.mu
    if abs(lam0 + 2.0 * mu0) <= 1e-14 * (abs(lam0) + 2.0 * abs(mu0)):
        raise DegenerateReference("lambda0 + 2*mu0 vanishes")
    xi = np.asarray(xi, dtype=float)
    nsq = float(xi @ xi)
    if nsq == 0.0:
        raise ValueError("green_matrix is undefined at the zero frequency")
    beta = (lam0 + mu0) / (mu0 * (lam0 + 2.0 * mu0))
    g = np.zeros((3, 3, 3, 3))
    delta = np.eye(3)
    for k in range(3):
        for l in range(3):
            for mm in range(3):
                for j in range(3):
                    g[k, l, mm, j] = (
                        delta[k, mm] * xi[l] * xi[j]
                        + delta[l, mm] * xi[k] * xi[j]
                        + delta[k, j] * xi[l] * xi[mm]
                        + delta[l, j] * xi[k] * xi[mm]
                    ) / (4.0 * mu0 * nsq) - beta * (
                        xi[j] * xi[k] * xi[l] * xi[mm]
                    ) / (nsq * nsq)
    return tensor4_to_mandel(g)


def green_apply(
    tau_hat: np.ndarray, ref: IsotropicMaterial, dims: tuple[int, int, int]
) -> np.ndarray:
    """Apply the isotropic Green operator to a half-spectrum Mandel field.

    tau_hat has shape (6, n1, n2, n3//2 + 1); the zero mode passes through
    untouched (the iteration pins it separately).  Output is symmetric and
    Hermitian-consistent, so its inverse transform is real.
    """
    lam0, mu0 = ref.lam, ref.mu
    if mu0 == 0.0:
        raise DegenerateReference("mu0 must be nonzero")
    if abs(lam0 + 2.0 * mu0) <= 1e-14 * (abs(lam0) + 2.0 * abs(mu0)):
        raise DegenerateReference("lambda0 + 2*mu0 vanishes")
    plan = _spectral_plan(dims)
    x1, x2, x3 = plan["x"]
    xsq = plan["xsq_safe"]
    beta = (lam0 + mu0) / (mu0 * (lam0 + 2.0 * mu0))
    m = tau_hat
    zero_mode = m[:, 0, 0, 0].copy()
    t1 = m[0] * x1 + (m[5] * x2 + m[4] * x3) / SQRT2
    t2 = m[5] * x1 / SQRT2 + m[1] * x2 + m[3] * x3 / SQRT2
    t3 = (m[4] * x1 + m[3] * x2) / SQRT2 + m[2] * x3
    xt = (x1 * t1 + x2 * t2 + x3 * t3) * (beta / (xsq * xsq))
    u1 = t1 / (mu0 * xsq) - xt * x1
    u2 = t2 / (mu0 * xsq) - xt * x2
    u3 = t3 / (mu0 * xsq) - xt * x3
    out = np.empty_like(tau_hat)
    out[0] = x1 * u1
    out[1] = x2 * u2
    out[2] = x3 * u3
    out[3] = (x2 * u3 + x3 * u2) / SQRT2
    out[4] = (x1 * u3 + x3 * u1) / SQRT2
    out[5] = (x1 * u2 + x2 * u1) / SQRT2
    _hermitize_planes(out, plan["self_conjugate_planes"])
    out[:, 0, 0, 0] = zero_mode
    return out


def _field_rfftn(field, workers):
    return np.stack(
        [sfft.rfftn(field[c], workers=workers) for c in range(6)]
    )


def _field_irfftn(spec, dims, workers, out):
    for c in range(6):
        out[c] = sfft.irfftn(spec[c], s=dims, workers=workers)
    return out


def _phase_arrays(grid: VoxelGrid, phases, ref: IsotropicMaterial):
    """Per-voxel coefficient arrays for the two constitutive stages."""
    labels = grid.labels
    lam = np.array([m.lam for m in phases])
    mu = np.array([m.mu for m in phases])
    bulk = np.array([m.bulk for m in phases])
    lam_tau = (lam + ref.lam)[labels]
    mu_tau = (mu + ref.mu)[labels]
    k_upd = (ref.bulk / (bulk - ref.bulk))[labels]
    mu_upd = (ref.mu / (mu - ref.mu))[labels]
    return lam_tau, mu_tau, k_upd, mu_upd, lam[labels], mu[labels]


def _check_invertible(grid: VoxelGrid, phases, ref: IsotropicMaterial):
    for m in phases[: grid.phase_count]:
        phase_stiffness_difference_inverse(m, ref)  # raises SingularDifference


def solve_load_case(
    grid: VoxelGrid,
    phases,
    E: np.ndarray,
    cfg: SolverConfig = SolverConfig(),
) -> tuple[np.ndarray, SolveReport]:
    """Run the accelerated fixed-point iteration for one macroscopic strain.

    Starting from the uniform field, each pass applies the polarization
    transform tau = (c + c0):eps, maps it through the Green operator (zero
    mode pinned to E), measures the compatibility residual, and updates
    eps <- eps - 2 (c - c0)^-1 c0 (eps_comp - eps).  Once the compatibility
    residual clears ``acc`` the equilibrium residual
    sqrt(<|xi sigma_hat|^2>) / |sigma_hat(0)| is evaluated over the uniquely
    represented modes and both must pass.  Returns the converged strain
    field (mean restored to E exactly) and a report.

    Raises MaxIterationsExceeded (report attached), DegenerateReference, or
    SingularDifference from the constitutive inverse.
    """
    E = np.asarray(E, dtype=float)
    if E.shape != (6,) or not np.linalg.norm(E) > 0:
        raise ValueError("load case must be a nonzero Mandel 6-vector")
    n_phases = grid.phase_count
    if len(phases) < n_phases:
        raise ValueError(f"grid references {n_phases} phases, got {len(phases)}")
    if cfg.reference_override is not None:
        ref = IsotropicMaterial(*cfg.reference_override)
    elif n_phases <= 2:
        ref = reference_medium(phases[0], phases[min(1, len(phases) - 1)])
    else:
        raise ValueError("more than two phases requires reference_override")
    dims = grid.dims
    ntot = grid.labels.size
    plan = _spectral_plan(dims)
    _check_invertible(grid, phases, ref)
    lam_tau, mu_tau, k_upd, mu_upd, lam_vox, mu_vox = _phase_arrays(
        grid, phases, ref
    )
    norm_e = float(np.linalg.norm(E))
    eps = np.empty((6,) + dims)
    for c in range(6):
        eps[c] = E[c]
    work = np.empty_like(eps)
    eps_comp_res = math.inf
    eps_eq = math.inf
    trace: list = []
    it = 0
    while it < cfg.max_iterations:
        it += 1
        if eps_comp_res < cfg.acc:
            np.multiply(eps, 2.0 * mu_vox, out=work)
            trace_e = eps[0] + eps[1] + eps[2]
            work[:3] += lam_vox * trace_e
            mean_sigma = work.reshape(6, -1).mean(axis=1)
            sig_hat = _field_rfftn(work, cfg.fft_workers)
            x1, x2, x3 = plan["x"]
            m = sig_hat
            t1 = m[0] * x1 + (m[5] * x2 + m[4] * x3) / SQRT2
            t2 = m[5] * x1 / SQRT2 + m[1] * x2 + m[3] * x3 / SQRT2
            t3 = (m[4] * x1 + m[3] * x2) / SQRT2 + m[2] * x3
            num = (
                (t1.real**2 + t1.imag**2)
                + (t2.real**2 + t2.imag**2)
                + (t3.real**2 + t3.imag**2)
            )
            num_sum = float((num * plan["eq_weights"]).sum())
            denom = float(np.linalg.norm(mean_sigma)) * ntot
            eps_eq = (
                math.sqrt(num_sum / plan["eq_count"]) / denom
                if denom > 0
                else 0.0
            )
            if cfg.keep_trace:
                trace.append((it, eps_comp_res, eps_eq))
            if eps_eq < cfg.acc:
                eps += (E - eps.reshape(6, -1).mean(axis=1))[
                    :, None, None, None
                ]
                report = SolveReport(
                    iterations=it,
                    eps_eq=eps_eq,
                    eps_comp=eps_comp_res,
                    mean_stress=_mean_stress(eps, lam_vox, mu_vox),
                    mean_strain=eps.reshape(6, -1).mean(axis=1),
                    converged=True,
                    trace=trace,
                )
                return eps, report
        # polarization tau = (c + c0) : eps
        np.multiply(eps, 2.0 * mu_tau, out=work)
        trace_e = eps[0] + eps[1] + eps[2]
        work[:3] += lam_tau * trace_e
        spec = _field_rfftn(work, cfg.fft_workers)
        spec = green_apply(spec, ref, dims)
        spec[:, 0, 0, 0] = E * ntot
        _field_irfftn(spec, dims, cfg.fft_workers, work)  # work = eps_comp
        del spec
        # compatibility residual over physical-space mean
        acc2 = 0.0
        for c in range(6):
            diff = work[c] - eps[c]
            acc2 += float(np.vdot(diff, diff).real)
        eps_comp_res = math.sqrt(acc2 / ntot) / norm_e
        if cfg.keep_trace:
            trace.append((it, eps_comp_res, None))
        # eps <- eps - 2 (c - c0)^-1 c0 (eps_comp - eps)
        work -= eps
        trace_g = work[0] + work[1] + work[2]
        hyd = trace_g / 3.0
        work *= mu_upd
        work[:3] += (k_upd - mu_upd) * hyd
        eps -= 2.0 * work
    report = SolveReport(
        iterations=it,
        eps_eq=eps_eq,
        eps_comp=eps_comp_res,
        mean_stress=_mean_stress(eps, lam_vox, mu_vox),
        mean_strain=eps.reshape(6, -1).mean(axis=1),
        converged=False,
        trace=trace,
    )
    raise MaxIterationsExceeded(
        f"no convergence after {it} iterations "
        f"(eps_comp={eps_comp_res:.3e}, eps_eq={eps_eq:.3e})",
        report=report,
    )


def _mean_stress(eps, lam_vox, mu_vox):
    sigma_mean = np.empty(6)
    trace_e = eps[0] + eps[1] + eps[2]
    for c in range(6):
        s = 2.0 * mu_vox * eps[c]
        if c < 3:
            s = s + lam_vox * trace_e
        sigma_mean[c] = float(s.mean())
    return sigma_mean


BASIS_LOADS = np.eye(6)


@dataclass
class HomogenizationResult:
    c_hom: np.ndarray
    reports: list
    max_asymmetry: float


def homogenize(
    grid: VoxelGrid, phases, cfg: SolverConfig = SolverConfig()
) -> HomogenizationResult:
    """Assemble the homogenized stiffness from the six basis load cases.

    Column j of the raw matrix is the mean stress under the j-th orthonormal
    basis strain (the mean strain is pinned to the load); the result is then
    symmetrized by averaging with its transpose and the largest asymmetry
    recorded.  Solver errors identify the failing load case.
    """
    c_raw = np.empty((6, 6))
    reports = []
    for j in range(6):
        try:
            _, report = solve_load_case(grid, phases, BASIS_LOADS[j], cfg)
        except SolverError as exc:
            exc.args = (f"load case {j}: {exc}",)
            raise
        c_raw[:, j] = report.mean_stress
        reports.append(report)
    asym = float(np.abs(c_raw - c_raw.T).max())
    return HomogenizationResult(0.5 * (c_raw + c_raw.T), reports, asym)
