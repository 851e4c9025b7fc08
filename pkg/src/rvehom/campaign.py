"""Monte Carlo campaign orchestration.

Runs N independent generate -> voxelize -> homogenize pipelines per
parameter point, aggregates normalized moduli with Student-t confidence
intervals, and sweeps Cartesian parameter grids with resumable per-sample
persistence.  Sample seeds derive deterministically from the base seed and
the (point, sample) index pair, so reruns reproduce every sample bitwise
(timing fields aside) regardless of worker scheduling.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path

import numpy as np
from scipy.integrate import quad

from . import config as cfgmod
from .elasticity import (
    IsotropicMaterial,
    SingularDifference,
    isotropic_projection,
    voigt_reuss_bounds,
)
from .generation import (
    GenerationError,
    GenerationSpec,
    ImperfectionSpec,
    MdParams,
    RsaLimits,
    apply_defect_zones,
    apply_surface_waves,
    generate_md,
    generate_rsa,
)
from .solver import MaxIterationsExceeded, SolverConfig, SolverError, homogenize
from .voxel import discrete_volume_fraction, voxelize


class InsufficientSamples(ValueError):
    """Interval statistics need at least two values."""


class PointFailed(RuntimeError):
    """Too few pipeline successes to aggregate a parameter point."""


# ---------------------------------------------------------------------------
# Student statistics (distribution function inverted by bisection)
# ---------------------------------------------------------------------------

_quantile_cache: dict = {}


def _student_pdf(x: float, df: int) -> float:
    lg = math.lgamma(0.5 * (df + 1)) - math.lgamma(0.5 * df)
    norm = math.exp(lg) / math.sqrt(df * math.pi)
    return norm * (1.0 + x * x / df) ** (-0.5 * (df + 1))


def _student_cdf(t: float, df: int) -> float:
    if t == 0.0:
        return 0.5
    val, _err = quad(_student_pdf, 0.0, abs(t), args=(df,))
    return 0.5 + math.copysign(val, t)


def t_quantile(df: int, p: float) -> float:
    """Two-sided-capable Student-t quantile via bisection on the CDF."""
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if not 0.0 < p < 1.0:
        raise ValueError("probability must lie in (0, 1)")
    key = (df, round(p, 14))
    if key in _quantile_cache:
        return _quantile_cache[key]
    if p < 0.5:
        return -t_quantile(df, 1.0 - p)
    if p == 0.5:
        return 0.0
    hi = 1.0
    while _student_cdf(hi, df) < p:
        hi *= 2.0
        if hi > 1e12:
            raise ArithmeticError("quantile bracket expansion failed")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _student_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * max(1.0, hi):
            break
    out = 0.5 * (lo + hi)
    _quantile_cache[key] = out
    return out


def student_interval(values, level: float) -> tuple[float, float]:
    """Sample mean and two-sided confidence half-width.

    half_width = t_{n-1,(1+level)/2} * s / sqrt(n) with s the unbiased
    sample standard deviation.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("confidence level must lie in (0, 1)")
    vals = np.asarray(list(values), dtype=float)
    n = vals.size
    if n < 2:
        raise InsufficientSamples("need at least two values")
    mean = float(vals.mean())
    s = float(vals.std(ddof=1))
    t = t_quantile(n - 1, 0.5 * (1.0 + level))
    return mean, t * s / math.sqrt(n)


def trend_holds(means, half_widths, increasing: bool) -> bool:
    """Trend on sample means with a CI-overlap guard.

    A claim fails only where consecutive means violate the direction AND
    their confidence intervals do not overlap.
    """
    means = list(means)
    hws = list(half_widths)
    for a, b, ha, hb in zip(means, means[1:], hws, hws[1:]):
        wrong = b <= a if increasing else b >= a
        disjoint = abs(b - a) > ha + hb
        if wrong and disjoint:
            return False
    return True


# ---------------------------------------------------------------------------
# single-sample pipeline
# ---------------------------------------------------------------------------


@dataclass
class SampleResult:
    point_index: int
    sample_index: int
    seed_key: str
    config_hash: str
    ok: bool
    error: str | None = None
    c_hom: list | None = None
    bulk: float | None = None  # normalized by the matrix bulk modulus
    shear: float | None = None  # normalized by the matrix shear modulus
    anisotropy: float | None = None
    iterations: list | None = None
    max_eps_comp: float | None = None
    max_eps_eq: float | None = None
    inclusion_fraction: float | None = None
    bounds: dict | None = None
    bounds_ok: bool | None = None
    wall_time: float = 0.0


def sample_rng(base_seed: int, point_index: int, sample_index: int):
    seq = np.random.SeedSequence(
        entropy=base_seed, spawn_key=(point_index, sample_index)
    )
    return np.random.default_rng(seq)


def _spec_from(cfg: dict, point: dict) -> GenerationSpec:
    get = lambda k: point.get(k, cfg[k])
    return GenerationSpec(
        f_sp=get("f_sp"),
        f_cyl=get("f_cyl"),
        n_sp=get("n_sp"),
        n_cyl=get("n_cyl"),
        aspect_ratio=get("aspect_ratio"),
        method=cfg["method"],
    )


def run_sample(cfg: dict, point: dict, point_index: int, sample_index: int):
    """One full pipeline; failures are recorded, never raised."""
    get = lambda k: point.get(k, cfg[k])
    result = SampleResult(
        point_index=point_index,
        sample_index=sample_index,
        seed_key=f"{cfg['base_seed']}:{point_index}:{sample_index}",
        config_hash=cfgmod.config_hash(cfg),
        ok=False,
    )
    t0 = time.perf_counter()
    rng = sample_rng(cfg["base_seed"], point_index, sample_index)
    try:
        spec = _spec_from(cfg, point)
        if spec.method == "md":
            micro = generate_md(
                spec,
                MdParams(
                    epsilon_stop=cfg["md_epsilon_stop"],
                    dt=cfg["md_dt"],
                    max_steps=cfg["md_max_steps"],
                    damping=cfg["md_damping"],
                ),
                rng,
            )
        else:
            micro = generate_rsa(spec, RsaLimits(cfg["rsa_max_attempts"]), rng)
        imp = ImperfectionSpec(
            wave_amplitude=get("wave_amplitude"),
            wave_count=cfg["wave_count"],
            defect_zone_fraction=get("defect_zone_fraction"),
            defect_zone_count=cfg["defect_zone_count"],
        )
        micro = apply_surface_waves(micro, imp)
        micro = apply_defect_zones(micro, imp, rng)
        grid = voxelize(micro, cfg["resolution"], supersample=cfg["supersample"])
        matrix = IsotropicMaterial.from_young_poisson(
            cfg["matrix_young"], cfg["matrix_poisson"]
        )
        phases = [matrix, matrix.scaled(get("contrast"))]
        solver_cfg = SolverConfig(
            acc=cfg["acc"],
            max_iterations=cfg["max_iterations"],
            fft_workers=cfg["fft_workers"],
        )
        hom = homogenize(grid, phases, solver_cfg)
        bulk, shear, aniso = isotropic_projection(hom.c_hom)
        fractions = discrete_volume_fraction(grid, len(phases))
        (k_lo, k_hi), (mu_lo, mu_hi) = voigt_reuss_bounds(phases, fractions)
        tol_k = 1e-3 * (k_hi - k_lo)
        tol_mu = 1e-3 * (mu_hi - mu_lo)
        result.bounds = {
            "bulk": [k_lo, k_hi],
            "shear": [mu_lo, mu_hi],
            "bulk_hom": bulk,
            "shear_hom": shear,
        }
        result.bounds_ok = bool(
            k_lo - tol_k <= bulk <= k_hi + tol_k
            and mu_lo - tol_mu <= shear <= mu_hi + tol_mu
        )
        result.c_hom = [float(x) for x in hom.c_hom.ravel()]
        result.bulk = bulk / matrix.bulk
        result.shear = shear / matrix.mu
        result.anisotropy = aniso
        result.iterations = [r.iterations for r in hom.reports]
        result.max_eps_comp = max(r.eps_comp for r in hom.reports)
        result.max_eps_eq = max(r.eps_eq for r in hom.reports)
        result.inclusion_fraction = float(fractions[1:].sum())
        result.ok = True
    except (GenerationError, SolverError, SingularDifference, ValueError) as exc:
        result.error = f"{type(exc).__name__}: {exc}"
    result.wall_time = time.perf_counter() - t0
    return result


@dataclass
class PointSummary:
    point_index: int
    point: dict
    n_samples: int
    n_failures: int
    escalated: bool
    bulk_mean: float
    bulk_std: float
    bulk_half_width: float
    shear_mean: float
    shear_std: float
    shear_half_width: float
    anisotropy_mean: float


def summarize_point(point_index, point, samples, level, escalated=False):
    good = [s for s in samples if s.ok]
    n_fail = len(samples) - len(good)
    if len(good) < min(3, len(samples)):
        raise PointFailed(
            f"point {point_index}: only {len(good)} of {len(samples)} "
            "samples succeeded"
        )
    bulks = np.array([s.bulk for s in good])
    shears = np.array([s.shear for s in good])
    anis = np.array([s.anisotropy for s in good])
    if len(good) >= 2:
        bulk_mean, bulk_hw = student_interval(bulks, level)
        shear_mean, shear_hw = student_interval(shears, level)
        bulk_std = float(bulks.std(ddof=1))
        shear_std = float(shears.std(ddof=1))
    else:
        bulk_mean, bulk_hw = float(bulks[0]), math.inf
        shear_mean, shear_hw = float(shears[0]), math.inf
        bulk_std = shear_std = 0.0
    return PointSummary(
        point_index=point_index,
        point=dict(point),
        n_samples=len(samples),
        n_failures=n_fail,
        escalated=escalated,
        bulk_mean=bulk_mean,
        bulk_std=bulk_std,
        bulk_half_width=bulk_hw,
        shear_mean=shear_mean,
        shear_std=shear_std,
        shear_half_width=shear_hw,
        anisotropy_mean=float(anis.mean()),
    )


def _needs_escalation(summary: PointSummary, rel_width: float) -> bool:
    for mean, hw in (
        (summary.bulk_mean, summary.bulk_half_width),
        (summary.shear_mean, summary.shear_half_width),
    ):
        if not math.isfinite(hw) or abs(mean) == 0.0:
            continue
        if hw > rel_width * abs(mean):
            return True
    return False


def run_point(
    cfg: dict,
    point: dict,
    point_index: int = 0,
    sample_runner=run_sample,
    executor=None,
    cache=None,
):
    """Run all samples of one parameter point and aggregate.

    If the confidence half-width exceeds the configured fraction of the mean
    at the base sample count, the point is extended to ``escalate_to``
    samples (deterministic seeds keyed by sample index keep this resumable).
    """
    n_base = cfg["samples_per_point"]
    samples = _run_indices(
        cfg, point, point_index, range(n_base), sample_runner, executor, cache
    )
    summary = summarize_point(point_index, point, samples, cfg["confidence_level"])
    n_max = cfg["escalate_to"]
    if n_max > n_base and _needs_escalation(summary, cfg["escalate_rel_width"]):
        samples += _run_indices(
            cfg, point, point_index, range(n_base, n_max), sample_runner,
            executor, cache,
        )
        summary = summarize_point(
            point_index, point, samples, cfg["confidence_level"], escalated=True
        )
    return samples, summary


def _run_indices(cfg, point, point_index, indices, sample_runner, executor, cache):
    """Deterministic fold ordered by sample index regardless of completion."""
    results: dict = {}
    pending = []
    for si in indices:
        cached = cache.load(point_index, si) if cache is not None else None
        if cached is not None:
            results[si] = cached
        elif executor is not None:
            pending.append((si, executor.submit(sample_runner, cfg, point,
                                                point_index, si)))
        else:
            sample = sample_runner(cfg, point, point_index, si)
            if cache is not None:
                cache.store(sample)
            results[si] = sample
    for si, future in pending:
        sample = future.result()
        if cache is not None:
            cache.store(sample)
        results[si] = sample
    return [results[si] for si in sorted(results)]


# ---------------------------------------------------------------------------
# sweep over the Cartesian grid, resumable
# ---------------------------------------------------------------------------


def point_grid(cfg: dict) -> list[dict]:
    """Cartesian product of the array-valued sweep axes."""
    axes = cfgmod.sweep_axes(cfg)
    if not axes:
        return [{}]
    keys = list(axes)
    return [dict(zip(keys, combo)) for combo in product(*(axes[k] for k in keys))]


@dataclass
class CampaignSummary:
    points: list
    complete: bool
    failed_points: list = field(default_factory=list)


class SampleCache:
    """One JSON record per sample under <out_dir>/samples/."""

    def __init__(self, out_dir, expect_hash: str):
        self.root = Path(out_dir)
        self.expect_hash = expect_hash

    def _path(self, pi: int, si: int) -> Path:
        return self.root / "samples" / f"p{pi:04d}_s{si:04d}.json"

    def load(self, pi: int, si: int):
        path = self._path(pi, si)
        if not path.exists():
            return None
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if data.get("config_hash") != self.expect_hash:
            return None
        return SampleResult(**data)

    def store(self, sample: SampleResult) -> None:
        path = self._path(sample.point_index, sample.sample_index)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(sample), fh, indent=1)


def sweep(
    cfg: dict,
    out_dir=None,
    sample_runner=run_sample,
    progress=None,
) -> tuple[CampaignSummary, list]:
    """Run the full campaign grid; returns (summary, all samples).

    With an output directory, every sample persists as one JSON record and
    completed samples are reused on restart (matching config hash required).
    If the budget ``max_total_samples`` would be exceeded the table is cut
    short and marked incomplete.  Failed points are recorded, not raised.
    """
    grid = point_grid(cfg)
    cache = (
        SampleCache(out_dir, cfgmod.config_hash(cfg)) if out_dir is not None else None
    )
    executor = None
    if cfg["workers"] > 1 and sample_runner is run_sample:
        executor = ProcessPoolExecutor(max_workers=cfg["workers"])
    summaries = []
    failed = []
    all_samples = []
    budget = cfg["max_total_samples"]
    used = 0
    complete = True
    try:
        for pi, point in enumerate(grid):
            planned = cfg["samples_per_point"]
            if used + planned > budget:
                complete = False
                break
            try:
                samples, summary = run_point(
                    cfg, point, pi, sample_runner=sample_runner,
                    executor=executor, cache=cache,
                )
            except PointFailed as exc:
                failed.append({"point_index": pi, "point": point, "error": str(exc)})
                used += planned
                continue
            used += len(samples)
            all_samples.extend(samples)
            summaries.append(summary)
            if progress is not None:
                progress(pi, len(grid), summary)
    finally:
        if executor is not None:
            executor.shutdown()
    return CampaignSummary(summaries, complete, failed), all_samples
