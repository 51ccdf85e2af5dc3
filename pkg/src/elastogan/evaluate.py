"""Quantitative evaluation of the trained modulus generator.

Compares generated field ensembles with reference statistics on an evaluation
grid: moment fields, relative L2 errors (trapezoid rule), pointwise kernel
density estimates, and 1-D spatial correlation along fixed-height sections.
All outputs are plot-ready CSV data.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grids import UniformGrid2D
from .network import MlpNetwork, forward
from .randomfield import RandomFieldModel

Array = np.ndarray

CORRELATION_SECTIONS = {"A": 0.75, "B": 0.5, "C": 0.25}
DEFAULT_PDF_POINTS = ((0.25, 0.75), (0.5, 0.5), (0.75, 0.25))
MIN_PDF_SAMPLES = 100


@dataclass
class FieldEnsemble:
    """Sampled field values on an evaluation grid, shape (n_samples, n_points)."""

    grid: UniformGrid2D
    samples: Array

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] != self.grid.n_points:
            raise ValueError("samples must have shape (n_samples, grid.n_points)")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("ensemble contains non-finite values")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    def values_at(self, x: float, y: float) -> Array:
        return self.samples[:, self.grid.point_index(x, y)]


def ensemble_from_generator(
    gen_e: MlpNetwork,
    grid: UniformGrid2D,
    n_samples: int,
    seed,
    chunk: int = 200,
) -> FieldEnsemble:
    """Draw n_samples noise vectors and evaluate the generator on the grid."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    noise_dim = gen_e.input_width - 2
    rng = np.random.default_rng(seed)
    pts = grid.points()
    rows = []
    for lo in range(0, n_samples, chunk):
        xis = rng.standard_normal((min(chunk, n_samples - lo), noise_dim))
        inp = np.concatenate(
            [np.tile(pts, (len(xis), 1)), np.repeat(xis, len(pts), axis=0)], axis=1
        )
        rows.append(forward(gen_e, inp).reshape(len(xis), len(pts)))
    return FieldEnsemble(grid, np.concatenate(rows))


def reference_ensemble(
    model: RandomFieldModel, grid: UniformGrid2D, n_samples: int, seed
) -> FieldEnsemble:
    """Independent test-set ensemble drawn directly from the field model."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    xis = rng.standard_normal((n_samples, model.n_terms))
    phi = model.eigenfunctions_at(grid.points())
    g = (xis * np.sqrt(model.eigenvalues)) @ phi
    return FieldEnsemble(grid, model.alpha + model.beta * np.exp(g))


def moment_fields(ens: FieldEnsemble) -> tuple[Array, Array]:
    """Pointwise sample mean and (n-1)-normalized standard deviation."""
    if ens.n_samples < 2:
        raise ValueError("standard deviation needs at least 2 samples")
    return ens.samples.mean(axis=0), ens.samples.std(axis=0, ddof=1)


def relative_l2_error(estimate: Array, reference: Array, grid: UniformGrid2D) -> float:
    """||est - ref|| / ||ref|| under trapezoid-rule integration on the grid."""
    estimate = np.asarray(estimate, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if estimate.shape != (grid.n_points,) or reference.shape != (grid.n_points,):
        raise ValueError("fields must be flat arrays on the evaluation grid")
    w = grid.trapezoid_weights()
    ref_norm = np.sqrt(np.sum(w * reference**2))
    if ref_norm == 0.0:
        raise ValueError("reference field has zero norm")
    return float(np.sqrt(np.sum(w * (estimate - reference) ** 2)) / ref_norm)


@dataclass
class PdfCurve:
    """Density estimate at a query point, evaluated on a fixed abscissa."""

    point: tuple[float, float]
    x: Array
    density: Array
    bandwidth: float
    low_sample_warning: bool = False


def silverman_bandwidth(values: Array) -> float:
    """Silverman's rule of thumb; floored so degenerate samples stay usable."""
    n = len(values)
    std = values.std(ddof=1) if n > 1 else 0.0
    q75, q25 = np.percentile(values, [75, 25])
    iqr = q75 - q25
    spread_candidates = [s for s in (std, iqr / 1.34) if s > 0]
    spread = min(spread_candidates) if spread_candidates else 0.0
    if spread == 0.0:
        return max(1e-3 * abs(float(values[0])), 1e-6)
    return 0.9 * spread * n ** (-0.2)


def pointwise_pdf(
    ens: FieldEnsemble,
    query_point: tuple[float, float],
    bandwidth: float | None = None,
    bins: int | None = None,
    abscissa: Array | None = None,
) -> PdfCurve:
    """Gaussian KDE (or histogram when bins is given) of the field values at a
    grid point."""
    values = ens.values_at(*query_point)
    low = len(values) < MIN_PDF_SAMPLES
    if low:
        warnings.warn(
            f"only {len(values)} samples at {query_point}; density estimate "
            "may be unstable",
            stacklevel=2,
        )
    if bins is not None:
        counts, edges = np.histogram(values, bins=bins, density=True)
        centers = 0.5 * (edges[:-1] + edges[1:])
        return PdfCurve(tuple(query_point), centers, counts,
                        bandwidth=float(edges[1] - edges[0]),
                        low_sample_warning=low)

    bw = float(bandwidth) if bandwidth is not None else silverman_bandwidth(values)
    if bw <= 0:
        raise ValueError("bandwidth must be positive")
    if abscissa is None:
        lo = values.min() - 5.0 * bw
        hi = values.max() + 5.0 * bw
        abscissa = np.linspace(lo, hi, 401)
    z = (abscissa[:, None] - values[None, :]) / bw
    density = np.exp(-0.5 * z**2).sum(axis=1) / (len(values) * bw * np.sqrt(2 * np.pi))
    return PdfCurve(tuple(query_point), abscissa, density, bw, low)


def lognormal_pdf(e_values: Array, alpha: float, beta: float, sigma2: float) -> Array:
    """Exact density of alpha + beta*exp(N(0, sigma2)); zero at or below alpha."""
    e_values = np.asarray(e_values, dtype=np.float64)
    out = np.zeros_like(e_values)
    mask = e_values > alpha
    y = (e_values[mask] - alpha) / beta
    sigma = math.sqrt(sigma2)
    out[mask] = np.exp(-0.5 * (np.log(y) / sigma) ** 2) / (
        (e_values[mask] - alpha) * sigma * math.sqrt(2 * math.pi)
    )
    return out


@dataclass
class CorrelationCurve:
    """Correlation of the field against a fixed anchor along one grid row."""

    x2_bar: float
    x1_anchor: float
    x1: Array
    correlation: Array


def correlation_1d(
    ens: FieldEnsemble, x1_prime: float, x2_bar: float
) -> CorrelationCurve:
    """Pearson correlation between samples at (x1, x2_bar) and the anchor
    (x1_prime, x2_bar), swept along the grid row."""
    row = ens.grid.row_indices(x2_bar)
    anchor = ens.values_at(x1_prime, x2_bar)
    block = ens.samples[:, row]
    stds = block.std(axis=0, ddof=1)
    anchor_std = anchor.std(ddof=1)
    if anchor_std == 0.0 or np.any(stds == 0.0):
        raise ValueError("correlation undefined: zero variance at a sweep point")
    centered = block - block.mean(axis=0)
    anchor_centered = anchor - anchor.mean()
    cov = (centered * anchor_centered[:, None]).sum(axis=0) / (ens.n_samples - 1)
    corr = cov / (stds * anchor_std)
    # the anchor belongs to the sweep, make its self-correlation exact
    corr[np.isclose(ens.grid.xs, x1_prime)] = 1.0
    return CorrelationCurve(x2_bar, x1_prime, ens.grid.xs.copy(), corr)


def lognormal_correlation(x1: Array, x1_prime: float, spec) -> Array:
    """Closed-form correlation of exp(g) for a unit-variance g: (e^k - 1)/(e - 1)."""
    x1 = np.asarray(x1, dtype=np.float64)
    k = np.exp(-((x1 - x1_prime) ** 2) / (2.0 * spec.correlation_length**2))
    return (np.exp(k) - 1.0) / (np.e - 1.0)


@dataclass
class ReferenceStatistics:
    """Target statistics the generated ensemble is scored against."""

    mean_field: Array
    std_field: Array
    ensemble: FieldEnsemble
    source: str

    @classmethod
    def from_model(
        cls, model: RandomFieldModel, grid: UniformGrid2D, n_samples: int, seed
    ) -> "ReferenceStatistics":
        """Analytic lognormal moments plus a Monte Carlo test ensemble."""
        mean, std = model.analytic_moments(grid.points())
        ens = reference_ensemble(model, grid, n_samples, seed)
        return cls(mean, std, ens, source="analytic-moments+mc-ensemble")

    @classmethod
    def from_ensemble(cls, ens: FieldEnsemble) -> "ReferenceStatistics":
        mean, std = moment_fields(ens)
        return cls(mean, std, ens, source="ensemble")


@dataclass
class EvalReport:
    """All evaluation artifacts for one generator checkpoint."""

    grid: UniformGrid2D
    mean_generated: Array
    std_generated: Array
    mean_reference: Array
    std_reference: Array
    rel_l2_mean: float
    rel_l2_std: float
    pdfs: list[tuple[PdfCurve, PdfCurve]] = field(default_factory=list)
    correlations: dict[str, tuple[CorrelationCurve, CorrelationCurve]] = field(
        default_factory=dict
    )
    meta: dict = field(default_factory=dict)


def build_report(
    generated: FieldEnsemble,
    reference: ReferenceStatistics,
    pdf_points=DEFAULT_PDF_POINTS,
    sections: dict[str, float] = None,
    anchor_x1: float = 0.5,
    meta: dict | None = None,
) -> EvalReport:
    """Score a generated ensemble against reference statistics."""
    if sections is None:
        sections = dict(CORRELATION_SECTIONS)
    mean_gen, std_gen = moment_fields(generated)
    grid = generated.grid
    report = EvalReport(
        grid=grid,
        mean_generated=mean_gen,
        std_generated=std_gen,
        mean_reference=reference.mean_field,
        std_reference=reference.std_field,
        rel_l2_mean=relative_l2_error(mean_gen, reference.mean_field, grid),
        rel_l2_std=relative_l2_error(std_gen, reference.std_field, grid),
        meta=dict(meta or {}, reference_source=reference.source,
                  n_generated=generated.n_samples,
                  n_reference=reference.ensemble.n_samples),
    )
    for point in pdf_points:
        gen_vals = generated.values_at(*point)
        ref_vals = reference.ensemble.values_at(*point)
        bw_gen = silverman_bandwidth(gen_vals)
        bw_ref = silverman_bandwidth(ref_vals)
        lo = min(gen_vals.min() - 5 * bw_gen, ref_vals.min() - 5 * bw_ref)
        hi = max(gen_vals.max() + 5 * bw_gen, ref_vals.max() + 5 * bw_ref)
        abscissa = np.linspace(lo, hi, 401)
        report.pdfs.append(
            (
                pointwise_pdf(generated, point, abscissa=abscissa),
                pointwise_pdf(reference.ensemble, point, abscissa=abscissa),
            )
        )
    for name, x2_bar in sections.items():
        report.correlations[name] = (
            correlation_1d(generated, anchor_x1, x2_bar),
            correlation_1d(reference.ensemble, anchor_x1, x2_bar),
        )
    return report


def _write_csv(path: Path, header: str, columns: list[Array]) -> None:
    with open(path, "w") as f:
        f.write(header + "\n")
        for row in zip(*columns):
            f.write(",".join(f"{v:.17g}" for v in row) + "\n")


def write_report(report: EvalReport, report_dir) -> list[Path]:
    """Write the report CSV family; returns the created file paths."""
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    pts = report.grid.points()
    created = []

    def emit(name: str, header: str, columns: list[Array]) -> None:
        path = report_dir / name
        _write_csv(path, header, columns)
        created.append(path)

    emit("mean_field.csv", "x1,x2,mean_generated,mean_reference",
         [pts[:, 0], pts[:, 1], report.mean_generated, report.mean_reference])
    emit("std_field.csv", "x1,x2,std_generated,std_reference",
         [pts[:, 0], pts[:, 1], report.std_generated, report.std_reference])
    emit("error_fields.csv", "x1,x2,abs_mean_error,abs_std_error",
         [pts[:, 0], pts[:, 1],
          np.abs(report.mean_generated - report.mean_reference),
          np.abs(report.std_generated - report.std_reference)])
    for gen_curve, ref_curve in report.pdfs:
        x, y = gen_curve.point
        emit(f"pdf_x{x:g}_y{y:g}.csv", "e,density_generated,density_reference",
             [gen_curve.x, gen_curve.density, ref_curve.density])
    for name, (gen_curve, ref_curve) in report.correlations.items():
        emit(f"correlation_{name}.csv",
             "x1,correlation_generated,correlation_reference",
             [gen_curve.x1, gen_curve.correlation, ref_curve.correlation])

    summary = report_dir / "summary.csv"
    with open(summary, "w") as f:
        f.write("metric,value\n")
        f.write(f"rel_l2_mean,{report.rel_l2_mean:.17g}\n")
        f.write(f"rel_l2_std,{report.rel_l2_std:.17g}\n")
        f.write(f"n_generated,{report.meta.get('n_generated')}\n")
        f.write(f"n_reference,{report.meta.get('n_reference')}\n")
        f.write(f"grid,{report.grid.spec}\n")
        f.write(f"reference_source,{report.meta.get('reference_source')}\n")
    created.append(summary)
    return created


@dataclass
class SweepCell:
    """Per-trial errors for one value of the swept parameter."""

    parameter: str
    value: int
    trial_errors: list[tuple[float, float]]

    @property
    def mean_errors(self) -> tuple[float, float]:
        arr = np.asarray(self.trial_errors, dtype=np.float64)
        return float(arr[:, 0].mean()), float(arr[:, 1].mean())


def write_sweep_report(cells: list[SweepCell], path) -> None:
    """Averaged error curves with per-trial markers, one CSV row per record."""
    if not cells:
        raise ValueError("no sweep cells to report")
    with open(path, "w") as f:
        f.write("parameter,value,trial,rel_l2_mean,rel_l2_std\n")
        for cell in cells:
            for t, (em, es) in enumerate(cell.trial_errors):
                f.write(f"{cell.parameter},{cell.value},{t},{em:.17g},{es:.17g}\n")
            em, es = cell.mean_errors
            f.write(f"{cell.parameter},{cell.value},mean,{em:.17g},{es:.17g}\n")
