"""Lognormal elastic-modulus random field via truncated Karhunen-Loeve expansion.

The latent process is a zero-mean Gaussian process with squared-exponential
covariance on the unit square. Its KL eigenpairs are computed from the
quadrature-weighted covariance matrix on a uniform grid (Nystrom method with
uniform cell weights), and modulus samples are alpha + beta * exp(g).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container
from .grids import UniformGrid2D, bilinear_interpolate

Array = np.ndarray


@dataclass(frozen=True)
class KernelSpec:
    """Squared-exponential covariance k(x,x') = variance * exp(-|x-x'|^2 / 2l^2)."""

    correlation_length: float
    variance: float = 1.0

    def __post_init__(self):
        if not self.correlation_length > 0:
            raise ValueError("correlation_length must be positive")
        if not self.variance > 0:
            raise ValueError("variance must be positive")


def kernel_eval(x, x_prime, spec: KernelSpec) -> float:
    """Evaluate the covariance kernel between two points."""
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    sq = np.sum((x - x_prime) ** 2, axis=-1)
    return spec.variance * np.exp(-sq / (2.0 * spec.correlation_length**2))


def kernel_matrix(points: Array, spec: KernelSpec) -> Array:
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=-1)
    return spec.variance * np.exp(-d2 / (2.0 * spec.correlation_length**2))


class EigensolverError(Exception):
    pass


@dataclass
class RandomFieldModel:
    """Truncated KL basis of the latent Gaussian process plus transform constants.

    eigenfunctions[k] holds the k-th eigenfunction's values at grid_points,
    orthonormal under the uniform quadrature weight 1/n_points. When the model
    was built on a UniformGrid2D, off-grid values come from bilinear
    interpolation; an unstructured grid restricts evaluation to grid points.
    """

    grid_points: Array
    eigenvalues: Array
    eigenfunctions: Array
    alpha: float
    beta: float
    n_terms: int
    kernel: KernelSpec
    captured_variance_ratio: float
    grid: UniformGrid2D | None = field(default=None)

    def eigenfunctions_at(self, points: Array) -> Array:
        """Eigenfunction values at arbitrary points, shape (n_terms, n_points)."""
        if self.grid is None:
            raise ValueError(
                "model built on an unstructured grid; off-grid evaluation "
                "requires a UniformGrid2D"
            )
        return bilinear_interpolate(self.grid, self.eigenfunctions, points)

    def log_field_variance(self, points: Array) -> Array:
        """Pointwise variance of the truncated latent field, sum_k lambda_k phi_k^2."""
        phi = self.eigenfunctions_at(points)
        return np.einsum("k,kp->p", self.eigenvalues, phi**2)

    def analytic_moments(self, points: Array) -> tuple[Array, Array]:
        """Exact pointwise mean and std of alpha + beta*exp(g) under truncation."""
        s2 = self.log_field_variance(points)
        mean = self.alpha + self.beta * np.exp(s2 / 2.0)
        std = self.beta * np.sqrt(np.exp(2.0 * s2) - np.exp(s2))
        return mean, std

    def save(self, path) -> None:
        meta = {
            "kind": "random_field_model",
            "version": 1,
            "alpha": self.alpha,
            "beta": self.beta,
            "correlation_length": self.kernel.correlation_length,
            "variance": self.kernel.variance,
            "n_terms": self.n_terms,
            "captured_variance_ratio": self.captured_variance_ratio,
            "grid": self.grid.spec if self.grid is not None else None,
        }
        write_container(
            path,
            meta,
            {
                "grid_points": self.grid_points,
                "eigenvalues": self.eigenvalues,
                "eigenfunctions": self.eigenfunctions,
            },
        )

    @classmethod
    def load(cls, path) -> "RandomFieldModel":
        meta, arrays = read_container(path)
        if meta.get("kind") != "random_field_model":
            raise ValueError(f"{path} is not a random field model file")
        grid = UniformGrid2D.from_spec(meta["grid"]) if meta["grid"] else None
        return cls(
            grid_points=arrays["grid_points"],
            eigenvalues=arrays["eigenvalues"],
            eigenfunctions=arrays["eigenfunctions"],
            alpha=meta["alpha"],
            beta=meta["beta"],
            n_terms=meta["n_terms"],
            kernel=KernelSpec(meta["correlation_length"], meta["variance"]),
            captured_variance_ratio=meta["captured_variance_ratio"],
            grid=grid,
        )


def build_kl_model(
    grid: UniformGrid2D | Array,
    spec: KernelSpec,
    n_terms: int,
    alpha: float,
    beta: float,
) -> RandomFieldModel:
    """Solve the discrete KL eigenproblem and keep the top n_terms eigenpairs.

    Uniform quadrature weights w = 1/n sym-metrize the problem: eigh of w*C
    gives eigenvalues lambda_k and l2-orthonormal vectors v_k, from which
    phi_k = v_k / sqrt(w) are orthonormal under the quadrature inner product.
    """
    structured = isinstance(grid, UniformGrid2D)
    points = grid.points() if structured else np.asarray(grid, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2 or len(points) == 0:
        raise ValueError("grid must be a UniformGrid2D or a non-empty (n,2) array")
    n = len(points)
    if not 1 <= n_terms <= n:
        raise ValueError(f"n_terms must be in [1, {n}], got {n_terms}")
    if not beta > 0:
        raise ValueError("beta must be positive")

    w = 1.0 / n
    try:
        eigvals, eigvecs = np.linalg.eigh(w * kernel_matrix(points, spec))
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"KL eigendecomposition failed: {exc}") from exc

    # ascending from eigh; covariance is PSD so tiny negatives are roundoff
    eigvals = np.clip(eigvals[::-1], 0.0, None)
    eigvecs = eigvecs[:, ::-1]
    total = float(np.sum(eigvals))
    kept = eigvals[:n_terms].copy()
    phi = (eigvecs[:, :n_terms] / np.sqrt(w)).T.copy()

    # fix the sign ambiguity of eigh so serialized models are reproducible
    for k in range(n_terms):
        j = int(np.argmax(np.abs(phi[k])))
        if phi[k, j] < 0:
            phi[k] = -phi[k]

    return RandomFieldModel(
        grid_points=points,
        eigenvalues=kept,
        eigenfunctions=phi,
        alpha=float(alpha),
        beta=float(beta),
        n_terms=n_terms,
        kernel=spec,
        captured_variance_ratio=float(np.sum(kept) / total),
        grid=grid if structured else None,
    )


class FieldSample:
    """One modulus realization E(x) = alpha + beta * exp(sum_k sqrt(l_k) phi_k(x) xi_k).

    Immutable after construction and safe for concurrent evaluation.
    """

    def __init__(self, model: RandomFieldModel, kl_coefficients: Array):
        kl_coefficients = np.asarray(kl_coefficients, dtype=np.float64)
        if kl_coefficients.shape != (model.n_terms,):
            raise ValueError(
                f"expected {model.n_terms} KL coefficients, got shape "
                f"{kl_coefficients.shape}"
            )
        self.model = model
        self.kl_coefficients = kl_coefficients
        self._scaled = np.sqrt(model.eigenvalues) * kl_coefficients

    def log_field(self, points: Array) -> Array:
        phi = self.model.eigenfunctions_at(points)
        return np.einsum("k,kp->p", self._scaled, phi)

    def __call__(self, points: Array) -> Array:
        """Modulus values at (n,2) points; always > alpha."""
        return self.model.alpha + self.model.beta * np.exp(self.log_field(points))


def sample_field(model: RandomFieldModel, rng) -> FieldSample:
    """Draw one field realization. rng is a seed or a numpy Generator."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    xi = rng.standard_normal(model.n_terms)
    return FieldSample(model, xi)
