"""Synthetic data generation and external covariate ingestion.

Covariance construction, matrix square roots, design sampling under
several entry distributions, true-weight sampling, Bernoulli label
generation, pooled covariance estimation, and CSV loading. Everything is
pure given (inputs, seed): repeated calls are bitwise identical and safe
to run concurrently.

Conventions
-----------
- Designs are (n, d): one row per observation.
- AR(1) base covariance has entries rho**|k-l|; the realized covariance
  is scale times the base matrix (the experiments use scale = 1/d).
- Weight vectors are normalized so that the Sigma-norm sqrt(w' Sigma w)
  equals one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import rng as rngmod
from .errors import ContractError, CovarianceError, IngestError, SingularCovariance
from .links import LinkFunction

COVARIANCE_KINDS = ("ar1", "identity", "external")

# Relative eigenvalue threshold below which a matrix is treated as singular.
_EIG_FLOOR_REL = 1e-12
_SPD_TOL = 1e-8


@dataclass(frozen=True)
class CovarianceSpec:
    """Recipe for a d x d symmetric positive-definite covariance.

    kind   : 'ar1' (entries rho**|k-l|), 'identity', or 'external'
    dim    : d
    scale  : multiplier applied to the base matrix (experiments use 1/d)
    rho    : AR(1) correlation, required in (-1, 1) for kind='ar1'
    matrix : the base matrix itself for kind='external'
    """

    kind: str
    dim: int
    scale: float = 1.0
    rho: float = 0.0
    matrix: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in COVARIANCE_KINDS:
            raise ContractError(f"unknown covariance kind {self.kind!r}")
        if self.dim < 1:
            raise ContractError("covariance dimension must be positive")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ContractError("covariance scale must be a positive real")
        if self.kind == "ar1" and not -1.0 < self.rho < 1.0:
            raise ContractError("ar1 correlation must lie in (-1, 1)")
        if self.kind == "external":
            if self.matrix is None:
                raise ContractError("external covariance requires a matrix")
            if np.asarray(self.matrix).shape != (self.dim, self.dim):
                raise ContractError("external covariance matrix shape must be (dim, dim)")

    @classmethod
    def ar1(cls, rho: float, dim: int, scale: Optional[float] = None) -> "CovarianceSpec":
        """AR(1) spec; scale defaults to 1/dim, the experiments' convention."""
        return cls("ar1", dim, 1.0 / dim if scale is None else scale, rho=rho)

    @classmethod
    def identity(cls, dim: int, scale: float = 1.0) -> "CovarianceSpec":
        return cls("identity", dim, scale)

    @classmethod
    def external(cls, matrix: np.ndarray, scale: float = 1.0) -> "CovarianceSpec":
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls("external", matrix.shape[0], scale, matrix=matrix)


def make_covariance(spec: CovarianceSpec) -> np.ndarray:
    """Realize the covariance matrix scale * base for a spec.

    For an external base matrix, symmetry and positive definiteness are
    verified to relative tolerance 1e-8; violations raise CovarianceError.
    """
    d = spec.dim
    if spec.kind == "identity":
        base = np.eye(d)
    elif spec.kind == "ar1":
        idx = np.arange(d)
        base = spec.rho ** np.abs(idx[:, None] - idx[None, :])
    else:
        base = np.asarray(spec.matrix, dtype=np.float64)
        scale_ref = float(np.max(np.abs(base))) or 1.0
        if not np.allclose(base, base.T, atol=_SPD_TOL * scale_ref, rtol=0.0):
            raise CovarianceError("external covariance matrix is not symmetric")
        base = 0.5 * (base + base.T)
        eigvals = np.linalg.eigvalsh(base)
        if eigvals[0] <= _SPD_TOL * max(eigvals[-1], 0.0) or eigvals[-1] <= 0.0:
            raise CovarianceError(
                f"external covariance matrix is not positive definite "
                f"(eigenvalue range [{eigvals[0]:.3e}, {eigvals[-1]:.3e}])"
            )
    return spec.scale * base


def matrix_sqrt_and_invsqrt(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric square root and inverse square root of a symmetric PD matrix.

    Uses a symmetric eigendecomposition with eigenvalues floored at
    1e-12 times the largest; matrices whose smallest eigenvalue falls at
    or below that floor raise SingularCovariance. Both outputs are exactly
    symmetric.
    """
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ContractError("matrix_sqrt_and_invsqrt expects a square matrix")
    mat = 0.5 * (mat + mat.T)
    eigvals, eigvecs = np.linalg.eigh(mat)
    lam_max = float(eigvals[-1])
    if lam_max <= 0.0 or eigvals[0] <= _EIG_FLOOR_REL * lam_max:
        raise SingularCovariance(
            f"matrix is numerically singular: min/max eigenvalue ratio "
            f"{eigvals[0] / lam_max if lam_max > 0 else float('-inf'):.3e}"
        )
    lam = np.maximum(eigvals, _EIG_FLOOR_REL * lam_max)
    root = (eigvecs * np.sqrt(lam)) @ eigvecs.T
    inv_root = (eigvecs * (1.0 / np.sqrt(lam))) @ eigvecs.T
    return 0.5 * (root + root.T), 0.5 * (inv_root + inv_root.T)


def sample_design(
    n: int,
    spec: CovarianceSpec,
    dist: str = "gaussian",
    seed: int = 0,
    cov_sqrt: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Sample an (n, d) design with iid rows distributed as Sigma^{1/2} z.

    z has iid entries from `dist` (gaussian, rademacher or uniform, all
    standardized). Pass `cov_sqrt` to reuse a precomputed Sigma^{1/2} and
    skip the eigendecomposition; it must match `spec`.
    """
    if n < 1:
        raise ContractError("need at least one design row")
    if cov_sqrt is None:
        cov_sqrt, _ = matrix_sqrt_and_invsqrt(make_covariance(spec))
    gen = rngmod.substream(seed, "design")
    z = rngmod.sample_entries(gen, (n, spec.dim), dist)
    return z @ cov_sqrt


def sample_true_weight(spec: CovarianceSpec, seed: int = 0, sigma: Optional[np.ndarray] = None) -> np.ndarray:
    """Draw a standard Gaussian weight and normalize it to unit Sigma-norm."""
    gen = rngmod.substream(seed, "weight")
    w = gen.standard_normal(spec.dim)
    if sigma is None:
        sigma = make_covariance(spec)
    norm = float(np.sqrt(w @ sigma @ w))
    if norm <= 0.0:
        raise ContractError("degenerate weight draw with zero Sigma-norm")
    return w / norm


def generate_labels(X: np.ndarray, w_star: np.ndarray, link: LinkFunction, seed: int = 0) -> np.ndarray:
    """Draw independent Bernoulli labels with success probability link(w_star' x_i)."""
    X = np.asarray(X, dtype=np.float64)
    w_star = np.asarray(w_star, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != w_star.shape[0]:
        raise ContractError(f"design shape {X.shape} does not conform with weight length {w_star.shape}")
    probs = link(X @ w_star)
    return rngmod.bernoulli(rngmod.substream(seed, "labels"), probs)


def estimate_covariance(pool: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Ridge-shrunk second-moment matrix from an unlabeled pool.

    Returns pool'pool/m + ridge * tr(pool'pool)/(m*d) * I. The mean is not
    subtracted (the sampling model is centered). Positive ridge makes the
    output positive definite even when m < d.
    """
    pool = np.asarray(pool, dtype=np.float64)
    if pool.ndim != 2 or pool.shape[0] < 2:
        raise ContractError("covariance pool must be a matrix with at least two rows")
    if ridge < 0:
        raise ContractError("ridge must be nonnegative")
    m, d = pool.shape
    second_moment = pool.T @ pool / m
    est = 0.5 * (second_moment + second_moment.T)
    if ridge > 0:
        est = est + (ridge * np.trace(est) / d) * np.eye(d)
    return est


def load_design_csv(path) -> np.ndarray:
    """Load a rectangular numeric CSV (one header row) into an (n, d) matrix.

    No standardization is applied: the caller owns preprocessing, so the
    Sigma-norm bookkeeping downstream stays meaningful. Ragged rows,
    non-numeric or non-finite cells, and files without data rows raise
    IngestError with a 1-based location (the header is row 1).
    """
    path = Path(path)
    try:
        handle = path.open("r", encoding="utf-8", newline="")
    except OSError as exc:
        raise IngestError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path} is empty") from None
        width = len(header)
        if width == 0:
            raise IngestError(f"{path} has an empty header row", row=1)
        rows = []
        for lineno, cells in enumerate(reader, start=2):
            if len(cells) != width:
                raise IngestError(
                    f"{path}: expected {width} columns, found {len(cells)}", row=lineno
                )
            parsed = np.empty(width)
            for j, cell in enumerate(cells):
                try:
                    parsed[j] = float(cell)
                except ValueError:
                    raise IngestError(
                        f"{path}: non-numeric cell {cell!r}", row=lineno, col=j + 1
                    ) from None
                if not np.isfinite(parsed[j]):
                    raise IngestError(
                        f"{path}: non-finite cell {cell!r}", row=lineno, col=j + 1
                    )
            rows.append(parsed)
    if not rows:
        raise IngestError(f"{path} has a header but no data rows")
    return np.vstack(rows)


@dataclass(frozen=True)
class Provenance:
    """Where a dataset came from; synthetic provenance keeps the generator state."""

    kind: str  # "synthetic" | "external"
    link: Optional[LinkFunction] = None
    w_star: Optional[np.ndarray] = field(default=None, compare=False)
    cov_spec: Optional[CovarianceSpec] = None
    seed: Optional[int] = None
    path: Optional[str] = None


@dataclass(frozen=True)
class Dataset:
    """A design matrix with binary labels and provenance metadata."""

    X: np.ndarray
    y: np.ndarray
    provenance: Provenance

    def __post_init__(self):
        X = np.asarray(self.X)
        y = np.asarray(self.y)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ContractError(f"dataset shapes do not conform: X {X.shape}, y {y.shape}")
        if not np.all(np.isfinite(X)):
            raise ContractError("design matrix contains non-finite entries")
        if not np.all((y == 0) | (y == 1)):
            raise ContractError("labels must be 0/1")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def make_synthetic_dataset(
    n: int,
    spec: CovarianceSpec,
    link: LinkFunction,
    seed: int,
    dist: str = "gaussian",
    cov_sqrt: Optional[np.ndarray] = None,
    sigma: Optional[np.ndarray] = None,
) -> Dataset:
    """Sample a full synthetic dataset: design, unit-Sigma-norm weight, labels."""
    if sigma is None:
        sigma = make_covariance(spec)
    if cov_sqrt is None:
        cov_sqrt, _ = matrix_sqrt_and_invsqrt(sigma)
    X = sample_design(n, spec, dist, seed, cov_sqrt=cov_sqrt)
    w_star = sample_true_weight(spec, seed, sigma=sigma)
    y = generate_labels(X, w_star, link, seed)
    prov = Provenance(kind="synthetic", link=link, w_star=w_star, cov_spec=spec, seed=seed)
    return Dataset(X=X, y=y, provenance=prov)
