"""Angular calibration for multi-index models.

Labels are driven by K linear indices through a generalized link g:
pi(x) = g(W_true' x). Given any fitted index matrix W_fit, the joint
Gaussianity of (true indices, normalized fitted indices) yields an exact
conditional law, and the conditional expectation

    E[ g(G) | S = s ] = E_Z [ g(mean_map @ s + residual_factor @ Z) ]

is exactly calibrated. The blocks are

    cov(G)   = W_true' Sigma W_true
    fit_corr = D^{-1} W_fit' Sigma W_fit D^{-1}      (unit diagonal)
    cross    = W_true' Sigma W_fit D^{-1}
    mean_map = cross @ fit_corr^{-1}
    residual = cov(G) - cross @ fit_corr^{-1} @ cross'

with D = diag of the fitted columns' Sigma-norms. Cross-index angles are
*inputs* here (both W matrices are supplied); no estimator for them is
provided.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import rng as rngmod
from .calibrators import IntegratorCfg, _gh_points
from .errors import CollinearIndices, ContractError, LinkRangeError

_CHUNK_BUDGET = 1 << 23
_PSD_FLAG_REL = 1e-8
_MAX_QUADRATURE_DIM = 3

#: Default Gauss-Hermite nodes per dimension for tensor-product quadrature.
DEFAULT_NODES_PER_DIM = {1: 128, 2: 64, 3: 32}


@dataclass(frozen=True)
class MultiIndexModel:
    """True and fitted index matrices (d x K columns) with their covariance."""

    w_true: np.ndarray
    w_fit: np.ndarray
    sigma: np.ndarray
    g: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        w_true = np.asarray(self.w_true)
        w_fit = np.asarray(self.w_fit)
        if w_true.ndim != 2 or w_fit.shape != w_true.shape:
            raise ContractError("w_true and w_fit must be matching (d, K) matrices")
        if self.sigma.shape != (w_true.shape[0], w_true.shape[0]):
            raise ContractError("sigma shape must match the index dimension")

    @property
    def n_indices(self) -> int:
        return self.w_true.shape[1]


@dataclass(frozen=True)
class ConditionalParams:
    """Blocks of the conditional law of true indices given fitted ones."""

    true_cov: np.ndarray
    fit_corr: np.ndarray
    cross: np.ndarray
    mean_map: np.ndarray
    residual_cov: np.ndarray
    residual_factor: np.ndarray
    fit_norms: np.ndarray
    floored: bool = field(default=False)


def conditional_params(model: MultiIndexModel) -> ConditionalParams:
    """Compute the conditional-law blocks from true/fitted index matrices.

    The residual covariance is a Schur complement, PSD in exact
    arithmetic; tiny negative eigenvalues from rounding are floored at
    zero (flagged when the floored mass exceeds 1e-8 of the trace). Its
    factor is a Cholesky when possible; a symmetric eigen-factor when the
    floored matrix is singular, so aligned indices stay noise-free.
    """
    sigma = np.asarray(model.sigma, dtype=np.float64)
    w_true = np.asarray(model.w_true, dtype=np.float64)
    w_fit = np.asarray(model.w_fit, dtype=np.float64)

    sig_fit = sigma @ w_fit
    norms = np.sqrt(np.einsum("dk,dk->k", w_fit, sig_fit))
    if np.any(norms <= 0) or not np.all(np.isfinite(norms)):
        raise ContractError("every fitted index must have positive Sigma-norm")
    fit_normed = sig_fit / norms  # Sigma W_fit D^{-1}

    true_cov = w_true.T @ sigma @ w_true
    fit_corr = w_fit.T @ fit_normed / norms[:, None]
    fit_corr = 0.5 * (fit_corr + fit_corr.T)
    cross = w_true.T @ fit_normed

    eigvals = np.linalg.eigvalsh(fit_corr)
    if eigvals[0] < 1e-10:
        raise CollinearIndices(
            f"fitted indices are numerically collinear (min eigenvalue {eigvals[0]:.3e})"
        )
    mean_map = np.linalg.solve(fit_corr, cross.T).T
    residual = true_cov - mean_map @ cross.T
    residual = 0.5 * (residual + residual.T)

    lam, vec = np.linalg.eigh(residual)
    floored_mass = float(-np.sum(np.minimum(lam, 0.0)))
    floored = floored_mass > _PSD_FLAG_REL * max(float(np.trace(residual)), 0.0)
    lam = np.maximum(lam, 0.0)
    projected = (vec * lam) @ vec.T
    projected = 0.5 * (projected + projected.T)
    try:
        factor = np.linalg.cholesky(projected)
    except np.linalg.LinAlgError:
        factor = vec * np.sqrt(lam)  # valid factor; zero columns on null directions

    return ConditionalParams(
        true_cov=true_cov,
        fit_corr=fit_corr,
        cross=cross,
        mean_map=mean_map,
        residual_cov=projected,
        residual_factor=factor,
        fit_norms=norms,
        floored=floored,
    )


def normalized_fit_logits(model: MultiIndexModel, X: np.ndarray, norms: Optional[np.ndarray] = None) -> np.ndarray:
    """Rows of fitted indices normalized by their Sigma-norms: (n, K)."""
    if norms is None:
        norms = np.sqrt(np.einsum("dk,dk->k", model.w_fit, model.sigma @ model.w_fit))
    return np.asarray(X) @ model.w_fit / norms


def _tensor_gh(k: int, nodes_per_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor-product Gauss-Hermite grid on R^k with weights summing to 1."""
    z1, w1 = _gh_points(nodes_per_dim)
    zgrids = np.meshgrid(*([z1] * k), indexing="ij")
    wgrids = np.meshgrid(*([w1] * k), indexing="ij")
    z = np.stack([grid.ravel() for grid in zgrids], axis=-1)
    w = np.ones(z.shape[0])
    for grid in wgrids:
        w *= grid.ravel()
    return z, w


def angular_predict_multi(
    s: np.ndarray,
    params: ConditionalParams,
    g: Callable[[np.ndarray], np.ndarray],
    integrator: Optional[IntegratorCfg] = None,
    nodes_per_dim: Optional[int] = None,
) -> np.ndarray:
    """E_Z[g(mean_map @ s + residual_factor @ Z)] at normalized fitted logits s.

    `s` is (K,) or (m, K); `g` maps (..., K) arrays to scalar (...) or
    vector (..., J) outputs in [0, 1]. Tensor-product quadrature handles
    K <= 3; larger K falls back to seeded Monte Carlo with a warning.
    Vector-valued g on the probability simplex keeps its sum: weights
    add to one.
    """
    s = np.asarray(s, dtype=np.float64)
    scalar_in = s.ndim == 1
    s2 = s[None, :] if scalar_in else s
    k = params.mean_map.shape[0]
    if s2.ndim != 2 or s2.shape[1] != k:
        raise ContractError(f"logit rows must have {k} components")

    means = s2 @ params.mean_map.T  # (m, K)
    use_mc = integrator is not None and integrator.method == "monte_carlo"
    if not use_mc and k > _MAX_QUADRATURE_DIM:
        warnings.warn(
            f"tensor quadrature unsupported for K={k}; falling back to Monte Carlo",
            RuntimeWarning,
        )
        use_mc = True
        integrator = integrator or IntegratorCfg(method="monte_carlo")

    if use_mc:
        gen = rngmod.substream(integrator.seed, "multi-mc")
        noise = gen.standard_normal((integrator.samples, k)) @ params.residual_factor.T
        weights = None
    else:
        if nodes_per_dim is None:
            nodes_per_dim = (
                integrator.nodes if integrator is not None else DEFAULT_NODES_PER_DIM[k]
            )
        z, weights = _tensor_gh(k, nodes_per_dim)
        noise = z @ params.residual_factor.T

    out = None
    block = max(1, _CHUNK_BUDGET // max(means.shape[0] * k, 1))
    for start in range(0, noise.shape[0], block):
        nb = noise[start : start + block]  # (b, K)
        vals = g(means[:, None, :] + nb[None, :, :])  # (m, b) or (m, b, J)
        if weights is None:
            contrib = vals.sum(axis=1) / noise.shape[0]
        else:
            wb = weights[start : start + block]
            contrib = np.tensordot(vals, wb, axes=([1], [0]))
        out = contrib if out is None else out + contrib

    out = np.clip(out, 0.0, 1.0)
    return out[0] if scalar_in else out


def generate_multi_labels(
    X: np.ndarray,
    w_true: np.ndarray,
    g: Callable[[np.ndarray], np.ndarray],
    seed: int = 0,
) -> np.ndarray:
    """Bernoulli labels with success probability g(W_true' x_i); g must be scalar-valued."""
    X = np.asarray(X, dtype=np.float64)
    w_true = np.asarray(w_true, dtype=np.float64)
    if X.ndim != 2 or w_true.ndim != 2 or X.shape[1] != w_true.shape[0]:
        raise ContractError("design and index matrix shapes do not conform")
    probs = np.asarray(g(X @ w_true), dtype=np.float64)
    if probs.shape != (X.shape[0],):
        raise LinkRangeError("label generation needs a scalar-valued g, one probability per row")
    if np.any((probs < 0) | (probs > 1)) or not np.all(np.isfinite(probs)):
        raise LinkRangeError("g produced probabilities outside [0, 1]")
    return rngmod.bernoulli(rngmod.substream(seed, "multi-labels"), probs)


def additive_link_mean(link) -> Callable[[np.ndarray], np.ndarray]:
    """The additive index link: mean of `link` applied to each index coordinate."""

    def g(u: np.ndarray) -> np.ndarray:
        return np.mean(link(u), axis=-1)

    return g
