"""Probability calibrators for linear-model logits.

The centerpiece is the angular predictor: an interpolation between the
informative logit and pure Gaussian noise,

    u  ->  E_Z [ link( cos(theta) * u / sigma_norm + sin(theta) * Z ) ],

where theta is the (estimated) angle between the fitted and true weight
directions in the Sigma inner product. theta = 0 recovers the raw link
on normalized logits; theta = pi/2 collapses to the constant chance
value E[link(Z)].

Also here: the probit identity E Phi(mu + s Z) = Phi(mu / sqrt(1+s^2))
and the closed-form (slope, offset) pair it induces for probit-family
links; Platt scaling on the holdout negative log-likelihood (projected
damped Newton for the smooth families, bounded simplex search for the
kinked clipped-relu one); isotonic regression by pool-adjacent-violators;
and a tagged-union Calibrator with a uniform `calibrate` dispatch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import expit, log_ndtr, ndtr, roots_hermite

from . import rng as rngmod
from .errors import (
    ContractError,
    DegenerateHoldout,
    DegenerateModel,
    FitError,
    UnsupportedClosedForm,
)
from .links import SIGMOID_PROBIT_BRIDGE, LinkFunction  # noqa: F401  (re-exported)

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_CHUNK_BUDGET = 1 << 23  # floats per temporary in chunked expectations
_PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class IntegratorCfg:
    """How to evaluate expectations over standard Gaussian noise.

    gauss_hermite : deterministic quadrature with `nodes` points
    monte_carlo   : `samples` seeded draws (stream derived from `seed`)
    closed_form   : exact probit identity; probit links only
    """

    method: str = "gauss_hermite"
    nodes: int = 128
    samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("gauss_hermite", "monte_carlo", "closed_form"):
            raise ContractError(f"unknown integrator method {self.method!r}")
        if self.method == "gauss_hermite" and self.nodes < 2:
            raise ContractError("gauss_hermite needs at least 2 nodes")
        if self.method == "monte_carlo" and self.samples < 1000:
            raise ContractError("monte_carlo needs at least 1000 samples")


def default_integrator(link: LinkFunction) -> IntegratorCfg:
    """128 Gauss-Hermite nodes; 512 for the kinked clipped-relu link."""
    return IntegratorCfg(nodes=128 if link.smooth else 512)


@lru_cache(maxsize=16)
def _gh_points(nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights rescaled so that sum(w * f(z)) = E f(Z), Z ~ N(0,1).

    scipy's rule stays finite at high degree (numpy's overflows past ~380
    nodes), which the 512-node default for kinked links needs.
    """
    x, w = roots_hermite(nodes)
    return math.sqrt(2.0) * x, w / math.sqrt(math.pi)


def _chunked_expectation(points: np.ndarray, fn, z: np.ndarray, weights: Optional[np.ndarray]) -> np.ndarray:
    """Accumulate sum_k w_k * fn(points + z_k) over chunks of z."""
    out = np.zeros_like(points)
    block = max(1, _CHUNK_BUDGET // max(points.size, 1))
    for start in range(0, z.size, block):
        zb = z[start : start + block]
        vals = fn(points[..., None] + zb)
        if weights is None:
            out += vals.sum(axis=-1) / z.size
        else:
            out += vals @ weights[start : start + block]
    return out


def gaussian_expectation(fn, integrator: IntegratorCfg) -> float:
    """E[fn(Z)] for scalar-argument vectorized fn and Z ~ N(0,1)."""
    if integrator.method == "gauss_hermite":
        z, w = _gh_points(integrator.nodes)
        return float(np.asarray(fn(z)) @ w)
    if integrator.method == "monte_carlo":
        gen = rngmod.substream(integrator.seed, "mc-integrator")
        total = 0.0
        remaining = integrator.samples
        while remaining > 0:
            take = min(remaining, _CHUNK_BUDGET)
            total += float(np.sum(fn(gen.standard_normal(take))))
            remaining -= take
        return total / integrator.samples
    raise UnsupportedClosedForm("gaussian_expectation has no generic closed form")


def probit_closed_form(mu, s):
    """E Phi(mu + s Z) = Phi(mu / sqrt(1 + s^2)); vectorized, s >= 0."""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < 0):
        raise ContractError("noise scale s must be nonnegative")
    return ndtr(np.asarray(mu, dtype=np.float64) / np.sqrt(1.0 + s * s))


def _clipped_linear_gaussian_mean(mu, s: float):
    """E clip(mu + s Z, 0, 1) exactly, from truncated-normal first moments.

    The integrand is piecewise linear in Z, so the three pieces reduce to
    Phi/phi terms; a plain Gauss rule would converge only algebraically
    across the kinks (hundreds of nodes still leave ~1e-3 errors).
    """
    mu = np.asarray(mu, dtype=np.float64)
    s = abs(float(s))
    if s == 0.0:
        return np.clip(mu, 0.0, 1.0)
    lo = (0.0 - mu) / s
    hi = (1.0 - mu) / s
    density_lo = np.exp(-0.5 * lo * lo) / math.sqrt(2.0 * math.pi)
    density_hi = np.exp(-0.5 * hi * hi) / math.sqrt(2.0 * math.pi)
    return mu * (ndtr(hi) - ndtr(lo)) + s * (density_lo - density_hi) + (1.0 - ndtr(hi))


def angular_predict(u, theta: float, sigma_norm: float, link: LinkFunction, integrator: Optional[IntegratorCfg] = None):
    """Evaluate the angular predictor at logits u (scalar or array).

    Monotone nondecreasing in u whenever the link is nondecreasing and
    theta < pi/2; constant at theta = pi/2. closed_form is exact but
    available only for probit links.
    """
    if not -1e-12 <= theta <= math.pi + 1e-12:
        raise ContractError(f"theta must lie in [0, pi], got {theta}")
    if sigma_norm <= 0:
        raise DegenerateModel("sigma_norm must be positive")
    theta = min(max(theta, 0.0), math.pi)
    if integrator is None:
        integrator = default_integrator(link)

    scalar_in = np.isscalar(u) or np.asarray(u).ndim == 0
    u_arr = np.atleast_1d(np.asarray(u, dtype=np.float64))
    base = math.cos(theta) * u_arr / sigma_norm
    spread = math.sin(theta)

    if integrator.method == "closed_form":
        if link.kind != "probit":
            raise UnsupportedClosedForm(f"no closed form for link kind {link.kind!r}")
        out = probit_closed_form(link.a * base + link.b, abs(link.a) * spread)
    elif integrator.method == "gauss_hermite":
        if link.kind == "crelu":
            # piecewise-linear integrand: integrate each piece exactly
            out = _clipped_linear_gaussian_mean(link.a * base + link.b, link.a * spread)
        else:
            z, w = _gh_points(integrator.nodes)
            out = _chunked_expectation(base, link, spread * z, w)
    else:
        gen = rngmod.substream(integrator.seed, "angular-mc")
        out = np.zeros_like(base)
        remaining = integrator.samples
        block = max(1, _CHUNK_BUDGET // max(base.size, 1))
        while remaining > 0:
            take = min(remaining, block)
            zb = spread * gen.standard_normal(take)
            out += link(base[..., None] + zb).sum(axis=-1)
            remaining -= take
        out /= integrator.samples

    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar_in else out


def theoretical_AB(theta: float, sigma_norm: float, a: float, b: float) -> tuple[float, float]:
    """The (slope, offset) pair at which a probit-family Platt map equals
    the angular predictor exactly.

    slope  = cos(theta) / (sigma_norm * sqrt(1 + a^2 sin^2(theta)))
    offset = (b/a) * (1 / sqrt(1 + a^2 sin^2(theta)) - 1)
    """
    if a == 0:
        raise ContractError("link slope a must be nonzero")
    if sigma_norm <= 0:
        raise DegenerateModel("sigma_norm must be positive")
    shrink = math.sqrt(1.0 + a * a * math.sin(theta) ** 2)
    return math.cos(theta) / (sigma_norm * shrink), (b / a) * (1.0 / shrink - 1.0)


def chance_value(link: LinkFunction, integrator: Optional[IntegratorCfg] = None) -> float:
    """The non-informative constant E[link(Z)], Z ~ N(0,1)."""
    if integrator is None:
        integrator = default_integrator(link)
    if integrator.method == "closed_form":
        if link.kind != "probit":
            raise UnsupportedClosedForm(f"no closed form for link kind {link.kind!r}")
        return float(probit_closed_form(link.b, abs(link.a)))
    if integrator.method == "gauss_hermite" and link.kind == "crelu":
        return float(np.clip(_clipped_linear_gaussian_mean(np.float64(link.b), link.a), 0.0, 1.0))
    return float(np.clip(gaussian_expectation(link, integrator), 0.0, 1.0))


# ---------------------------------------------------------------------------
# Platt scaling
# ---------------------------------------------------------------------------


def _platt_pointwise(kind: str, t: np.ndarray, y: np.ndarray):
    """Per-point NLL value/gradient/curvature in the pre-squash argument t."""
    if kind == "sigmoid":
        value = np.logaddexp(0.0, t) - y * t
        p = expit(t)
        return value, p - y, p * (1.0 - p)
    if kind == "probit":
        # inverse Mills ratio via log-space; stable for |t| up to hundreds
        def mills(s):
            return np.exp(-0.5 * s * s - _LOG_SQRT_2PI - log_ndtr(s))

        value = -y * log_ndtr(t) - (1.0 - y) * log_ndtr(-t)
        m_pos, m_neg = mills(t), mills(-t)
        grad = -y * m_pos + (1.0 - y) * m_neg
        curv = y * m_pos * (m_pos + t) + (1.0 - y) * m_neg * (m_neg - t)
        return value, grad, curv
    # crelu: linear region contributes Bernoulli NLL curvature, flats nothing
    p = np.clip(t, _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    value = -y * np.log(p) - (1.0 - y) * np.log(1.0 - p)
    inside = (t > 0.0) & (t < 1.0)
    grad = np.where(inside, -y / p + (1.0 - y) / (1.0 - p), 0.0)
    curv = np.where(inside, y / p**2 + (1.0 - y) / (1.0 - p) ** 2, 0.0)
    return value, grad, curv


_PROBE_DIRECTIONS = np.array(
    [[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float
)
_PROBE_STEPS = (1e-2, 1e-4, 1e-6, 1e-8)


def _probe_descent(objective, params, obj, box):
    """Best improving neighbor of params along fixed directions, or None."""
    best = None
    for rel in _PROBE_STEPS:
        step = rel * max(1.0, float(np.max(np.abs(params))))
        for direction in _PROBE_DIRECTIONS:
            cand = np.clip(params + step * direction, -box, box)
            cand_obj = objective(cand)
            if np.isfinite(cand_obj) and cand_obj < obj and (best is None or cand_obj < best[1]):
                best = (cand, cand_obj)
    return best


def _platt_newton(objective, nll_parts, logits, a, box, tol, max_iter):
    """Projected damped Newton for the smooth (convex) Platt families."""
    params = np.array([1.0, 0.0])
    obj = objective(params)

    def projected_grad(p, grad):
        pg = grad.copy()
        at_hi = (p >= box) & (grad < 0)
        at_lo = (p <= -box) & (grad > 0)
        pg[at_hi | at_lo] = 0.0
        return pg

    for _ in range(max_iter):
        if not np.isfinite(obj):
            raise FitError("Platt objective became non-finite")
        _, grad_t, curv_t = nll_parts(params)
        grad = np.array([a * float(grad_t @ logits), a * float(np.sum(grad_t))])
        if float(np.linalg.norm(projected_grad(params, grad))) <= tol:
            return params
        h11 = a * a * float(curv_t @ (logits * logits))
        h12 = a * a * float(curv_t @ logits)
        h22 = a * a * float(np.sum(curv_t))
        hess = np.array([[h11, h12], [h12, h22]])
        jitter = 0.0
        scale = max(abs(h11), abs(h22), 1.0)
        while True:
            try:
                step = np.linalg.solve(hess + jitter * np.eye(2), -grad)
                if np.all(np.isfinite(step)):
                    break
            except np.linalg.LinAlgError:
                pass
            jitter = max(2.0 * jitter, 1e-10 * scale)
        t = 1.0
        for _ in range(60):
            cand = np.clip(params + t * step, -box, box)
            cand_obj = objective(cand)
            if np.isfinite(cand_obj) and cand_obj < obj:
                params, obj = cand, cand_obj
                break
            t *= 0.5
        else:
            break  # no decrease at any step size: numerically stationary

    _, grad_t, curv_t = nll_parts(params)
    grad = np.array([a * float(grad_t @ logits), a * float(np.sum(grad_t))])
    pnorm = float(np.linalg.norm(projected_grad(params, grad)))
    if pnorm <= tol:
        return params
    # A stalled line search on a smooth strictly convex objective means the
    # remaining improvement is below float64 resolution; accept when the
    # Newton decrement confirms it (summed NLLs make tol=1e-8 unreachable
    # for very large holdouts even though the parameters are exact).
    h11 = a * a * float(curv_t @ (logits * logits))
    h12 = a * a * float(curv_t @ logits)
    h22 = a * a * float(np.sum(curv_t))
    det = h11 * h22 - h12 * h12
    if det > 0:
        decrement = 0.5 * float(
            grad @ np.linalg.solve(np.array([[h11, h12], [h12, h22]]), grad)
        )
        if decrement <= 64.0 * np.finfo(float).eps * (1.0 + abs(obj)):
            return params
    raise FitError(
        f"Platt Newton did not converge (projected gradient norm {pnorm:.3e} > {tol:g})"
    )


def _platt_kinked(objective, box):
    """Simplex search for the clipped-relu family, whose NLL has kinks and
    near-vertical log walls; convergence means no probed descent direction."""
    from scipy.optimize import minimize

    params = np.array([1.0, 0.0])
    obj = objective(params)
    for _ in range(4):
        result = minimize(
            objective,
            params,
            method="Nelder-Mead",
            bounds=[(-box, box), (-box, box)],
            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 4000, "maxfev": 4000},
        )
        cand = np.clip(result.x, -box, box)
        cand_obj = objective(cand)
        if np.isfinite(cand_obj) and cand_obj < obj:
            params, obj = cand, cand_obj
        improved = _probe_descent(objective, params, obj, box)
        if improved is None:
            return params
        params, obj = improved
    raise FitError("Platt simplex search kept finding descent directions; no stable optimum")


def platt_fit(
    logits: np.ndarray,
    labels: np.ndarray,
    family: LinkFunction,
    box: float = 50.0,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> tuple[float, float]:
    """Fit (slope, offset) minimizing the holdout NLL of u -> family(slope*u + offset).

    The search is constrained to the square |slope|, |offset| <= box.
    Sigmoid and probit families have smooth convex objectives and use
    projected damped Newton, converging when the projected gradient norm
    of the summed NLL drops to `tol`. The clipped-relu family is only
    piecewise smooth (its optimum can sit at a kink where the gradient
    jumps), so it uses a bounded simplex search instead and declares
    convergence when no probed direction improves the objective.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if logits.ndim != 1 or logits.shape != labels.shape or logits.size == 0:
        raise ContractError("platt_fit expects matching nonempty 1-D logits and labels")
    if not np.all(np.isfinite(logits)):
        raise ContractError("logits must be finite")
    if np.all(labels == labels[0]):
        raise DegenerateHoldout("holdout labels are all identical; slope is unidentifiable")

    a, b = family.a, family.b

    def nll_parts(p):
        t = a * (p[0] * logits + p[1]) + b
        return _platt_pointwise(family.kind, t, labels)

    def objective(p) -> float:
        return float(np.sum(nll_parts(p)[0]))

    if family.kind == "crelu":
        params = _platt_kinked(objective, box)
    else:
        params = _platt_newton(objective, nll_parts, logits, a, box, tol, max_iter)
    return float(params[0]), float(params[1])


# ---------------------------------------------------------------------------
# Isotonic regression
# ---------------------------------------------------------------------------


def _pav_nondecreasing(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted least-squares nondecreasing fit by pool-adjacent-violators."""
    level_value: list[float] = []
    level_weight: list[float] = []
    level_len: list[int] = []
    for v, w in zip(values, weights):
        cur_v, cur_w, cur_len = float(v), float(w), 1
        while level_value and level_value[-1] > cur_v:
            pv, pw = level_value.pop(), level_weight.pop()
            cur_v = (pv * pw + cur_v * cur_w) / (pw + cur_w)
            cur_w += pw
            cur_len += level_len.pop()
        level_value.append(cur_v)
        level_weight.append(cur_w)
        level_len.append(cur_len)
    return np.repeat(level_value, level_len)


# ---------------------------------------------------------------------------
# The calibrator union
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Calibrator:
    """One of {uncalibrated, angular, platt, isotonic, chance}.

    Immutable after construction; `calibrate` maps any real logit to a
    probability in [0, 1] for every kind. Construct through the
    classmethods rather than directly.
    """

    kind: str
    link: Optional[LinkFunction] = None
    theta: Optional[float] = None
    sigma_norm: Optional[float] = None
    integrator: Optional[IntegratorCfg] = None
    slope: Optional[float] = None
    offset: Optional[float] = None
    breakpoints: Optional[np.ndarray] = field(default=None, compare=False)
    values: Optional[np.ndarray] = field(default=None, compare=False)
    constant: Optional[float] = None

    @classmethod
    def uncalibrated(cls, link: LinkFunction) -> "Calibrator":
        return cls(kind="uncalibrated", link=link)

    @classmethod
    def angular(
        cls,
        theta: float,
        sigma_norm: float,
        link: LinkFunction,
        integrator: Optional[IntegratorCfg] = None,
    ) -> "Calibrator":
        if not -1e-12 <= theta <= math.pi + 1e-12:
            raise ContractError(f"theta must lie in [0, pi], got {theta}")
        if sigma_norm <= 0:
            raise DegenerateModel("sigma_norm must be positive")
        return cls(
            kind="angular",
            link=link,
            theta=float(min(max(theta, 0.0), math.pi)),
            sigma_norm=float(sigma_norm),
            integrator=integrator or default_integrator(link),
        )

    @classmethod
    def platt(cls, slope: float, offset: float, family: LinkFunction) -> "Calibrator":
        return cls(kind="platt", link=family, slope=float(slope), offset=float(offset))

    @classmethod
    def isotonic(cls, breakpoints: np.ndarray, values: np.ndarray) -> "Calibrator":
        breakpoints = np.asarray(breakpoints, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if breakpoints.ndim != 1 or breakpoints.shape != values.shape or breakpoints.size == 0:
            raise ContractError("isotonic calibrator needs matching nonempty breakpoints/values")
        if np.any(np.diff(breakpoints) <= 0):
            raise ContractError("isotonic breakpoints must be strictly increasing")
        if np.any(np.diff(values) < 0) or values.min() < 0 or values.max() > 1:
            raise ContractError("isotonic values must be nondecreasing within [0, 1]")
        return cls(kind="isotonic", breakpoints=breakpoints, values=values)

    @classmethod
    def chance(cls, link: LinkFunction, integrator: Optional[IntegratorCfg] = None) -> "Calibrator":
        return cls(kind="chance", link=link, constant=chance_value(link, integrator))

    def params(self) -> dict:
        """JSON-friendly parameter summary (large step maps are abbreviated)."""
        if self.kind == "uncalibrated":
            return {"kind": self.kind, "link": self.link.label()}
        if self.kind == "angular":
            return {
                "kind": self.kind,
                "theta": self.theta,
                "sigma_norm": self.sigma_norm,
                "link": self.link.label(),
                "integrator": self.integrator.method,
            }
        if self.kind == "platt":
            return {"kind": self.kind, "slope": self.slope, "offset": self.offset, "family": self.link.label()}
        if self.kind == "chance":
            return {"kind": self.kind, "value": self.constant, "link": self.link.label()}
        out = {"kind": self.kind, "n_blocks": int(self.breakpoints.size)}
        if self.breakpoints.size <= 64:
            out["breakpoints"] = [float(v) for v in self.breakpoints]
            out["values"] = [float(v) for v in self.values]
        else:
            out["value_range"] = [float(self.values[0]), float(self.values[-1])]
        return out


def isotonic_fit(logits: np.ndarray, labels: np.ndarray) -> Calibrator:
    """Least-squares nondecreasing fit of labels against logits.

    Exactly tied logits are pooled (weighted by multiplicity) before
    running pool-adjacent-violators, so the result is a function of the
    logit value. Prediction is the step function constant on blocks,
    left-closed, extended constantly beyond the extreme breakpoints.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if logits.ndim != 1 or logits.shape != labels.shape or logits.size == 0:
        raise ContractError("isotonic_fit expects matching nonempty 1-D logits and labels")
    unique, inverse, counts = np.unique(logits, return_inverse=True, return_counts=True)
    means = np.bincount(inverse, weights=labels) / counts
    fitted = _pav_nondecreasing(means, counts.astype(np.float64))
    return Calibrator.isotonic(unique, fitted)


def calibrate(cal: Calibrator, u):
    """Map logits to probabilities under any calibrator kind; vectorized."""
    scalar_in = np.isscalar(u) or np.asarray(u).ndim == 0
    u_arr = np.atleast_1d(np.asarray(u, dtype=np.float64))
    if cal.kind == "uncalibrated":
        out = cal.link(u_arr)
    elif cal.kind == "angular":
        out = angular_predict(u_arr, cal.theta, cal.sigma_norm, cal.link, cal.integrator)
    elif cal.kind == "platt":
        out = cal.link(cal.slope * u_arr + cal.offset)
    elif cal.kind == "isotonic":
        idx = np.searchsorted(cal.breakpoints, u_arr, side="right") - 1
        out = cal.values[np.clip(idx, 0, cal.values.size - 1)]
    elif cal.kind == "chance":
        out = np.full(u_arr.shape, cal.constant)
    else:
        raise ContractError(f"unknown calibrator kind {cal.kind!r}")
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar_in else out
