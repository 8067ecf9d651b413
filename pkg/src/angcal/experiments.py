"""End-to-end experiment drivers behind the CLI subcommands.

Each driver wires data generation -> M-estimation -> alignment
estimation -> calibrators -> evaluation, then writes deterministic
reports (summary.json, reliability_<name>.csv, optional reliability.svg)
into an output directory.

Evaluation never materializes test design matrices: a test point only
enters through the fitted logit w_hat'x and the true index w_star'x, so
test draws z are projected onto the two directions Sigma^{1/2} w_hat and
Sigma^{1/2} w_star (identical numbers, a factor d less work). Training
designs are always materialized. Every random stream derives a sub-seed
from (master seed, stream tag), so Monte Carlo loops are reproducible
and order-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import rng as rngmod
from .calibrators import (
    Calibrator,
    IntegratorCfg,
    angular_predict,
    calibrate,
    chance_value,
    default_integrator,
    isotonic_fit,
    platt_fit,
    theoretical_AB,
)
from .errors import AngcalError, ContractError, DegenerateHoldout, FitError
from .evaluate import ReliabilityReport, bregman_losses, cal_error_at_level, reliability
from .links import SIGMOID_PROBIT_BRIDGE, LinkFunction
from .mestimator import FitConfig, FittedModel, fit
from .multiindex import (
    DEFAULT_NODES_PER_DIM,
    MultiIndexModel,
    additive_link_mean,
    angular_predict_multi,
    conditional_params,
)
from .observable import (
    AngleEstimate,
    SignEstimate,
    angle_estimate,
    compute_intermediates,
    inner_product_sq,
    sign_estimate,
    sign_estimate_from_logits,
)
from .output import (
    reliability_to_dict,
    write_csv,
    write_json,
    write_reliability_csv,
    write_reliability_svg,
)
from .synth import (
    CovarianceSpec,
    Dataset,
    Provenance,
    generate_labels,
    load_design_csv,
    make_covariance,
    matrix_sqrt_and_invsqrt,
    sample_design,
    sample_true_weight,
)

KNOWN_CALIBRATORS = ("uncalibrated", "angular", "angular-star", "platt", "isotonic", "chance")
DEFAULT_CALIBRATORS = ("uncalibrated", "angular", "platt", "isotonic", "chance")

_PAIR_CHUNK_FLOATS = 1 << 22
_RELIABILITY_BINS = 10
_DELTA_BINS = 20
_MULTI_MIX = 0.5
_MULTI_NOISE = 0.8
_MULTI_RESIDUAL_DRAWS = 1_000_000

# Realized covariance factors are deterministic in (kind, rho, dim); reuse
# them across seeds so multi-seed sweeps pay for one eigendecomposition.
_COV_FACTOR_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _covariance_factors(spec: CovarianceSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    key = (spec.kind, spec.rho, spec.scale, spec.dim)
    if spec.kind == "external" or key not in _COV_FACTOR_CACHE:
        sigma = make_covariance(spec)
        cov_sqrt, cov_inv_sqrt = matrix_sqrt_and_invsqrt(sigma)
        if spec.kind == "external":
            return sigma, cov_sqrt, cov_inv_sqrt
        if len(_COV_FACTOR_CACHE) > 8:
            _COV_FACTOR_CACHE.clear()
        _COV_FACTOR_CACHE[key] = (sigma, cov_sqrt, cov_inv_sqrt)
    return _COV_FACTOR_CACHE[key]


@dataclass(frozen=True)
class ExperimentConfig:
    """Knobs shared by all experiment drivers; sizes must be positive."""

    n: int = 1000
    d: int = 2000
    lam: float = 0.5
    seed: int = 1
    link: LinkFunction = field(default_factory=lambda: LinkFunction.sigmoid_affine(3.0, 1.0))
    entry: str = "gaussian"
    cov_kind: str = "ar1"
    cov_rho: float = 0.5
    n_test: int = 20000
    platt_holdout: int = 20000
    sign_holdout_frac: float = 0.1
    sign_holdout_file: Optional[str] = None
    calibrators: tuple[str, ...] = DEFAULT_CALIBRATORS
    platt_family: str = "link"
    out: Optional[Path] = None
    svg: bool = False

    def __post_init__(self):
        for name, value in (("n", self.n), ("d", self.d), ("n_test", self.n_test), ("platt_holdout", self.platt_holdout)):
            if int(value) < 1:
                raise ContractError(f"{name} must be a positive integer, got {value}")
        if self.entry not in rngmod.ENTRY_DISTRIBUTIONS:
            raise ContractError(f"unknown entry distribution {self.entry!r}")
        if self.cov_kind not in ("ar1", "identity"):
            raise ContractError(f"unsupported covariance kind {self.cov_kind!r} (ar1 or identity)")
        if not 0.0 <= self.sign_holdout_frac < 1.0:
            raise ContractError("sign_holdout_frac must lie in [0, 1)")
        if self.platt_family not in ("link", "sigmoid"):
            raise ContractError("platt_family must be 'link' or 'sigmoid'")
        for name in self.calibrators:
            if name not in KNOWN_CALIBRATORS:
                raise ContractError(f"unknown calibrator {name!r}; known: {KNOWN_CALIBRATORS}")
        FitConfig(lam=self.lam)  # validates lam

    def cov_spec(self, dim: Optional[int] = None) -> CovarianceSpec:
        dim = self.d if dim is None else dim
        if self.cov_kind == "identity":
            return CovarianceSpec.identity(dim, scale=1.0 / dim)
        return CovarianceSpec.ar1(self.cov_rho, dim)

    def describe(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "lambda": self.lam,
            "seed": self.seed,
            "link": self.link.label(),
            "entry": self.entry,
            "cov": self.cov_kind if self.cov_kind == "identity" else f"ar1:{self.cov_rho:g}",
            "n_test": self.n_test,
            "platt_holdout": self.platt_holdout,
            "sign_holdout_frac": self.sign_holdout_frac,
            "sign_holdout_file": self.sign_holdout_file,
            "calibrators": list(self.calibrators),
            "platt_family": self.platt_family,
        }


@dataclass
class PipelineResult:
    """Fitted model plus alignment estimates for one seeded run."""

    cfg: ExperimentConfig
    sigma: np.ndarray
    cov_sqrt: np.ndarray
    cov_inv_sqrt: np.ndarray
    w_star: np.ndarray
    model: FittedModel
    n_train: int
    n_sign_holdout: int
    inner_true: float
    theta_star: float
    inner_sq_est: float
    denominator_flag: bool
    sign: Optional[SignEstimate]
    angle: Optional[AngleEstimate]

    @property
    def inner_est(self) -> float:
        if self.sign is None:
            return float(np.sqrt(max(self.inner_sq_est, 0.0)))
        return self.sign.value * float(np.sqrt(max(self.inner_sq_est, 0.0)))


def run_pipeline(cfg: ExperimentConfig, carve_sign: bool = True) -> PipelineResult:
    """Sample, fit, and estimate alignment for one seed.

    The sign holdout is by default the last ceil(frac * n) sampled rows,
    carved out *before* fitting so the holdout is independent of the
    fitted weight. A holdout file (features + final label column)
    replaces carving, and carve_sign=False fits on all n rows (used by
    the Monte Carlo sign study, which draws fresh holdouts per trial).
    """
    spec = cfg.cov_spec()
    sigma, cov_sqrt, cov_inv_sqrt = _covariance_factors(spec)
    w_star = sample_true_weight(spec, cfg.seed, sigma=sigma)
    X = sample_design(cfg.n, spec, cfg.entry, cfg.seed, cov_sqrt=cov_sqrt)
    y = generate_labels(X, w_star, cfg.link, cfg.seed)

    holdout = None
    if cfg.sign_holdout_file is not None:
        table = load_design_csv(cfg.sign_holdout_file)
        if table.shape[1] != cfg.d + 1:
            raise ContractError(
                f"sign holdout file must have d+1={cfg.d + 1} columns (features then label), "
                f"found {table.shape[1]}"
            )
        labels = table[:, -1]
        if not np.all((labels == 0) | (labels == 1)):
            raise ContractError("sign holdout labels must be 0/1")
        holdout = (table[:, :-1], labels)
        X_train, y_train = X, y
    elif carve_sign and cfg.sign_holdout_frac > 0:
        n_ho = math.ceil(cfg.sign_holdout_frac * cfg.n)
        if n_ho >= cfg.n:
            raise ContractError("sign holdout fraction leaves no training rows")
        X_train, y_train = X[: cfg.n - n_ho], y[: cfg.n - n_ho]
        holdout = (X[cfg.n - n_ho :], y[cfg.n - n_ho :])
    else:
        X_train, y_train = X, y

    dataset = Dataset(
        X=X_train,
        y=y_train,
        provenance=Provenance(kind="synthetic", link=cfg.link, w_star=w_star, cov_spec=spec, seed=cfg.seed),
    )
    model = fit(dataset, FitConfig(lam=cfg.lam), sigma=sigma)
    inter = compute_intermediates(dataset, model)
    inner_sq, flag = inner_product_sq(inter, dataset, model, cov_inv_sqrt)

    sign = angle = None
    if holdout is not None:
        sign = sign_estimate(model, holdout[0], holdout[1])
        angle = angle_estimate(inner_sq, sign.value, model.sigma_norm, flag)

    inner_true = float(w_star @ sigma @ model.w_hat)
    cos_star = inner_true / model.sigma_norm  # w_star has unit Sigma-norm
    theta_star = float(np.arccos(np.clip(cos_star, -1.0, 1.0)))

    return PipelineResult(
        cfg=cfg,
        sigma=sigma,
        cov_sqrt=cov_sqrt,
        cov_inv_sqrt=cov_inv_sqrt,
        w_star=w_star,
        model=model,
        n_train=X_train.shape[0],
        n_sign_holdout=0 if holdout is None else holdout[0].shape[0],
        inner_true=inner_true,
        theta_star=theta_star,
        inner_sq_est=inner_sq,
        denominator_flag=flag,
        sign=sign,
        angle=angle,
    )


def sample_logit_pairs(
    gen: np.random.Generator,
    n: int,
    entry: str,
    cov_sqrt: np.ndarray,
    directions: np.ndarray,
) -> np.ndarray:
    """Draw n rows of (x' dir_1, ..., x' dir_k) for x = Sigma^{1/2} z in chunks."""
    proj = cov_sqrt @ directions  # (d, k)
    d = proj.shape[0]
    chunk_rows = max(1, _PAIR_CHUNK_FLOATS // d)
    parts = []
    remaining = n
    while remaining > 0:
        take = min(remaining, chunk_rows)
        z = rngmod.sample_entries(gen, (take, d), entry)
        parts.append(z @ proj)
        remaining -= take
    return np.vstack(parts)


def _test_pairs(res: PipelineResult, n: int, tag: str):
    """Sampled (fitted logit, true index, label) triple arrays for a fresh set."""
    cfg = res.cfg
    directions = np.column_stack([res.model.w_hat, res.w_star])
    pairs = sample_logit_pairs(rngmod.substream(cfg.seed, tag), n, cfg.entry, res.cov_sqrt, directions)
    u, t = pairs[:, 0], pairs[:, 1]
    y = rngmod.bernoulli(rngmod.substream(cfg.seed, tag + "-labels"), cfg.link(t))
    return u, t, y


def _platt_family(cfg: ExperimentConfig) -> LinkFunction:
    if cfg.platt_family == "sigmoid":
        return LinkFunction.sigmoid_affine(1.0, 0.0)
    return cfg.link


def build_calibrators(res: PipelineResult, u_holdout: np.ndarray, y_holdout: np.ndarray) -> dict:
    """Construct each requested calibrator; fit failures are recorded, not raised.

    Returns name -> Calibrator or name -> AngcalError for baselines whose
    holdout fit failed (the run carries on; the report marks the entry).
    """
    cfg = res.cfg
    integrator = default_integrator(cfg.link)
    out: dict[str, object] = {}
    for name in cfg.calibrators:
        if name == "uncalibrated":
            out[name] = Calibrator.uncalibrated(cfg.link)
        elif name == "chance":
            out[name] = Calibrator.chance(cfg.link, integrator)
        elif name == "angular":
            if res.angle is None:
                raise ContractError(
                    "the angular calibrator needs a sign holdout "
                    "(set --sign-holdout-frac > 0 or provide --sign-holdout-file)"
                )
            out[name] = Calibrator.angular(res.angle.theta, res.model.sigma_norm, cfg.link, integrator)
        elif name == "angular-star":
            out[name] = Calibrator.angular(res.theta_star, res.model.sigma_norm, cfg.link, integrator)
        elif name == "platt":
            try:
                slope, offset = platt_fit(u_holdout, y_holdout, _platt_family(cfg))
                out[name] = Calibrator.platt(slope, offset, _platt_family(cfg))
            except (FitError, DegenerateHoldout) as exc:
                out[name] = exc
        elif name == "isotonic":
            try:
                out[name] = isotonic_fit(u_holdout, y_holdout)
            except AngcalError as exc:
                out[name] = exc
    return out


def _alignment_summary(res: PipelineResult) -> dict:
    info = {
        "inner_product_true": res.inner_true,
        "theta_star": res.theta_star,
        "inner_sq_est": res.inner_sq_est,
        "inner_product_est": res.inner_est,
        "denominator_flag": res.denominator_flag,
        "n_sign_holdout": res.n_sign_holdout,
    }
    if res.sign is not None:
        info.update(
            {
                "sign_est": res.sign.value,
                "sign_true": 1 if res.inner_true >= 0 else -1,
                "sign_correct": res.sign.value == (1 if res.inner_true >= 0 else -1),
                "sign_tied": res.sign.tied,
                "cos_clipped": res.angle.cos_clipped,
                "theta_hat": res.angle.theta,
            }
        )
    return info


def _simulate_summary(cfg: ExperimentConfig) -> tuple[dict, dict[str, ReliabilityReport]]:
    res = run_pipeline(cfg)
    u_test, t_test, y_test = _test_pairs(res, cfg.n_test, "test")
    true_probs = cfg.link(t_test)
    u_ho, _, y_ho = _test_pairs(res, cfg.platt_holdout, "platt")
    calibrators = build_calibrators(res, u_ho, y_ho)

    reports: dict[str, ReliabilityReport] = {}
    cal_section: dict[str, dict] = {}
    for name, cal in calibrators.items():
        if isinstance(cal, AngcalError):
            cal_section[name] = {"error": f"{type(cal).__name__}: {cal}"}
            continue
        preds = calibrate(cal, u_test)
        report = reliability(preds, y_test, true_probs, n_bins=_RELIABILITY_BINS, scheme="equal_width")
        reports[name] = report
        losses = bregman_losses(preds, true_probs)
        deltas = cal_error_at_level(preds, true_probs, n_bins=_DELTA_BINS)
        cal_section[name] = {
            "params": cal.params(),
            "ece": report.ece,
            "squared_loss": losses.squared,
            "kl_loss": losses.kl,
            "max_abs_delta_p": max(abs(d.delta) for d in deltas),
            "reliability": reliability_to_dict(report),
        }

    summary = {
        "schema": 1,
        "command": "simulate",
        "config": cfg.describe(),
        "fit": {
            "n_train": res.n_train,
            "converged": res.model.converged,
            "n_iter": res.model.n_iter,
            "grad_norm": res.model.grad_norm,
            "objective": res.model.objective,
            "sigma_norm": res.model.sigma_norm,
        },
        "alignment": _alignment_summary(res),
        "chance_value": chance_value(cfg.link, default_integrator(cfg.link)),
        "calibrators": cal_section,
    }
    return summary, reports


def _write_reports(out_dir: Path, summary: dict, reports: dict[str, ReliabilityReport], svg: bool) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "summary.json", summary)
    for name, report in reports.items():
        write_reliability_csv(out_dir / f"reliability_{name}.csv", report)
    if svg and reports:
        write_reliability_svg(out_dir / "reliability.svg", reports)


def run_simulate(cfg: ExperimentConfig, out_dir: Path) -> dict:
    """Full single-seed experiment; writes summary.json and per-calibrator CSVs."""
    summary, reports = _simulate_summary(cfg)
    _write_reports(Path(out_dir), summary, reports, cfg.svg)
    return summary


def run_universality(cfg: ExperimentConfig, out_dir: Path) -> dict:
    """The simulate pipeline under a non-Gaussian design, against a Gaussian twin."""
    if cfg.entry == "gaussian":
        raise ContractError(
            "universality needs a non-Gaussian entry distribution "
            "(rademacher or uniform); use the simulate subcommand for Gaussian designs"
        )
    summary_entry, reports_entry = _simulate_summary(cfg)
    summary_gauss, reports_gauss = _simulate_summary(replace(cfg, entry="gaussian"))

    comparison = {}
    for name in summary_entry["calibrators"]:
        entry_info = summary_entry["calibrators"][name]
        gauss_info = summary_gauss["calibrators"].get(name, {})
        comparison[name] = {
            f"ece_{cfg.entry}": entry_info.get("ece"),
            "ece_gaussian": gauss_info.get("ece"),
        }
    summary = {
        "schema": 1,
        "command": "universality",
        "config": cfg.describe(),
        "ece_comparison": comparison,
        "runs": {cfg.entry: summary_entry, "gaussian": summary_gauss},
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "summary.json", summary)
    for name, report in reports_entry.items():
        write_reliability_csv(out_dir / f"reliability_{name}.csv", report)
    for name, report in reports_gauss.items():
        write_reliability_csv(out_dir / f"gaussian_reliability_{name}.csv", report)
    if cfg.svg and reports_entry:
        write_reliability_svg(out_dir / "reliability.svg", reports_entry)
    return summary


def run_platt_convergence(
    cfg: ExperimentConfig,
    holdout_sizes: Sequence[int],
    out_dir: Path,
    grid_points: int = 1000,
) -> dict:
    """Platt fits on growing holdouts, tracked against the angular predictor.

    For each size: fit (slope, offset), then record the sup over a logit
    grid of |platt - angular| for both the estimated and the true angle.
    Degenerate holdouts are recorded per size and the sweep continues.
    """
    sizes = [int(s) for s in holdout_sizes]
    if not sizes or any(s < 1 for s in sizes):
        raise ContractError("holdout sizes must be positive")
    if sorted(sizes) != sizes:
        raise ContractError("holdout sizes must be ascending")

    res = run_pipeline(cfg)
    integrator = default_integrator(cfg.link)
    sigma_norm = res.model.sigma_norm
    grid = np.linspace(-4.0 * sigma_norm, 4.0 * sigma_norm, grid_points)
    family = _platt_family(cfg)

    angular_ref = {}
    angular_ref["theta_star"] = calibrate(
        Calibrator.angular(res.theta_star, sigma_norm, cfg.link, integrator), grid
    )
    if res.angle is not None:
        angular_ref["theta_hat"] = calibrate(
            Calibrator.angular(res.angle.theta, sigma_norm, cfg.link, integrator), grid
        )

    rows, entries = [], []
    for size in sizes:
        u, _, y = _test_pairs(res, size, f"platt-sweep-{size}")
        entry: dict = {"n_ho": size}
        try:
            slope, offset = platt_fit(u, y, family)
        except (FitError, DegenerateHoldout) as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
            rows.append((size, None, None, None, None, entry["error"]))
            entries.append(entry)
            continue
        platt_grid = calibrate(Calibrator.platt(slope, offset, family), grid)
        sup_star = float(np.max(np.abs(platt_grid - angular_ref["theta_star"])))
        sup_hat = (
            float(np.max(np.abs(platt_grid - angular_ref["theta_hat"])))
            if "theta_hat" in angular_ref
            else None
        )
        entry.update({"slope": slope, "offset": offset, "sup_dist_theta_star": sup_star, "sup_dist_theta_hat": sup_hat})
        rows.append((size, slope, offset, sup_star, sup_hat, ""))
        entries.append(entry)

    summary = {
        "schema": 1,
        "command": "platt-convergence",
        "config": cfg.describe(),
        "grid_points": grid_points,
        "alignment": _alignment_summary(res),
        "sizes": entries,
    }
    if cfg.link.kind == "probit":
        slope_star, offset_star = theoretical_AB(res.theta_star, sigma_norm, cfg.link.a, cfg.link.b)
        summary["theoretical"] = {"slope": slope_star, "offset": offset_star, "bridge": False}
    elif cfg.link.kind == "sigmoid" and cfg.link.a != 0:
        slope_star, offset_star = theoretical_AB(
            res.theta_star, sigma_norm, cfg.link.a * SIGMOID_PROBIT_BRIDGE, cfg.link.b * SIGMOID_PROBIT_BRIDGE
        )
        summary["theoretical"] = {"slope": slope_star, "offset": offset_star, "bridge": True}

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "summary.json", summary)
    write_csv(
        out_dir / "platt_convergence.csv",
        "n_ho,slope,offset,sup_dist_theta_star,sup_dist_theta_hat,error",
        rows,
    )
    return summary


def run_sign_mc(cfg: ExperimentConfig, trials: int, out_dir: Optional[Path] = None) -> dict:
    """Monte Carlo study of the holdout sign estimator.

    Fits once on all n training rows, then redraws `trials` fresh
    holdouts of size ceil(frac * n), each from its own derived stream.
    Reports the wrong-sign rate with its Wilson 95% interval.
    """
    if trials < 1:
        raise ContractError("trials must be at least 1")
    if cfg.sign_holdout_frac <= 0:
        raise ContractError("sign_holdout_frac must be positive for the sign study")
    res = run_pipeline(cfg, carve_sign=False)
    n_ho = math.ceil(cfg.sign_holdout_frac * cfg.n)
    true_sign = 1 if res.inner_true >= 0 else -1
    directions = np.column_stack([res.model.w_hat, res.w_star])
    proj = res.cov_sqrt @ directions

    wrong = 0
    for k in range(trials):
        gen = rngmod.substream(cfg.seed, "sign-trial", k)
        z = rngmod.sample_entries(gen, (n_ho, cfg.d), cfg.entry)
        pair = z @ proj
        labels = rngmod.bernoulli(gen, cfg.link(pair[:, 1]))
        if sign_estimate_from_logits(pair[:, 0], labels).value != true_sign:
            wrong += 1

    rate = wrong / trials
    z95 = 1.959963984540054
    denom = 1.0 + z95**2 / trials
    center = (rate + z95**2 / (2 * trials)) / denom
    half = z95 * math.sqrt(rate * (1 - rate) / trials + z95**2 / (4 * trials**2)) / denom
    summary = {
        "schema": 1,
        "command": "sign-mc",
        "config": cfg.describe(),
        "trials": trials,
        "n_holdout": n_ho,
        "wrong": wrong,
        "wrong_rate": rate,
        "wilson95_lo": max(0.0, center - half),
        "wilson95_hi": min(1.0, center + half),
        "alignment": _alignment_summary(res),
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / "summary.json", summary)
    return summary


def build_multiindex_model(cfg: ExperimentConfig, k_indices: int) -> MultiIndexModel:
    """Synthetic multi-index instance with known true and perturbed fitted indices.

    True columns are unit-Sigma-norm Gaussians; fitted columns mix in the
    next true column and fresh noise, giving nontrivial cross angles.
    """
    if k_indices < 1:
        raise ContractError("need at least one index")
    spec = cfg.cov_spec()
    sigma, _, _ = _covariance_factors(spec)
    d = cfg.d
    w_true = np.empty((d, k_indices))
    for j in range(k_indices):
        gen = rngmod.substream(cfg.seed, "mi-true", j)
        w = gen.standard_normal(d)
        w_true[:, j] = w / math.sqrt(float(w @ sigma @ w))
    w_fit = np.empty((d, k_indices))
    for j in range(k_indices):
        gen = rngmod.substream(cfg.seed, "mi-fit", j)
        noise = gen.standard_normal(d)
        w_fit[:, j] = w_true[:, j] + _MULTI_NOISE * noise
        if k_indices > 1:
            w_fit[:, j] += _MULTI_MIX * w_true[:, (j + 1) % k_indices]
    return MultiIndexModel(w_true=w_true, w_fit=w_fit, sigma=sigma, g=additive_link_mean(cfg.link))


def run_multiindex(cfg: ExperimentConfig, k_indices: int, out_dir: Optional[Path] = None) -> dict:
    """Multi-index angular calibration with true cross angles as inputs.

    Emits the reliability table of the multi-index predictor, level-wise
    calibration deltas, the residual-independence check, and (at K=1) the
    max deviation from the single-index angular predictor on the same
    data.
    """
    model = build_multiindex_model(cfg, k_indices)
    params = conditional_params(model)
    _, cov_sqrt, _ = _covariance_factors(cfg.cov_spec())
    nodes = DEFAULT_NODES_PER_DIM.get(k_indices, 16)

    directions = np.column_stack([model.w_true, model.w_fit / params.fit_norms])
    gen = rngmod.substream(cfg.seed, "mi-test")
    pairs = sample_logit_pairs(gen, cfg.n_test, cfg.entry, cov_sqrt, directions)
    true_idx = pairs[:, :k_indices]
    fit_idx = pairs[:, k_indices:]
    true_probs = model.g(true_idx)
    labels = rngmod.bernoulli(rngmod.substream(cfg.seed, "mi-test-labels"), true_probs)
    preds = angular_predict_multi(fit_idx, params, model.g, nodes_per_dim=nodes)

    report = reliability(preds, labels, true_probs, n_bins=_RELIABILITY_BINS, scheme="equal_width")
    deltas = cal_error_at_level(preds, true_probs, n_bins=_DELTA_BINS)
    losses = bregman_losses(preds, true_probs)

    # residual-independence check: cov(U, S) should vanish entrywise
    gen_res = rngmod.substream(cfg.seed, "mi-residual")
    res_pairs = sample_logit_pairs(gen_res, _MULTI_RESIDUAL_DRAWS, cfg.entry, cov_sqrt, directions)
    res_true, res_fit = res_pairs[:, :k_indices], res_pairs[:, k_indices:]
    residual = res_true - res_fit @ params.mean_map.T
    prod = residual[:, :, None] * res_fit[:, None, :]
    cross_cov = prod.mean(axis=0)
    cross_se = prod.std(axis=0, ddof=1) / math.sqrt(_MULTI_RESIDUAL_DRAWS)
    residual_check = {
        "draws": _MULTI_RESIDUAL_DRAWS,
        "max_abs_cov": float(np.max(np.abs(cross_cov))),
        "max_se": float(np.max(cross_se)),
        "max_cov_over_se": float(np.max(np.abs(cross_cov) / cross_se)),
    }

    summary = {
        "schema": 1,
        "command": "multiindex",
        "config": cfg.describe(),
        "k": k_indices,
        "nodes_per_dim": nodes,
        "fit_sigma_norms": [float(v) for v in params.fit_norms],
        "residual_cov_floored": params.floored,
        "ece": report.ece,
        "squared_loss": losses.squared,
        "kl_loss": losses.kl,
        "max_abs_delta_p": max(abs(d.delta) for d in deltas),
        "delta_p": [{"p_center": d.p_center, "delta": d.delta, "count": d.count} for d in deltas],
        "reliability": reliability_to_dict(report),
        "residual_check": residual_check,
    }

    if k_indices == 1:
        sigma_norm = float(params.fit_norms[0])
        theta = float(np.arccos(np.clip(params.cross[0, 0], -1.0, 1.0)))
        single = angular_predict(
            fit_idx[:, 0] * sigma_norm,
            theta,
            sigma_norm,
            cfg.link,
            IntegratorCfg(nodes=nodes),
        )
        summary["single_index_max_diff"] = float(np.max(np.abs(preds - single)))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / "summary.json", summary)
        write_reliability_csv(out_dir / "reliability_multiindex.csv", report)
        if cfg.svg:
            write_reliability_svg(out_dir / "reliability.svg", {"multiindex": report})
    return summary
