"""Command-line experiment runner.

Subcommands: simulate, platt-convergence, sign-mc, universality,
multiindex. Every run is deterministic given --seed: re-running writes
byte-identical CSV/JSON. Exit codes: 0 success, 2 configuration error,
3 numerical failure; the failing error's type name goes to stderr.

A flat key-value config file (one `key = value` per line, `#` comments,
keys named like the long flags with - or _) can seed any subcommand via
--config; explicit flags override file values.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from .errors import AngcalError, ContractError
from .experiments import (
    DEFAULT_CALIBRATORS,
    ExperimentConfig,
    run_multiindex,
    run_platt_convergence,
    run_sign_mc,
    run_simulate,
    run_universality,
)
from .links import LinkFunction

_CONFIG_KEYS = {
    "n": "n",
    "d": "d",
    "lambda": "lam",
    "seed": "seed",
    "link": "link",
    "entry": "entry",
    "cov": "cov",
    "n_test": "n_test",
    "platt_holdout": "platt_holdout",
    "sign_holdout_frac": "sign_holdout_frac",
    "sign_holdout_file": "sign_holdout_file",
    "calibrators": "calibrators",
    "platt_family": "platt_family",
    "out": "out",
    "svg": "svg",
    "trials": "trials",
    "sizes": "sizes",
    "grid_points": "grid_points",
    "k": "k",
}


def _parse_config_file(path: str) -> dict:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ContractError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_").lower()
        if key not in _CONFIG_KEYS:
            raise ContractError(f"{path}:{lineno}: unknown config key {key!r}")
        values[_CONFIG_KEYS[key]] = value
    return values


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="flat key=value config file; flags override")
    parser.add_argument("--n", type=int, default=1000, help="training sample size")
    parser.add_argument("--d", type=int, default=2000, help="feature dimension")
    parser.add_argument("--lambda", dest="lam", type=float, default=0.5, help="ridge strength")
    parser.add_argument("--seed", type=int, default=1, help="master seed (all streams derive from it)")
    parser.add_argument(
        "--link",
        default="sigmoid:3:1",
        help="label link, kind:a:b (sigmoid:3:1, probit:1:0.3, crelu:3:0.5)",
    )
    parser.add_argument(
        "--entry",
        default="gaussian",
        choices=("gaussian", "rademacher", "uniform"),
        help="iid entry distribution of the pre-correlation design",
    )
    parser.add_argument("--cov", default="ar1:0.5", help="covariance family: ar1:RHO or identity (scaled by 1/d)")
    parser.add_argument("--n-test", type=int, default=20000, help="test points for reliability/losses")
    parser.add_argument("--platt-holdout", type=int, default=20000, help="labeled holdout size for Platt/isotonic")
    parser.add_argument("--sign-holdout-frac", type=float, default=0.1, help="fraction of n carved for the sign estimator")
    parser.add_argument("--sign-holdout-file", default=None, help="CSV holdout (features then a 0/1 label column)")
    parser.add_argument(
        "--calibrators",
        default=",".join(DEFAULT_CALIBRATORS),
        help="comma list among uncalibrated,angular,angular-star,platt,isotonic,chance",
    )
    parser.add_argument("--platt-family", default="link", choices=("link", "sigmoid"), help="Platt hypothesis family")
    parser.add_argument("--out", default=None, help="output directory (default: run-<seed>-<timestamp>)")
    parser.add_argument("--svg", action="store_true", default=False, help="also write reliability.svg")


def build_parser() -> argparse.ArgumentParser:
    # abbreviations stay off so config-file merging can tell exactly which
    # flags were passed on the command line
    parser = argparse.ArgumentParser(
        prog="angcal",
        description="Angle-aware calibration experiments for high-dimensional linear classifiers.",
        allow_abbrev=False,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="single seeded experiment with reliability reports", allow_abbrev=False)
    _add_common_flags(p)

    p = sub.add_parser(
        "platt-convergence", help="Platt fits on growing holdouts vs the angular predictor", allow_abbrev=False
    )
    _add_common_flags(p)
    p.add_argument("--sizes", default="100,1000,10000", help="ascending comma list of holdout sizes")
    p.add_argument("--grid-points", type=int, default=1000, help="logit grid size for sup distances")

    p = sub.add_parser("sign-mc", help="Monte Carlo error rate of the holdout sign estimator", allow_abbrev=False)
    _add_common_flags(p)
    p.add_argument("--trials", type=int, default=5000, help="number of holdout redraws")

    p = sub.add_parser(
        "universality", help="simulate under a non-Gaussian design vs a Gaussian twin", allow_abbrev=False
    )
    _add_common_flags(p)

    p = sub.add_parser(
        "multiindex", help="multi-index angular calibration with true cross angles", allow_abbrev=False
    )
    _add_common_flags(p)
    p.add_argument("--k", type=int, default=2, help="number of indices")
    return parser


def _parse_cov(text: str) -> tuple[str, float]:
    text = text.strip().lower()
    if text == "identity":
        return "identity", 0.0
    if text.startswith("ar1:"):
        try:
            return "ar1", float(text.split(":", 1)[1])
        except ValueError:
            pass
    elif text == "ar1":
        return "ar1", 0.5
    raise ContractError(f"cannot parse covariance {text!r}; expected ar1:RHO or identity")


def _to_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ContractError(f"cannot parse boolean {value!r}")


def _config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    cov_kind, cov_rho = _parse_cov(str(args.cov))
    calibrators = tuple(name.strip() for name in str(args.calibrators).split(",") if name.strip())
    return ExperimentConfig(
        n=int(args.n),
        d=int(args.d),
        lam=float(args.lam),
        seed=int(args.seed),
        link=LinkFunction.parse(str(args.link)),
        entry=str(args.entry),
        cov_kind=cov_kind,
        cov_rho=cov_rho,
        n_test=int(args.n_test),
        platt_holdout=int(args.platt_holdout),
        sign_holdout_frac=float(args.sign_holdout_frac),
        sign_holdout_file=args.sign_holdout_file,
        calibrators=calibrators,
        platt_family=str(args.platt_family),
        out=None if args.out is None else Path(args.out),
        svg=_to_bool(args.svg),
    )


def _out_dir(cfg: ExperimentConfig) -> Path:
    if cfg.out is not None:
        return Path(cfg.out)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return Path(f"run-{cfg.seed}-{stamp}")


_DEST_FLAGS = {
    "n": "--n",
    "d": "--d",
    "lam": "--lambda",
    "seed": "--seed",
    "link": "--link",
    "entry": "--entry",
    "cov": "--cov",
    "n_test": "--n-test",
    "platt_holdout": "--platt-holdout",
    "sign_holdout_frac": "--sign-holdout-frac",
    "sign_holdout_file": "--sign-holdout-file",
    "calibrators": "--calibrators",
    "platt_family": "--platt-family",
    "out": "--out",
    "svg": "--svg",
    "trials": "--trials",
    "sizes": "--sizes",
    "grid_points": "--grid-points",
    "k": "--k",
}


def _apply_config_file(args: argparse.Namespace, argv_list: list[str]) -> None:
    """Fill in file values for every flag the user did not pass explicitly."""
    file_values = _parse_config_file(args.config)
    explicit = {token.split("=", 1)[0] for token in argv_list if token.startswith("--")}
    for dest, value in file_values.items():
        if _DEST_FLAGS[dest] not in explicit and hasattr(args, dest):
            setattr(args, dest, value)


def main(argv=None) -> int:
    parser = build_parser()
    argv_list = list(argv) if argv is not None else sys.argv[1:]
    args = parser.parse_args(argv_list)
    try:
        if getattr(args, "config", None):
            _apply_config_file(args, argv_list)
        cfg = _config_from_args(args)
        if args.command == "sign-mc":
            extra = {"trials": int(args.trials)}
        elif args.command == "platt-convergence":
            extra = {
                "sizes": [int(s) for s in str(args.sizes).split(",") if s.strip()],
                "grid_points": int(args.grid_points),
            }
        elif args.command == "multiindex":
            extra = {"k": int(args.k)}
        else:
            extra = {}
    except (ContractError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2

    out_dir = _out_dir(cfg)
    try:
        if args.command == "simulate":
            run_simulate(cfg, out_dir)
        elif args.command == "universality":
            run_universality(cfg, out_dir)
        elif args.command == "sign-mc":
            run_sign_mc(cfg, extra["trials"], out_dir)
        elif args.command == "platt-convergence":
            run_platt_convergence(cfg, extra["sizes"], out_dir, grid_points=extra["grid_points"])
        elif args.command == "multiindex":
            run_multiindex(cfg, extra["k"], out_dir)
    except ContractError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except AngcalError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    print(f"wrote reports to {out_dir}", file=sys.stderr)
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
