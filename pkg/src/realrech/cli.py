"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 estimation error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import models, pipeline
from .config import ConfigError, ExperimentConfig
from .data import DataError, SchemaError
from .forecast import ForecastError
from .models import NumericError
from .smc import EstimationError
from .trading import MarketError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION = 0, 1, 2, 3

log = logging.getLogger("realrech")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="YAML or JSON experiment file")
    p.add_argument("--data", nargs="+", dest="datasets", help="dataset CSV path(s)")
    p.add_argument("--models", nargs="+", choices=models.MODEL_IDS)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="output directory")
    p.add_argument("--split", type=float, help="training fraction")
    p.add_argument("--particles", type=int, dest="n_particles")
    p.add_argument("--mh-moves", type=int, dest="n_mh_moves")
    p.add_argument("--runs", type=int, dest="n_runs")
    p.add_argument("--workers", type=int, help="parallel model fits; results do not depend on it")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="realrech", description="Bayesian volatility model engine")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic dataset drawn from one model")
    s.add_argument("--model", required=True, choices=models.MODEL_IDS)
    s.add_argument("--n", type=int, default=2000, help="number of days")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True, help="CSV path")
    s.add_argument("--params", help="JSON object of parameter overrides")
    s.add_argument("-v", "--verbose", action="store_true")

    for name, help_ in (("fit", "estimate posteriors on the training window"),
                        ("forecast", "rolling one-step forecasts over the test window"),
                        ("evaluate", "score forecasts and write loss series"),
                        ("trade", "run the straddle market between model agents"),
                        ("mcs", "model confidence sets over the loss series"),
                        ("report", "aggregate scores and MCS results across datasets")):
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        if name == "forecast":
            p.add_argument("--restart", action="store_true", help="ignore existing checkpoints")
            p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
            p.add_argument("--mixture-var", action="store_const", const=True, dest="mixture_var",
                           help="VaR/ES from the posterior normal mixture")
        if name == "evaluate":
            p.add_argument("--plots", action="store_const", const=True)
        if name == "trade":
            p.add_argument("--scenarios", nargs="+", type=int)
            p.add_argument("--hedge", choices=("own", "mid"))
        if name == "mcs":
            p.add_argument("--confidence", type=float, dest="mcs_confidence")
            p.add_argument("--boot", type=int, dest="mcs_boot")
            p.add_argument("--statistic", choices=("R", "SQ"), dest="mcs_statistic")
    return ap


_NOT_CONFIG = {"command", "config", "verbose", "restart"}


def _config(args) -> ExperimentConfig:
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    cfg = ExperimentConfig.load(args.config, overrides)
    cfg.check_paths()
    return cfg


def _simulate(args) -> list:
    params = json.loads(args.params) if args.params else None
    if params is not None and not isinstance(params, dict):
        raise ConfigError("--params must be a JSON object")
    try:
        pipeline.simulate_dataset(args.model, args.n, args.seed, args.out, params)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return [args.out]


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            written = _simulate(args)
        else:
            cfg = _config(args)
            if args.command == "forecast":
                written = pipeline.cmd_forecast(cfg, resume=not args.restart)
            else:
                written = getattr(pipeline, f"cmd_{args.command}")(cfg)
    except (SchemaError, DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, MarketError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EstimationError, ForecastError, NumericError) as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    for p in written:
        print(p)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
