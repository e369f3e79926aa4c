"""Experiment stages behind the command-line subcommands.

Outputs live under ``<output>/<dataset stem>/``::

    fit/<model>.json          end-of-training posterior (particles + filter state)
    fit/summary.json, fit/table.txt
    forecast/<model>.csv      one row per test day
    forecast/<model>.ckpt.json
    evaluate/scores.json, evaluate/table.txt, evaluate/losses/<score>.csv
    trade/scenario<k>.csv, trade/summary.json, trade/table.txt
    mcs/mcs.json, mcs/table.txt
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluate, forecast, mcs, models, smc, trading
from .config import ConfigError, ExperimentConfig
from .data import PROXY_LABELS, MarketSeries, load_csv

log = logging.getLogger(__name__)


class MissingArtifact(ConfigError):
    pass


def run_seed(seed: int, model: str, run: int) -> int:
    """Independent 63-bit seed per (experiment seed, model, run)."""
    ss = np.random.SeedSequence([int(seed), models.MODEL_IDS.index(model), int(run)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def dataset_dir(cfg: ExperimentConfig, dataset: str) -> Path:
    return Path(cfg.output) / Path(dataset).stem


def load_series(cfg: ExperimentConfig, dataset: str) -> MarketSeries:
    return load_csv(dataset, split=cfg.split)


def training_target(cfg: ExperimentConfig, series: MarketSeries, model: str) -> smc.VolatilityTarget:
    y_tr, _ = series.train()
    rv = series.scaled_rv().values[: series.split_index] if models.is_realized(model) else None
    return smc.VolatilityTarget(model, y_tr, rv, rnn_sd=cfg.rnn_prior_sd)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing {what}: {path} (run the upstream command first)")
    return path


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def fit_model(cfg: ExperimentConfig, series: MarketSeries, model: str) -> tuple[dict, smc.ParticleSystem]:
    target = training_target(cfg, series, model)
    names = target.names
    heads = [n for n in models.HEADLINE if n in names]
    runs = []
    first = None
    for r in range(cfg.n_runs):
        system = smc.likelihood_anneal(target, cfg.smc(run_seed(cfg.seed, model, r)))
        if first is None:
            first = smc.ensure_state(system, target)
        runs.append(system)
    means = np.array([s.mean() for s in runs])
    sds = np.array([s.std() for s in runs])
    lml = np.array([s.log_ml for s in runs])
    k = len(runs)
    summary = {
        "model": model,
        "n_runs": k,
        "n_particles": cfg.n_particles,
        "n_train": int(target.y.size),
        "sigma2_init": target.sigma2_init,
        "stages": [s.stage for s in runs],
        "params": {
            n: {"mean": float(means[:, i].mean()), "sd": float(sds[:, i].mean()),
                "se": float(means[:, i].std(ddof=1)) if k > 1 else None}
            for i, n in enumerate(names) if n in heads
        },
        "log_ml": float(lml.mean()),
        "log_ml_se": float(lml.std(ddof=1)) if k > 1 else None,
        "log_ml_runs": lml.tolist(),
    }
    return summary, first


def _fit_job(args):
    cfg, dataset, model = args
    series = load_series(cfg, dataset)
    return fit_model(cfg, series, model)


def fit_table(summaries: list[dict], dataset: str = "", footer: str = "") -> str:
    cols = list(models.HEADLINE)
    head = f"{'':<10}{'model':<11}" + "".join(f"{c:>18}" for c in cols) + f"{'log ml':>20}"
    lines = [head, "-" * len(head)]
    for s in summaries:
        row = f"{dataset:<10}{s['model']:<11}"
        for c in cols:
            p = s["params"].get(c)
            if p is None:
                row += f"{'-':>18}"
            else:
                err = p["se"] if p["se"] is not None else p["sd"]
                row += f"{p['mean']:>10.3f} ({err:.3f})"
        err = s["log_ml_se"]
        row += f"{s['log_ml']:>12.1f}" + (f" ({err:.2f})" if err is not None else f"{'':>8}")
        lines.append(row)
    lines += ["", "parameter cells: posterior mean (across-run s.e. when n_runs > 1, else posterior sd)"]
    if footer:
        lines += ["", footer]
    return "\n".join(lines) + "\n"


def cmd_fit(cfg: ExperimentConfig) -> list[Path]:
    written = []
    for dataset in cfg.datasets:
        series = load_series(cfg, dataset)
        out = dataset_dir(cfg, dataset) / "fit"
        out.mkdir(parents=True, exist_ok=True)
        jobs = [(cfg, dataset, m) for m in cfg.models]
        if cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
                results = list(ex.map(_fit_job, jobs))
        else:
            results = [fit_model(cfg, series, m) for m in cfg.models]
        summaries = []
        for (summary, system) in results:
            system.save(out / f"{summary['model']}.json")
            summaries.append(summary)
        name = Path(dataset).stem
        (out / "summary.json").write_text(json.dumps(
            {"dataset": name, "config": cfg.digest(), "seed": cfg.seed, "models": summaries}, indent=2))
        _write(out / "table.txt", fit_table(summaries, name, cfg.footer()))
        written += [out / "summary.json", out / "table.txt"]
    return written


# ---------------------------------------------------------------------------
# forecast
# ---------------------------------------------------------------------------

def _truncate_forecasts(path: Path, n_rows: int) -> None:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows[: n_rows + 1])


def forecast_model(cfg: ExperimentConfig, series: MarketSeries, model: str, out: Path,
                   fit_dir: Path, resume: bool = True, stop_after: int | None = None) -> Path:
    """Rolling forecasts for one model; resumes from ``<model>.ckpt.json`` when present.

    ``stop_after`` ends the run early after that many test days (used to
    exercise interruption and resumption).
    """
    csv_path = out / f"{model}.csv"
    ckpt = out / f"{model}.ckpt.json"
    target = training_target(cfg, series, model)
    y_te, _ = series.test()
    rv_te = series.scaled_rv().values[series.split_index:] if models.is_realized(model) else None
    dates = series.dates[series.split_index:]

    start = 0
    if resume and ckpt.exists() and csv_path.exists():
        system, start = forecast.load_checkpoint(ckpt)
        if system.model_id != model:
            raise ConfigError(f"checkpoint {ckpt} belongs to model {system.model_id!r}, not {model!r}")
        target = smc.VolatilityTarget(model, np.append(target.y, y_te[:start]),
                                      None if rv_te is None else np.append(target.rv, rv_te[:start]),
                                      target.sigma2_init, target.rnn_sd)
        _truncate_forecasts(csv_path, start)
        log.info("%s: resuming at test day %d", model, start)
    else:
        system = smc.ParticleSystem.load(_require(fit_dir / f"{model}.json", f"{model} posterior"))
        if system.model_id != model:
            raise ConfigError(f"posterior file for {model!r} holds model {system.model_id!r}")
        if system.n_obs != target.y.size:
            raise ConfigError(f"{model}: posterior was fit on {system.n_obs} days, "
                              f"training window has {target.y.size}")
        forecast.write_forecasts(csv_path, [])

    end = y_te.size if stop_after is None else min(y_te.size, start + stop_after)
    with open(csv_path, "a", newline="") as fh:
        writer = csv.writer(fh)

        def emit(rec):
            vals = (rec.sigma2_hat, rec.var_1, rec.var_5, rec.es_1, rec.es_5, rec.log_pred_density)
            writer.writerow([rec.date, *(repr(float(v)) for v in vals)])
            fh.flush()

        forecast.rolling_forecast(
            system, target, y_te[:end], None if rv_te is None else rv_te[:end],
            cfg.smc(system.seed), dates, start=start, checkpoint_every=cfg.checkpoint_every,
            checkpoint_path=ckpt, mixture=cfg.mixture_var, on_record=emit)
    return csv_path


def cmd_forecast(cfg: ExperimentConfig, resume: bool = True) -> list[Path]:
    written = []
    for dataset in cfg.datasets:
        series = load_series(cfg, dataset)
        base = dataset_dir(cfg, dataset)
        out = base / "forecast"
        out.mkdir(parents=True, exist_ok=True)
        for m in cfg.models:
            written.append(forecast_model(cfg, series, m, out, base / "fit", resume))
    return written


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _forecast_arrays(base: Path, model: str, n_test: int) -> dict[str, np.ndarray]:
    recs = forecast.read_forecasts(_require(base / "forecast" / f"{model}.csv", f"{model} forecasts"))
    if len(recs) != n_test:
        raise MissingArtifact(f"{model}: forecast file has {len(recs)} of {n_test} test days "
                              "(resume the forecast command)")
    return forecast.records_to_arrays(recs)


def _fit_log_ml(base: Path) -> dict[str, float]:
    p = base / "fit" / "summary.json"
    if not p.exists():
        return {}
    return {s["model"]: s["log_ml"] for s in json.loads(p.read_text())["models"]}


def write_loss_csv(path: Path, dates, losses: dict[str, np.ndarray]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(losses)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", *names])
        for t in range(len(dates)):
            w.writerow([dates[t], *(repr(float(losses[m][t])) for m in names)])


def cmd_evaluate(cfg: ExperimentConfig) -> list[Path]:
    written = []
    for dataset in cfg.datasets:
        series = load_series(cfg, dataset)
        base = dataset_dir(cfg, dataset)
        out = base / "evaluate"
        y_te, _ = series.test()
        dates = series.dates[series.split_index:]
        proxies = {PROXY_LABELS[k]: v.values[series.split_index:] for k, v in series.scaled_proxies().items()}
        lml = _fit_log_ml(base)
        reports, per_score = [], {}
        arrays = {m: _forecast_arrays(base, m, series.n_test) for m in cfg.models}
        for m in cfg.models:
            reports.append(evaluate.score_model(m, y_te, arrays[m], proxies, lml.get(m)))
            for score, series_ in evaluate.loss_series(y_te, arrays[m], proxies).items():
                per_score.setdefault(score, {})[m] = series_
        evaluate.add_bayes_factors(reports, baseline="garch")
        name = Path(dataset).stem
        out.mkdir(parents=True, exist_ok=True)
        (out / "scores.json").write_text(evaluate.reports_to_json(
            reports, dataset=name, config=cfg.digest(), seed=cfg.seed))
        _write(out / "table.txt", evaluate.format_tables(reports, name, cfg.footer()))
        for score, losses in per_score.items():
            write_loss_csv(out / "losses" / f"{score}.csv", dates, losses)
        written += [out / "scores.json", out / "table.txt"]
        if cfg.plots:
            written += plot_forecasts(out, dates, arrays, proxies.get("RV5"), y_te)
    return written


def plot_forecasts(out: Path, dates, arrays, proxy_var, returns) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(2, 1, figsize=(10, 6), sharex=True)
    t = np.arange(len(dates))
    if proxy_var is not None:
        ax[0].plot(t, np.sqrt(proxy_var), color="0.7", lw=0.8, label="RV5 (rescaled)")
    for m, a in arrays.items():
        ax[0].plot(t, np.sqrt(a["sigma2_hat"]), lw=0.9, label=m)
    ax[0].set_ylabel("volatility (%)")
    ax[0].legend(fontsize=8)
    ax[1].plot(t, returns, color="0.5", lw=0.5)
    for m, a in arrays.items():
        ax[1].plot(t, a["var_1"], lw=0.8, label=f"{m} VaR 1%")
    ax[1].set_ylabel("return (%)")
    ax[1].set_xlabel("test day")
    fig.tight_layout()
    p = out / "volatility.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    return [p]


# ---------------------------------------------------------------------------
# trade
# ---------------------------------------------------------------------------

def cmd_trade(cfg: ExperimentConfig) -> list[Path]:
    written = []
    for dataset in cfg.datasets:
        series = load_series(cfg, dataset)
        base = dataset_dir(cfg, dataset)
        out = base / "trade"
        y_te, _ = series.test()
        dates = series.dates[series.split_index:]
        agents = [trading.AgentForecast.from_percent_variance(
            m, _forecast_arrays(base, m, series.n_test)["sigma2_hat"]) for m in cfg.models]
        if len(agents) < 2:
            raise trading.MarketError("the market needs at least two agents; configure two or more models")
        results, skipped = {}, []
        out.mkdir(parents=True, exist_ok=True)
        for s in cfg.scenarios:
            if s not in trading.SCENARIOS:
                raise ConfigError(f"unknown trading scenario {s}")
            present = [a for a in agents if a.agent_id in trading.SCENARIOS[s]]
            if len(present) < 2:
                skipped.append(s)
                continue
            ledger = trading.run_market(present, y_te / 100.0, None, dates, cfg.hedge)
            ledger.write_csv(out / f"scenario{s}.csv")
            results[s] = ledger.summary()
            if s == min(x for x in cfg.scenarios if x not in skipped):
                write_loss_csv(base / "evaluate" / "losses" / "opttrading.csv", dates,
                               {a: -ledger.daily_profit[a] for a in ledger.agents})
        if not results:
            raise trading.MarketError("no scenario has at least two of the configured agents")
        name = Path(dataset).stem
        (out / "summary.json").write_text(trading.summary_json(
            results, dataset=name, skipped=skipped, hedge=cfg.hedge, config=cfg.digest(), seed=cfg.seed))
        _write(out / "table.txt", trading.format_table(results, [a.agent_id for a in agents], name, cfg.footer()))
        written += [out / "summary.json", out / "table.txt"]
    return written


# ---------------------------------------------------------------------------
# mcs
# ---------------------------------------------------------------------------

def _boot(cfg: ExperimentConfig) -> mcs.BootstrapConfig:
    return mcs.BootstrapConfig(n_boot=cfg.mcs_boot, block_length=cfg.mcs_block_length, seed=cfg.seed,
                               statistic=cfg.mcs_statistic)


def cmd_mcs(cfg: ExperimentConfig) -> list[Path]:
    written = []
    for dataset in cfg.datasets:
        base = dataset_dir(cfg, dataset)
        loss_dir = _require(base / "evaluate" / "losses", "loss series")
        files = sorted(loss_dir.glob("*.csv"))
        if not files:
            raise MissingArtifact(f"no loss series in {loss_dir}")
        results = {}
        for f in files:
            panel = mcs.LossPanel.from_csv(f)
            results[f.stem] = mcs.mcs_test(panel, cfg.mcs_confidence, _boot(cfg)).to_dict()
        out = base / "mcs"
        out.mkdir(parents=True, exist_ok=True)
        (out / "mcs.json").write_text(json.dumps(
            {"dataset": Path(dataset).stem, "results": results, "config": cfg.digest(), "seed": cfg.seed},
            indent=2))
        rows = {score: {m: {"included": int(m in r["ssm"]), "mean_p": r["pvalues"][m]} for m in r["pvalues"]}
                for score, r in results.items()}
        _write(out / "table.txt", mcs.format_table(rows, cfg.models, _mcs_footer(cfg)))
        written += [out / "mcs.json", out / "table.txt"]
    return written


def _mcs_footer(cfg: ExperimentConfig) -> str:
    return (f"cells: included in the {cfg.mcs_confidence:.0%} set (MCS p-value); stationary bootstrap "
            f"B={cfg.mcs_boot}, mean block {cfg.mcs_block_length:g}, T_{cfg.mcs_statistic} "
            "(bootstrap settings are engine defaults)\n" + cfg.footer())


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _score_columns(report: dict) -> dict[str, float]:
    """Flatten one model's ScoreReport JSON into named scalar columns."""
    cols = {f"mse_{k}": v for k, v in report["mse"].items()}
    cols |= {f"mad_{k}": v for k, v in report["mad"].items()}
    cols |= {f"qloss_{float(k) * 100:g}": v for k, v in report["qloss"].items()}
    cols |= {f"jointloss_{float(k) * 100:g}": v for k, v in report["jointloss"].items()}
    cols["pps"] = report["pps"]
    return cols


def count_panel(per_dataset: dict[str, dict[str, dict[str, float]]], models_: list[str]) -> dict[str, dict[str, int]]:
    """Number of datasets on which each model has the best value of each score.

    ``per_dataset`` maps dataset -> model -> score column -> value (lower is better).
    """
    scores = sorted({c for d in per_dataset.values() for m in d.values() for c in m})
    out = {}
    for c in scores:
        table = {m: {ds: per_dataset[ds][m][c] for ds in per_dataset
                     if m in per_dataset[ds] and c in per_dataset[ds][m]} for m in models_}
        out[c] = evaluate.count_best(table)
    return out


def cmd_report(cfg: ExperimentConfig) -> list[Path]:
    per_dataset, mcs_runs, fits = {}, {}, {}
    for dataset in cfg.datasets:
        base = dataset_dir(cfg, dataset)
        name = Path(dataset).stem
        scores = json.loads(_require(base / "evaluate" / "scores.json", "scores").read_text())
        per_dataset[name] = {r["model"]: _score_columns(r) for r in scores["reports"]}
        p = base / "mcs" / "mcs.json"
        if p.exists():
            for score, r in json.loads(p.read_text())["results"].items():
                mcs_runs.setdefault(score, []).append(
                    mcs.McsResult(list(r["pvalues"]), r["pvalues"], r["elimination_order"], r["confidence"]))
        p = base / "fit" / "summary.json"
        if p.exists():
            fits[name] = json.loads(p.read_text())["models"]
    counts = count_panel(per_dataset, cfg.models)
    agg = {score: mcs.aggregate(rs) for score, rs in mcs_runs.items()}

    head = f"{'count best':<18}" + "".join(f"{m:>11}" for m in cfg.models)
    lines = [f"datasets: {len(per_dataset)}", "", head, "-" * len(head)]
    for score, c in counts.items():
        lines.append(f"{score:<18}" + "".join(f"{c.get(m, 0):>11d}" for m in cfg.models))
    if agg:
        lines += ["", "MCS inclusion counts (mean p-value)",
                  mcs.format_table(agg, cfg.models).rstrip("\n")]
    if fits:
        lines += ["", "log marginal likelihood"]
        for name, summ in fits.items():
            lines.append(f"{name:<18}" + "".join(f"{s['model']:>11}:{s['log_ml']:.1f}" for s in summ))
    lines += ["", cfg.footer()]
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "report.txt", "\n".join(lines) + "\n")
    (out / "report.json").write_text(json.dumps(
        {"counts": counts, "mcs": agg, "log_ml": {n: {s["model"]: s["log_ml"] for s in v} for n, v in fits.items()},
         "config": cfg.digest(), "seed": cfg.seed}, indent=2))
    return [out / "report.txt", out / "report.json"]


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def simulate_dataset(model: str, n: int, seed: int, path, params: dict | None = None,
                     start_date: str = "2004-01-02", proxy_noise: float = 0.25) -> MarketSeries:
    """Simulate a model and write a CSV in the loader's schema, with five noisy proxies."""
    import pandas as pd

    pv = models.default_params(model)
    if params:
        pv = models.ParamVector.from_dict(model, {**pv.as_dict(), **params})
    if not np.isfinite(models.log_prior(pv)):
        raise ValueError(f"{model} parameters lie outside the admissible region")
    rng = np.random.default_rng([int(seed), models.MODEL_IDS.index(model)])
    y, rv, _ = models.simulate(model, pv, n, rng)
    proxies = {"rv5": rv}
    for k in ("bv", "medrv", "rk_parzen", "rsv"):
        proxies[k] = rv * np.exp(proxy_noise * rng.standard_normal(n) - 0.5 * proxy_noise ** 2)
    dates = pd.bdate_range(start_date, periods=n).strftime("%Y-%m-%d").to_numpy()
    series = MarketSeries(dates, y, rv, max(1, n // 2), proxies)
    series.to_csv(path)
    return series
