"""Rolling one-step-ahead volatility, VaR, ES and predictive-density forecasts."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp
from scipy.stats import norm

from . import smc
from .models import LOG_2PI

log = logging.getLogger(__name__)

FORECAST_COLUMNS = ("date", "sigma2_hat", "var_1", "var_5", "es_1", "es_5", "log_pred_density")


class ForecastError(RuntimeError):
    pass


@dataclass
class ForecastRecord:
    t: int
    sigma2_hat: float
    var_1: float
    var_5: float
    es_1: float
    es_5: float
    log_pred_density: float
    date: str = ""

    @property
    def sigma_hat(self) -> float:
        return float(np.sqrt(self.sigma2_hat))


def var_es(sigma_hat: float, alpha: float) -> tuple[float, float]:
    """VaR and ES of a zero-mean normal return with volatility ``sigma_hat``; both negative."""
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 0.5)")
    if not sigma_hat > 0:
        raise ValueError("sigma_hat must be positive")
    z = norm.ppf(alpha)
    return float(sigma_hat * z), float(-sigma_hat * norm.pdf(z) / alpha)


def mixture_var_es(weights, sigma2, alpha: float) -> tuple[float, float]:
    """VaR and ES of the posterior normal mixture ``sum_j W_j N(0, sigma2_j)``."""
    w = np.asarray(weights, dtype=float)
    sd = np.sqrt(np.asarray(sigma2, dtype=float))

    def cdf(q):
        return float(w @ norm.cdf(q / sd)) - alpha

    lo, hi = norm.ppf(alpha) * sd.max(), norm.ppf(alpha) * sd.min()
    q = lo if lo == hi else brentq(cdf, lo, hi, xtol=1e-14)
    es = -float(w @ (sd * norm.pdf(q / sd))) / alpha
    return float(q), es


def _check_system(system: smc.ParticleSystem):
    if system.state is None:
        raise ForecastError("particle system has no filter state; call smc.ensure_state first")
    try:
        return system.weights
    except smc.DegeneracyError as exc:
        raise ForecastError(str(exc)) from exc


def one_step_variance(system: smc.ParticleSystem) -> float:
    """Posterior-weighted mean of the particles' next-day variances."""
    w = _check_system(system)
    ok = ~system.state.bad
    if not np.any(ok & (w > 0)):
        raise ForecastError("no admissible particle for the next-day variance")
    w = np.where(ok, w, 0.0)
    return float(w @ np.where(ok, system.state.sigma2, 0.0) / w.sum())


def log_predictive_density(system: smc.ParticleSystem, y_new: float) -> float:
    """``log sum_j W_j N(y_new; 0, sigma2_j)`` evaluated with log-sum-exp."""
    w = _check_system(system)
    s2 = system.state.sigma2
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    comp = -0.5 * (LOG_2PI + np.log(s2) + y_new * y_new / s2)
    comp = np.where(system.state.bad, -np.inf, comp)
    return float(logsumexp(lw + comp))


def forecast_record(system: smc.ParticleSystem, t: int, y_new: float, date: str = "",
                    mixture: bool = False) -> ForecastRecord:
    s2 = one_step_variance(system)
    if mixture:
        w = system.weights
        v1, e1 = mixture_var_es(w, system.state.sigma2, 0.01)
        v5, e5 = mixture_var_es(w, system.state.sigma2, 0.05)
    else:
        v1, e1 = var_es(np.sqrt(s2), 0.01)
        v5, e5 = var_es(np.sqrt(s2), 0.05)
    return ForecastRecord(t, s2, v1, v5, e1, e5, log_predictive_density(system, y_new), date)


def rolling_forecast(system: smc.ParticleSystem, target: smc.VolatilityTarget, y_test, rv_test,
                     config: smc.SmcConfig, dates=None, *, start: int = 0,
                     checkpoint_every: int = 50, checkpoint_path=None, mixture: bool = False,
                     on_record=None) -> list[ForecastRecord]:
    """Forecast each test day from the current posterior, then absorb that day's observation.

    ``system`` must be the posterior given ``target``'s data.  ``start``
    skips test days already absorbed (used when resuming from a checkpoint).
    """
    y_test = np.asarray(y_test, dtype=float)
    rv_test = None if rv_test is None else np.asarray(rv_test, dtype=float)
    system = smc.ensure_state(system, target)
    records = []
    for t in range(start, y_test.size):
        d = "" if dates is None else str(dates[t])
        rec = forecast_record(system, t, float(y_test[t]), d, mixture)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        system, target = smc.data_anneal_step(
            system, target, y_test[t], None if rv_test is None else rv_test[t], config)
        if checkpoint_path is not None and checkpoint_every and (t + 1) % checkpoint_every == 0:
            save_checkpoint(checkpoint_path, system, t + 1)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, system, y_test.size)
    return records


def save_checkpoint(path, system: smc.ParticleSystem, next_t: int) -> None:
    d = system.to_dict()
    d["next_t"] = next_t
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    tmp = p.with_suffix(p.suffix + ".tmp")
    tmp.write_text(json.dumps(d))
    tmp.replace(p)


def load_checkpoint(path) -> tuple[smc.ParticleSystem, int]:
    d = json.loads(Path(path).read_text())
    return smc.ParticleSystem.from_dict(d), int(d.get("next_t", 0))


def write_forecasts(path, records, append: bool = False) -> None:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(FORECAST_COLUMNS)
        for r in records:
            vals = (r.sigma2_hat, r.var_1, r.var_5, r.es_1, r.es_5, r.log_pred_density)
            w.writerow([r.date, *(repr(float(v)) for v in vals)])


def read_forecasts(path) -> list[ForecastRecord]:
    out = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            out.append(ForecastRecord(
                t=i, date=row["date"],
                **{k: float(row[k]) for k in FORECAST_COLUMNS if k != "date"},
            ))
    return out


def records_to_arrays(records) -> dict[str, np.ndarray]:
    if not records:
        return {k: np.empty(0) for k in FORECAST_COLUMNS if k != "date"}
    rows = [asdict(r) for r in records]
    return {k: np.array([r[k] for r in rows], dtype=float) for k in FORECAST_COLUMNS if k != "date"}
