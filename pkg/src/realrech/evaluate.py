"""Predictive scores: proxy errors, tail-risk losses, PPS and Bayes factors."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse_mad(forecast_sigma, proxy_sigma) -> tuple[float, float]:
    """Mean squared and mean absolute error of volatility forecasts, both in SD units."""
    f, p = _pair(forecast_sigma, proxy_sigma)
    if np.any(p <= 0):
        raise ValueError("proxy volatilities must be positive")
    e = f - p
    return float(np.mean(e * e)), float(np.mean(np.abs(e)))


def quantile_loss_series(returns, var_forecasts, alpha: float) -> np.ndarray:
    y, q = _pair(returns, var_forecasts)
    return (alpha - (y < q)) * (y - q)


def quantile_loss(returns, var_forecasts, alpha: float) -> float:
    """Total (summed) pinball loss of the VaR forecasts."""
    return float(np.sum(quantile_loss_series(returns, var_forecasts, alpha)))


def joint_loss_series(returns, var_forecasts, es_forecasts, alpha: float) -> np.ndarray:
    y, q = _pair(returns, var_forecasts)
    _, es = _pair(returns, es_forecasts)
    if np.any(es >= 0):
        raise ValueError("ES forecasts must be negative")
    return -np.log((alpha - 1.0) / es) - (y - q) * (alpha - (y <= q)) / (alpha * es)


def joint_loss(returns, var_forecasts, es_forecasts, alpha: float) -> float:
    """Mean asymmetric-Laplace joint loss of (VaR, ES) forecasts."""
    return float(np.mean(joint_loss_series(returns, var_forecasts, es_forecasts, alpha)))


def pps(log_pred_densities) -> float:
    """Negative mean log predictive density."""
    lp = np.asarray(log_pred_densities, dtype=float)
    if lp.size == 0:
        raise ValueError("no predictive densities")
    return float(-np.mean(lp))


def bayes_factor(log_ml_1: float, log_ml_2: float) -> float:
    """Log Bayes factor of model 1 against model 2."""
    return float(log_ml_1) - float(log_ml_2)


@dataclass
class ScoreReport:
    """Scores of one model on one dataset.

    ``mse`` and ``mad`` are keyed by proxy name; ``qloss`` and ``jointloss``
    by alpha level (0.01, 0.05).
    """

    model: str
    mse: dict[str, float] = field(default_factory=dict)
    mad: dict[str, float] = field(default_factory=dict)
    qloss: dict[float, float] = field(default_factory=dict)
    jointloss: dict[float, float] = field(default_factory=dict)
    pps: float | None = None
    log_ml: float | None = None
    log_bf: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "mse": self.mse,
            "mad": self.mad,
            "qloss": {f"{k:g}": v for k, v in self.qloss.items()},
            "jointloss": {f"{k:g}": v for k, v in self.jointloss.items()},
            "pps": self.pps,
            "log_ml": self.log_ml,
            "log_bf": self.log_bf,
        }


def score_model(model: str, returns, records: dict[str, np.ndarray], proxies: dict[str, np.ndarray],
                log_ml: float | None = None) -> ScoreReport:
    """Score one model's forecast arrays against test returns and rescaled variance proxies."""
    rep = ScoreReport(model, log_ml=log_ml)
    sigma = np.sqrt(records["sigma2_hat"])
    for name, proxy_var in proxies.items():
        rep.mse[name], rep.mad[name] = mse_mad(sigma, np.sqrt(proxy_var))
    for a, tag in ((0.01, "1"), (0.05, "5")):
        rep.qloss[a] = quantile_loss(returns, records[f"var_{tag}"], a)
        rep.jointloss[a] = joint_loss(returns, records[f"var_{tag}"], records[f"es_{tag}"], a)
    rep.pps = pps(records["log_pred_density"])
    return rep


def add_bayes_factors(reports: list[ScoreReport], baseline: str | None = None) -> None:
    """Fill each report's ``log_bf`` against every other model with a stored log-ml."""
    have = {r.model: r.log_ml for r in reports if r.log_ml is not None}
    for r in reports:
        if r.log_ml is None:
            continue
        others = [baseline] if baseline in have else list(have)
        r.log_bf = {m: bayes_factor(r.log_ml, have[m]) for m in others if m != r.model}


def loss_series(returns, records: dict[str, np.ndarray], proxies: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Per-day losses used by the model confidence set."""
    sigma = np.sqrt(records["sigma2_hat"])
    out = {}
    for name, proxy_var in proxies.items():
        e = sigma - np.sqrt(proxy_var)
        out[f"mse_{name}"] = e * e
        out[f"mad_{name}"] = np.abs(e)
    for a, tag in ((0.01, "1"), (0.05, "5")):
        out[f"qloss_{tag}"] = quantile_loss_series(returns, records[f"var_{tag}"], a)
        out[f"jointloss_{tag}"] = joint_loss_series(returns, records[f"var_{tag}"],
                                                    records[f"es_{tag}"], a)
    out["pps"] = -np.asarray(records["log_pred_density"], dtype=float)
    return out


def count_best(scores: dict[str, dict[str, float]], lower_is_better: bool = True) -> dict[str, int]:
    """Number of columns (proxies, datasets ...) on which each model has the best score.

    ``scores`` maps model -> {column: value}.  Ties credit every tied model.
    """
    models = list(scores)
    counts = {m: 0 for m in models}
    columns = sorted({c for m in models for c in scores[m]})
    for c in columns:
        vals = {m: scores[m][c] for m in models if c in scores[m] and np.isfinite(scores[m][c])}
        if not vals:
            continue
        best = min(vals.values()) if lower_is_better else max(vals.values())
        for m, v in vals.items():
            if v == best:
                counts[m] += 1
    return counts


def _fmt(v, nd=3):
    return "-" if v is None else f"{v:.{nd}f}"


def format_tables(reports: list[ScoreReport], dataset: str = "", footer: str = "") -> str:
    """Plain-text tables laid out like the MSE, MAD and tail-risk tables."""
    lines = []
    proxies = list(reports[0].mse) if reports else []
    for metric in ("mse", "mad"):
        per_model = {r.model: getattr(r, metric) for r in reports}
        counts = count_best(per_model)
        head = f"{metric.upper():<10}{'model':<11}" + "".join(f"{p:>11}" for p in proxies) + f"{'Count':>8}"
        lines += [head, "-" * len(head)]
        for r in reports:
            vals = getattr(r, metric)
            lines.append(f"{dataset:<10}{r.model:<11}" + "".join(f"{_fmt(vals[p]):>11}" for p in proxies)
                         + f"{counts[r.model]:>8}")
        lines.append("")
    cols = [("Qloss 1%", lambda r: r.qloss.get(0.01)), ("Qloss 5%", lambda r: r.qloss.get(0.05)),
            ("Joint 1%", lambda r: r.jointloss.get(0.01)), ("Joint 5%", lambda r: r.jointloss.get(0.05)),
            ("PPS", lambda r: r.pps)]
    head = f"{'RISK':<10}{'model':<11}" + "".join(f"{c:>11}" for c, _ in cols)
    lines += [head, "-" * len(head)]
    for r in reports:
        lines.append(f"{dataset:<10}{r.model:<11}" + "".join(f"{_fmt(g(r)):>11}" for _, g in cols))
    if any(r.log_ml is not None for r in reports):
        lines += ["", f"{'EVIDENCE':<10}{'model':<11}{'log ml':>12}  log BF"]
        for r in reports:
            bf = ", ".join(f"vs {m}: {v:.1f}" for m, v in r.log_bf.items())
            lines.append(f"{dataset:<10}{r.model:<11}{_fmt(r.log_ml, 1):>12}  {bf}")
    if footer:
        lines += ["", footer]
    return "\n".join(lines) + "\n"


def reports_to_json(reports: list[ScoreReport], **extra) -> str:
    return json.dumps({"reports": [r.to_dict() for r in reports], **extra}, indent=2)
