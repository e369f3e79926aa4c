"""Hypothetical pairwise straddle market driven by competing volatility forecasts.

Every agent prices a one-day at-the-money straddle on a $1 underlying with
zero rates.  Each pair of agents trades once per day at their mid-price;
the agent with the higher volatility forecast buys.  Both sides delta-hedge.
Daily profits are averaged over an agent's ``k - 1`` counterparties.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.stats import norm

TRADING_DAYS = 252

SCENARIOS = {
    1: ("garch", "rech", "realgarch", "realrech"),
    2: ("rech", "realgarch", "realrech"),
    3: ("realgarch", "realrech"),
    4: ("rech", "realrech"),
}


class MarketError(ValueError):
    pass


@dataclass
class AgentForecast:
    agent_id: str
    sigma_daily: np.ndarray  # fractional daily volatility

    def __post_init__(self):
        self.sigma_daily = np.asarray(self.sigma_daily, dtype=float)
        if np.any(~(self.sigma_daily > 0)):
            raise ValueError(f"{self.agent_id}: volatility forecasts must be positive")

    @classmethod
    def from_percent_variance(cls, agent_id: str, sigma2_hat) -> "AgentForecast":
        """Convert percent-scale variance forecasts to fractional daily volatility."""
        return cls(agent_id, np.sqrt(np.asarray(sigma2_hat, dtype=float)) / 100.0)


def straddle_call_price(sigma):
    """At-the-money one-day call price ``2 Phi(sigma / 2) - 1``."""
    s = np.asarray(sigma, dtype=float)
    if np.any(s < 0):
        raise ValueError("sigma must be nonnegative")
    p = 2.0 * norm.cdf(0.5 * s) - 1.0
    return float(p) if p.ndim == 0 else p


def hedge_ratio(sigma):
    """Straddle delta ``1 - 2 Phi(sigma / 2)``."""
    return -straddle_call_price(sigma)


def pairwise_trade(sigma_a: float, sigma_b: float, r_t: float, hedge: str = "own") -> tuple[float, float]:
    """Profits of agents a and b (in dollars) from one straddle trade.

    ``hedge="own"`` hedges each side with its own forecast; ``"mid"`` uses
    the volatility implied by the mid-price for both, which makes the trade
    exactly zero-sum.
    """
    if sigma_a == sigma_b:
        return 0.0, 0.0
    pa, pb = straddle_call_price(sigma_a), straddle_call_price(sigma_b)
    mid = 0.5 * (pa + pb)
    if hedge == "own":
        da, db = hedge_ratio(sigma_a), hedge_ratio(sigma_b)
    elif hedge == "mid":
        da = db = -mid
    else:
        raise ValueError(f"unknown hedge mode {hedge!r}")
    buy_a = sigma_a > sigma_b
    d_buy, d_sell = (da, db) if buy_a else (db, da)
    buyer = abs(r_t) - 2.0 * mid + r_t * d_buy
    seller = 2.0 * mid - abs(r_t) - r_t * d_sell
    return (buyer, seller) if buy_a else (seller, buyer)


@dataclass
class TradeLedger:
    """Outcome of a market run; profits in cents."""

    agents: list[str]
    daily_profit: dict[str, np.ndarray]
    trades: list[tuple] = field(default_factory=list)
    flags: dict[str, str] = field(default_factory=dict)

    def mean_daily(self, agent: str) -> float:
        return float(np.mean(self.daily_profit[agent]))

    def annualized_return(self, agent: str) -> float:
        return TRADING_DAYS * self.mean_daily(agent)

    def sharpe(self, agent: str) -> float:
        p = self.daily_profit[agent]
        sd = float(np.std(p, ddof=1)) if p.size > 1 else 0.0
        if not sd > 0:
            self.flags[agent] = "zero profit variance; Sharpe reported as 0"
            return 0.0
        return float(np.sqrt(TRADING_DAYS) * np.mean(p) / sd)

    def summary(self) -> dict:
        return {a: {"daily": self.mean_daily(a), "ret": self.annualized_return(a),
                    "sharpe": self.sharpe(a), **({"flag": self.flags[a]} if a in self.flags else {})}
                for a in self.agents}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "pair", "buyer", "profit_buyer", "profit_seller"])
            for row in self.trades:
                w.writerow(row)


def run_market(agents: list[AgentForecast], returns, scenario=None, dates=None,
               hedge: str = "own") -> TradeLedger:
    """Run the pairwise market over the test days.

    ``returns`` are fractional daily returns.  ``scenario`` is a scenario
    number, an iterable of agent ids, or None for all agents.
    """
    if scenario is not None:
        wanted = SCENARIOS[scenario] if isinstance(scenario, int) else tuple(scenario)
        agents = [a for a in agents if a.agent_id in wanted]
    k = len(agents)
    if k < 2:
        raise MarketError("the market needs at least two agents")
    r = np.asarray(returns, dtype=float)
    for a in agents:
        if a.sigma_daily.shape != r.shape:
            raise ValueError(f"{a.agent_id}: forecast length does not match returns")
    if dates is None:
        dates = np.arange(r.size).astype(str)

    ids = [a.agent_id for a in agents]
    total = {a: np.zeros(r.size) for a in ids}
    trades = []
    for a, b in combinations(agents, 2):
        sa, sb = a.sigma_daily, b.sigma_daily
        pa, pb = straddle_call_price(sa), straddle_call_price(sb)
        mid = 0.5 * (pa + pb)
        if hedge == "own":
            da, db = -pa, -pb
        elif hedge == "mid":
            da = db = -mid
        else:
            raise ValueError(f"unknown hedge mode {hedge!r}")
        a_buys = sa > sb
        tie = sa == sb
        d_buy = np.where(a_buys, da, db)
        d_sell = np.where(a_buys, db, da)
        buyer = np.abs(r) - 2.0 * mid + r * d_buy
        seller = 2.0 * mid - np.abs(r) - r * d_sell
        buyer = np.where(tie, 0.0, buyer) * 100.0
        seller = np.where(tie, 0.0, seller) * 100.0
        total[a.agent_id] += np.where(a_buys, buyer, seller)
        total[b.agent_id] += np.where(a_buys, seller, buyer)
        pair = f"{a.agent_id}-{b.agent_id}"
        for t in np.flatnonzero(~tie):
            trades.append((dates[t], pair, a.agent_id if a_buys[t] else b.agent_id,
                           repr(float(buyer[t])), repr(float(seller[t]))))
    daily = {a: v / (k - 1) for a, v in total.items()}
    return TradeLedger(ids, daily, trades)


def format_table(results: dict[int, dict], agents, dataset: str = "", footer: str = "") -> str:
    """Ret./Sharpe per agent per scenario; ``-`` marks agents not trading."""
    scen = sorted(results)
    head = f"{'':<10}{'agent':<11}" + "".join(f"{'S' + str(s) + ' Ret.':>12}{'Sharpe':>8}" for s in scen)
    lines = [head, "-" * len(head)]
    for a in agents:
        row = f"{dataset:<10}{a:<11}"
        for s in scen:
            if a in results[s]:
                row += f"{results[s][a]['ret']:>12.1f}{results[s][a]['sharpe']:>8.1f}"
            else:
                row += f"{'-':>12}{'-':>8}"
        lines.append(row)
    if footer:
        lines += ["", footer]
    return "\n".join(lines) + "\n"


def summary_json(results: dict[int, dict], **extra) -> str:
    return json.dumps({"scenarios": {str(k): v for k, v in results.items()}, **extra}, indent=2)
