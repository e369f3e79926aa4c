"""Model Confidence Set with a stationary bootstrap."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class LossPanel:
    models: list[str]
    losses: np.ndarray  # (k, T)

    def __post_init__(self):
        self.losses = np.atleast_2d(np.asarray(self.losses, dtype=float))
        if self.losses.shape[0] != len(self.models):
            raise ValueError("one loss row per model required")
        if len(self.models) < 2:
            raise ValueError("need at least two models")
        if not np.all(np.isfinite(self.losses)):
            raise ValueError("losses must be finite")

    @classmethod
    def from_csv(cls, path) -> "LossPanel":
        """Read a wide CSV: one column per model (an optional ``date`` column is ignored)."""
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty loss file")
        models = [c for c in rows[0] if c != "date"]
        return cls(models, np.array([[float(r[m]) for r in rows] for m in models]))


@dataclass
class BootstrapConfig:
    n_boot: int = 5000
    block_length: float = 10.0
    seed: int = 0
    statistic: str = "R"  # "R" range statistic or "SQ" semi-quadratic
    chunk: int = 500


@dataclass
class McsResult:
    models: list[str]
    pvalues: dict[str, float]
    elimination_order: list[str]
    confidence: float
    notes: list[str] = field(default_factory=list)

    @property
    def ssm(self) -> list[str]:
        return [m for m in self.models if self.pvalues[m] >= 1.0 - self.confidence]

    def to_dict(self) -> dict:
        return {"pvalues": self.pvalues, "elimination_order": self.elimination_order,
                "confidence": self.confidence, "ssm": self.ssm, "notes": self.notes}


def relative_losses(panel: LossPanel) -> np.ndarray:
    """``d[i, j, t] = L[i, t] - L[j, t]``."""
    L = panel.losses
    return L[:, None, :] - L[None, :, :]


def stationary_bootstrap_indices(n: int, n_boot: int, block_length: float,
                                 rng: np.random.Generator) -> np.ndarray:
    """Politis-Romano resampling indices with geometric block lengths of the given mean."""
    p = 1.0 / block_length
    starts = rng.integers(0, n, size=(n_boot, n))
    new = rng.uniform(size=(n_boot, n)) < p
    new[:, 0] = True
    pos = np.where(new, np.arange(n), 0)
    last = np.maximum.accumulate(pos, axis=1)
    head = np.take_along_axis(starts, last, axis=1)
    return (head + (np.arange(n) - last)) % n


def _block_layout(n: int, n_boot: int, block_length: float, rng: np.random.Generator):
    """Block starts and lengths of ``n_boot`` stationary-bootstrap resamples of length ``n``.

    Equivalent in law to :func:`stationary_bootstrap_indices`, but each
    resample is described by its blocks so means can be formed from prefix sums.
    """
    p = 1.0 / block_length
    width = int(n * p + 10 * np.sqrt(n * p) + 20)
    while True:
        lengths = rng.geometric(p, size=(n_boot, width))
        if np.all(lengths.sum(axis=1) >= n):
            break
        width *= 2
    offset = np.cumsum(lengths, axis=1) - lengths
    used = offset < n
    lengths = np.where(used, np.minimum(lengths, n - offset), 0)
    starts = rng.integers(0, n, size=(n_boot, width))
    return starts, lengths


def bootstrap_means(losses: np.ndarray, cfg: BootstrapConfig) -> np.ndarray:
    """Bootstrap replicates of each model's mean loss, shape (n_boot, k)."""
    k, n = losses.shape
    out = np.empty((cfg.n_boot, k))
    # prefix sums over the circularly extended series; blocks never exceed n
    prefix = np.concatenate([np.zeros((k, 1)), np.cumsum(np.concatenate([losses, losses], axis=1), axis=1)],
                            axis=1)
    for c, lo in enumerate(range(0, cfg.n_boot, cfg.chunk)):
        hi = min(lo + cfg.chunk, cfg.n_boot)
        rng = np.random.default_rng([cfg.seed, c])
        starts, lengths = _block_layout(n, hi - lo, cfg.block_length, rng)
        for i in range(k):
            block = prefix[i][starts + lengths] - prefix[i][starts]
            out[lo:hi, i] = block.sum(axis=1) / n
    return out


def _safe_div(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num / den
        return np.where(den > 0, r, np.where(num == 0, 0.0, np.sign(num) * np.inf))


def mcs_test(panel: LossPanel, confidence: float = 0.75, bootstrap: BootstrapConfig | None = None) -> McsResult:
    """Sequentially test equal predictive ability and eliminate the worst model until one remains."""
    cfg = bootstrap or BootstrapConfig()
    if panel.losses.shape[1] < 50:
        raise ValueError("MCS needs at least 50 observations")
    if cfg.statistic not in ("R", "SQ"):
        raise ValueError("statistic must be 'R' or 'SQ'")
    mean = panel.losses.mean(axis=1)
    boot = bootstrap_means(panel.losses, cfg)
    alive = list(range(len(panel.models)))
    pvals: dict[str, float] = {}
    order: list[str] = []
    running = 0.0
    while len(alive) > 1:
        a = np.array(alive)
        d = mean[a][:, None] - mean[a][None, :]
        db = boot[:, a][:, :, None] - boot[:, a][:, None, :] - d[None]
        var = np.mean(db * db, axis=0)
        t = _safe_div(d, np.sqrt(var))
        tb = _safe_div(db, np.sqrt(var)[None])
        if cfg.statistic == "R":
            stat = np.max(np.abs(t))
            stat_b = np.max(np.abs(tb), axis=(1, 2))
            worst = int(np.argmax(np.max(t, axis=1)))
        else:
            iu = np.triu_indices(len(a), 1)
            stat = np.sum(t[iu] ** 2)
            stat_b = np.sum(tb[:, iu[0], iu[1]] ** 2, axis=1)
            di = d.mean(axis=1)
            dib = db.mean(axis=2)
            ti = _safe_div(di, np.sqrt(np.mean(dib * dib, axis=0)))
            worst = int(np.argmax(ti))
        p = float(np.mean(stat_b >= stat)) if np.isfinite(stat) else 0.0
        running = max(running, p)
        out = alive.pop(worst)
        pvals[panel.models[out]] = running
        order.append(panel.models[out])
    pvals[panel.models[alive[0]]] = 1.0
    order.append(panel.models[alive[0]])
    notes = [f"stationary bootstrap: B={cfg.n_boot}, mean block length {cfg.block_length:g}, "
             f"statistic T_{cfg.statistic}, seed {cfg.seed} (defaults chosen, not from the source study)"]
    return McsResult(list(panel.models), {m: pvals[m] for m in panel.models}, order, confidence, notes)


def aggregate(results: list[McsResult]) -> dict[str, dict[str, float]]:
    """Inclusion counts and mean p-values of each model across datasets."""
    models = results[0].models if results else []
    return {m: {"included": sum(m in r.ssm for r in results),
                "mean_p": float(np.mean([r.pvalues[m] for r in results]))} for m in models}


def format_table(rows: dict[str, dict[str, dict[str, float]]], models, footer: str = "") -> str:
    """``rows`` maps score name -> aggregate() output; cells read ``count (mean p)``."""
    head = f"{'':<16}" + "".join(f"{m:>16}" for m in models)
    lines = [head, "-" * len(head)]
    for score, agg in rows.items():
        cells = "".join(f"{agg[m]['included']:>8d} ({agg[m]['mean_p']:.2f})" if m in agg else f"{'-':>16}"
                        for m in models)
        lines.append(f"{score:<16}{cells}")
    if footer:
        lines += ["", footer]
    return "\n".join(lines) + "\n"
