"""Experiment configuration: one declarative YAML/JSON file, overridable from the command line."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict, fields
from pathlib import Path

import yaml

from .models import MODEL_IDS
from .smc import SmcConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    datasets: list[str]
    seed: int
    models: list[str] = field(default_factory=lambda: list(MODEL_IDS))
    output: str = "runs"
    split: float = 0.5
    n_particles: int = 2000
    ess_target_fraction: float = 0.8
    ess_resample_fraction: float = 0.5
    n_mh_moves: int = 10
    proposal_scale: float | None = None
    rnn_prior_sd: float = 1.0
    n_runs: int = 1
    alphas: list[float] = field(default_factory=lambda: [0.01, 0.05])
    checkpoint_every: int = 50
    mixture_var: bool = False
    scenarios: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    hedge: str = "own"
    mcs_confidence: float = 0.75
    mcs_boot: int = 5000
    mcs_block_length: float = 10.0
    mcs_statistic: str = "R"
    workers: int = 1
    plots: bool = False

    def __post_init__(self):
        if not self.datasets:
            raise ConfigError("no datasets given")
        if self.seed is None:
            raise ConfigError("a seed is required")
        if not self.models:
            raise ConfigError("model list is empty")
        bad = [m for m in self.models if m not in MODEL_IDS]
        if bad:
            raise ConfigError(f"unknown model(s) {bad}; choose from {MODEL_IDS}")
        if sorted(self.alphas) != [0.01, 0.05]:
            raise ConfigError("alpha levels are fixed at 0.01 and 0.05")
        if self.hedge not in ("own", "mid"):
            raise ConfigError("hedge must be 'own' or 'mid'")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be at least 1")
        if not 0 < self.split < 1:
            raise ConfigError("split must be a fraction in (0, 1)")
        try:
            self.smc()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def check_paths(self) -> None:
        missing = [p for p in self.datasets if not Path(p).exists()]
        if missing:
            raise ConfigError(f"dataset(s) not found: {missing}")

    def smc(self, seed: int | None = None) -> SmcConfig:
        return SmcConfig(
            n_particles=self.n_particles,
            ess_target_fraction=self.ess_target_fraction,
            ess_resample_fraction=self.ess_resample_fraction,
            n_mh_moves=self.n_mh_moves,
            proposal_scale=self.proposal_scale,
            seed=self.seed if seed is None else seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Hash of every setting that affects results."""
        d = self.to_dict()
        for k in ("workers", "plots", "output"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def footer(self) -> str:
        return f"config {self.digest()}  seed {self.seed}"

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "ExperimentConfig":
        raw = {}
        if path is not None:
            p = Path(path)
            if not p.exists():
                raise ConfigError(f"config file {p} not found")
            raw = yaml.safe_load(p.read_text()) or {}
            if not isinstance(raw, dict):
                raise ConfigError("config file must hold a mapping")
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        if "datasets" not in raw:
            raise ConfigError("config needs 'datasets'")
        if raw.get("seed") is None:
            raise ConfigError("config needs an explicit 'seed'")
        if isinstance(raw["datasets"], str):
            raw["datasets"] = [raw["datasets"]]
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
