"""Adaptive Sequential Monte Carlo over static parameters.

Two samplers share one particle representation:

* likelihood annealing, bridging prior to posterior through tempered
  likelihoods ``p(theta) L(theta)^gamma`` with ``gamma`` chosen adaptively so
  each reweighting keeps the ESS at a target fraction of ``M``;
* data annealing, which absorbs observations one at a time and only
  resamples and moves when the ESS drops below a threshold.

Randomness is drawn from streams keyed by ``(seed, stage, purpose)``, so a
run is reproducible from its seed and can be resumed from a checkpoint.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import models
from .models import FilterState

log = logging.getLogger(__name__)

_INIT, _RESAMPLE, _MOVE = 0, 1, 2


class EstimationError(RuntimeError):
    """SMC cannot proceed, e.g. every particle has zero likelihood."""


class DegeneracyError(EstimationError):
    pass


def stream(seed: int, stage: int, purpose: int, sub: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stage), int(purpose), int(sub)])


@dataclass
class SmcConfig:
    n_particles: int = 2000
    ess_target_fraction: float = 0.8
    ess_resample_fraction: float = 0.5
    n_mh_moves: int = 10
    proposal_scale: float | None = None  # None -> 2.38 / sqrt(d)
    seed: int = 0
    max_stages: int = 10_000

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("n_particles must be at least 2")
        for name in ("ess_target_fraction", "ess_resample_fraction"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.n_mh_moves < 1:
            raise ValueError("n_mh_moves must be at least 1")
        if self.proposal_scale is not None and self.proposal_scale < 0:
            raise ValueError("proposal_scale must be nonnegative")

    def scale_for(self, dim: int) -> float:
        return 2.38 / np.sqrt(dim) if self.proposal_scale is None else float(self.proposal_scale)


# ---------------------------------------------------------------------------
# targets
# ---------------------------------------------------------------------------

class VolatilityTarget:
    """Posterior target for one volatility model on fixed data."""

    def __init__(self, model_id: str, y, rv=None, sigma2_init: float | None = None,
                 rnn_sd: float = 1.0):
        self.model_id = models.check_model(model_id)
        self.y = np.asarray(y, dtype=float)
        self.rv = None if rv is None else np.asarray(rv, dtype=float)
        if models.is_realized(model_id) and self.rv is None:
            raise ValueError(f"{model_id} needs realized measures")
        if sigma2_init is None:
            if self.y.size < 2:
                raise ValueError("need at least two returns to initialise the variance")
            sigma2_init = float(np.var(self.y))
        self.sigma2_init = float(sigma2_init)
        self.rnn_sd = rnn_sd
        self.names = models.PARAM_NAMES[model_id]
        self.dim = len(self.names)

    def extend(self, y_new: float, rv_new: float | None = None) -> "VolatilityTarget":
        rv = None if self.rv is None else np.append(self.rv, rv_new)
        return VolatilityTarget(self.model_id, np.append(self.y, y_new), rv,
                                self.sigma2_init, self.rnn_sd)

    def sample_prior(self, rng, n):
        return models.sample_prior(self.model_id, rng, n, self.rnn_sd)

    def log_prior(self, theta):
        return models.log_prior(theta, self.model_id, self.rnn_sd)

    def filter(self, theta):
        return models.run_filter(self.model_id, theta, self.y, self.rv, self.sigma2_init,
                                 keep_path=False)

    def loglik(self, theta):
        if self.y.size == 0:
            return np.zeros(np.atleast_2d(theta).shape[0])
        return self.filter(theta).loglik

    def to_unconstrained(self, theta):
        return models.to_unconstrained(theta, self.model_id)

    def from_unconstrained(self, z):
        return models.from_unconstrained(z, self.model_id)


class DensityTarget:
    """Wrap a plain log-density on R^d so it can be sampled with :func:`mh_refresh`."""

    def __init__(self, log_density, dim: int):
        self.log_density = log_density
        self.dim = dim

    def log_prior(self, theta):
        return np.zeros(np.atleast_2d(theta).shape[0])

    def loglik(self, theta):
        return np.asarray(self.log_density(np.atleast_2d(theta)), dtype=float)

    def to_unconstrained(self, theta):
        return np.atleast_2d(np.asarray(theta, dtype=float)).copy()

    def from_unconstrained(self, z):
        z = np.atleast_2d(z)
        return z.copy(), np.zeros(z.shape[0])


# ---------------------------------------------------------------------------
# particle system
# ---------------------------------------------------------------------------

@dataclass
class ParticleSystem:
    theta: np.ndarray
    log_weights: np.ndarray
    loglik: np.ndarray
    gamma: float = 0.0
    log_ml: float = 0.0
    seed: int = 0
    stage: int = 0
    model_id: str | None = None
    n_obs: int = 0
    stage_log: list = field(default_factory=list)
    state: FilterState | None = None

    @property
    def size(self) -> int:
        return self.theta.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return normalized_weights(self.log_weights)

    @property
    def ess(self) -> float:
        return ess(self.log_weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.theta

    def std(self) -> np.ndarray:
        w = self.weights
        mu = w @ self.theta
        return np.sqrt(np.maximum(w @ (self.theta - mu) ** 2, 0.0))

    def copy(self) -> "ParticleSystem":
        return ParticleSystem(
            self.theta.copy(), self.log_weights.copy(), self.loglik.copy(), self.gamma,
            self.log_ml, self.seed, self.stage, self.model_id, self.n_obs,
            [dict(s) for s in self.stage_log], None if self.state is None else self.state.copy(),
        )

    # checkpointing ----------------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "model_id": self.model_id,
            "theta": self.theta.tolist(),
            "log_weights": self.log_weights.tolist(),
            "loglik": self.loglik.tolist(),
            "gamma": self.gamma,
            "log_ml": self.log_ml,
            "seed": self.seed,
            "stage": self.stage,
            "n_obs": self.n_obs,
            "stage_log": self.stage_log,
        }
        if self.state is not None:
            d["state"] = {k: v.tolist() for k, v in asdict(self.state).items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ParticleSystem":
        state = None
        if d.get("state") is not None:
            s = d["state"]
            state = FilterState(*(np.asarray(s[k], dtype=bool if k == "bad" else float)
                                  for k in ("sigma2", "omega", "h", "c", "bad")))
        return cls(
            theta=np.asarray(d["theta"], dtype=float),
            log_weights=np.asarray(d["log_weights"], dtype=float),
            loglik=np.asarray(d["loglik"], dtype=float),
            gamma=float(d["gamma"]),
            log_ml=float(d["log_ml"]),
            seed=int(d["seed"]),
            stage=int(d["stage"]),
            model_id=d.get("model_id"),
            n_obs=int(d.get("n_obs", 0)),
            stage_log=list(d.get("stage_log", [])),
            state=state,
        )

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.to_dict()))
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "ParticleSystem":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def normalized_weights(log_weights) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    if not np.any(np.isfinite(lw)):
        raise DegeneracyError("all particle weights are zero")
    w = np.exp(lw - logsumexp(lw))
    return w / w.sum()


def ess(log_weights) -> float:
    """Effective sample size ``1 / sum W^2`` of normalised weights."""
    w = normalized_weights(log_weights)
    return float(1.0 / np.sum(w * w))


def _tempered(delta: float, loglik: np.ndarray) -> np.ndarray:
    if delta == 0:
        return np.zeros_like(loglik)
    return np.where(np.isneginf(loglik), -np.inf, delta * loglik)


def adapt_next_gamma(system: ParticleSystem, logliks, target: float, tol: float = 1e-14) -> float:
    """Next temperature: the step whose reweighting brings the ESS down to ``target * M``.

    Returns 1 when even the full remaining step keeps the ESS above target.
    """
    logliks = np.asarray(logliks, dtype=float)
    g0 = float(system.gamma)
    if g0 >= 1.0:
        raise ValueError("tempering already finished")
    lw = system.log_weights
    goal = target * lw.size

    def f(delta):
        inc = _tempered(delta, logliks)
        if not np.any(np.isfinite(lw + inc)):
            return -goal
        return ess(lw + inc) - goal

    span = 1.0 - g0
    if f(span) >= 0:
        return 1.0
    lo, hi = 0.0, span
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) >= 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    step = 0.5 * (lo + hi) if lo > 0 else hi
    return min(g0 + step, 1.0)


def systematic_indices(weights, rng: np.random.Generator) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    m = w.size
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    u = (rng.uniform() + np.arange(m)) / m
    return np.searchsorted(cdf, u, side="right")


def resample_systematic(system: ParticleSystem, rng: np.random.Generator | None = None) -> ParticleSystem:
    """Systematic resampling; the returned system carries uniform weights."""
    if rng is None:
        rng = stream(system.seed, system.stage, _RESAMPLE)
    idx = systematic_indices(system.weights, rng)
    out = system.copy()
    out.theta = system.theta[idx]
    out.loglik = system.loglik[idx]
    out.log_weights = np.zeros(system.size)
    if system.state is not None:
        out.state = system.state.take(idx)
    return out


def _proposal_chol(z: np.ndarray) -> np.ndarray:
    d = z.shape[1]
    if z.shape[0] > 1:
        cov = np.atleast_2d(np.cov(z, rowvar=False))
    else:
        cov = np.zeros((d, d))
    cov = cov + 1e-10 * np.eye(d)
    try:
        if not np.all(np.isfinite(cov)):
            raise np.linalg.LinAlgError
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        var = np.diag(cov).copy()
        var = np.where(np.isfinite(var) & (var > 0), var, 0.0) + 1e-6
        return np.diag(np.sqrt(var))


def mh_refresh(system: ParticleSystem, target, config: SmcConfig, gamma: float | None = None,
               record: list | None = None) -> ParticleSystem:
    """Move every particle with ``config.n_mh_moves`` random-walk Metropolis steps.

    The walk runs in the target's unconstrained space with proposal covariance
    ``scale^2 * cov(z)``; the invariant density is
    ``prior * likelihood^gamma * |Jacobian|``.  ``system.loglik`` must hold the
    untempered log-likelihood of each particle under ``target``.  If ``record``
    is a list, per-move ``(current, proposed, accepted)`` log densities are
    appended to it.
    """
    gamma = system.gamma if gamma is None else gamma
    scale = config.scale_for(system.theta.shape[1])
    out = system.copy()
    if scale == 0:
        out.stage_log.append({"stage": out.stage, "acceptance": 0.0})
        return out

    theta = out.theta
    z = target.to_unconstrained(theta)
    _, log_jac = target.from_unconstrained(z)
    ll = out.loglik
    cur = target.log_prior(theta) + _tempered(gamma, ll) + log_jac
    chol = _proposal_chol(z)
    m, d = z.shape
    accepted = 0
    for k in range(config.n_mh_moves):
        rng = stream(system.seed, system.stage, _MOVE, k)
        zp = z + scale * rng.standard_normal((m, d)) @ chol.T
        thp, ljp = target.from_unconstrained(zp)
        lpp = target.log_prior(thp)
        llp = np.full(m, -np.inf)
        ok = np.isfinite(lpp) & np.isfinite(ljp)
        if np.any(ok):
            llp[ok] = target.loglik(thp[ok])
        new = lpp + _tempered(gamma, llp) + ljp
        with np.errstate(invalid="ignore"):
            ratio = new - cur
        acc = np.log(rng.uniform(size=m)) < np.where(np.isnan(ratio), -np.inf, ratio)
        if record is not None:
            record.append((cur.copy(), new.copy(), acc.copy()))
        z = np.where(acc[:, None], zp, z)
        theta = np.where(acc[:, None], thp, theta)
        ll = np.where(acc, llp, ll)
        cur = np.where(acc, new, cur)
        accepted += int(acc.sum())
    out.theta = theta
    out.loglik = ll
    rate = accepted / (m * config.n_mh_moves)
    out.stage_log.append({"stage": out.stage, "acceptance": rate})
    return out


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def likelihood_anneal(target, config: SmcConfig, progress=None) -> ParticleSystem:
    """Tempered SMC from the prior to the posterior.

    The log marginal likelihood accumulates
    ``log sum_j W_j exp((gamma_k - gamma_{k-1}) loglik_j)`` at every stage.
    """
    m = config.n_particles
    theta = target.sample_prior(stream(config.seed, 0, _INIT), m)
    ll = np.asarray(target.loglik(theta), dtype=float)
    ll = np.where(np.isnan(ll), -np.inf, ll)
    if not np.any(np.isfinite(ll)):
        raise EstimationError("every prior draw has zero likelihood; check the prior support")
    system = ParticleSystem(theta, np.zeros(m), ll, 0.0, 0.0, config.seed, 0,
                            getattr(target, "model_id", None), int(np.size(getattr(target, "y", []))))
    while system.gamma < 1.0:
        if system.stage >= config.max_stages:
            raise EstimationError(f"tempering did not finish within {config.max_stages} stages")
        system.stage += 1
        new_gamma = adapt_next_gamma(system, system.loglik, config.ess_target_fraction)
        if not new_gamma > system.gamma:
            raise EstimationError("tempering stalled")
        inc = _tempered(new_gamma - system.gamma, system.loglik)
        lw = system.log_weights
        system.log_ml += float(logsumexp(lw + inc) - logsumexp(lw))
        system.log_weights = lw + inc
        system.gamma = new_gamma
        ess_now = system.ess
        system = resample_systematic(system)
        system = mh_refresh(system, target, config)
        system.stage_log[-1].update(gamma=new_gamma, ess=ess_now)
        if progress is not None:
            progress(system)
        log.debug("stage %d gamma=%.6f ess=%.1f acc=%.3f", system.stage, new_gamma, ess_now,
                  system.stage_log[-1]["acceptance"])
    system.gamma = 1.0
    return system


def ensure_state(system: ParticleSystem, target: VolatilityTarget) -> ParticleSystem:
    """Attach the one-step-ahead filter state to a posterior system if it is missing."""
    if system.state is None:
        out = target.filter(system.theta)
        system = system.copy()
        system.state = out.next_state
    return system


def incremental_loglik(system: ParticleSystem, y_new: float, rv_new: float | None):
    """Per-particle log density of a new observation and the advanced filter state."""
    p = models._unpack(system.model_id, system.theta)
    ll_y, ll_u, _, state = models.filter_step(p, system.state, float(y_new),
                                              None if rv_new is None else float(rv_new))
    inc = ll_y if ll_u is None else ll_y + ll_u
    inc = np.where(state.bad | ~np.isfinite(inc), -np.inf, inc)
    return inc, ll_y, state


def data_anneal_step(system: ParticleSystem, target: VolatilityTarget, y_new: float,
                     rv_new: float | None, config: SmcConfig):
    """Absorb one observation.

    ``target`` holds the data through the previous day.  Returns the updated
    system and the extended target.  Resampling plus an MH refresh against the
    full-data posterior happens only when the ESS falls below
    ``config.ess_resample_fraction * M``.
    """
    system = ensure_state(system, target)
    inc, _, state = incremental_loglik(system, y_new, rv_new)
    lw = system.log_weights
    if not np.any(np.isfinite(lw + inc)):
        raise EstimationError("all particles assign zero density to the new observation")
    out = system.copy()
    out.log_ml += float(logsumexp(lw + inc) - logsumexp(lw))
    out.log_weights = lw + inc
    out.loglik = np.where(np.isfinite(inc), system.loglik + inc, -np.inf)
    out.state = state
    out.stage += 1
    out.n_obs += 1
    new_target = target.extend(y_new, rv_new)
    e = out.ess
    entry = {"stage": out.stage, "ess": e, "resampled": False}
    if e < config.ess_resample_fraction * out.size:
        out = resample_systematic(out)
        out = mh_refresh(out, new_target, config, gamma=1.0)
        entry.update(resampled=True, acceptance=out.stage_log.pop()["acceptance"])
        out.state = new_target.filter(out.theta).next_state
    out.stage_log.append(entry)
    return out, new_target


def data_anneal(target: VolatilityTarget, y, rv, config: SmcConfig,
                system: ParticleSystem | None = None) -> tuple[ParticleSystem, VolatilityTarget]:
    """Absorb a whole series one observation at a time; starts from the prior when ``system`` is None."""
    if system is None:
        theta = target.sample_prior(stream(config.seed, 0, _INIT), config.n_particles)
        system = ParticleSystem(theta, np.zeros(config.n_particles), target.loglik(theta), 1.0, 0.0,
                                config.seed, 0, target.model_id, target.y.size)
    for t in range(len(y)):
        system, target = data_anneal_step(system, target, y[t], None if rv is None else rv[t], config)
    return system, target
