"""Volatility filters, likelihoods and priors for GARCH, RealGARCH, RECH and RealRECH.

All filters are vectorised over parameter particles: ``theta`` is either a
single flat vector of shape ``(d,)`` or a particle matrix of shape ``(M, d)``.
The time loop runs in Python while the particle dimension is handled by numpy,
which is what makes SMC over thousands of particles affordable.

Conventions
-----------
* Returns are demeaned percent log-returns; realised measures are in the same
  (percent squared) units.
* ``sigma2_init`` is the variance used at the first time step.
* The recurrent state before the first observation is zero: ``omega = h = c = 0``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

MODEL_IDS = ("garch", "realgarch", "rech", "realrech")

LOG_2PI = float(np.log(2.0 * np.pi))
SIGMA2_FLOOR = 1e-12
GATES = ("i", "f", "o", "c")

_MEAS = ("xi", "phi", "tau1", "tau2", "sigma_u")


def _rnn_names(n_inputs: int) -> tuple[str, ...]:
    names = []
    for g in GATES:
        names.append(f"w{g}_h")
        names.extend(f"w{g}_x{k + 1}" for k in range(n_inputs))
        names.append(f"b{g}")
    return tuple(names) + ("beta0", "beta1")


# number of LSTM inputs: RECH sees (omega, y, sigma2); RealRECH adds rv
RNN_INPUTS = {"rech": 3, "realrech": 4}

PARAM_NAMES: dict[str, tuple[str, ...]] = {
    "garch": ("omega", "alpha", "beta"),
    "realgarch": ("omega", "beta", "gamma") + _MEAS,
    "rech": ("alpha", "beta") + _rnn_names(3),
    "realrech": ("beta", "gamma") + _MEAS + _rnn_names(4),
}

# index of the first recurrent parameter for the RNN models
RNN_START = {"rech": 2, "realrech": 7}

# headline parameters reported in fit tables
HEADLINE = ("alpha", "beta", "beta0", "beta1", "gamma")


class NumericError(ArithmeticError):
    """Raised when a filter produces a nonpositive variance on a single parameter vector."""


def check_model(model_id: str) -> str:
    if model_id not in MODEL_IDS:
        raise ValueError(f"unknown model {model_id!r}; expected one of {MODEL_IDS}")
    return model_id


def is_realized(model_id: str) -> bool:
    return model_id in ("realgarch", "realrech")


def n_params(model_id: str) -> int:
    return len(PARAM_NAMES[check_model(model_id)])


# ---------------------------------------------------------------------------
# typed parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GarchParams:
    omega: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.omega > 0 and self.alpha >= 0 and self.beta >= 0):
            raise ValueError("GARCH requires omega > 0 and alpha, beta >= 0")
        if self.alpha + self.beta >= 1:
            raise ValueError("GARCH requires alpha + beta < 1")

    def to_vector(self) -> "ParamVector":
        return ParamVector("garch", np.array([self.omega, self.alpha, self.beta]))


@dataclass(frozen=True)
class MeasurementParams:
    xi: float
    phi: float
    tau1: float
    tau2: float
    sigma_u: float

    def __post_init__(self):
        if not self.sigma_u > 0:
            raise ValueError("sigma_u must be positive")

    def as_tuple(self):
        return (self.xi, self.phi, self.tau1, self.tau2, self.sigma_u)


@dataclass(frozen=True)
class RealGarchParams:
    omega: float
    beta: float
    gamma: float
    meas: MeasurementParams

    def __post_init__(self):
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("RealGARCH requires beta, gamma >= 0")
        if self.beta + self.gamma * max(self.meas.phi, 0.0) >= 1:
            raise ValueError("RealGARCH requires beta + gamma * max(phi, 0) < 1")

    def to_vector(self) -> "ParamVector":
        vals = [self.omega, self.beta, self.gamma, *self.meas.as_tuple()]
        return ParamVector("realgarch", np.array(vals, dtype=float))


@dataclass
class LstmWeights:
    """Single-unit LSTM weights.

    ``cell`` has one row per gate in the order input, forget, output,
    candidate; each row is ``[recurrent, input_1..input_n, bias]``.
    ``out_intercept`` and ``out_slope`` map the hidden state to omega.
    """

    cell: np.ndarray
    out_intercept: float = 0.0
    out_slope: float = 0.0

    def __post_init__(self):
        self.cell = np.asarray(self.cell, dtype=float)
        if self.cell.ndim != 2 or self.cell.shape[0] != 4 or self.cell.shape[1] < 3:
            raise ValueError("LSTM cell weights must have shape (4, n_inputs + 2)")
        if not np.all(np.isfinite(self.cell)):
            raise ValueError("LSTM weights must be finite")

    @property
    def n_inputs(self) -> int:
        return self.cell.shape[1] - 2

    @property
    def n_weights(self) -> int:
        return self.cell.size + 2

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.cell.ravel(), [self.out_intercept, self.out_slope]])

    @classmethod
    def from_flat(cls, flat, n_inputs: int) -> "LstmWeights":
        flat = np.asarray(flat, dtype=float)
        k = 4 * (n_inputs + 2)
        return cls(flat[:k].reshape(4, n_inputs + 2), float(flat[k]), float(flat[k + 1]))


@dataclass
class ParamVector:
    """Flat named parameter vector for one model."""

    model_id: str
    values: np.ndarray

    def __post_init__(self):
        check_model(self.model_id)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (n_params(self.model_id),):
            raise ValueError(
                f"{self.model_id} expects {n_params(self.model_id)} values, got {self.values.shape}"
            )

    @property
    def names(self) -> tuple[str, ...]:
        return PARAM_NAMES[self.model_id]

    @property
    def blocks(self) -> dict[str, slice]:
        start = RNN_START.get(self.model_id, len(self.names))
        return {"garch": slice(0, start), "rnn": slice(start, len(self.names))}

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in zip(self.names, self.values)}

    @classmethod
    def from_dict(cls, model_id: str, d: dict) -> "ParamVector":
        names = PARAM_NAMES[check_model(model_id)]
        missing = [n for n in names if n not in d]
        if missing:
            raise KeyError(f"missing parameters for {model_id}: {missing}")
        return cls(model_id, np.array([float(d[n]) for n in names]))

    def to_json(self) -> str:
        return json.dumps({"model_id": self.model_id, **self.as_dict()})

    @classmethod
    def from_json(cls, text: str) -> "ParamVector":
        d = json.loads(text)
        return cls.from_dict(d.pop("model_id"), d)


def default_params(model_id: str) -> ParamVector:
    """A plausible admissible parameter vector, used by the simulator and the CLI."""
    check_model(model_id)
    d = dict(zip(PARAM_NAMES[model_id], np.zeros(n_params(model_id))))
    if model_id == "garch":
        d.update(omega=0.05, alpha=0.1, beta=0.85)
    elif model_id == "rech":
        d.update(alpha=0.08, beta=0.8, beta0=0.1, beta1=0.1, wc_x2=-0.5)
    else:
        d.update(beta=0.55, gamma=0.35, xi=0.0, phi=1.0, tau1=-0.05, tau2=0.05, sigma_u=0.15)
        if model_id == "realgarch":
            d.update(omega=0.1)
        else:
            d.update(beta0=0.1, beta1=0.1, wc_x2=-0.5)
    return ParamVector.from_dict(model_id, d)


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

def _lstm_batch(cell, x, h, c):
    """Vectorised LSTM step. ``cell`` is (M, 4, n+2), ``x`` is (M, n), ``h`` and ``c`` are (M,)."""
    n = cell.shape[2] - 2
    z = cell[:, :, 0] * h[:, None] + cell[:, :, -1]
    for k in range(n):
        z = z + cell[:, :, k + 1] * x[:, k, None]
    gi = expit(z[:, 0])
    gf = expit(z[:, 1])
    go = expit(z[:, 2])
    c_new = gi * np.tanh(z[:, 3]) + gf * c
    h_new = go * np.tanh(c_new)
    return h_new, c_new


def lstm_cell(w: LstmWeights, x, h_prev: float, c_prev: float) -> tuple[float, float]:
    """One step of a single-unit LSTM; returns the new ``(h, c)``."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != w.n_inputs:
        raise ValueError(f"expected {w.n_inputs} inputs, got {x.shape[1]}")
    h, c = _lstm_batch(w.cell[None], x, np.array([h_prev], float), np.array([c_prev], float))
    return float(h[0]), float(c[0])


def rnn_cell(w_h, b_h, x, h_prev):
    """Basic tanh RNN step, kept for comparison with the gated cell; not used by any filter."""
    return np.tanh(w_h[0] * h_prev + np.dot(w_h[1:], x) + b_h)


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------

@dataclass
class FilterState:
    """Predicted state for the next unseen day: its variance plus the recurrent memory."""

    sigma2: np.ndarray
    omega: np.ndarray
    h: np.ndarray
    c: np.ndarray
    bad: np.ndarray

    @classmethod
    def initial(cls, m: int, sigma2_init: float) -> "FilterState":
        z = np.zeros(m)
        return cls(np.full(m, float(sigma2_init)), z.copy(), z.copy(), z.copy(), np.zeros(m, bool))

    def take(self, idx) -> "FilterState":
        return FilterState(self.sigma2[idx], self.omega[idx], self.h[idx], self.c[idx], self.bad[idx])

    def copy(self) -> "FilterState":
        return self.take(slice(None))


@dataclass
class _Unpacked:
    model_id: str
    omega: np.ndarray | None = None
    alpha: np.ndarray | None = None
    beta: np.ndarray | None = None
    gamma: np.ndarray | None = None
    meas: tuple | None = None
    cell: np.ndarray | None = None
    beta0: np.ndarray | None = None
    beta1: np.ndarray | None = None


def _unpack(model_id: str, theta: np.ndarray) -> _Unpacked:
    names = PARAM_NAMES[model_id]
    col = {n: theta[:, i] for i, n in enumerate(names)}
    p = _Unpacked(model_id)
    p.omega = col.get("omega")
    p.alpha = col.get("alpha")
    p.beta = col["beta"]
    p.gamma = col.get("gamma")
    if is_realized(model_id):
        p.meas = tuple(col[n] for n in _MEAS)
    if model_id in RNN_START:
        s = RNN_START[model_id]
        n_in = RNN_INPUTS[model_id]
        k = 4 * (n_in + 2)
        p.cell = theta[:, s:s + k].reshape(-1, 4, n_in + 2)
        p.beta0 = theta[:, s + k]
        p.beta1 = theta[:, s + k + 1]
    return p


def _as_matrix(model_id: str, theta) -> tuple[np.ndarray, bool]:
    if isinstance(theta, ParamVector):
        if theta.model_id != model_id:
            raise ValueError(f"parameter vector is for {theta.model_id}, not {model_id}")
        theta = theta.values
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    theta = np.atleast_2d(theta)
    if theta.shape[1] != n_params(model_id):
        raise ValueError(f"{model_id} expects {n_params(model_id)} parameters, got {theta.shape[1]}")
    return theta, single


def filter_step(p: _Unpacked, state: FilterState, y_t: float, rv_t: float | None):
    """Absorb one observation.

    Returns ``(ll_return, ll_measure, u, new_state)`` where the log-density
    terms are evaluated at ``state.sigma2`` and ``new_state`` predicts the
    following day.
    """
    s2 = state.sigma2
    ll_y = -0.5 * (LOG_2PI + np.log(s2) + y_t * y_t / s2)
    u = ll_u = None
    if p.meas is not None:
        xi, phi, tau1, tau2, sig_u = p.meas
        eps = y_t / np.sqrt(s2)
        u = rv_t - xi - phi * s2 - tau1 * eps - tau2 * (eps * eps - 1.0)
        ll_u = -0.5 * (LOG_2PI + np.log(sig_u * sig_u) + u * u / (sig_u * sig_u))

    if p.cell is not None:
        if p.model_id == "rech":
            x = np.stack([state.omega, np.full_like(s2, y_t), s2], axis=1)
        else:
            x = np.stack([state.omega, np.full_like(s2, y_t), s2, np.full_like(s2, rv_t)], axis=1)
        h, c = _lstm_batch(p.cell, x, state.h, state.c)
        omega = p.beta0 + p.beta1 * h
        level = np.maximum(omega, 0.0)
    else:
        h, c = state.h, state.c
        omega = p.omega
        level = omega

    if p.model_id in ("garch", "rech"):
        nxt = level + p.alpha * (y_t * y_t) + p.beta * s2
    else:
        nxt = level + p.gamma * rv_t + p.beta * s2

    bad = state.bad | ~(nxt > SIGMA2_FLOOR)
    nxt = np.where(nxt > SIGMA2_FLOOR, nxt, SIGMA2_FLOOR)
    omega = np.broadcast_to(omega, s2.shape)
    return ll_y, ll_u, u, FilterState(nxt, omega, h, c, bad)


@dataclass
class FilterOutput:
    """Filtered variance path and log-likelihood.

    For a single parameter vector the arrays are 1-D over time; for a particle
    matrix they are ``(M, T)`` and ``loglik`` is ``(M,)``.  ``next_state``
    holds the one-step-ahead prediction after the last observation.
    """

    sigma2: np.ndarray
    loglik: np.ndarray | float
    omega_path: np.ndarray | None = None
    u: np.ndarray | None = None
    loglik_return: np.ndarray | float | None = None
    flagged: np.ndarray | bool = False
    next_state: FilterState | None = field(default=None, repr=False)

    @property
    def sigma2_next(self):
        s = self.next_state.sigma2
        return float(s[0]) if np.ndim(self.loglik) == 0 else s


def run_filter(model_id: str, theta, y, rv=None, sigma2_init: float = 1.0, *,
               keep_path: bool = True, state: FilterState | None = None) -> FilterOutput:
    """Run the model's variance recursion over ``y`` (and ``rv``) for one or many parameter vectors.

    Degenerate variances are floored at 1e-12 and the particle is flagged
    with a log-likelihood of ``-inf``.
    """
    check_model(model_id)
    theta, single = _as_matrix(model_id, theta)
    y = np.asarray(y, dtype=float)
    if is_realized(model_id):
        if rv is None:
            raise ValueError(f"{model_id} needs a realized measure series")
        rv = np.asarray(rv, dtype=float)
        if rv.shape != y.shape:
            raise ValueError("returns and realized measures must have equal length")
    m, n = theta.shape[0], y.shape[0]
    p = _unpack(model_id, theta)
    st = FilterState.initial(m, sigma2_init) if state is None else state.copy()

    ll_y = np.zeros(m)
    ll_u = np.zeros(m) if p.meas is not None else None
    if keep_path:
        s2_path = np.empty((m, n))
        om_path = np.empty((m, n)) if p.cell is not None else None
        u_path = np.empty((m, n)) if p.meas is not None else None
    for t in range(n):
        if keep_path:
            s2_path[:, t] = st.sigma2
            if om_path is not None:
                om_path[:, t] = st.omega
        a, b, u, st = filter_step(p, st, y[t], None if rv is None else rv[t])
        ll_y += a
        if ll_u is not None:
            ll_u += b
            if keep_path:
                u_path[:, t] = u

    total = ll_y + ll_u if ll_u is not None else ll_y.copy()
    # a floored variance anywhere, the next-day prediction included, invalidates the particle
    flagged = st.bad.copy()
    total[flagged | ~np.isfinite(total)] = -np.inf
    out = FilterOutput(
        sigma2=s2_path if keep_path else st.sigma2[:, None],
        loglik=total,
        omega_path=om_path if keep_path else None,
        u=u_path if keep_path else None,
        loglik_return=ll_y,
        flagged=flagged,
        next_state=st,
    )
    if single:
        out.sigma2 = out.sigma2[0]
        out.loglik = float(out.loglik[0])
        out.loglik_return = float(out.loglik_return[0])
        out.flagged = bool(out.flagged[0])
        if out.omega_path is not None:
            out.omega_path = out.omega_path[0]
        if out.u is not None:
            out.u = out.u[0]
    return out


def _checked(out: FilterOutput) -> FilterOutput:
    if out.flagged:
        raise NumericError("conditional variance reached the 1e-12 floor")
    return out


def garch_filter(p: GarchParams, y, sigma2_init: float) -> FilterOutput:
    return _checked(run_filter("garch", p.to_vector(), y, None, sigma2_init))


def realgarch_filter(p: RealGarchParams, y, rv, sigma2_init: float) -> FilterOutput:
    return _checked(run_filter("realgarch", p.to_vector(), y, rv, sigma2_init))


def rech_filter(p: ParamVector, y, sigma2_init: float) -> FilterOutput:
    return _checked(run_filter("rech", p, y, None, sigma2_init))


def realrech_filter(p: ParamVector, y, rv, sigma2_init: float) -> FilterOutput:
    return _checked(run_filter("realrech", p, y, rv, sigma2_init))


# ---------------------------------------------------------------------------
# priors and the unconstrained parameterisation used by the MH kernel
# ---------------------------------------------------------------------------

XI_PRIOR_VAR = 10.0
PHI_PRIOR_SD = 2.0
_HALF_NORMAL_CONST = np.log(2.0) - 0.5 * LOG_2PI


def _log_halfnormal(x, sd):
    return np.where(x > 0, _HALF_NORMAL_CONST - np.log(sd) - 0.5 * (x / sd) ** 2, -np.inf)


def _log_normal(x, sd):
    return -0.5 * LOG_2PI - np.log(sd) - 0.5 * (x / sd) ** 2


def _simplex_pair(model_id):
    return ("alpha", "beta") if model_id in ("garch", "rech") else ("beta", "gamma")


def log_prior(theta, model_id: str | None = None, rnn_sd: float = 1.0):
    """Log prior density (unnormalised over the truncated region); ``-inf`` outside support.

    GARCH-type pair (alpha, beta) or (beta, gamma) is uniform on the open
    simplex; omega, phi and sigma_u are half-normal; xi, tau and every
    recurrent weight are normal.
    """
    if isinstance(theta, ParamVector):
        model_id = theta.model_id
    check_model(model_id)
    theta, single = _as_matrix(model_id, theta)
    names = PARAM_NAMES[model_id]
    col = {n: theta[:, i] for i, n in enumerate(names)}
    a, b = (col[k] for k in _simplex_pair(model_id))
    lp = np.where((a >= 0) & (b >= 0) & (a + b < 1), np.log(2.0), -np.inf)
    if "omega" in col:
        lp = lp + _log_halfnormal(col["omega"], 1.0)
    if is_realized(model_id):
        phi = col["phi"]
        lp = np.where(col["beta"] + col["gamma"] * np.maximum(phi, 0.0) < 1, lp, -np.inf)
        lp = lp + _log_normal(col["xi"], np.sqrt(XI_PRIOR_VAR))
        lp = lp + _log_halfnormal(phi, PHI_PRIOR_SD)
        lp = lp + _log_normal(col["tau1"], 1.0) + _log_normal(col["tau2"], 1.0)
        lp = lp + _log_halfnormal(col["sigma_u"], 1.0)
    if model_id in RNN_START:
        rnn = theta[:, RNN_START[model_id]:]
        lp = lp + np.sum(_log_normal(rnn, rnn_sd), axis=1)
    lp = np.where(np.all(np.isfinite(theta), axis=1), lp, -np.inf)
    return float(lp[0]) if single else lp


def sample_prior(model_id: str, rng: np.random.Generator, n: int, rnn_sd: float = 1.0) -> np.ndarray:
    """Draw ``n`` parameter vectors from the (truncated) prior by rejection."""
    check_model(model_id)
    names = PARAM_NAMES[model_id]
    out = np.empty((0, len(names)))
    while out.shape[0] < n:
        k = 2 * (n - out.shape[0]) + 8
        draw = np.empty((k, len(names)))
        col = {nm: i for i, nm in enumerate(names)}
        simplex = rng.dirichlet(np.ones(3), size=k)
        a, b = _simplex_pair(model_id)
        draw[:, col[a]] = simplex[:, 0]
        draw[:, col[b]] = simplex[:, 1]
        if "omega" in col:
            draw[:, col["omega"]] = np.abs(rng.standard_normal(k))
        if is_realized(model_id):
            draw[:, col["xi"]] = rng.standard_normal(k) * np.sqrt(XI_PRIOR_VAR)
            draw[:, col["phi"]] = np.abs(rng.standard_normal(k)) * PHI_PRIOR_SD
            draw[:, col["tau1"]] = rng.standard_normal(k)
            draw[:, col["tau2"]] = rng.standard_normal(k)
            draw[:, col["sigma_u"]] = np.abs(rng.standard_normal(k))
        if model_id in RNN_START:
            s = RNN_START[model_id]
            draw[:, s:] = rng.standard_normal((k, len(names) - s)) * rnn_sd
        ok = np.isfinite(log_prior(draw, model_id, rnn_sd))
        out = np.vstack([out, draw[ok]])
    return out[:n]


def _positive_names(model_id):
    return [n for n in ("omega", "phi", "sigma_u") if n in PARAM_NAMES[model_id]]


def to_unconstrained(theta: np.ndarray, model_id: str) -> np.ndarray:
    """Map parameters to R^d: log for positive scalars, additive log-ratio for the simplex pair."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    names = PARAM_NAMES[model_id]
    z = theta.copy()
    for n in _positive_names(model_id):
        i = names.index(n)
        z[:, i] = np.log(theta[:, i])
    ia, ib = (names.index(k) for k in _simplex_pair(model_id))
    rest = 1.0 - theta[:, ia] - theta[:, ib]
    z[:, ia] = np.log(theta[:, ia]) - np.log(rest)
    z[:, ib] = np.log(theta[:, ib]) - np.log(rest)
    return z


def from_unconstrained(z: np.ndarray, model_id: str) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`to_unconstrained`; also returns log|d theta / d z| per row."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    names = PARAM_NAMES[model_id]
    theta = z.copy()
    log_jac = np.zeros(z.shape[0])
    for n in _positive_names(model_id):
        i = names.index(n)
        theta[:, i] = np.exp(z[:, i])
        log_jac += z[:, i]
    ia, ib = (names.index(k) for k in _simplex_pair(model_id))
    za, zb = z[:, ia], z[:, ib]
    mx = np.maximum(np.maximum(za, zb), 0.0)
    ea, eb, e0 = np.exp(za - mx), np.exp(zb - mx), np.exp(-mx)
    tot = ea + eb + e0
    a, b, r = ea / tot, eb / tot, e0 / tot
    theta[:, ia] = a
    theta[:, ib] = b
    with np.errstate(divide="ignore"):
        log_jac += np.log(a) + np.log(b) + np.log(r)
    return theta, log_jac


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def simulate(model_id: str, params: ParamVector | np.ndarray, n: int, rng: np.random.Generator,
             sigma2_init: float | None = None, burn: int = 500, rv_noise: float = 0.3):
    """Simulate ``(y, rv, sigma2)`` of length ``n`` from a model.

    Realised models draw ``rv`` from their measurement equation, floored at a
    small positive value so the series stays loadable.  Return-only models
    attach ``rv = sigma2 * lognormal`` noise so every simulated file carries a
    realised measure column.
    """
    check_model(model_id)
    theta, _ = _as_matrix(model_id, params)
    p = _unpack(model_id, theta)
    total = n + burn
    if sigma2_init is None:
        sigma2_init = 1.0
    st = FilterState.initial(1, sigma2_init)
    y = np.empty(total)
    rv = np.empty(total)
    s2 = np.empty(total)
    eps = rng.standard_normal(total)
    noise = rng.standard_normal(total)
    for t in range(total):
        s2[t] = st.sigma2[0]
        y[t] = np.sqrt(s2[t]) * eps[t]
        if p.meas is not None:
            xi, phi, tau1, tau2, sig_u = (float(v[0]) for v in p.meas)
            val = xi + phi * s2[t] + tau1 * eps[t] + tau2 * (eps[t] ** 2 - 1) + sig_u * noise[t]
            rv[t] = max(val, 1e-4 * s2[t])
        else:
            rv[t] = s2[t] * np.exp(rv_noise * noise[t] - 0.5 * rv_noise ** 2)
        _, _, _, st = filter_step(p, st, y[t], rv[t])
    return y[burn:], rv[burn:], s2[burn:]
