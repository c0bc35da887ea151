"""Joint VaR/ES state recursions.

The conditional quantile Q_t < 0 evolves on the log scale, a positive gap
state carries the distance between ES and VaR, and a measurement equation
ties a daily realized series to the contemporaneous risk level:

    log(-Q_t) = var_intercept + var_persistence * log(-Q_{t-1})
                + shock_linear * eps_{t-1} + shock_squared * eps_{t-1}^2
                + factor_to_var . f_{t-1}
    gap_t     = gap_intercept + gap_persistence * gap_{t-1}
                + factor_to_gap . |f_{t-1}|
    ES_t      = Q_t - gap_t
    eps_t     = r_t / Q_t
    u_t       = log(x_t) - (meas_intercept + meas_loading * log(-Q_t)
                + meas_shock_linear * eps_t + meas_shock_squared * eps_t^2)

Everything here is a deterministic function of (parameters, data, initial
state); estimation lives in :mod:`tailrisk.estimate`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _core
from .errors import DataError, FilterAbortError

GAP_FLOOR = 1e-4


@dataclass(frozen=True)
class ModelParams:
    """Full parameter vector of the joint VaR/ES system.

    Factor coefficients are length-k arrays (k = number of factor columns,
    1 by default). ``alpha`` is the tail probability the quantile targets.
    """

    var_intercept: float
    var_persistence: float
    shock_linear: float
    shock_squared: float
    factor_to_var: np.ndarray
    gap_intercept: float
    gap_persistence: float
    factor_to_gap: np.ndarray
    meas_intercept: float
    meas_loading: float
    meas_shock_linear: float
    meas_shock_squared: float
    meas_noise_sd: float
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "factor_to_var",
                           np.atleast_1d(np.asarray(self.factor_to_var, dtype=float)))
        object.__setattr__(self, "factor_to_gap",
                           np.atleast_1d(np.asarray(self.factor_to_gap, dtype=float)))
        self.validate()

    def validate(self):
        if not abs(self.var_persistence) < 1.0:
            raise ValueError(f"|var_persistence| must be < 1, got {self.var_persistence}")
        if self.gap_intercept < 0.0:
            raise ValueError(f"gap_intercept must be >= 0, got {self.gap_intercept}")
        if not 0.0 <= self.gap_persistence < 1.0:
            raise ValueError(f"gap_persistence must be in [0, 1), got {self.gap_persistence}")
        if np.any(self.factor_to_gap < 0.0):
            raise ValueError("factor_to_gap must be elementwise >= 0")
        if self.meas_noise_sd <= 0.0:
            raise ValueError(f"meas_noise_sd must be > 0, got {self.meas_noise_sd}")
        if not 0.0 < self.alpha < 0.5:
            raise ValueError(f"alpha must be in (0, 0.5), got {self.alpha}")
        if self.factor_to_var.shape != self.factor_to_gap.shape:
            raise ValueError("factor coefficient vectors must have equal length")

    @property
    def n_factors(self) -> int:
        return self.factor_to_var.shape[0]

    def pack(self) -> np.ndarray:
        """Flatten into the kernel layout (see _core)."""
        return np.concatenate([
            [self.var_intercept, self.var_persistence, self.shock_linear, self.shock_squared,
             self.gap_intercept, self.gap_persistence,
             self.meas_intercept, self.meas_loading,
             self.meas_shock_linear, self.meas_shock_squared],
            self.factor_to_var, self.factor_to_gap,
        ])

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "var_intercept", "var_persistence", "shock_linear", "shock_squared",
            "gap_intercept", "gap_persistence", "meas_intercept", "meas_loading",
            "meas_shock_linear", "meas_shock_squared", "meas_noise_sd", "alpha")}
        d["factor_to_var"] = self.factor_to_var.tolist()
        d["factor_to_gap"] = self.factor_to_gap.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(**d)

    def replace(self, **kw) -> "ModelParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class RiskState:
    """Filter state after observing day t."""

    log_neg_q: float
    gap: float
    shock: float
    factor: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "factor", np.atleast_1d(np.asarray(self.factor, dtype=float)))
        if self.gap < 0.0:
            raise ValueError("gap must be >= 0")

    @property
    def quantile(self) -> float:
        return -math.exp(self.log_neg_q)


@dataclass
class RiskPath:
    """Filtered sequences over an aligned sample."""

    dates: np.ndarray
    var: np.ndarray       # Q_t < 0
    gap: np.ndarray       # gap_t >= 0
    es: np.ndarray        # Q_t - gap_t
    shock: np.ndarray     # r_t / Q_t
    meas_resid: np.ndarray
    log_neg_q: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return len(self.var)

    def last_state(self, factors: np.ndarray) -> RiskState:
        """State at the final date, given that date's factor value(s)."""
        return RiskState(log_neg_q=float(self.log_neg_q[-1]), gap=float(self.gap[-1]),
                         shock=float(self.shock[-1]), factor=np.atleast_1d(factors)[-1])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["date", "Q", "omega", "ES", "eps", "u"])
            for i in range(len(self)):
                wr.writerow([str(self.dates[i]), repr(float(self.var[i])),
                             repr(float(self.gap[i])), repr(float(self.es[i])),
                             repr(float(self.shock[i])), repr(float(self.meas_resid[i]))])


def var_step(prev: RiskState, params: ModelParams, eps_prev: float, f_prev) -> float:
    """One quantile-recursion step; returns log(-Q_t)."""
    f_prev = np.atleast_1d(np.asarray(f_prev, dtype=float))
    return (params.var_intercept
            + params.var_persistence * prev.log_neg_q
            + params.shock_linear * eps_prev
            + params.shock_squared * eps_prev * eps_prev
            + float(params.factor_to_var @ f_prev))


def gap_step(prev_gap: float, params: ModelParams, f_prev) -> float:
    """One gap-recursion step; result is >= 0 under the parameter constraints."""
    if prev_gap < 0.0:
        raise ValueError("prev_gap must be >= 0")
    f_prev = np.atleast_1d(np.asarray(f_prev, dtype=float))
    return (params.gap_intercept
            + params.gap_persistence * prev_gap
            + float(params.factor_to_gap @ np.abs(f_prev)))


def es_from_gap(q: float, gap: float) -> float:
    if q >= 0.0:
        raise ValueError(f"quantile must be negative, got {q}")
    if gap <= 0.0:
        raise ValueError(f"gap must be > 0, got {gap}")
    return q - gap


def measurement_residual(params: ModelParams, x_t: float, q_t: float, eps_t: float) -> float:
    """Residual of the log measurement equation; x_t must be positive."""
    if x_t <= 0.0:
        raise DataError(f"measurement series must be positive, got {x_t}")
    log_neg_q = math.log(-q_t)
    return math.log(x_t) - (params.meas_intercept + params.meas_loading * log_neg_q
                            + params.meas_shock_linear * eps_t
                            + params.meas_shock_squared * eps_t * eps_t)


def default_init(returns: np.ndarray, alpha: float, window: int = 250) -> tuple[float, float]:
    """(Q0, gap0) from the empirical tail of the first `window` observations.

    Q0 is the empirical alpha-quantile, gap0 the distance from Q0 down to the
    mean of the observations at or below it, floored at GAP_FLOOR.
    """
    head = np.asarray(returns, dtype=float)[:window]
    if head.size < 20:
        raise DataError(f"need at least 20 observations to initialize, got {head.size}")
    q0 = float(np.quantile(head, alpha))
    tail = head[head <= q0]
    es0 = float(tail.mean()) if tail.size else q0
    if q0 >= 0.0:
        # left-tail quantile of a return series should be negative; nudge if not
        q0 = -abs(q0) - 1e-8
    gap0 = max(q0 - es0, GAP_FLOOR)
    return q0, gap0


def _as_factor_matrix(factors, T: int) -> np.ndarray:
    f = np.asarray(factors, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if f.shape[0] != T:
        raise DataError(f"factor series length {f.shape[0]} != returns length {T}")
    return np.ascontiguousarray(f)


def filter_path(params: ModelParams, returns, factors, x, init, dates=None) -> RiskPath:
    """Run the full recursion over an aligned sample.

    ``x`` is the positive daily measurement series (realized variance by
    default in the pipeline), ``init`` the (Q0, gap0) pair. Day t uses only
    (t-1)-dated state plus the contemporaneous return and measure for the
    standardized shock and measurement residual.
    """
    r = np.ascontiguousarray(np.asarray(returns, dtype=float))
    T = r.shape[0]
    x = np.asarray(x, dtype=float)
    if x.shape[0] != T:
        raise DataError(f"measurement series length {x.shape[0]} != returns length {T}")
    if np.any(x <= 0.0):
        bad = int(np.argmax(x <= 0.0))
        raise DataError(f"measurement series must be positive (first violation at index {bad})")
    f = _as_factor_matrix(factors, T)
    if f.shape[1] != params.n_factors:
        raise DataError(f"{f.shape[1]} factor columns but {params.n_factors} coefficients")
    q0, gap0 = init
    if not q0 < 0.0:
        raise ValueError(f"Q0 must be < 0, got {q0}")
    if not gap0 > 0.0:
        raise ValueError(f"gap0 must be > 0, got {gap0}")

    logq, gap, eps, u, bad = _core.risk_filter(r, f, np.ascontiguousarray(np.log(x)),
                                               np.ascontiguousarray(params.pack()),
                                               float(q0), float(gap0))
    if bad >= 0:
        raise FilterAbortError(bad, f"log(-Q) or gap left the stable region")
    q = -np.exp(logq)
    if dates is None:
        dates = np.arange(T)
    return RiskPath(dates=np.asarray(dates), var=q, gap=gap, es=q - gap,
                    shock=eps, meas_resid=u, log_neg_q=logq)


def forecast_one_step(last_state: RiskState, params: ModelParams) -> tuple[float, float]:
    """(VaR, ES) for the next day given the state after the last observed day."""
    lq = var_step(last_state, params, last_state.shock, last_state.factor)
    if abs(lq) > 50.0:
        raise FilterAbortError(-1, "one-step forecast diverged")
    q = -math.exp(lq)
    gap = gap_step(last_state.gap, params, last_state.factor)
    return q, es_from_gap(q, gap)


def filter_path_resid_driven(params: ModelParams, returns, x, init) -> RiskPath:
    """Diagnostic variant: the quantile recursion driven by the lagged
    measurement residual instead of the factor (coefficient reuse:
    factor_to_var weights u_{t-1}). Not used in estimation."""
    r = np.asarray(returns, dtype=float)
    x = np.asarray(x, dtype=float)
    T = r.shape[0]
    q0, gap0 = init
    logq = np.empty(T)
    gap = np.empty(T)
    eps = np.empty(T)
    u = np.empty(T)
    lq, w = math.log(-q0), gap0
    coef = float(params.factor_to_var[0])
    gcoef = float(params.factor_to_gap[0])
    for t in range(T):
        if t > 0:
            lq = (params.var_intercept + params.var_persistence * logq[t - 1]
                  + params.shock_linear * eps[t - 1]
                  + params.shock_squared * eps[t - 1] ** 2 + coef * u[t - 1])
            w = params.gap_intercept + params.gap_persistence * gap[t - 1] + gcoef * abs(u[t - 1])
        if not math.isfinite(lq) or abs(lq) > 50.0:
            raise FilterAbortError(t)
        q = -math.exp(lq)
        logq[t], gap[t] = lq, w
        eps[t] = r[t] / q
        u[t] = measurement_residual(params, x[t], q, eps[t])
    q_arr = -np.exp(logq)
    return RiskPath(dates=np.arange(T), var=q_arr, gap=gap, es=q_arr - gap,
                    shock=eps, meas_resid=u, log_neg_q=logq)
