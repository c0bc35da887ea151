"""Joint quasi-likelihood estimation and rolling out-of-sample forecasting.

The objective combines the asymmetric-Laplace quasi-likelihood of the
return equation with the Gaussian likelihood of the measurement equation,
oriented so that smaller is better. Constraints are enforced through
smooth bijections (tanh / sigmoid / softplus), so the derivative-free
simplex search never proposes an invalid parameter vector; a diverging
recursion still maps to a +inf objective.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from . import _core
from .errors import DataError, EstimationError
from .model import ModelParams, RiskPath, RiskState, default_init, filter_path, forecast_one_step


# ---------------------------------------------------------------------------
# likelihood components

def al_nll(path: RiskPath, returns, alpha: float) -> float:
    """Asymmetric-Laplace quasi-likelihood term of the return equation.

    Sum over t of  log((alpha-1)/ES_t) + (r_t - Q_t)(alpha - 1{r_t <= Q_t})
    / (alpha * ES_t).  Requires every ES_t < 0; otherwise returns +inf so the
    optimizer rejects the parameter point. The estimation objective enters
    with the opposite sign (see :func:`joint_objective`).
    """
    r = np.asarray(returns, dtype=float)
    es = np.asarray(path.es, dtype=float)
    q = np.asarray(path.var, dtype=float)
    if np.any(es >= 0.0):
        return float("inf")
    hit = (r <= q).astype(float)
    terms = np.log((alpha - 1.0) / es) + (r - q) * (alpha - hit) / (alpha * es)
    total = float(np.sum(terms))
    return total if math.isfinite(total) else float("inf")


def meas_nll(u, sigma_u: float) -> float:
    """Gaussian negative log-likelihood of the measurement residuals."""
    if sigma_u <= 0.0:
        return float("inf")
    u = np.asarray(u, dtype=float)
    return float(0.5 * np.sum(u * u / (sigma_u * sigma_u)
                              + math.log(2.0 * math.pi * sigma_u * sigma_u)))


def joint_objective(params: ModelParams, returns, factors, x, init=None):
    """Minimized criterion: measurement NLL minus the AL quasi-likelihood.

    Returns (objective, return_component, measurement_component); the
    objective is +inf whenever the recursion diverges or ES crosses zero.
    """
    r = np.ascontiguousarray(np.asarray(returns, dtype=float))
    if init is None:
        init = default_init(r, params.alpha)
    f = np.asarray(factors, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0):
        return float("inf"), float("nan"), float("nan")
    obj, l_ret, l_meas = _core.risk_joint_nll(
        r, np.ascontiguousarray(f), np.ascontiguousarray(np.log(x)),
        np.ascontiguousarray(params.pack()), float(init[0]), float(init[1]),
        params.alpha, params.meas_noise_sd)
    return obj, l_ret, l_meas


# ---------------------------------------------------------------------------
# constraint transforms

def _softplus(x):
    return np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))


def _softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return np.where(y > 30.0, y, np.log(np.expm1(np.maximum(y, 1e-12))))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def _logit(p):
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return np.log(p / (1.0 - p))


def to_unconstrained(params: ModelParams) -> np.ndarray:
    k = params.n_factors
    v = np.empty(11 + 2 * k)
    v[0] = params.var_intercept
    v[1] = np.arctanh(np.clip(params.var_persistence, -1 + 1e-12, 1 - 1e-12))
    v[2] = params.shock_linear
    v[3] = params.shock_squared
    v[4] = _softplus_inv(max(params.gap_intercept, 1e-12))
    v[5] = _logit(params.gap_persistence)
    v[6] = params.meas_intercept
    v[7] = params.meas_loading
    v[8] = params.meas_shock_linear
    v[9] = params.meas_shock_squared
    v[10:10 + k] = params.factor_to_var
    v[10 + k:10 + 2 * k] = _softplus_inv(np.maximum(params.factor_to_gap, 1e-12))
    v[10 + 2 * k] = _softplus_inv(params.meas_noise_sd)
    return v


_OPEN = 1.0 - 1e-12  # keep mapped values inside the open constraint sets


def from_unconstrained(v: np.ndarray, alpha: float, k: int = 1) -> ModelParams:
    v = np.asarray(v, dtype=float)
    return ModelParams(
        var_intercept=float(v[0]),
        var_persistence=float(np.clip(np.tanh(v[1]), -_OPEN, _OPEN)),
        shock_linear=float(v[2]),
        shock_squared=float(v[3]),
        gap_intercept=float(_softplus(v[4])),
        gap_persistence=float(min(_sigmoid(v[5]), _OPEN)),
        meas_intercept=float(v[6]),
        meas_loading=float(v[7]),
        meas_shock_linear=float(v[8]),
        meas_shock_squared=float(v[9]),
        factor_to_var=v[10:10 + k].copy(),
        factor_to_gap=_softplus(v[10 + k:10 + 2 * k]),
        meas_noise_sd=float(max(_softplus(v[10 + 2 * k]), 1e-10)),
        alpha=alpha,
    )


# ---------------------------------------------------------------------------
# fitting

START_RANGES = {
    "var_intercept": (-0.30, 0.10),
    "var_persistence": (0.85, 0.99),
    "shock_linear": (-0.05, 0.10),
    "shock_squared": (0.00, 0.08),
    "gap_intercept": (0.002, 0.05),
    "gap_persistence": (0.80, 0.97),
    "meas_intercept": (-0.50, 0.50),
    "meas_loading": (0.05, 0.60),
    "meas_shock_linear": (-0.05, 0.10),
    "meas_shock_squared": (0.00, 0.05),
    "factor_to_var": (0.00, 0.15),
    "factor_to_gap": (0.00, 0.12),
    "meas_noise_sd": (0.20, 1.00),
}

_CENTER = dict(var_intercept=-0.15, var_persistence=0.94, shock_linear=0.03,
               shock_squared=0.02, gap_intercept=0.01, gap_persistence=0.90,
               meas_intercept=0.0, meas_loading=0.25, meas_shock_linear=0.02,
               meas_shock_squared=0.01, factor_to_var=0.05, factor_to_gap=0.05,
               meas_noise_sd=0.5)

_SCALAR_ORDER = ["var_intercept", "var_persistence", "shock_linear", "shock_squared",
                 "gap_intercept", "gap_persistence", "meas_intercept", "meas_loading",
                 "meas_shock_linear", "meas_shock_squared"]


@dataclass
class FitConfig:
    n_starts: int = 12
    max_evals: int = 4000          # simplex budget per start (incl. polish)
    tol: float = 1e-7              # convergence tolerance on the objective
    seed: int = 0
    workers: int = 0               # 0 = auto (threads only on the compiled backend)
    meas_weight: float = 1.0       # weight on the measurement component
    ranges: dict = field(default_factory=lambda: dict(START_RANGES))

    def __post_init__(self):
        if self.n_starts < 1 or self.max_evals < 10:
            raise ValueError("n_starts and max_evals must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.meas_weight < 0:
            raise ValueError("meas_weight must be >= 0")


@dataclass
class FittedModel:
    params: ModelParams
    objective: float
    l_return: float
    l_meas: float
    init: tuple
    start_objectives: list
    best_start: int
    n_evals: int
    converged: bool
    insample_path: RiskPath | None = None
    window_id: str = ""
    seed: int = 0

    def report(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "objective": self.objective,
            "return_component": self.l_return,
            "measurement_component": self.l_meas,
            "init_var": self.init[0],
            "init_gap": self.init[1],
            "start_objectives": self.start_objectives,
            "best_start": self.best_start,
            "n_evals": self.n_evals,
            "converged": self.converged,
            "window_id": self.window_id,
            "seed": self.seed,
        }


def _draw_starts(config: FitConfig, alpha: float, k: int, rng_seed) -> list[ModelParams]:
    names = _SCALAR_ORDER + ["factor_to_var"] * k + ["factor_to_gap"] * k + ["meas_noise_sd"]
    lows = np.array([config.ranges[n][0] for n in names])
    highs = np.array([config.ranges[n][1] for n in names])
    starts = []
    center_vals = [_CENTER[n] for n in names]
    starts.append(_natural_to_params(np.array(center_vals), alpha, k))
    if config.n_starts > 1:
        sampler = qmc.LatinHypercube(d=len(names), seed=rng_seed)
        u = sampler.random(config.n_starts - 1)
        for row in lows + u * (highs - lows):
            starts.append(_natural_to_params(row, alpha, k))
    return starts


def _natural_to_params(vals: np.ndarray, alpha: float, k: int) -> ModelParams:
    s = dict(zip(_SCALAR_ORDER, vals[:10]))
    return ModelParams(alpha=alpha, factor_to_var=vals[10:10 + k],
                       factor_to_gap=np.maximum(vals[10 + k:10 + 2 * k], 1e-6),
                       meas_noise_sd=float(vals[10 + 2 * k]), **s)


def fit_arrays(returns, factors, x, alpha: float, config: FitConfig | None = None,
               init=None, starts: list[ModelParams] | None = None,
               window_id: str = "", with_path: bool = True) -> FittedModel:
    """Best-of-multistart simplex minimization of the joint objective."""
    config = config or FitConfig()
    r = np.ascontiguousarray(np.asarray(returns, dtype=float))
    if r.size < 250:
        raise DataError(f"need at least 250 in-sample observations, got {r.size}")
    f = np.asarray(factors, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    f = np.ascontiguousarray(f)
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0) or not np.all(np.isfinite(x)):
        raise DataError("measurement series must be positive and finite")
    logx = np.ascontiguousarray(np.log(x))
    k = f.shape[1]
    if init is None:
        init = default_init(r, alpha)
    q0, gap0 = float(init[0]), float(init[1])

    if starts is None:
        starts = _draw_starts(config, alpha, k, config.seed)

    w = config.meas_weight

    def objective_u(v):
        p = from_unconstrained(v, alpha, k)
        obj, l_ret, l_meas = _core.risk_joint_nll(
            r, f, logx, np.ascontiguousarray(p.pack()), q0, gap0, alpha,
            p.meas_noise_sd)
        if w == 1.0 or not math.isfinite(obj):
            return obj
        return l_ret + w * l_meas

    def run_one(start_params):
        v0 = to_unconstrained(start_params)
        budget = config.max_evals
        res = minimize(objective_u, v0, method="Nelder-Mead",
                       options={"maxfev": max(budget * 2 // 3, 10), "fatol": config.tol,
                                "xatol": 1e-6, "adaptive": True})
        res2 = minimize(objective_u, res.x, method="Nelder-Mead",
                        options={"maxfev": max(budget // 3, 10), "fatol": config.tol,
                                 "xatol": 1e-6, "adaptive": True})
        best = res2 if res2.fun <= res.fun else res
        evals = int(res.nfev + res2.nfev)
        return float(best.fun), best.x, evals, bool(res2.success or res.success)

    n_workers = config.workers or min(len(starts), 8)
    if _core.BACKEND == "compiled" and n_workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run_one, starts))
    else:
        results = [run_one(s) for s in starts]

    start_objs = [res[0] for res in results]
    finite = [i for i, o in enumerate(start_objs) if math.isfinite(o)]
    if not finite:
        raise EstimationError(
            f"all {len(starts)} starts diverged (window {window_id or 'full'})")
    best_i = min(finite, key=lambda i: (start_objs[i], i))
    obj, v_hat, _, conv = results[best_i]
    params_hat = from_unconstrained(v_hat, alpha, k)
    _, l_ret, l_meas = joint_objective(params_hat, r, f, x, init=(q0, gap0))

    path = None
    if with_path:
        path = filter_path(params_hat, r, f, x, (q0, gap0))
    return FittedModel(params=params_hat, objective=obj, l_return=l_ret, l_meas=l_meas,
                       init=(q0, gap0), start_objectives=start_objs, best_start=best_i,
                       n_evals=sum(res[2] for res in results), converged=conv,
                       insample_path=path, window_id=window_id, seed=config.seed)


def fit(dataset, alpha: float, config: FitConfig | None = None,
        x_column: str = "RV") -> FittedModel:
    """Fit on the in-sample block of an aligned dataset."""
    if dataset.factors is None:
        raise DataError("dataset has no factor series; run factor extraction first")
    sl = slice(0, dataset.split)
    return fit_arrays(dataset.returns.values[sl], dataset.factors.values[sl],
                      dataset.measures.column(x_column)[sl], alpha, config,
                      window_id=f"insample[0:{dataset.split}]")


# ---------------------------------------------------------------------------
# rolling forecasts

@dataclass
class ForecastSeries:
    dates: np.ndarray
    alpha: float
    var: np.ndarray
    es: np.ndarray
    model_id: str
    incidents: list = field(default_factory=list)

    def __len__(self):
        return len(self.var)

    def write_csv(self, path, append: bool = False):
        mode = "a" if append else "w"
        with open(path, mode, newline="") as fh:
            wr = csv.writer(fh)
            if not append:
                wr.writerow(["date", "alpha", "VaR", "ES", "model_id"])
            for i in range(len(self)):
                wr.writerow([str(self.dates[i]), repr(float(self.alpha)),
                             repr(float(self.var[i])), repr(float(self.es[i])),
                             self.model_id])


@dataclass
class RollingPolicy:
    window: str = "fixed"        # "fixed" or "expanding"
    refit_every: int = 25
    refit_starts: int = 2        # warm start + fresh draws on re-estimation

    def __post_init__(self):
        if self.window not in ("fixed", "expanding"):
            raise ValueError(f"unknown window policy {self.window!r}")
        if self.refit_every < 1:
            raise ValueError("refit_every must be >= 1")


def rolling_forecast_arrays(returns, factors, x, split: int, alpha: float,
                            config: FitConfig | None = None,
                            policy: RollingPolicy | None = None,
                            dates=None, model_id: str = "FACTOR-ES-CAVIAR") -> ForecastSeries:
    """One-step-ahead VaR/ES over the out-of-sample block.

    Parameters are re-estimated every ``policy.refit_every`` days on the
    rolling window; between refits they are frozen and the filter state is
    advanced daily with realized returns. A failed refit keeps the previous
    parameters and records the incident.
    """
    config = config or FitConfig()
    policy = policy or RollingPolicy()
    r = np.asarray(returns, dtype=float)
    f = np.asarray(factors, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    x = np.asarray(x, dtype=float)
    T = r.size
    if not 250 <= split < T:
        raise DataError(f"split {split} leaves no valid in/out-of-sample blocks (T={T})")
    if dates is None:
        dates = np.arange(T)

    incidents = []
    fitted = None
    state: RiskState | None = None
    var_out = np.empty(T - split)
    es_out = np.empty(T - split)

    refit_cfg = FitConfig(n_starts=policy.refit_starts, max_evals=config.max_evals,
                          tol=config.tol, seed=config.seed, workers=config.workers,
                          meas_weight=config.meas_weight, ranges=config.ranges)

    for j, t in enumerate(range(split, T)):
        if j % policy.refit_every == 0:
            w_start = 0 if policy.window == "expanding" else t - split
            wid = f"[{w_start}:{t}]"
            try:
                if fitted is None:
                    fitted = fit_arrays(r[w_start:t], f[w_start:t], x[w_start:t], alpha,
                                        config, window_id=wid, with_path=False)
                else:
                    warm = [fitted.params] + _draw_starts(
                        refit_cfg, alpha, f.shape[1], refit_cfg.seed + j)[1:policy.refit_starts]
                    fitted = fit_arrays(r[w_start:t], f[w_start:t], x[w_start:t], alpha,
                                        refit_cfg, starts=warm, window_id=wid,
                                        with_path=False)
            except EstimationError as exc:
                if fitted is None:
                    raise
                incidents.append(f"refit at {dates[t]} failed, kept previous params: {exc}")
            # refresh filter state under the (possibly new) parameters
            init = default_init(r[w_start:t], alpha)
            path = filter_path(fitted.params, r[w_start:t], f[w_start:t], x[w_start:t], init)
            state = path.last_state(f[w_start:t])

        q_next, es_next = forecast_one_step(state, fitted.params)
        var_out[j] = q_next
        es_out[j] = es_next
        # advance the state with the realized return and factor of day t
        gap_next = q_next - es_next
        state = RiskState(log_neg_q=math.log(-q_next), gap=gap_next,
                          shock=r[t] / q_next, factor=f[t])

    return ForecastSeries(dates=np.asarray(dates)[split:], alpha=alpha, var=var_out,
                          es=es_out, model_id=model_id, incidents=incidents)


def rolling_forecast(dataset, alpha: float, config: FitConfig | None = None,
                     policy: RollingPolicy | None = None,
                     x_column: str = "RV") -> ForecastSeries:
    if dataset.factors is None:
        raise DataError("dataset has no factor series; run factor extraction first")
    return rolling_forecast_arrays(dataset.returns.values, dataset.factors.values,
                                   dataset.measures.column(x_column), dataset.split,
                                   alpha, config, policy, dates=dataset.returns.dates)
