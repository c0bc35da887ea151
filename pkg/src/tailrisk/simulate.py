"""Synthetic data generators for tests, benchmarks and the bundled fixture.

`simulate_risk_system` draws returns whose conditional alpha-quantile and
tail mean follow the model recursions exactly: with probability alpha the
return falls below the quantile by an exponential amount calibrated to the
gap state (so the conditional tail mean equals ES_t), otherwise it sits
above the quantile with a magnitude tied to |Q_t|. The measurement series
follows the log measurement equation with Gaussian noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelParams


@dataclass
class SimulatedSystem:
    returns: np.ndarray
    factors: np.ndarray   # (T, k)
    x: np.ndarray         # positive daily measurement series
    var: np.ndarray       # true Q_t
    es: np.ndarray        # true ES_t
    hits: np.ndarray      # 1{r_t <= Q_t}
    q0: float
    gap0: float


def table_params(alpha: float) -> ModelParams:
    """Reference parameter sets used across the simulation studies."""
    cols = {
        0.01: dict(var_intercept=-0.210, var_persistence=0.965, shock_linear=0.060,
                   shock_squared=0.040, factor_to_var=[0.090], gap_intercept=0.012,
                   gap_persistence=0.920, factor_to_gap=[0.080], meas_intercept=0.020,
                   meas_loading=0.250, meas_shock_linear=0.030, meas_shock_squared=0.015,
                   meas_noise_sd=0.550),
        0.025: dict(var_intercept=-0.185, var_persistence=0.955, shock_linear=0.045,
                    shock_squared=0.030, factor_to_var=[0.070], gap_intercept=0.010,
                    gap_persistence=0.900, factor_to_gap=[0.060], meas_intercept=0.015,
                    meas_loading=0.220, meas_shock_linear=0.020, meas_shock_squared=0.010,
                    meas_noise_sd=0.520),
        0.05: dict(var_intercept=-0.160, var_persistence=0.940, shock_linear=0.030,
                   shock_squared=0.020, factor_to_var=[0.050], gap_intercept=0.008,
                   gap_persistence=0.870, factor_to_gap=[0.045], meas_intercept=0.010,
                   meas_loading=0.200, meas_shock_linear=0.010, meas_shock_squared=0.006,
                   meas_noise_sd=0.500),
    }
    if alpha not in cols:
        raise ValueError(f"no reference column for alpha={alpha}")
    return ModelParams(alpha=alpha, **cols[alpha])


def calibrate_factor_mean(params: ModelParams, tail_ratio: float = 0.1) -> float:
    """Mean level for the simulated factor that balances the two recursions.

    The quantile and gap equations each pin their own scale through their
    intercepts; with a zero-mean factor the stationary gap can exceed the
    stationary |Q|, in which case the squared-shock feedback makes simulated
    paths explosive. Shifting the factor mean lifts the quantile scale until
    gap/|Q| sits near ``tail_ratio``, which keeps standardized shocks small
    and the system stable. Solved by fixed-point iteration.
    """
    alpha = params.alpha
    gamma = float(np.sum(params.factor_to_var))
    psi = float(np.sum(params.factor_to_gap))
    if gamma <= 0.0:
        return 0.0
    rho = tail_ratio
    e_eps = alpha * (1.0 + rho)
    e_eps2 = (1.0 - alpha) * 0.16 + alpha * (1.0 + 2.0 * rho + 2.0 * rho * rho)
    m = 1.0
    for _ in range(200):
        gap_star = (params.gap_intercept + psi * abs(m)) / (1.0 - params.gap_persistence)
        lq_target = math.log(max(gap_star, 1e-8) / rho)
        m_new = (lq_target * (1.0 - params.var_persistence) - params.var_intercept
                 - params.shock_linear * e_eps - params.shock_squared * e_eps2) / gamma
        if abs(m_new - m) < 1e-10:
            m = m_new
            break
        m = 0.5 * m + 0.5 * m_new
    return float(m)


def stationary_start(params: ModelParams, factor_mean: float) -> tuple[float, float]:
    """Approximate stationary (Q, gap) pair for given factor level."""
    psi = float(np.sum(params.factor_to_gap))
    gamma = float(np.sum(params.factor_to_var))
    alpha = params.alpha
    gap_star = (params.gap_intercept + psi * abs(factor_mean)) / (1.0 - params.gap_persistence)
    e_eps = alpha
    e_eps2 = (1.0 - alpha) * 0.16 + alpha * 1.2
    lq_star = (params.var_intercept + params.shock_linear * e_eps
               + params.shock_squared * e_eps2 + gamma * factor_mean) \
        / (1.0 - params.var_persistence)
    return -math.exp(lq_star), max(gap_star, 1e-4)


def simulate_risk_system(params: ModelParams, T: int, seed, burn: int = 200,
                         factor_rho: float = 0.6,
                         factor_mean: float | None = None) -> SimulatedSystem:
    rng = np.random.default_rng(seed)
    k = params.n_factors
    n = T + burn
    alpha = params.alpha

    if factor_mean is None:
        factor_mean = calibrate_factor_mean(params)
    q_init, gap_init = stationary_start(params, factor_mean)

    # AR(1) factor, unit marginal variance around factor_mean
    f = np.empty((n, k))
    f[0] = factor_mean + rng.standard_normal(k)
    innov_sd = math.sqrt(1.0 - factor_rho ** 2)
    for t in range(1, n):
        f[t] = factor_mean + factor_rho * (f[t - 1] - factor_mean) \
            + innov_sd * rng.standard_normal(k)

    tail_draw = rng.random(n) < alpha
    expo = rng.standard_exponential(n)
    body = np.abs(rng.normal(1.0, 0.4, size=n))
    body = np.minimum(body, 2.5)
    meas_noise = rng.standard_normal(n) * params.meas_noise_sd

    r = np.empty(n)
    x = np.empty(n)
    q_path = np.empty(n)
    es_path = np.empty(n)
    lq, gap, eps = math.log(-q_init), gap_init, 0.0
    for t in range(n):
        if t > 0:
            lq = (params.var_intercept + params.var_persistence * lq
                  + params.shock_linear * eps + params.shock_squared * eps * eps
                  + float(params.factor_to_var @ f[t - 1]))
            gap = (params.gap_intercept + params.gap_persistence * gap
                   + float(params.factor_to_gap @ np.abs(f[t - 1])))
        q = -math.exp(lq)
        es = q - gap
        if tail_draw[t]:
            r[t] = q - gap * expo[t]     # conditional mean below Q equals ES
        else:
            r[t] = q * (1.0 - body[t])   # above Q, can cross zero
        eps = r[t] / q
        x[t] = math.exp(params.meas_intercept + params.meas_loading * lq
                        + params.meas_shock_linear * eps
                        + params.meas_shock_squared * eps * eps + meas_noise[t])
        q_path[t], es_path[t] = q, es

    sl = slice(burn, n)
    return SimulatedSystem(
        returns=r[sl].copy(), factors=f[sl].copy(), x=x[sl].copy(),
        var=q_path[sl].copy(), es=es_path[sl].copy(),
        hits=(r[sl] <= q_path[sl]).astype(int),
        q0=float(q_path[burn]), gap0=float(q_path[burn] - es_path[burn]),
    )


def simulate_garch_returns(T: int, seed, omega: float = 0.05, arch: float = 0.08,
                           garch: float = 0.90, dist: str = "normal",
                           nu: float = 6.0, asym: float = 0.0,
                           burn: int = 500) -> np.ndarray:
    """Returns from a (possibly asymmetric) GARCH(1,1) with chosen innovations."""
    rng = np.random.default_rng(seed)
    n = T + burn
    if dist == "normal":
        z = rng.standard_normal(n)
    elif dist == "student_t":
        z = rng.standard_t(nu, size=n) * math.sqrt((nu - 2.0) / nu)
    else:
        raise ValueError(f"unknown dist {dist!r}")
    uncond = omega / (1.0 - arch - garch - asym / 2.0)
    s2 = uncond
    out = np.empty(n)
    for t in range(n):
        if t > 0:
            e = out[t - 1]
            s2 = omega + arch * e * e + (asym * e * e if e < 0 else 0.0) + garch * s2
        out[t] = math.sqrt(s2) * z[t]
    return out[burn:]


def simulate_intraday_csv(path, days: int, n_per_day: int, seed,
                          start: str = "2020-01-01", price0: float = 100.0,
                          daily_vol: float = 0.03) -> None:
    """Write a deterministic intraday price fixture (`timestamp,price`).

    Daily variance follows a persistent GARCH-style path so the derived
    realized-measure panel has realistic clustering; intraday increments are
    Gaussian with occasional jumps.
    """
    rng = np.random.default_rng(seed)
    base = np.datetime64(start + "T00:00:00")
    day_step = np.timedelta64(1, "D")
    sec = np.timedelta64(1, "s")
    spacing = 86400 // (n_per_day + 1)

    h = daily_vol ** 2
    logp = math.log(price0)
    with open(path, "w") as fh:
        fh.write("timestamp,price\n")
        for d in range(days):
            z = rng.standard_normal()
            h = 0.2 * daily_vol ** 2 + 0.75 * h + 0.05 * h * (z * z)
            sd_i = math.sqrt(h / n_per_day)
            incs = rng.standard_normal(n_per_day) * sd_i
            if rng.random() < 0.05:  # occasional jump
                incs[rng.integers(n_per_day)] += rng.choice([-1.0, 1.0]) * 4 * sd_i
            t0 = base + d * day_step
            fh.write(f"{t0 + sec * spacing},{math.exp(logp):.10f}\n")
            for i in range(n_per_day):
                logp += incs[i]
                fh.write(f"{t0 + sec * spacing * (i + 2)},{math.exp(logp):.10f}\n")
