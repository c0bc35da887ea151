"""Benchmark VaR/ES forecasters.

Three routes on top of a GARCH-family volatility fit: parametric
distribution constants, filtered historical simulation of standardized
residuals, and a generalized-Pareto tail fitted to standardized losses
(peaks over threshold). Each emits the same ForecastSeries as the main
model so the evaluation layer treats all models identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import minimize

from . import _core
from .errors import DataError, EstimationError
from .estimate import ForecastSeries
from .model import GAP_FLOOR

FAMILIES = ("garch11", "gjr", "egarch")
DISTS = ("normal", "student_t")

_FAMILY_CODE = {"garch11": 0, "gjr": 1, "egarch": 2}
_DIST_CODE = {"normal": 0, "student_t": 1}


@dataclass(frozen=True)
class GarchSpec:
    family: str = "garch11"
    dist: str = "normal"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown family {self.family!r}; choices {FAMILIES}")
        if self.dist not in DISTS:
            raise DataError(f"unknown dist {self.dist!r}; choices {DISTS}")

    @property
    def tag(self) -> str:
        fam = {"garch11": "GARCH", "gjr": "GJR", "egarch": "EGARCH"}[self.family]
        return f"{fam}-{'N' if self.dist == 'normal' else 'T'}"


@dataclass
class GarchFit:
    spec: GarchSpec
    params: dict                 # family coefficients (+ nu for student_t)
    mean: float
    sigma2: np.ndarray           # conditional variance path over the sample
    resid: np.ndarray            # standardized residuals z_t
    nll: float
    s2_init: float

    def mean_abs_z(self) -> float:
        if self.spec.dist == "normal":
            return math.sqrt(2.0 / math.pi)
        nu = self.params["nu"]
        return (2.0 * math.sqrt(nu - 2.0) * math.gamma((nu + 1.0) / 2.0)
                / (math.sqrt(math.pi) * (nu - 1.0) * math.gamma(nu / 2.0)))

    def packed(self) -> np.ndarray:
        p = self.params
        if self.spec.family == "garch11":
            return np.array([p["omega"], p["arch"], p["garch"]])
        if self.spec.family == "gjr":
            return np.array([p["omega"], p["arch"], p["asym"], p["garch"]])
        return np.array([p["omega"], p["garch"], p["sign"], p["magnitude"],
                         self.mean_abs_z()])

    def forecast_sigma2(self, eps_last: float, s2_last: float) -> float:
        """One-step variance forecast from the last shock and variance."""
        p = self.params
        if self.spec.family == "garch11":
            return p["omega"] + p["arch"] * eps_last ** 2 + p["garch"] * s2_last
        if self.spec.family == "gjr":
            return (p["omega"] + p["arch"] * eps_last ** 2
                    + (p["asym"] * eps_last ** 2 if eps_last < 0 else 0.0)
                    + p["garch"] * s2_last)
        z = eps_last / math.sqrt(s2_last)
        return math.exp(p["omega"] + p["garch"] * math.log(s2_last)
                        + p["sign"] * z + p["magnitude"] * (abs(z) - self.mean_abs_z()))


def _sigmoid(x: float) -> float:
    x = max(min(x, 60.0), -60.0)
    return 1.0 / (1.0 + math.exp(-x))


def _mean_abs_z(dist: str, nu: float) -> float:
    if dist == "normal":
        return math.sqrt(2.0 / math.pi)
    return (2.0 * math.sqrt(nu - 2.0) * math.gamma((nu + 1.0) / 2.0)
            / (math.sqrt(math.pi) * (nu - 1.0) * math.gamma(nu / 2.0)))


def _unpack(u: np.ndarray, family: str, dist: str, s2_init: float):
    """Unconstrained optimizer vector -> (kernel params, nu)."""
    omega = math.exp(max(min(u[0], 50.0), -50.0))
    if family == "garch11":
        pers = 0.999 * _sigmoid(u[1])
        share = _sigmoid(u[2])
        core = [omega, pers * share, pers * (1.0 - share)]
        j = 3
    elif family == "gjr":
        # total = arch + asym/2 + garch < 1; asym may be negative as long as
        # arch + asym stays positive (v in (0, 1.5) below)
        total = 0.999 * _sigmoid(u[1])
        s = total * _sigmoid(u[2])          # arch + asym/2
        v = 1.5 * _sigmoid(u[3])
        arch = s * v
        asym = 2.0 * s * (1.0 - v)
        core = [omega, arch, asym, total - s]
        j = 4
    else:  # egarch
        beta = 0.999 * math.tanh(u[1])
        core = [u[0], beta, u[2], u[3], 0.0]  # mean_abs_z patched below
        j = 4
    nu = 2.05 + math.log1p(math.exp(min(u[j], 30.0))) if dist == "student_t" else 0.0
    if family == "egarch":
        core[4] = _mean_abs_z(dist, nu if dist == "student_t" else 0.0)
    return np.array(core), nu


def _starts_for(family: str, dist: str, var0: float) -> list[np.ndarray]:
    base = []
    if family == "garch11":
        for pers, share in ((0.97, 0.08), (0.90, 0.10), (0.99, 0.03), (0.80, 0.25)):
            w = var0 * (1 - pers)
            base.append([math.log(max(w, 1e-12)), math.log(pers / (0.999 - pers)),
                         math.log(share / (1 - share))])
    elif family == "gjr":
        for total, a, d in ((0.97, 0.06, 0.04), (0.90, 0.08, 0.08), (0.99, 0.02, 0.02)):
            w = var0 * (1 - total)
            s = a + d / 2.0
            v = a / s
            base.append([math.log(max(w, 1e-12)), math.log(total / (0.999 - total)),
                         math.log((s / total) / (1 - s / total)),
                         math.log((v / 1.5) / (1 - v / 1.5))])
    else:
        for beta, g, th in ((0.97, -0.05, 0.15), (0.90, 0.0, 0.25), (0.98, -0.1, 0.1)):
            base.append([math.log(var0) * (1 - beta), math.atanh(beta / 0.999), g, th])
    if dist == "student_t":
        base = [b + [math.log(math.expm1(8.0 - 2.05))] for b in base]
    return [np.array(b) for b in base]


def fit_garch(returns, spec: GarchSpec, max_evals: int = 4000) -> GarchFit:
    """Constant-mean maximum likelihood fit; recursion seeded at sample variance."""
    r = np.ascontiguousarray(np.asarray(returns, dtype=float))
    if r.size < 250:
        raise DataError(f"need >= 250 observations to fit, got {r.size}")
    mu = float(r.mean())
    eps = r - mu
    var0 = float(eps.var())
    if var0 <= 0.0:
        raise EstimationError("degenerate (constant) return series")
    fam = _FAMILY_CODE[spec.family]
    dst = _DIST_CODE[spec.dist]

    def nll_u(u):
        p, nu = _unpack(u, spec.family, spec.dist, var0)
        return _core.garch_nll(eps, np.ascontiguousarray(p), fam, var0, dst, nu)

    best = (float("inf"), None)
    for u0 in _starts_for(spec.family, spec.dist, var0):
        res = minimize(nll_u, u0, method="Nelder-Mead",
                       options={"maxfev": max_evals * 2 // 3, "fatol": 1e-8,
                                "xatol": 1e-6, "adaptive": True})
        res = minimize(nll_u, res.x, method="Nelder-Mead",
                       options={"maxfev": max_evals // 3, "fatol": 1e-8, "xatol": 1e-6,
                                "adaptive": True})
        if res.fun < best[0]:
            best = (float(res.fun), res.x.copy())
    if best[1] is None or not math.isfinite(best[0]):
        raise EstimationError(f"{spec.tag}: no start converged (last objective {best[0]})")

    p, nu = _unpack(best[1], spec.family, spec.dist, var0)
    sigma2 = _core.garch_sigma2(eps, np.ascontiguousarray(p), fam, var0)
    if np.any(~np.isfinite(sigma2)) or np.any(sigma2 <= 0.0):
        raise EstimationError(f"{spec.tag}: fitted variance path not positive")
    if spec.family == "garch11":
        params = {"omega": p[0], "arch": p[1], "garch": p[2]}
    elif spec.family == "gjr":
        params = {"omega": p[0], "arch": p[1], "asym": p[2], "garch": p[3]}
    else:
        params = {"omega": p[0], "garch": p[1], "sign": p[2], "magnitude": p[3]}
    if spec.dist == "student_t":
        params["nu"] = nu
    return GarchFit(spec=spec, params=params, mean=mu, sigma2=sigma2,
                    resid=eps / np.sqrt(sigma2), nll=best[0], s2_init=var0)


# ---------------------------------------------------------------------------
# distribution constants and the three forecast routes

def dist_constants(dist: str, alpha: float, nu: float = 0.0) -> tuple[float, float]:
    """(quantile, tail-expectation) multipliers of a unit-variance innovation."""
    if not 0.0 < alpha < 0.5:
        raise DataError(f"alpha must be in (0, 0.5), got {alpha}")
    if dist == "normal":
        q = stats.norm.ppf(alpha)
        return float(q), float(-stats.norm.pdf(q) / alpha)
    if dist == "student_t":
        if nu <= 2.0:
            raise DataError(f"student_t needs nu > 2, got {nu}")
        scale = math.sqrt((nu - 2.0) / nu)
        t_a = stats.t.ppf(alpha, nu)
        es_std = -stats.t.pdf(t_a, nu) / alpha * (nu + t_a * t_a) / (nu - 1.0)
        return float(t_a * scale), float(es_std * scale)
    raise DataError(f"unknown dist {dist!r}")


def parametric_var_es(fit: GarchFit, alpha: float, sigma=None):
    """VaR_t = mean + sigma_t q_alpha, ES_t = mean + sigma_t e_alpha."""
    q_mult, e_mult = dist_constants(fit.spec.dist, alpha, fit.params.get("nu", 0.0))
    s = np.sqrt(fit.sigma2 if sigma is None else np.asarray(sigma, dtype=float) ** 2)
    return fit.mean + s * q_mult, fit.mean + s * e_mult


@dataclass
class FhsTail:
    """Empirical tail of standardized residuals, frozen at fit time."""

    q_mult: float
    e_mult: float

    @classmethod
    def from_fit(cls, fit: GarchFit, alpha: float, window: int | None = None) -> "FhsTail":
        z = fit.resid if window is None else fit.resid[-window:]
        n = z.size
        if n < 250:
            raise DataError(f"need >= 250 standardized residuals, got {n}")
        if alpha * n < 10:
            raise DataError(
                f"only {alpha * n:.1f} expected tail points; enlarge the window")
        if float(z.std()) == 0.0:
            raise DataError("degenerate standardized residuals")
        q = float(np.quantile(z, alpha))
        tail = z[z <= q]
        if tail.size < 10:
            raise DataError(f"only {tail.size} tail observations; enlarge the window")
        return cls(q_mult=q, e_mult=float(tail.mean()))


def fhs_var_es(fit: GarchFit, alpha: float, window: int | None = None, sigma=None):
    """Filtered historical simulation: scale empirical z-tail by sigma_t."""
    tail = FhsTail.from_fit(fit, alpha, window)
    s = np.sqrt(fit.sigma2 if sigma is None else np.asarray(sigma, dtype=float) ** 2)
    return s * tail.q_mult, s * tail.e_mult


@dataclass
class EvtTail:
    """Generalized-Pareto tail of standardized losses above a threshold."""

    threshold: float
    shape: float
    scale: float
    n_exceed: int
    n_total: int

    @classmethod
    def from_residuals(cls, resid, tail_fraction: float = 0.10) -> "EvtTail":
        losses = -np.asarray(resid, dtype=float)
        n = losses.size
        u = float(np.quantile(losses, 1.0 - tail_fraction))
        exceed = losses[losses > u] - u
        if exceed.size < 30:
            raise DataError(f"only {exceed.size} exceedances above threshold; need >= 30")
        shape, _, scale = stats.genpareto.fit(exceed, floc=0.0)
        if shape >= 1.0:
            raise EstimationError(f"tail shape {shape:.3f} >= 1 implies an infinite mean")
        if scale <= 0.0:
            raise EstimationError(f"non-positive tail scale {scale:.3g}")
        return cls(threshold=u, shape=float(shape), scale=float(scale),
                   n_exceed=int(exceed.size), n_total=int(n))

    @classmethod
    def from_fit(cls, fit: GarchFit, tail_fraction: float = 0.10) -> "EvtTail":
        return cls.from_residuals(fit.resid, tail_fraction)

    def loss_quantile(self, alpha: float) -> float:
        """Standardized loss exceeded with probability alpha."""
        frac = self.n_exceed / self.n_total
        if alpha > frac:
            raise DataError(f"alpha {alpha} above the modeled tail fraction {frac:.3f}")
        xi, b, u = self.shape, self.scale, self.threshold
        if abs(xi) < 1e-9:
            return u + b * math.log(frac / alpha)
        return u + (b / xi) * ((alpha / frac) ** (-xi) - 1.0)

    def loss_es(self, alpha: float) -> float:
        xi, b, u = self.shape, self.scale, self.threshold
        z = self.loss_quantile(alpha)
        return z / (1.0 - xi) + (b - xi * u) / (1.0 - xi)


def evt_var_es(fit: GarchFit, alpha: float, tail_fraction: float = 0.10, sigma=None):
    """Peaks-over-threshold tail on standardized losses, rescaled by sigma_t."""
    tail = EvtTail.from_fit(fit, tail_fraction)
    z_a = tail.loss_quantile(alpha)
    es_m = tail.loss_es(alpha)
    s = np.sqrt(fit.sigma2 if sigma is None else np.asarray(sigma, dtype=float) ** 2)
    return -s * z_a, -s * es_m


# ---------------------------------------------------------------------------
# rolling out-of-sample wrapper shared by the CLI roster

def baseline_model_id(route: str, spec: GarchSpec) -> str:
    if route == "parametric":
        return f"P-{spec.tag}"
    if route == "fhs":
        return f"H-{spec.tag}"
    if route == "evt":
        return f"EVT-{spec.family.upper().replace('GARCH11', 'GARCH')}"
    raise DataError(f"unknown route {route!r}")


def rolling_baseline_forecast(returns, split: int, alpha: float, route: str,
                              spec: GarchSpec, refit_every: int = 25,
                              window: str = "fixed", dates=None,
                              tail_fraction: float = 0.10) -> ForecastSeries:
    """One-step-ahead baseline forecasts over the out-of-sample block."""
    r = np.asarray(returns, dtype=float)
    T = r.size
    if not 250 <= split < T:
        raise DataError(f"split {split} invalid for series of length {T}")
    if dates is None:
        dates = np.arange(T)
    model_id = baseline_model_id(route, spec)

    var_out = np.empty(T - split)
    es_out = np.empty(T - split)
    incidents = []
    fit = None
    mults = None      # (q_mult, e_mult) on the standardized scale
    s2 = eps_last = None

    for j, t in enumerate(range(split, T)):
        if j % refit_every == 0:
            w_start = 0 if window == "expanding" else t - split
            try:
                new_fit = fit_garch(r[w_start:t], spec)
                if route == "parametric":
                    qm, em = dist_constants(spec.dist, alpha,
                                            new_fit.params.get("nu", 0.0))
                    new_mults = (qm, em, new_fit.mean)
                elif route == "fhs":
                    ft = FhsTail.from_fit(new_fit, alpha)
                    new_mults = (ft.q_mult, ft.e_mult, 0.0)
                else:
                    et = EvtTail.from_fit(new_fit, tail_fraction)
                    new_mults = (-et.loss_quantile(alpha), -et.loss_es(alpha), 0.0)
            except (EstimationError, DataError) as exc:
                if mults is None:
                    raise
                incidents.append(f"refit at {dates[t]} failed, kept previous: {exc}")
            else:
                fit, mults = new_fit, new_mults
                s2 = float(fit.sigma2[-1])
                eps_last = float(r[t - 1] - fit.mean)
        s2 = fit.forecast_sigma2(eps_last, s2)
        sd = math.sqrt(s2)
        q = mults[2] + sd * mults[0]
        e = mults[2] + sd * mults[1]
        if e >= q:
            e = q - GAP_FLOOR
        var_out[j] = q
        es_out[j] = e
        eps_last = float(r[t] - fit.mean)

    return ForecastSeries(dates=np.asarray(dates)[split:], alpha=alpha, var=var_out,
                          es=es_out, model_id=model_id, incidents=incidents)
