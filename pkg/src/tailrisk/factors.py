"""Common risk-factor extraction from the standardized measure panel.

Measures are log-transformed (strictly positive columns) and z-scored with
in-sample statistics only; principal components of the in-sample
correlation structure give fixed loadings, applied to every date. The
resulting score series is the observed factor input to the risk
recursions; only lagged values ever enter a recursion, so no look-ahead
is introduced by scoring the out-of-sample rows.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)


@dataclass
class StandardizationStats:
    columns: list
    transforms: list             # per column: "log" | "signed_log" | "identity"
    means: np.ndarray
    stds: np.ndarray
    insample_rows: int
    dropped: list = field(default_factory=list)
    log_floors: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "columns": list(self.columns),
            "transforms": list(self.transforms),
            "means": [float(v) for v in self.means],
            "stds": [float(v) for v in self.stds],
            "insample_rows": self.insample_rows,
            "dropped": list(self.dropped),
            "log_floors": {k: float(v) for k, v in self.log_floors.items()},
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)


@dataclass
class FactorSeries:
    dates: np.ndarray
    values: np.ndarray           # (T, r) factor scores
    loadings: np.ndarray         # (K, r), unit column norm
    explained: np.ndarray        # explained variance share per factor
    columns: list                # measure names behind the loadings

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] == 1 and len(self.dates) > 1:
            self.values = self.values.T

    def __len__(self):
        return self.values.shape[0]

    @property
    def r(self) -> int:
        return self.values.shape[1]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["date"] + [f"f{i + 1}" for i in range(self.r)])
            for i in range(len(self)):
                wr.writerow([str(self.dates[i])] + [repr(float(v)) for v in self.values[i]])

    def write_loadings_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["measure"] + [f"lambda{i + 1}" for i in range(self.r)])
            for name, row in zip(self.columns, self.loadings):
                wr.writerow([name] + [repr(float(v)) for v in np.atleast_1d(row)])


_DEFAULT_TRANSFORMS = {"RKurt": "identity"}


def _apply_transform(col: np.ndarray, tag: str, floor: float) -> np.ndarray:
    if tag == "log":
        return np.log(np.maximum(col, floor))
    if tag == "signed_log":
        return np.sign(col) * np.log1p(np.abs(col))
    return col.astype(float)


def standardize_panel(panel, insample_rows: int, transforms: dict | None = None):
    """(standardized table, stats): log + z-score with in-sample moments only.

    Non-positive entries of log columns are floored at the smallest positive
    in-sample value of that column (counted and logged). Columns with zero
    in-sample variance are dropped with a warning.
    """
    if insample_rows < 100:
        raise DataError(f"need >= 100 in-sample rows to standardize, got {insample_rows}")
    if insample_rows > len(panel):
        raise DataError("insample_rows exceeds panel length")
    transforms = {**_DEFAULT_TRANSFORMS, **(transforms or {})}

    cols, tags, means, stds, out_cols, dropped = [], [], [], [], [], []
    floors = {}
    for j, name in enumerate(panel.columns):
        raw = panel.table[:, j].astype(float)
        tag = transforms.get(name, "log")
        floor = 0.0
        if tag == "log":
            pos = raw[:insample_rows]
            pos = pos[pos > 0.0]
            if pos.size == 0:
                dropped.append(name)
                warnings.warn(f"column {name}: no positive in-sample values, dropped")
                continue
            floor = float(pos.min())
            n_floored = int(np.sum(raw <= 0.0))
            if n_floored:
                floors[name] = floor
                log.info("column %s: floored %d non-positive values at %g",
                         name, n_floored, floor)
        tr = _apply_transform(raw, tag, floor)
        mu = float(tr[:insample_rows].mean())
        sd = float(tr[:insample_rows].std())
        if sd <= 1e-12 * max(abs(mu), 1.0) or not math.isfinite(sd):
            dropped.append(name)
            warnings.warn(f"column {name}: zero in-sample variance, dropped")
            continue
        cols.append((tr - mu) / sd)
        tags.append(tag)
        means.append(mu)
        stds.append(sd)
        out_cols.append(name)
    if not cols:
        raise DataError("all columns dropped during standardization")
    stats = StandardizationStats(columns=out_cols, transforms=tags,
                                 means=np.array(means), stds=np.array(stds),
                                 insample_rows=insample_rows, dropped=dropped,
                                 log_floors=floors)
    return np.column_stack(cols), stats


def extract_pc_factor(table: np.ndarray, stats: StandardizationStats, dates,
                      r: int = 1, source: str = "levels") -> FactorSeries:
    """First r principal components of the in-sample correlation structure.

    Loadings are eigenvectors of the in-sample covariance of the (already
    z-scored) table, with signs fixed so the RV loading is positive; scores
    are computed for every date with those fixed loadings.
    ``source="innovations"`` extracts from per-column AR(1) residuals
    instead of levels (diagnostic alternative).
    """
    X = np.asarray(table, dtype=float)
    T, K = X.shape
    if not 1 <= r <= K:
        raise DataError(f"factor count r={r} outside [1, {K}]")
    if T < r + 1:
        raise DataError("not enough rows for factor extraction")
    n_in = stats.insample_rows

    if source == "innovations":
        Xin = X[1:] - X[:-1] * np.array([
            float(np.dot(X[1:n_in, j], X[:n_in - 1, j]) / np.dot(X[:n_in - 1, j],
                                                                 X[:n_in - 1, j]))
            for j in range(K)])
        X_for_cov, score_base = Xin[:n_in - 1], np.vstack([Xin[:1], Xin])
    elif source == "levels":
        X_for_cov, score_base = X[:n_in], X
    else:
        raise DataError(f"unknown factor source {source!r}")

    cov = np.cov(X_for_cov, rowvar=False, ddof=0)
    rank = int(np.linalg.matrix_rank(cov))
    if rank < r:
        raise DataError(f"in-sample covariance has rank {rank} < requested r={r}")
    eigval, eigvec = np.linalg.eigh(cov)
    order = np.argsort(eigval)[::-1]
    eigval, eigvec = eigval[order], eigvec[:, order]
    lam = eigvec[:, :r]

    # sign convention: loading on RV (fallback: first column) positive
    ref = stats.columns.index("RV") if "RV" in stats.columns else 0
    for i in range(r):
        if lam[ref, i] < 0:
            lam[:, i] = -lam[:, i]

    scores = score_base @ lam
    explained = eigval[:r] / eigval.sum()
    return FactorSeries(dates=np.asarray(dates), values=scores, loadings=lam,
                        explained=explained, columns=list(stats.columns))


# ---------------------------------------------------------------------------
# optional AR(1) smoothing of the score series

def _kalman_loglik(y: np.ndarray, rho: float, q: float, h: float) -> float:
    """Log-likelihood of scalar AR(1)-state model: s_t = rho s_{t-1} + w, y = s + v."""
    var = q / max(1.0 - rho * rho, 1e-10)
    mean = 0.0
    ll = 0.0
    for obs in y:
        pvar = var + h
        err = obs - mean
        ll += -0.5 * (math.log(2.0 * math.pi * pvar) + err * err / pvar)
        gain = var / pvar
        smean = mean + gain * err
        svar = var * (1.0 - gain)
        mean = rho * smean
        var = rho * rho * svar + q
    return ll


def ar1_smooth(factor: FactorSeries, insample_rows: int | None = None,
               return_details: bool = False):
    """Linear-Gaussian AR(1)-state smoother fitted by maximum likelihood.

    Falls back to the unsmoothed series (with a warning) when the fitted
    state is non-stationary or degenerate. Off by default in the pipeline.
    With ``return_details`` also returns the per-factor AR coefficients.
    """
    from scipy.optimize import minimize

    if len(factor) < 20:
        raise DataError("factor series too short to smooth")
    n_in = insample_rows or len(factor)
    out = factor.values.copy()
    coefs = []
    for j in range(factor.r):
        y = factor.values[:n_in, j]
        y0 = y - y.mean()
        v = float(y0.var())
        if v == 0.0:
            warnings.warn("constant factor; smoothing skipped")
            return (factor, []) if return_details else factor
        rho0 = float(np.dot(y0[1:], y0[:-1]) / np.dot(y0[:-1], y0[:-1]))
        rho0 = max(min(rho0, 0.95), -0.95)

        def nll(theta):
            rho = math.tanh(theta[0])
            q = v * (1.0 / (1.0 + math.exp(-theta[1])))
            h = v * (1.0 / (1.0 + math.exp(-theta[2])))
            return -_kalman_loglik(y0, rho, q, h)

        res = minimize(nll, [math.atanh(rho0), 0.0, 0.0], method="Nelder-Mead",
                       options={"maxfev": 600, "xatol": 1e-5, "fatol": 1e-8})
        rho = math.tanh(res.x[0])
        if abs(rho) >= 1.0 or not res.fun < float("inf"):
            warnings.warn("non-stationary AR estimate; returning unsmoothed factor")
            return (factor, []) if return_details else factor
        coefs.append(rho)
        q = v / (1.0 + math.exp(-res.x[1]))
        h = v / (1.0 + math.exp(-res.x[2]))

        # forward filter + RTS smoother over the full series
        yj = factor.values[:, j] - y.mean()
        T = len(yj)
        fm = np.empty(T); fv = np.empty(T)   # filtered
        pm = np.empty(T); pv = np.empty(T)   # one-step predictions
        mean, var = 0.0, q / max(1.0 - rho * rho, 1e-10)
        for t in range(T):
            pm[t], pv[t] = mean, var
            gain = var / (var + h)
            fm[t] = mean + gain * (yj[t] - mean)
            fv[t] = var * (1.0 - gain)
            mean = rho * fm[t]
            var = rho * rho * fv[t] + q
        sm = fm.copy()
        for t in range(T - 2, -1, -1):
            c = fv[t] * rho / pv[t + 1]
            sm[t] = fm[t] + c * (sm[t + 1] - pm[t + 1])
        out[:, j] = sm + y.mean()
        log.info("factor %d smoothed with AR coefficient %.3f", j, rho)
    smoothed = FactorSeries(dates=factor.dates, values=out, loadings=factor.loadings,
                            explained=factor.explained, columns=factor.columns)
    return (smoothed, coefs) if return_details else smoothed
