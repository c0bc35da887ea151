"""Backtests, scoring rules and the model confidence set.

Coverage tests follow the standard likelihood-ratio and regression forms;
the ES tests are bootstrap tests on exceedance residuals (the model class
provides no full conditional distribution, so PIT-based variants are not
applicable). The loss trio (fz0/fzg/al) implements the additive forms used
throughout as comparison scores; note they are comparison scores only, not
estimation objectives.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import DataError, EvaluationDegenerateError

__all__ = [
    "HitSeries", "TestResult", "hits", "kupiec_uc", "christoffersen_cc", "dq_test",
    "es_uc_test", "es_cc_test", "fz0_loss", "fzg_loss", "al_loss",
    "LossMatrix", "score_models", "MCSResult", "mcs", "backtest_report",
]


@dataclass
class HitSeries:
    dates: np.ndarray
    hits: np.ndarray             # 0/1, hit = 1{r_t <= VaR_t}
    alpha: float

    def __post_init__(self):
        self.hits = np.asarray(self.hits, dtype=int)
        if not np.all((self.hits == 0) | (self.hits == 1)):
            raise DataError("hits must be 0/1")

    def __len__(self):
        return len(self.hits)

    @property
    def violation_rate(self) -> float:
        return float(self.hits.mean())

    @property
    def actual_over_expected(self) -> float:
        return self.violation_rate / self.alpha


@dataclass
class TestResult:
    statistic: float
    p_value: float
    method: str
    counts: dict = field(default_factory=dict)
    degenerate: bool = False

    def to_json(self):
        return {"statistic": self.statistic, "p_value": self.p_value,
                "method": self.method, "counts": self.counts,
                "degenerate": self.degenerate}


def hits(returns, var_series, alpha: float, dates=None) -> HitSeries:
    r = np.asarray(returns, dtype=float)
    q = np.asarray(var_series, dtype=float)
    if r.shape != q.shape:
        raise DataError(f"length mismatch: returns {r.shape} vs VaR {q.shape}")
    if dates is None:
        dates = np.arange(r.size)
    return HitSeries(dates=np.asarray(dates), hits=(r <= q).astype(int), alpha=alpha)


def _xlogy(n: float, p: float) -> float:
    return 0.0 if n == 0.0 else n * math.log(p)


def kupiec_uc(hit_series: HitSeries, min_obs: int = 50) -> TestResult:
    """Unconditional coverage likelihood-ratio test against chi2(1)."""
    T = len(hit_series)
    if T < min_obs:
        raise EvaluationDegenerateError(f"need >= {min_obs} observations, got {T}")
    x = int(hit_series.hits.sum())
    a = hit_series.alpha
    p_hat = x / T
    ll0 = _xlogy(T - x, 1.0 - a) + _xlogy(x, a)
    ll1 = _xlogy(T - x, 1.0 - p_hat if p_hat < 1.0 else 1.0) + _xlogy(x, p_hat if x else 1.0)
    lr = max(-2.0 * (ll0 - ll1), 0.0)
    return TestResult(statistic=lr, p_value=float(stats.chi2.sf(lr, 1)),
                      method="kupiec_uc", counts={"T": T, "violations": x})


def christoffersen_cc(hit_series: HitSeries, min_obs: int = 50) -> TestResult:
    """Conditional coverage: unconditional LR plus first-order Markov independence."""
    T = len(hit_series)
    if T < min_obs:
        raise EvaluationDegenerateError(f"need >= {min_obs} observations, got {T}")
    h = hit_series.hits
    uc = kupiec_uc(hit_series, min_obs)
    h0, h1 = h[:-1], h[1:]
    n00 = int(np.sum((h0 == 0) & (h1 == 0)))
    n01 = int(np.sum((h0 == 0) & (h1 == 1)))
    n10 = int(np.sum((h0 == 1) & (h1 == 0)))
    n11 = int(np.sum((h0 == 1) & (h1 == 1)))
    total = n00 + n01 + n10 + n11
    degenerate = total == 0 or (n01 + n11) == 0 or (n00 + n10) == 0
    if total == 0:
        return TestResult(statistic=uc.statistic, p_value=float(stats.chi2.sf(uc.statistic, 2)),
                          method="christoffersen_cc", counts=uc.counts, degenerate=True)
    pi = (n01 + n11) / total
    pi0 = n01 / max(n00 + n01, 1)
    pi1 = n11 / max(n10 + n11, 1)
    ll_pooled = _xlogy(n01 + n11, pi if pi > 0 else 1.0) \
        + _xlogy(n00 + n10, 1.0 - pi if pi < 1.0 else 1.0)
    ll_markov = (_xlogy(n00, 1.0 - pi0 if pi0 < 1 else 1.0) + _xlogy(n01, pi0 if pi0 > 0 else 1.0)
                 + _xlogy(n10, 1.0 - pi1 if pi1 < 1 else 1.0) + _xlogy(n11, pi1 if pi1 > 0 else 1.0))
    lr_ind = max(-2.0 * (ll_pooled - ll_markov), 0.0)
    lr_cc = uc.statistic + lr_ind
    return TestResult(statistic=lr_cc, p_value=float(stats.chi2.sf(lr_cc, 2)),
                      method="christoffersen_cc",
                      counts={"n00": n00, "n01": n01, "n10": n10, "n11": n11,
                              "lr_uc": uc.statistic, "lr_ind": lr_ind},
                      degenerate=degenerate)


def dq_test(hit_series: HitSeries, var_series, lags: int = 4) -> TestResult:
    """Dynamic quantile regression test: demeaned hits on lagged hits and VaR."""
    T = len(hit_series)
    if T < lags + 20:
        raise EvaluationDegenerateError(f"need >= {lags + 20} observations, got {T}")
    q = np.asarray(var_series, dtype=float)
    if q.size != T:
        raise DataError("VaR series length mismatch")
    a = hit_series.alpha
    H = hit_series.hits.astype(float) - a
    y = H[lags:]
    X = np.column_stack([np.ones(T - lags)]
                        + [H[lags - k:T - k] for k in range(1, lags + 1)]
                        + [q[lags:]])
    XtX = X.T @ X
    ridge = False
    try:
        beta = np.linalg.solve(XtX, X.T @ y)
    except np.linalg.LinAlgError:
        ridge = True
        lam = 1e-8 * np.trace(XtX) / XtX.shape[0]
        beta = np.linalg.solve(XtX + lam * np.eye(XtX.shape[0]), X.T @ y)
    stat = float(y @ X @ beta / (a * (1.0 - a)))
    stat = max(stat, 0.0)
    dof = lags + 2
    return TestResult(statistic=stat, p_value=float(stats.chi2.sf(stat, dof)),
                      method="dq", counts={"lags": lags, "dof": dof},
                      degenerate=ridge)


# ---------------------------------------------------------------------------
# ES backtests (bootstrap exceedance residuals)

def _exceedance_residuals(returns, var_series, es_series):
    r = np.asarray(returns, dtype=float)
    q = np.asarray(var_series, dtype=float)
    e = np.asarray(es_series, dtype=float)
    if not (r.shape == q.shape == e.shape):
        raise DataError("returns / VaR / ES length mismatch")
    viol = r <= q
    return (r[viol] - e[viol]) / np.abs(e[viol]), viol


def _studentized_mean(draws: np.ndarray) -> np.ndarray:
    m = draws.shape[1]
    mu = draws.mean(axis=1)
    sd = draws.std(axis=1, ddof=1)
    return mu / np.maximum(sd, 1e-12) * math.sqrt(m)


def _studentized_slope(draws: np.ndarray) -> np.ndarray:
    """Slope t-statistics of column t on column t-1, one per bootstrap row."""
    y, x = draws[:, 1:], draws[:, :-1]
    n = y.shape[1]
    yc = y - y.mean(axis=1, keepdims=True)
    xc = x - x.mean(axis=1, keepdims=True)
    vx = np.maximum((xc * xc).mean(axis=1), 1e-12)
    slope = (yc * xc).mean(axis=1) / vx
    se = y.std(axis=1, ddof=1) / (np.sqrt(vx) * math.sqrt(n))
    return slope / np.maximum(se, 1e-12)


def es_uc_test(returns, var_series, es_series, n_boot: int = 2000,
               seed: int = 0, min_violations: int = 10) -> TestResult:
    """Two-sided studentized bootstrap test that exceedance residuals have
    mean zero (resamples of the centered residuals with replacement)."""
    resid, _ = _exceedance_residuals(returns, var_series, es_series)
    m = resid.size
    if m < min_violations:
        return TestResult(statistic=float("nan"), p_value=float("nan"),
                          method="es_uc_bootstrap", counts={"violations": m},
                          degenerate=True)
    sd = float(resid.std(ddof=1))
    if sd == 0.0:
        return TestResult(statistic=0.0, p_value=1.0, method="es_uc_bootstrap",
                          counts={"violations": m}, degenerate=True)
    t_obs = float(resid.mean()) / (sd / math.sqrt(m))
    rng = np.random.default_rng(seed)
    centered = resid - resid.mean()
    t_boot = _studentized_mean(centered[rng.integers(0, m, size=(n_boot, m))])
    p = (1.0 + np.sum(np.abs(t_boot) >= abs(t_obs))) / (n_boot + 1.0)
    return TestResult(statistic=float(t_obs), p_value=float(p),
                      method="es_uc_bootstrap",
                      counts={"violations": m, "n_boot": n_boot,
                              "mean_residual": float(resid.mean())})


def es_cc_test(returns, var_series, es_series, n_boot: int = 2000,
               seed: int = 0, min_violations: int = 10) -> TestResult:
    """Joint studentized bootstrap test: residual mean zero and no
    dependence on the previous violation's residual."""
    resid, _ = _exceedance_residuals(returns, var_series, es_series)
    m = resid.size
    if m < max(min_violations, 3):
        return TestResult(statistic=float("nan"), p_value=float("nan"),
                          method="es_cc_bootstrap", counts={"violations": m},
                          degenerate=True)
    if float(resid.std(ddof=1)) == 0.0:
        return TestResult(statistic=0.0, p_value=1.0, method="es_cc_bootstrap",
                          counts={"violations": m}, degenerate=True)
    obs = resid[None, :]
    stat_obs = float((_studentized_mean(obs) ** 2 + _studentized_slope(obs) ** 2)[0])
    rng = np.random.default_rng(seed)
    centered = resid - resid.mean()
    draws = centered[rng.integers(0, m, size=(n_boot, m))]
    stat_boot = _studentized_mean(draws) ** 2 + _studentized_slope(draws) ** 2
    p = (1.0 + np.sum(stat_boot >= stat_obs)) / (n_boot + 1.0)
    return TestResult(statistic=stat_obs, p_value=float(p),
                      method="es_cc_bootstrap",
                      counts={"violations": m, "n_boot": n_boot})


# ---------------------------------------------------------------------------
# loss functions

def fz0_loss(q, e, r, alpha: float):
    """(I-alpha)(q-r)/alpha + (e-q)/alpha + log(-e); requires q, e < 0."""
    q = np.asarray(q, dtype=float)
    e = np.asarray(e, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(e >= 0.0) or np.any(q >= 0.0):
        raise DataError("fz0_loss needs negative VaR and ES forecasts")
    ind = (r <= q).astype(float)
    out = (ind - alpha) * (q - r) / alpha + (e - q) / alpha + np.log(-e)
    return out if out.ndim else float(out)


def fzg_loss(q, e, r, alpha: float, g1: str = "identity", g2: str = "log_neg"):
    """(I-alpha)G1(q) + I[G2(e)-G2(r)]/alpha + G2(e).

    G1 in {"identity", "zero"}; G2 in {"log_neg"}. With the log choice the
    G2(r) term is only evaluated on violation days, where r <= q < 0.
    """
    if g2 != "log_neg":
        raise DataError(f"unsupported G2 tag {g2!r}")
    if g1 not in ("identity", "zero"):
        raise DataError(f"unsupported G1 tag {g1!r}")
    q = np.asarray(q, dtype=float)
    e = np.asarray(e, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(e >= 0.0) or np.any(q >= 0.0):
        raise DataError("fzg_loss needs negative VaR and ES forecasts")
    ind = r <= q
    out = np.log(-e) + ((ind - alpha) * q if g1 == "identity" else 0.0)
    tail = np.zeros_like(out)
    if np.any(ind):
        tail = np.where(ind, (np.log(-e) - np.log(np.where(ind, -r, 1.0))) / alpha, 0.0)
    out = out + tail
    return out if out.ndim else float(out)


def al_loss(q, e, r, alpha: float):
    """(e-r) I / alpha + (q-r)(alpha-I)."""
    q = np.asarray(q, dtype=float)
    e = np.asarray(e, dtype=float)
    r = np.asarray(r, dtype=float)
    ind = (r <= q).astype(float)
    out = (e - r) * ind / alpha + (q - r) * (alpha - ind)
    return out if out.ndim else float(out)


LOSSES = {"FZ0": fz0_loss, "FZG": fzg_loss, "AL": al_loss}


@dataclass
class LossMatrix:
    dates: np.ndarray
    losses: np.ndarray           # (T, m)
    model_ids: list
    loss_tag: str

    def __len__(self):
        return self.losses.shape[0]

    @property
    def means(self) -> dict:
        return {mid: float(v) for mid, v in zip(self.model_ids, self.losses.mean(axis=0))}


def score_models(forecasts: dict, returns, alpha: float, loss_tag: str = "FZ0",
                 dates=None) -> LossMatrix:
    """Per-day loss per model over one aligned out-of-sample block.

    ``forecasts`` maps model id -> object with .var and .es arrays (and
    optionally .dates used for alignment checks).
    """
    if loss_tag not in LOSSES:
        raise DataError(f"unknown loss tag {loss_tag!r}; choices {sorted(LOSSES)}")
    if len(forecasts) < 1:
        raise DataError("no forecast series supplied")
    r = np.asarray(returns, dtype=float)
    T = r.size
    ref_dates = None
    for mid, fc in forecasts.items():
        if len(fc.var) != T:
            raise DataError(f"model {mid}: {len(fc.var)} forecasts vs {T} returns")
        d = getattr(fc, "dates", None)
        if d is not None:
            if ref_dates is None:
                ref_dates = np.asarray(d)
            elif not np.array_equal(np.asarray(d), ref_dates):
                missing = set(map(str, ref_dates)) ^ set(map(str, np.asarray(d)))
                raise DataError(f"model {mid}: date mismatch ({sorted(missing)[:5]} ...)")
    fn = LOSSES[loss_tag]
    ids = list(forecasts)
    cols = [fn(forecasts[mid].var, forecasts[mid].es, r, alpha) for mid in ids]
    if dates is None:
        dates = ref_dates if ref_dates is not None else np.arange(T)
    return LossMatrix(dates=np.asarray(dates), losses=np.column_stack(cols),
                      model_ids=ids, loss_tag=loss_tag)


# ---------------------------------------------------------------------------
# model confidence set

@dataclass
class MCSResult:
    survivors: list
    p_values: dict               # model id -> MCS p-value (running max over eliminations)
    elimination_order: list
    level: float
    n_boot: int
    block_length: int
    seed: object
    loss_tag: str = ""

    def to_json(self):
        return {"survivors": self.survivors, "p_values": self.p_values,
                "elimination_order": self.elimination_order, "level": self.level,
                "n_boot": self.n_boot, "block_length": self.block_length,
                "seed": self.seed, "loss_tag": self.loss_tag}


def _block_bootstrap_means(losses: np.ndarray, n_boot: int, block_len: int,
                           rng) -> np.ndarray:
    """Circular-block bootstrap means of each column; (n_boot, m)."""
    T, m = losses.shape
    n_blocks = math.ceil(T / block_len)
    out = np.empty((n_boot, m))
    chunk = max(1, int(2e6 // (T or 1)))
    for lo in range(0, n_boot, chunk):
        hi = min(lo + chunk, n_boot)
        starts = rng.integers(0, T, size=(hi - lo, n_blocks))
        idx = (starts[:, :, None] + np.arange(block_len)[None, None, :]) % T
        idx = idx.reshape(hi - lo, -1)[:, :T]
        out[lo:hi] = losses[idx].mean(axis=1)
    return out


def mcs(loss_matrix: LossMatrix, level: float = 0.90, n_boot: int = 10000,
        block_length: int | None = None, seed: int = 0,
        min_obs: int = 100) -> MCSResult:
    """Iterative model elimination with studentized max statistics.

    Per iteration: each surviving model's mean loss gap to the survivor
    average is studentized with circular-block-bootstrap standard errors;
    the bootstrap distribution of the max statistic gives the elimination
    p-value, the worst model leaves, and reported MCS p-values are the
    running maximum along the elimination order (the last survivor gets 1).
    The survivor set keeps every model whose p-value exceeds 1 - level.
    """
    L = loss_matrix.losses
    T, m = L.shape
    if m < 1:
        raise DataError("empty loss matrix")
    if T < min_obs:
        raise EvaluationDegenerateError(f"need >= {min_obs} loss rows, got {T}")
    if not 0.5 < level < 1.0:
        raise DataError(f"level must be in (0.5, 1), got {level}")
    ids = list(loss_matrix.model_ids)
    if m == 1:
        return MCSResult(survivors=ids, p_values={ids[0]: 1.0}, elimination_order=[],
                         level=level, n_boot=n_boot,
                         block_length=block_length or math.ceil(T ** (1 / 3)),
                         seed=seed, loss_tag=loss_matrix.loss_tag)
    block_length = block_length or math.ceil(T ** (1 / 3))
    rng = np.random.default_rng(seed)
    boot_means = _block_bootstrap_means(L, n_boot, block_length, rng)  # (B, m)
    col_means = L.mean(axis=0)

    active = list(range(m))
    elim_p = {}
    order = []
    running = 0.0
    while len(active) > 1:
        cm = col_means[active]
        bm = boot_means[:, active]
        d_obs = cm - cm.mean()
        d_boot = bm - bm.mean(axis=1, keepdims=True)
        se = np.sqrt(np.mean((d_boot - d_obs) ** 2, axis=0))
        tiny = se < 1e-14
        if np.all(tiny):
            # exact ties: no evidence to separate the remaining models
            for i in active:
                elim_p[ids[i]] = 1.0
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            t_obs = np.where(tiny, 0.0, d_obs / se)
            t_boot = np.where(tiny[None, :], 0.0, (d_boot - d_obs) / se)
        t_max = float(np.max(t_obs))
        p = float(np.mean(np.max(t_boot, axis=1) >= t_max))
        worst = active[int(np.argmax(t_obs))]
        running = max(running, p)
        elim_p[ids[worst]] = running
        order.append(ids[worst])
        active.remove(worst)
    if len(active) == 1:
        elim_p[ids[active[0]]] = 1.0

    p_values = {mid: float(elim_p[mid]) for mid in ids}
    cut = 1.0 - level
    survivors = [mid for mid in ids if p_values[mid] > cut]
    return MCSResult(survivors=survivors, p_values=p_values,
                     elimination_order=order, level=level, n_boot=n_boot,
                     block_length=block_length, seed=seed,
                     loss_tag=loss_matrix.loss_tag)


# ---------------------------------------------------------------------------
# report assembly

def backtest_report(returns, forecasts: dict, alpha: float, seed: int = 0,
                    n_boot: int = 2000, dates=None) -> dict:
    """Per-model coverage and ES test summary (one alpha level)."""
    r = np.asarray(returns, dtype=float)
    out = {}
    for mid, fc in forecasts.items():
        hs = hits(r, fc.var, alpha, dates=dates)
        row = {"alpha": alpha, "viol_rate": hs.violation_rate,
               "VaR_AE": hs.actual_over_expected}
        try:
            row["VaR_UC"] = kupiec_uc(hs).p_value
            cc = christoffersen_cc(hs)
            row["VaR_CC"] = cc.p_value if not cc.degenerate else None
            dq = dq_test(hs, fc.var)
            row["VaR_DQ"] = dq.p_value
        except EvaluationDegenerateError:
            row.setdefault("VaR_UC", None)
            row.setdefault("VaR_CC", None)
            row.setdefault("VaR_DQ", None)
        es_u = es_uc_test(r, fc.var, fc.es, n_boot=n_boot, seed=seed)
        es_c = es_cc_test(r, fc.var, fc.es, n_boot=n_boot, seed=seed + 1)
        row["ES_UC"] = None if es_u.degenerate else es_u.p_value
        row["ES_CC"] = None if es_c.degenerate else es_c.p_value
        out[mid] = row
    return out


def write_report_json(report: dict, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
