"""Pure-Python mirror of the compiled recursion kernels.

Same signatures and arithmetic as ``_recursions.pyx``; used when the
compiled extension is unavailable (or forced via TAILRISK_PURE_PYTHON=1).
Markedly slower on long series; the heavy Monte Carlo tests skip
themselves when this backend is active.
"""

import math

import numpy as np

_LOGQ_LIMIT = 50.0


def risk_filter(r, f, logx, p, q0, w0):
    r = np.asarray(r, dtype=float)
    f = np.asarray(f, dtype=float)
    logx = np.asarray(logx, dtype=float)
    p = np.asarray(p, dtype=float)
    T = r.shape[0]
    k = f.shape[1]
    gv = p[10:10 + k]
    gg = p[10 + k:10 + 2 * k]
    lq_out = np.empty(T)
    w_out = np.empty(T)
    eps_out = np.empty(T)
    u_out = np.empty(T)

    lq = math.log(-q0)
    w = w0
    lq_prev = w_prev = eps_prev = 0.0
    for t in range(T):
        if t > 0:
            fprev = f[t - 1]
            lq = (p[0] + p[1] * lq_prev + p[2] * eps_prev + p[3] * eps_prev * eps_prev
                  + float(gv @ fprev))
            w = p[4] + p[5] * w_prev + float(gg @ np.abs(fprev))
        if not math.isfinite(lq) or abs(lq) > _LOGQ_LIMIT or not math.isfinite(w) or w < 0.0:
            return lq_out, w_out, eps_out, u_out, t
        q = -math.exp(lq)
        eps = r[t] / q
        u = logx[t] - (p[6] + p[7] * lq + p[8] * eps + p[9] * eps * eps)
        if not math.isfinite(eps) or not math.isfinite(u):
            return lq_out, w_out, eps_out, u_out, t
        lq_out[t] = lq
        w_out[t] = w
        eps_out[t] = eps
        u_out[t] = u
        lq_prev, w_prev, eps_prev = lq, w, eps
    return lq_out, w_out, eps_out, u_out, -1


def risk_joint_nll(r, f, logx, p, q0, w0, alpha, sigma_u):
    if sigma_u <= 0.0:
        return float("inf"), float("nan"), float("nan")
    r = np.asarray(r, dtype=float)
    f = np.asarray(f, dtype=float)
    logx = np.asarray(logx, dtype=float)
    p = np.asarray(p, dtype=float)
    T = r.shape[0]
    k = f.shape[1]
    gv = p[10:10 + k]
    gg = p[10 + k:10 + 2 * k]

    lq = math.log(-q0)
    w = w0
    lq_prev = w_prev = eps_prev = 0.0
    ll = 0.0
    ssq = 0.0
    for t in range(T):
        if t > 0:
            fprev = f[t - 1]
            lq = (p[0] + p[1] * lq_prev + p[2] * eps_prev + p[3] * eps_prev * eps_prev
                  + float(gv @ fprev))
            w = p[4] + p[5] * w_prev + float(gg @ np.abs(fprev))
        if not math.isfinite(lq) or abs(lq) > _LOGQ_LIMIT or not math.isfinite(w) or w < 0.0:
            return float("inf"), float("nan"), float("nan")
        q = -math.exp(lq)
        es = q - w
        eps = r[t] / q
        u = logx[t] - (p[6] + p[7] * lq + p[8] * eps + p[9] * eps * eps)
        if not math.isfinite(eps) or not math.isfinite(u):
            return float("inf"), float("nan"), float("nan")
        indic = 1.0 if r[t] <= q else 0.0
        ll += math.log((alpha - 1.0) / es) + (r[t] - q) * (alpha - indic) / (alpha * es)
        ssq += u * u
        lq_prev, w_prev, eps_prev = lq, w, eps
    if not (math.isfinite(ll) and math.isfinite(ssq)):
        return float("inf"), float("nan"), float("nan")
    l_meas = 0.5 * (ssq / (sigma_u * sigma_u) + T * math.log(2.0 * math.pi * sigma_u * sigma_u))
    l_ret = -ll
    return l_ret + l_meas, l_ret, l_meas


def garch_sigma2(eps, p, family, s2_init):
    eps = np.asarray(eps, dtype=float)
    p = np.asarray(p, dtype=float)
    T = eps.shape[0]
    s2 = np.empty(T)
    s2[0] = s2_init
    if family == 2:
        ls2 = math.log(s2_init)
        for t in range(1, T):
            z = eps[t - 1] / math.sqrt(s2[t - 1])
            ls2 = p[0] + p[1] * ls2 + p[2] * z + p[3] * (abs(z) - p[4])
            s2[t] = math.exp(ls2)
    else:
        for t in range(1, T):
            e2 = eps[t - 1] * eps[t - 1]
            if family == 0:
                s2[t] = p[0] + p[1] * e2 + p[2] * s2[t - 1]
            else:
                s2[t] = (p[0] + p[1] * e2
                         + (p[2] * e2 if eps[t - 1] < 0.0 else 0.0) + p[3] * s2[t - 1])
    return s2


def garch_nll(eps, p, family, s2_init, dist, nu):
    eps = np.asarray(eps, dtype=float)
    p = np.asarray(p, dtype=float)
    T = eps.shape[0]
    nll = 0.0
    s2 = s2_init
    ls2 = math.log(s2_init)
    if dist == 1:
        c = (math.lgamma(0.5 * (nu + 1.0)) - math.lgamma(0.5 * nu)
             - 0.5 * math.log(math.pi * (nu - 2.0)))
    for t in range(T):
        if t > 0:
            if family == 2:
                z = eps[t - 1] / math.sqrt(s2)
                ls2 = p[0] + p[1] * ls2 + p[2] * z + p[3] * (abs(z) - p[4])
                s2 = math.exp(ls2)
            else:
                e2 = eps[t - 1] * eps[t - 1]
                if family == 0:
                    s2 = p[0] + p[1] * e2 + p[2] * s2
                else:
                    s2 = (p[0] + p[1] * e2
                          + (p[2] * e2 if eps[t - 1] < 0.0 else 0.0) + p[3] * s2)
        if not math.isfinite(s2) or s2 <= 0.0:
            return float("inf")
        if dist == 0:
            nll += 0.5 * (math.log(2.0 * math.pi) + math.log(s2) + eps[t] * eps[t] / s2)
        else:
            nll += -(c - 0.5 * math.log(s2)
                     - 0.5 * (nu + 1.0) * math.log(1.0 + eps[t] * eps[t] / (s2 * (nu - 2.0))))
    return nll
