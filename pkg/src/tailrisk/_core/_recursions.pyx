# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Sequential recursion kernels.

These loops are the hot path of estimation (they run once per objective
evaluation inside the optimizer) and cannot be vectorized over time, so
they are compiled. ``tailrisk._core._pyref`` holds the pure-Python mirror;
both implement exactly the same arithmetic.

Risk-model parameter packing (k = number of factor columns):
    p = [var_intercept, var_persistence, shock_linear, shock_squared,
         gap_intercept, gap_persistence,
         meas_intercept, meas_loading, meas_shock_linear, meas_shock_squared,
         factor_to_var[0..k-1], factor_to_gap[0..k-1]]

GARCH parameter packing by family:
    0 garch11: [omega, arch, garch]
    1 gjr:     [omega, arch, asym, garch]
    2 egarch:  [omega, garch, sign, magnitude, mean_abs_z]
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, fabs, isfinite, lgamma, log, sqrt

cnp.import_array()

DEF LOGQ_LIMIT = 50.0  # |log(-Q)| beyond this is treated as divergence


cdef inline double _dot(const double* a, const double* b, Py_ssize_t k) nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(k):
        s += a[i] * b[i]
    return s


cdef inline double _dot_abs(const double* a, const double* b, Py_ssize_t k) nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(k):
        s += a[i] * fabs(b[i])
    return s


cdef int _filter(const double* r, const double* f, const double* logx,
                 const double* p, Py_ssize_t k, Py_ssize_t T,
                 double q0, double w0,
                 double* lq_out, double* w_out, double* eps_out, double* u_out) nogil:
    """Run the joint quantile/gap/measurement recursion.

    Returns -1 on success, else the index of the first bad state.
    """
    cdef double lq = log(-q0)
    cdef double w = w0
    cdef double lq_prev, w_prev, eps_prev
    cdef double q, eps, u
    cdef const double* gv = p + 10
    cdef const double* gg = p + 10 + k
    cdef Py_ssize_t t

    for t in range(T):
        if t > 0:
            lq = p[0] + p[1] * lq_prev + p[2] * eps_prev + p[3] * eps_prev * eps_prev \
                + _dot(gv, f + (t - 1) * k, k)
            w = p[4] + p[5] * w_prev + _dot_abs(gg, f + (t - 1) * k, k)
        if not isfinite(lq) or fabs(lq) > LOGQ_LIMIT or not isfinite(w) or w < 0.0:
            return <int>t
        q = -exp(lq)
        eps = r[t] / q
        u = logx[t] - (p[6] + p[7] * lq + p[8] * eps + p[9] * eps * eps)
        if not isfinite(eps) or not isfinite(u):
            return <int>t
        lq_out[t] = lq
        w_out[t] = w
        eps_out[t] = eps
        u_out[t] = u
        lq_prev = lq
        w_prev = w
        eps_prev = eps
    return -1


def risk_filter(const double[::1] r, const double[:, ::1] f, const double[::1] logx,
                const double[::1] p, double q0, double w0):
    """Full filtered path. Returns (logq, gap, eps, u, bad_t); bad_t == -1 on success."""
    cdef Py_ssize_t T = r.shape[0]
    cdef Py_ssize_t k = f.shape[1]
    lq_arr = np.empty(T)
    w_arr = np.empty(T)
    eps_arr = np.empty(T)
    u_arr = np.empty(T)
    cdef double[::1] lq_v = lq_arr, w_v = w_arr, eps_v = eps_arr, u_v = u_arr
    cdef int bad
    with nogil:
        bad = _filter(&r[0], &f[0, 0], &logx[0], &p[0], k, T, q0, w0,
                      &lq_v[0], &w_v[0], &eps_v[0], &u_v[0])
    return lq_arr, w_arr, eps_arr, u_arr, bad


def risk_joint_nll(const double[::1] r, const double[:, ::1] f, const double[::1] logx,
                   const double[::1] p, double q0, double w0,
                   double alpha, double sigma_u):
    """Fused filter + objective pass.

    Returns (objective, return_component, measurement_component) where
    objective = measurement NLL minus the asymmetric-Laplace log-likelihood
    of the return equation; (inf, nan, nan) if the recursion diverges.
    """
    cdef Py_ssize_t T = r.shape[0]
    cdef Py_ssize_t k = f.shape[1]
    cdef double lq = log(-q0)
    cdef double w = w0
    cdef double lq_prev, w_prev, eps_prev
    cdef double q, es, eps, u, indic
    cdef double ll = 0.0
    cdef double ssq = 0.0
    cdef double l_meas, l_ret
    cdef const double* gv = &p[0] + 10
    cdef const double* gg = &p[0] + 10 + k
    cdef const double* pp = &p[0]
    cdef const double* rr = &r[0]
    cdef const double* ff = &f[0, 0]
    cdef const double* lx = &logx[0]
    cdef Py_ssize_t t
    cdef int bad = -1
    cdef double TWO_PI = 6.283185307179586476925287

    if sigma_u <= 0.0:
        return float("inf"), float("nan"), float("nan")

    with nogil:
        for t in range(T):
            if t > 0:
                lq = pp[0] + pp[1] * lq_prev + pp[2] * eps_prev + pp[3] * eps_prev * eps_prev \
                    + _dot(gv, ff + (t - 1) * k, k)
                w = pp[4] + pp[5] * w_prev + _dot_abs(gg, ff + (t - 1) * k, k)
            if not isfinite(lq) or fabs(lq) > LOGQ_LIMIT or not isfinite(w) or w < 0.0:
                bad = <int>t
                break
            q = -exp(lq)
            es = q - w
            eps = rr[t] / q
            u = lx[t] - (pp[6] + pp[7] * lq + pp[8] * eps + pp[9] * eps * eps)
            if not isfinite(eps) or not isfinite(u):
                bad = <int>t
                break
            indic = 1.0 if rr[t] <= q else 0.0
            ll += log((alpha - 1.0) / es) + (rr[t] - q) * (alpha - indic) / (alpha * es)
            ssq += u * u
            lq_prev = lq
            w_prev = w
            eps_prev = eps

    if bad >= 0 or not isfinite(ll) or not isfinite(ssq):
        return float("inf"), float("nan"), float("nan")
    l_meas = 0.5 * (ssq / (sigma_u * sigma_u) + T * log(TWO_PI * sigma_u * sigma_u))
    l_ret = -ll
    return l_ret + l_meas, l_ret, l_meas


def garch_sigma2(const double[::1] eps, const double[::1] p, int family, double s2_init):
    """Conditional-variance path for garch11 (0), gjr (1) or egarch (2)."""
    cdef Py_ssize_t T = eps.shape[0]
    s2_arr = np.empty(T)
    cdef double[::1] s2 = s2_arr
    cdef double ls2, z, e2
    cdef Py_ssize_t t
    if family == 2:
        ls2 = log(s2_init)
        s2[0] = s2_init
        for t in range(1, T):
            z = eps[t - 1] / sqrt(s2[t - 1])
            ls2 = p[0] + p[1] * ls2 + p[2] * z + p[3] * (fabs(z) - p[4])
            s2[t] = exp(ls2)
    else:
        s2[0] = s2_init
        for t in range(1, T):
            e2 = eps[t - 1] * eps[t - 1]
            if family == 0:
                s2[t] = p[0] + p[1] * e2 + p[2] * s2[t - 1]
            else:
                s2[t] = p[0] + p[1] * e2 \
                    + (p[2] * e2 if eps[t - 1] < 0.0 else 0.0) + p[3] * s2[t - 1]
    return s2_arr


def garch_nll(const double[::1] eps, const double[::1] p, int family,
              double s2_init, int dist, double nu):
    """Negative log-likelihood; dist 0 = normal, 1 = standardized Student-t."""
    cdef Py_ssize_t T = eps.shape[0]
    cdef double s2, ls2, z, e2, nll, c
    cdef Py_ssize_t t
    cdef double LOG_TWO_PI = 1.8378770664093454835607
    cdef double M_PI_C = 3.14159265358979323846

    nll = 0.0
    s2 = s2_init
    ls2 = log(s2_init)
    if dist == 1:
        c = lgamma(0.5 * (nu + 1.0)) - lgamma(0.5 * nu) - 0.5 * log(M_PI_C * (nu - 2.0))
    with nogil:
        for t in range(T):
            if t > 0:
                if family == 2:
                    z = eps[t - 1] / sqrt(s2)
                    ls2 = p[0] + p[1] * ls2 + p[2] * z + p[3] * (fabs(z) - p[4])
                    s2 = exp(ls2)
                else:
                    e2 = eps[t - 1] * eps[t - 1]
                    if family == 0:
                        s2 = p[0] + p[1] * e2 + p[2] * s2
                    else:
                        s2 = p[0] + p[1] * e2 \
                            + (p[2] * e2 if eps[t - 1] < 0.0 else 0.0) + p[3] * s2
            if not isfinite(s2) or s2 <= 0.0:
                nll = INFINITY
                break
            if dist == 0:
                nll += 0.5 * (LOG_TWO_PI + log(s2) + eps[t] * eps[t] / s2)
            else:
                nll += -(c - 0.5 * log(s2)
                         - 0.5 * (nu + 1.0) * log(1.0 + eps[t] * eps[t] / (s2 * (nu - 2.0))))
    return nll
