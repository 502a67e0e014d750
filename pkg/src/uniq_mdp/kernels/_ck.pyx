# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel backend. Mirrors _pk exactly; see kernels/__init__ for the
argument contracts."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log, log1p

cnp.import_array()

cdef double _LIMIT = 1e9
cdef double _NEG_INF = -1e308


cdef inline double _sig(double x) nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _clip(double x, double lo, double hi) nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


def ratio_ascent(cnp.ndarray[cnp.float64_t, ndim=1] l1,
                 cnp.ndarray[cnp.float64_t, ndim=1] l2,
                 object w_un, object w_mix,
                 long steps, double lr, double clip_eps, long every):
    cdef Py_ssize_t n = l1.shape[0]
    cdef double[::1] a = l1
    cdef double[::1] b = l2
    cdef const double[::1] wu = w_un
    cdef const double[::1] wm = w_mix
    cdef cnp.ndarray[cnp.int64_t, ndim=1] t_step = np.empty(steps // every + 2, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t_val = np.empty(steps // every + 2, dtype=np.float64)
    cdef long[::1] ts = t_step
    cdef double[::1] tv = t_val
    cdef Py_ssize_t n_rec = 0
    cdef long step
    cdef Py_ssize_t i
    cdef double m1, m2, g

    with nogil:
        for step in range(steps + 1):
            if (step % every == 0 and step < steps) or step == steps:
                g = 0.0
                for i in range(n):
                    m1 = _clip(_sig(a[i]), clip_eps, 1.0 - clip_eps)
                    m2 = _clip(_sig(b[i]), clip_eps, 1.0 - clip_eps)
                    g += wm[i] * (log(m2) + log1p(-m1)) + wu[i] * (log(m1) + log1p(-m2))
                ts[n_rec] = step
                tv[n_rec] = g
                n_rec += 1
            if step == steps:
                break
            for i in range(n):
                m1 = _sig(a[i])
                m2 = _sig(b[i])
                a[i] += lr * (wu[i] * (1.0 - m1) - wm[i] * m1)
                b[i] += lr * (wm[i] * (1.0 - m2) - wu[i] * m2)

    return l1, l2, t_step[:n_rec].copy(), t_val[:n_rec].copy()


def train_loop(cnp.ndarray[cnp.float64_t, ndim=2] q,
               cnp.ndarray[cnp.float64_t, ndim=2] theta,
               object sa, object ns, object wt, object tau, object w0,
               object wbc, object mask,
               double gamma, long steps, double lr_q, double lr_pi,
               double direction, double cap_lo, double cap_hi, long every):
    cdef Py_ssize_t S = q.shape[0]
    cdef Py_ssize_t A = q.shape[1]
    cdef double[:, ::1] qv = q
    cdef double[:, ::1] thv = theta
    cdef const cnp.int64_t[::1] sav = sa
    cdef const cnp.int64_t[::1] nsv = ns
    cdef const double[::1] wtv = wt
    cdef const double[::1] w0v = w0
    cdef const cnp.uint8_t[:, ::1] mv = mask
    cdef Py_ssize_t K = sav.shape[0]

    cdef cnp.ndarray tk_arr = np.ascontiguousarray(np.asarray(tau)[np.asarray(sa)])
    cdef const double[::1] tk = tk_arr
    cdef cnp.ndarray wb2_arr = np.ascontiguousarray(np.asarray(wbc).reshape(S, A))
    cdef const double[:, ::1] wb2 = wb2_arr

    cdef cnp.ndarray v_arr = np.empty(S, dtype=np.float64)
    cdef cnp.ndarray rbuf_arr = np.empty(K, dtype=np.float64)
    cdef cnp.ndarray grad_arr = np.zeros((S, A), dtype=np.float64)
    cdef cnp.ndarray nsm_arr = np.zeros(S, dtype=np.float64)
    cdef cnp.ndarray advw_arr = np.empty((S, A), dtype=np.float64)
    cdef cnp.ndarray pith_arr = np.empty((S, A), dtype=np.float64)
    cdef double[::1] v = v_arr
    cdef double[::1] rbuf = rbuf_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double[::1] nsm = nsm_arr
    cdef double[:, ::1] advw = advw_arr
    cdef double[:, ::1] pith = pith_arr

    cdef long n_alloc = steps // every + 2
    cdef cnp.ndarray[cnp.int64_t, ndim=1] t_step = np.empty(n_alloc, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t_f = np.empty(n_alloc, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] t_wbc = np.empty(n_alloc, dtype=np.float64)
    cdef long[::1] ts = t_step
    cdef double[::1] tf = t_f
    cdef double[::1] tw = t_wbc
    cdef Py_ssize_t n_rec = 0

    cdef long status = 0
    cdef long bad_step = -1
    cdef long step
    cdef Py_ssize_t s, aa, k, flat
    cdef double m, acc, f, r, c, wbc_obj, adv, w, mm, pi, rowsum, z, lrqd
    cdef double one_m_gamma = 1.0 - gamma

    lrqd = lr_q * direction

    with nogil:
        for step in range(steps + 1):
            # soft values over the observed-action mask
            for s in range(S):
                m = _NEG_INF
                for aa in range(A):
                    if mv[s, aa] and qv[s, aa] > m:
                        m = qv[s, aa]
                acc = 0.0
                for aa in range(A):
                    if mv[s, aa]:
                        acc += exp(qv[s, aa] - m)
                v[s] = m + log(acc)
            # objective over aggregated transitions
            f = 0.0
            for k in range(K):
                r = qv[sav[k] // A, sav[k] % A] - gamma * v[nsv[k]]
                rbuf[k] = r
                f += wtv[k] * (tk[k] * r + r - r * r)
            for s in range(S):
                f -= one_m_gamma * w0v[s] * v[s]
            if not (f == f) or fabs(f) > _LIMIT:
                status = 1
                bad_step = step
                break
            # weighted-BC objective at the pre-update tables
            wbc_obj = 0.0
            for s in range(S):
                m = thv[s, 0]
                for aa in range(1, A):
                    if thv[s, aa] > m:
                        m = thv[s, aa]
                z = 0.0
                for aa in range(A):
                    z += exp(thv[s, aa] - m)
                rowsum = 0.0
                for aa in range(A):
                    adv = qv[s, aa] - v[s]
                    if adv > 50.0:
                        adv = 50.0
                    w = wb2[s, aa] * _clip(exp(adv), cap_lo, cap_hi)
                    advw[s, aa] = w
                    pi = exp(thv[s, aa] - m) / z
                    pith[s, aa] = pi
                    wbc_obj += w * (thv[s, aa] - m - log(z))
                    rowsum += w
            if (step % every == 0 and step < steps) or step == steps:
                ts[n_rec] = step
                tf[n_rec] = f
                tw[n_rec] = -wbc_obj
                n_rec += 1
            if step == steps:
                break
            # gradient of f wrt q
            for s in range(S):
                nsm[s] = 0.0
                for aa in range(A):
                    grad[s, aa] = 0.0
            for k in range(K):
                c = wtv[k] * (tk[k] + 1.0 - 2.0 * rbuf[k])
                grad[sav[k] // A, sav[k] % A] += c
                nsm[nsv[k]] += c
            for s in range(S):
                mm = gamma * nsm[s] + one_m_gamma * w0v[s]
                for aa in range(A):
                    if mv[s, aa]:
                        pi = exp(qv[s, aa] - v[s])
                    else:
                        pi = 0.0
                    qv[s, aa] -= lrqd * (grad[s, aa] - pi * mm)
            # policy ascent on the weighted-BC objective
            if lr_pi != 0.0:
                for s in range(S):
                    rowsum = 0.0
                    for aa in range(A):
                        rowsum += advw[s, aa]
                    for aa in range(A):
                        thv[s, aa] += lr_pi * (advw[s, aa] - pith[s, aa] * rowsum)

    return (q, theta, t_step[:n_rec].copy(), t_f[:n_rec].copy(),
            t_wbc[:n_rec].copy(), status, bad_step)
