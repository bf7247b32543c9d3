# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled scan kernels. Contracts and floating-point semantics are defined
by the reference implementations in _scan_py.py; the two backends must agree
bit-for-bit (enforced by tests and by building with -ffp-contract=off)."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def exit_scan(double[:, ::1] inc, double[::1] ell, long long[::1] steps,
              long long[::1] stop_step, double[::1] stop_val,
              double lo, double hi):
    cdef Py_ssize_t m = inc.shape[0], L = inc.shape[1], i, t
    cdef double e
    for i in range(m):
        if stop_step[i] >= 0:
            continue
        e = ell[i]
        for t in range(L):
            e = e + inc[i, t]
            if e >= hi or e <= -lo:
                stop_step[i] = steps[i] + t + 1
                stop_val[i] = e
                break
        else:
            steps[i] += L
        ell[i] = e


def cusum_scan(double[:, ::1] inc, double[:, ::1] aux,
               double[::1] y, double[::1] u,
               long long[::1] base, long long[::1] nxt, double[::1] thr,
               long long[:, ::1] out_step, double[:, ::1] out_u,
               double[:, ::1] out_y):
    cdef Py_ssize_t m = inc.shape[0], L = inc.shape[1], T = thr.shape[0]
    cdef Py_ssize_t i, t
    cdef long long j
    cdef double yv, uv
    cdef bint ran_out
    for i in range(m):
        j = nxt[i]
        if j >= T:
            continue
        yv = y[i]
        uv = u[i]
        ran_out = True
        for t in range(L):
            if yv < 0.0:
                yv = 0.0
            yv = yv + inc[i, t]
            uv = uv + aux[i, t]
            while j < T and yv >= thr[j]:
                out_step[i, j] = base[i] + t + 1
                out_u[i, j] = uv
                out_y[i, j] = yv
                j += 1
            if j >= T:
                ran_out = False
                break
        if ran_out:
            base[i] += L
        y[i] = yv
        u[i] = uv
        nxt[i] = j


cdef inline Py_ssize_t _cell(double v, double[:, ::1] eps,
                             Py_ssize_t k, Py_ssize_t d1) nogil:
    # cells closed on the left: cell j covers [eps[j-1], eps[j])
    cdef Py_ssize_t j = 0
    while j < d1 and v >= eps[k, j]:
        j += 1
    return j


def dcusum_scan(double[:, :, ::1] inc, double[:, ::1] ell,
                double[::1] ytil, double[::1] u, long long[::1] msgs,
                long long[::1] base, long long[::1] nxt,
                double[::1] dbar, double[::1] dund,
                double[:, ::1] eps_bar, double[:, ::1] eps_und,
                double[:, ::1] lam_bar, double[:, ::1] lam_und,
                double[::1] thr,
                long long[:, ::1] out_step, double[:, ::1] out_u,
                double[:, ::1] out_ytil, long long[:, ::1] out_msgs):
    cdef Py_ssize_t m = inc.shape[0], K = inc.shape[1], L = inc.shape[2]
    cdef Py_ssize_t T = thr.shape[0], d1 = eps_bar.shape[1]
    cdef Py_ssize_t i, t, k, cell
    cdef long long j, nm
    cdef double uv, yt, w, e
    cdef bint any_msg, ran_out
    for i in range(m):
        j = nxt[i]
        if j >= T:
            continue
        uv = u[i]
        yt = ytil[i]
        nm = msgs[i]
        ran_out = True
        for t in range(L):
            for k in range(K):
                uv = uv + inc[i, k, t]
            any_msg = False
            w = 0.0
            for k in range(K):
                e = ell[i, k] + inc[i, k, t]
                if e >= dbar[k]:
                    cell = _cell(e - dbar[k], eps_bar, k, d1)
                    w = w + lam_bar[k, cell]
                    nm += 1
                    e = 0.0
                    any_msg = True
                elif e <= -dund[k]:
                    cell = _cell(-e - dund[k], eps_und, k, d1)
                    w = w + lam_und[k, cell]
                    nm += 1
                    e = 0.0
                    any_msg = True
                ell[i, k] = e
            if any_msg:
                if yt < 0.0:
                    yt = 0.0
                yt = yt + w
                while j < T and yt >= thr[j]:
                    out_step[i, j] = base[i] + t + 1
                    out_u[i, j] = uv
                    out_ytil[i, j] = yt
                    out_msgs[i, j] = nm
                    j += 1
                if j >= T:
                    ran_out = False
                    break
        if ran_out:
            base[i] += L
        u[i] = uv
        ytil[i] = yt
        msgs[i] = nm
        nxt[i] = j


def bank_scan(double[:, :, ::1] inc, double[:, ::1] y, double[::1] u,
              long long[::1] msgs, cnp.uint8_t[:, ::1] above,
              long long[::1] base, long long[::1] nxt_all,
              long long[::1] nxt_any, double[::1] inv_i0, double[::1] thr,
              long long[:, ::1] out_all_step, double[:, ::1] out_all_u,
              long long[:, ::1] out_all_msgs,
              long long[:, ::1] out_any_step, double[:, ::1] out_any_u,
              long long[:, ::1] out_any_msgs):
    cdef Py_ssize_t m = inc.shape[0], K = inc.shape[1], L = inc.shape[2]
    cdef Py_ssize_t T = thr.shape[0]
    cdef Py_ssize_t i, t, k
    cdef long long ja, jn, nm
    cdef double uv, yv, sc, mn, mx, c0 = thr[0]
    cdef cnp.uint8_t nw
    cdef bint ran_out
    for i in range(m):
        ja = nxt_all[i]
        jn = nxt_any[i]
        if ja >= T and jn >= T:
            continue
        uv = u[i]
        nm = msgs[i]
        ran_out = True
        for t in range(L):
            for k in range(K):
                uv = uv + inc[i, k, t]
            mn = 0.0
            mx = 0.0
            for k in range(K):
                yv = y[i, k]
                if yv < 0.0:
                    yv = 0.0
                yv = yv + inc[i, k, t]
                y[i, k] = yv
                sc = yv * inv_i0[k]
                nw = 1 if sc >= c0 else 0
                if nw == 1 and above[i, k] == 0:
                    nm += 1
                above[i, k] = nw
                if k == 0:
                    mn = sc
                    mx = sc
                else:
                    if sc < mn:
                        mn = sc
                    if sc > mx:
                        mx = sc
            while ja < T and mn >= thr[ja]:
                out_all_step[i, ja] = base[i] + t + 1
                out_all_u[i, ja] = uv
                out_all_msgs[i, ja] = nm
                ja += 1
            while jn < T and mx >= thr[jn]:
                out_any_step[i, jn] = base[i] + t + 1
                out_any_u[i, jn] = uv
                out_any_msgs[i, jn] = nm
                jn += 1
            if ja >= T and jn >= T:
                ran_out = False
                break
        if ran_out:
            base[i] += L
        u[i] = uv
        msgs[i] = nm
        nxt_all[i] = ja
        nxt_any[i] = jn
