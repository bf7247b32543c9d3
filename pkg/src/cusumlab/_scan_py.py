"""Pure-numpy scan kernels (fallback backend).

Each function advances a batch of independent replications through one chunk
of increments, recording first-crossing data. The compiled backend in
_scan.pyx implements the same contracts; the two must agree bit-for-bit, so
every function here applies, per row, exactly the floating-point operation
sequence of the compiled row loop (time-outer with vectorized row math —
row arithmetic is independent, so loop nesting order does not matter).

Shared conventions:
  * inc chunks are C-contiguous float64; state arrays are updated in place.
  * `base` counts steps consumed before this chunk; recorded step indices are
    1-based totals (base + offset-in-chunk + 1).
  * thresholds are strictly increasing; a statistic exactly at a threshold
    counts as a crossing.
  * out_step arrays are preset to -1 by the caller; a row's entry is written
    exactly once, at its first crossing of that threshold.
  * carried state is meaningful only for rows that have not yet exhausted all
    thresholds (or exited); finished rows keep receiving updates here while
    the compiled backend abandons them early, so callers must drop finished
    rows after each chunk.
"""
from __future__ import annotations

import numpy as np


def exit_scan(inc, ell, steps, stop_step, stop_val, lo, hi):
    """Two-sided exit scan: stop a row when its running sum leaves (-lo, hi).

    inc: (m, L); ell: (m,) running sums; steps: (m,) int64 steps consumed
    (updated only for rows that do not exit); stop_step: (m,) int64 preset -1,
    set to the 1-based total step count at exit; stop_val: (m,) set to the sum
    at exit. Boundary hits are exits.
    """
    m, L = inc.shape
    done = stop_step >= 0
    for t in range(L):
        ell += inc[:, t]
        hit = ~done & ((ell >= hi) | (ell <= -lo))
        if hit.any():
            stop_step[hit] = steps[hit] + t + 1
            stop_val[hit] = ell[hit]
            done |= hit
            if done.all():
                return
    steps[~done] += L


def cusum_scan(inc, aux, y, u, base, nxt, thr, out_step, out_u, out_y):
    """Multi-threshold CUSUM scan with a parallel accumulator.

    Per step: y <- max(y, 0) + inc; u <- u + aux; then every threshold
    thr[nxt], thr[nxt+1], ... now at or below y is recorded (1-based total
    step, u, y) and nxt advances. inc drives the statistic; aux is whatever
    should be accumulated alongside (pass inc itself when they coincide,
    e.g. the true pooled LLR when the statistic runs on quantized data).

    inc, aux: (m, L); y, u: (m,); base, nxt: (m,) int64;
    thr: (T,) ascending; out_*: (m, T).
    """
    m, L = inc.shape
    T = thr.shape[0]
    thr_of = np.minimum(nxt, T - 1)
    for t in range(L):
        np.maximum(y, 0.0, out=y)
        y += inc[:, t]
        u += aux[:, t]
        while True:
            can = (nxt < T) & (y >= thr[thr_of])
            if not can.any():
                break
            rows = np.nonzero(can)[0]
            cols = nxt[rows]
            out_step[rows, cols] = base[rows] + t + 1
            out_u[rows, cols] = u[rows]
            out_y[rows, cols] = y[rows]
            nxt[rows] += 1
            thr_of = np.minimum(nxt, T - 1)
        if not (nxt < T).any():
            return
    running = nxt < T
    base[running] += L


def dcusum_scan(inc, ell, ytil, u, msgs, base, nxt,
                dbar, dund, eps_bar, eps_und, lam_bar, lam_und,
                thr, out_step, out_u, out_ytil, out_msgs):
    """Fused sensor-side and fusion-side D-CUSUM scan.

    Per grid step each sensor accumulates its local LLR; when it leaves
    (-dund[k], dbar[k]) the overshoot is quantized (cells closed on the left),
    the message LLR is added to this instant's fusion increment, and the local
    sum resets to zero. Simultaneous messages are folded into one fusion
    update ytil <- max(ytil, 0) + sum(message LLRs), applied in ascending
    sensor order; the fusion statistic only changes at message instants.
    u tracks the true pooled LLR (all sensors, every step) for KL accounting.

    inc: (m, K, L); ell: (m, K); ytil, u: (m,); msgs: (m,) int64;
    base, nxt: (m,) int64; dbar, dund: (K,); eps_bar, eps_und: (K, d-1)
    ascending; lam_bar: (K, d) positive; lam_und: (K, d) negative (the signed
    value added to the fusion increment); thr: (T,) ascending;
    out_step/out_msgs: (m, T) int64, out_u/out_ytil: (m, T).
    """
    m, K, L = inc.shape
    T = thr.shape[0]
    w = np.empty(m)
    for t in range(L):
        col = inc[:, :, t]
        for k in range(K):
            u += col[:, k]
        ell += col
        pos = ell >= dbar[None, :]
        neg = ell <= -dund[None, :]
        sent = pos.any(axis=1) | neg.any(axis=1)
        if sent.any():
            w[:] = 0.0
            for k in range(K):
                pk = pos[:, k]
                if pk.any():
                    v = ell[pk, k] - dbar[k]
                    cell = np.searchsorted(eps_bar[k], v, side="right")
                    w[pk] += lam_bar[k, cell]
                    msgs[pk] += 1
                    ell[pk, k] = 0.0
                nk = neg[:, k]
                if nk.any():
                    v = -ell[nk, k] - dund[k]
                    cell = np.searchsorted(eps_und[k], v, side="right")
                    w[nk] += lam_und[k, cell]
                    msgs[nk] += 1
                    ell[nk, k] = 0.0
            yt = ytil[sent]
            np.maximum(yt, 0.0, out=yt)
            ytil[sent] = yt + w[sent]
            while True:
                can = sent & (nxt < T) & (ytil >= thr[np.minimum(nxt, T - 1)])
                if not can.any():
                    break
                rows = np.nonzero(can)[0]
                cols = nxt[rows]
                out_step[rows, cols] = base[rows] + t + 1
                out_u[rows, cols] = u[rows]
                out_ytil[rows, cols] = ytil[rows]
                out_msgs[rows, cols] = msgs[rows]
                nxt[rows] += 1
            if not (nxt < T).any():
                return
    running = nxt < T
    base[running] += L


def bank_scan(inc, y, u, msgs, above, base, nxt_all, nxt_any, inv_i0, thr,
              out_all_step, out_all_u, out_all_msgs,
              out_any_step, out_any_u, out_any_msgs):
    """Per-sensor CUSUM bank scan for the all-above and any-above rules.

    Each sensor runs its own CUSUM y[., k]; the bank statistic pair is
    (min_k, max_k) of y[., k] * inv_i0[k]. The all-above rule (every scaled
    statistic at or over c) and the any-above rule (first scaled statistic at
    or over c) are tracked against the same ascending grid thr of c values in
    one pass. u tracks the true pooled LLR.

    Announce messages are counted as upcrossings of the scaled per-sensor
    statistic over thr[0] (meaningful when thr has length 1, i.e. on runs at
    a single calibrated threshold; grid passes get a diagnostic count only).

    inc: (m, K, L); y: (m, K); u: (m,); msgs: (m,) int64; above: (m, K) uint8;
    base, nxt_all, nxt_any: (m,) int64; inv_i0: (K,); thr: (T,) ascending.
    """
    m, K, L = inc.shape
    T = thr.shape[0]
    c0 = thr[0]
    for t in range(L):
        col = inc[:, :, t]
        for k in range(K):
            u += col[:, k]
        np.maximum(y, 0.0, out=y)
        y += col
        scaled = y * inv_i0[None, :]
        now = (scaled >= c0).view(np.uint8)
        msgs += np.sum((now == 1) & (above == 0), axis=1)
        above[:] = now
        mn = scaled[:, 0].copy()
        mx = scaled[:, 0].copy()
        for k in range(1, K):
            np.minimum(mn, scaled[:, k], out=mn)
            np.maximum(mx, scaled[:, k], out=mx)
        for stat, nxt, ostep, ou, omsg in (
            (mn, nxt_all, out_all_step, out_all_u, out_all_msgs),
            (mx, nxt_any, out_any_step, out_any_u, out_any_msgs),
        ):
            while True:
                can = (nxt < T) & (stat >= thr[np.minimum(nxt, T - 1)])
                if not can.any():
                    break
                rows = np.nonzero(can)[0]
                cols = nxt[rows]
                ostep[rows, cols] = base[rows] + t + 1
                ou[rows, cols] = u[rows]
                omsg[rows, cols] = msgs[rows]
                nxt[rows] += 1
        if not ((nxt_all < T) | (nxt_any < T)).any():
            return
    running = (nxt_all < T) | (nxt_any < T)
    base[running] += L
