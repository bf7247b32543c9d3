"""Monte-Carlo drivers shared by calibration, quantizer design, and experiments.

This module owns the heavy simulation loops so that the public modules stay
declarative.  Everything here follows the same reproducibility contract:

* Each replication draws from its own counter-based substream, keyed by
  (seed, purpose, rep) or (seed, purpose, salt, row).  A replication's stream
  never depends on how work is batched, so serial and sharded runs are
  bit-identical, and two passes over the same reps replay the same paths.
* Chunk lengths follow a fixed schedule that depends only on the chunk index
  (times an optional multiplier such as the Q-CUSUM period), never on how
  many rows are still alive.  A row consumes a prefix of its stream, which
  makes common-random-number comparisons across thresholds and detectors
  exact.
* Memory stays bounded by generating rows in batches; batching is invisible
  in the results.

Post-change (delay) drivers all draw per-sensor increments from the shared
DELAY purpose, so different detectors consume identical raw paths and their
delay estimates are paired.  Pre-change (false-alarm) drivers key on the
detector too, and may draw pooled or block sums directly when that is
distributionally exact.

Callers of sample_exits pass a ``salt`` distinguishing statistically
independent uses; the conventions live with the callers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .backends import scan
from .model import SensorModel
from . import streams

# Detector discriminators inside the FALSE_ALARM purpose.
_FA_CENT = 1
_FA_QCUSUM = 2
_FA_DCUSUM = 3
_FA_BANK = 4

_CHUNK0 = 256
_CHUNK_MAX = 16384
# Cap on floats materialized per generation batch (~128 MB).
_BATCH_ELEMS = 1 << 24


class BudgetError(RuntimeError):
    """Raised when a driver would exceed its total step budget."""


def _chunk_len(c: int, mult: int = 1) -> int:
    return mult * min(_CHUNK0 << c, _CHUNK_MAX)


def _row_batches(rows: np.ndarray, per_row: int):
    """Split an index array so each batch stays under the element cap."""
    if rows.size == 0:
        return
    step = max(1, _BATCH_ELEMS // max(per_row, 1))
    for i in range(0, rows.size, step):
        yield rows[i:i + step]


def _shard(reps: int, jobs: int) -> list[tuple[int, int]]:
    jobs = max(1, min(int(jobs), reps))
    cut = np.linspace(0, reps, jobs + 1).astype(int)
    return [(int(a), int(b - a)) for a, b in zip(cut[:-1], cut[1:]) if b > a]


def _sensor_moments(model: SensorModel, post: bool):
    mus = np.asarray(model.mus, dtype=np.float64)
    dt = model.dt_eff
    sign = 1.0 if post else -1.0
    mean = sign * mus * mus * dt / 2.0
    sd = np.abs(mus) * math.sqrt(dt)
    return mean, sd


@dataclass
class ScanOut:
    """Per-rep crossing records over an ascending threshold grid.

    step holds the 1-based step (or block) count at the first crossing of
    each threshold, -1 where the threshold was not reached before the cap.
    u is the raw pooled LLR at that step, stat the detector statistic, and
    msgs the message counter where the detector has one.
    """

    step: np.ndarray
    u: np.ndarray
    stat: np.ndarray
    msgs: np.ndarray | None = None

    def concat(self, other: "ScanOut") -> "ScanOut":
        m = None if self.msgs is None else np.concatenate([self.msgs, other.msgs])
        return ScanOut(np.concatenate([self.step, other.step]),
                       np.concatenate([self.u, other.u]),
                       np.concatenate([self.stat, other.stat]), m)


# ---------------------------------------------------------------------------
# two-sided exit sampling for one sensor's random walk
# ---------------------------------------------------------------------------

def sample_exits(mean: float, sd: float, lo: float, hi: float, n: int,
                 seed: int, salt: int, bulk_len: int,
                 step_cap: float = 1e8) -> tuple[np.ndarray, np.ndarray]:
    """Draw n independent exits of a Gaussian walk from the band (-lo, hi).

    Returns (ell, steps): the walk value at exit and the 1-based exit step.
    The first bulk_len increments of row i come from the (seed, salt) bulk
    stream, later ones from a per-row tail stream, so row i's path is a
    fixed sequence independent of lo and hi.  Calls varying only the band
    therefore see common random numbers, making quantities like the mean
    exit time pathwise monotone in the band width.
    """
    if lo < 0 or hi <= 0:
        raise ValueError("exit band must have hi > 0 and lo >= 0")
    n = int(n)
    ell = np.zeros(n)
    steps = np.zeros(n, np.int64)
    stop_step = np.full(n, -1, np.int64)
    stop_val = np.zeros(n)
    bulk = streams.substream(seed, streams.EXIT_BULK, salt)
    rows = np.arange(n)
    for batch in _row_batches(rows, bulk_len):
        inc = mean + sd * bulk.standard_normal((batch.size, bulk_len))
        e, s = ell[batch], steps[batch]
        ss, sv = stop_step[batch], stop_val[batch]
        scan.exit_scan(inc, e, s, ss, sv, lo, hi)
        ell[batch], steps[batch] = e, s
        stop_step[batch], stop_val[batch] = ss, sv
    alive = rows[stop_step < 0]
    gens = {int(r): streams.substream(seed, streams.EXIT_TAIL, salt, int(r))
            for r in alive}
    total = n * bulk_len
    tail_len, c = 64, 0
    while alive.size:
        total += alive.size * tail_len
        if total > step_cap:
            raise BudgetError(f"exit sampling exceeded {step_cap:.3g} steps")
        for batch in _row_batches(alive, tail_len):
            inc = np.empty((batch.size, tail_len))
            for j, r in enumerate(batch):
                inc[j] = mean + sd * gens[int(r)].standard_normal(tail_len)
            e, s = ell[batch], steps[batch]
            ss, sv = stop_step[batch], stop_val[batch]
            scan.exit_scan(inc, e, s, ss, sv, lo, hi)
            ell[batch], steps[batch] = e, s
            stop_step[batch], stop_val[batch] = ss, sv
        alive = alive[stop_step[alive] < 0]
        c += 1
        tail_len = min(64 << c, _CHUNK_MAX)
    return stop_val, stop_step


def exit_bulk_len(mean: float, sd: float, hi: float,
                  lo: float | None = None) -> int:
    """Bulk length heuristic: several times the crude mean exit time.

    Considers both exit mechanisms: ballistic (span over drift) and
    diffusive (squared distance to the nearest boundary in step-sd
    units).  Whichever acts first sets the scale.  A band whose lower
    edge sits at the start point, as in renewal cycles, exits in a few
    steps almost surely, so the drift estimate alone would oversize the
    bulk by orders of magnitude there.
    """
    drift = abs(mean)
    near = hi if lo is None else min(hi, lo)
    span = 2.0 * hi if lo is None else hi + lo
    t_drift = span / drift if drift > 0 else math.inf
    t_diff = ((near + sd) / sd) ** 2
    est = min(t_drift, 4.0 * t_diff)
    return int(min(max(8, 6.0 * est + 8), 4096))


# ---------------------------------------------------------------------------
# shared chunk loop
# ---------------------------------------------------------------------------

def _run_loop(reps, rep0, seed, purpose_key, k_draw, sd, mean_pre, mean_post,
              tau, scan_rows, alive_rows, *, sched_mult=1, step_cap=1e8,
              horizon_cap=None):
    """Generate per-rep Gaussian chunks and feed them to scan_rows.

    k_draw rows of standard normals are drawn per rep per step, scaled by
    sd (length k_draw) and shifted by the pre/post means; steps with index
    >= tau are post-change (tau None means never).  scan_rows(rows, inc)
    advances those rows' state in place; alive_rows(rows) filters the rows
    still running.  Returns the number of censored rows (alive at the
    horizon cap).
    """
    gens = [streams.substream(seed, *purpose_key, rep0 + i)
            for i in range(reps)]
    active = np.arange(reps)
    pos = 0
    total = 0
    c = 0
    while active.size:
        L = _chunk_len(c, sched_mult)
        if horizon_cap is not None:
            L = min(L, horizon_cap - pos)
            if L <= 0:
                break
        total += active.size * L * k_draw
        if total > step_cap:
            raise BudgetError(f"step budget {step_cap:.3g} exceeded "
                              f"with {active.size} rows alive")
        for batch in _row_batches(active, L * k_draw):
            inc = np.empty((batch.size, k_draw, L))
            for j, r in enumerate(batch):
                inc[j] = gens[r].standard_normal((k_draw, L))
            inc *= sd[:, None]
            if tau is None:
                inc += mean_pre[:, None]
            elif pos >= tau:
                inc += mean_post[:, None]
            else:
                cut = min(L, tau - pos)
                inc[:, :, :cut] += mean_pre[:, None]
                inc[:, :, cut:] += mean_post[:, None]
            scan_rows(batch, inc)
        active = alive_rows(active)
        pos += L
        c += 1
    return active.size


# ---------------------------------------------------------------------------
# centralized CUSUM
# ---------------------------------------------------------------------------

def centralized_pass(model: SensorModel, thresholds, reps: int, seed: int,
                     *, post: bool, tau: int = 0, rep0: int = 0,
                     step_cap: float = 1e8, horizon_cap: int | None = None,
                     sched_mult: int = 1) -> ScanOut:
    """CUSUM of the pooled LLR over an ascending threshold grid.

    False-alarm runs (post=False) draw the pooled increment directly, one
    Gaussian per step, which is distributionally exact.  Post-change runs
    draw per-sensor increments from the shared DELAY streams and sum them,
    so the paths pair with the other detectors' delay runs.
    """
    thr = np.ascontiguousarray(thresholds, dtype=np.float64)
    T = thr.size
    y = np.zeros(reps)
    u = np.zeros(reps)
    base = np.zeros(reps, np.int64)
    nxt = np.zeros(reps, np.int64)
    out_step = np.full((reps, T), -1, np.int64)
    out_u = np.zeros((reps, T))
    out_y = np.zeros((reps, T))

    def scan_rows(rows, inc):
        pooled = np.ascontiguousarray(inc.sum(axis=1))
        yb, ub = y[rows], u[rows]
        bb, nb = base[rows], nxt[rows]
        os_, ou, oy = out_step[rows], out_u[rows], out_y[rows]
        scan.cusum_scan(pooled, pooled, yb, ub, bb, nb, thr, os_, ou, oy)
        y[rows], u[rows] = yb, ub
        base[rows], nxt[rows] = bb, nb
        out_step[rows], out_u[rows], out_y[rows] = os_, ou, oy

    def alive(rows):
        return rows[nxt[rows] < T]

    if post:
        mean_pre, sd = _sensor_moments(model, post=False)
        mean_post, _ = _sensor_moments(model, post=True)
        _run_loop(reps, rep0, seed, (streams.DELAY,), model.K, sd,
                  mean_pre, mean_post, tau, scan_rows, alive,
                  sched_mult=sched_mult, step_cap=step_cap,
                  horizon_cap=horizon_cap)
    else:
        mean, psd = model.pooled_step(post=False)
        _run_loop(reps, rep0, seed, (streams.FALSE_ALARM, _FA_CENT), 1,
                  np.array([psd]), np.array([mean]), np.array([mean]), None,
                  scan_rows, alive, sched_mult=sched_mult, step_cap=step_cap,
                  horizon_cap=horizon_cap)
    return ScanOut(out_step, out_u, out_y)


# ---------------------------------------------------------------------------
# Q-CUSUM (block-quantized fusion)
# ---------------------------------------------------------------------------

def qcusum_pass(model: SensorModel, gammas_inner, block_llrs, r: int,
                thresholds, reps: int, seed: int, *, post: bool,
                tau: int = 0, rep0: int = 0, step_cap: float = 1e8,
                horizon_cap_blocks: int | None = None) -> ScanOut:
    """Fusion CUSUM on quantized r-step block sums.

    gammas_inner has shape (K, b-1) and block_llrs (K, b).  Step counts in
    the result are block counts; multiply by r for physical steps.  False-
    alarm runs draw each block sum directly (one Gaussian per sensor per
    block); post-change runs consume the shared per-step DELAY streams so
    the underlying paths match the other detectors.
    """
    K = model.K
    gi = np.ascontiguousarray(gammas_inner, dtype=np.float64)
    bl = np.ascontiguousarray(block_llrs, dtype=np.float64)
    thr = np.ascontiguousarray(thresholds, dtype=np.float64)
    T = thr.size
    y = np.zeros(reps)
    u = np.zeros(reps)
    base = np.zeros(reps, np.int64)
    nxt = np.zeros(reps, np.int64)
    out_step = np.full((reps, T), -1, np.int64)
    out_u = np.zeros((reps, T))
    out_y = np.zeros((reps, T))

    def scan_blocks(rows, blocks):
        inc = np.empty((blocks.shape[0], blocks.shape[2]))
        inc[:] = 0.0
        for k in range(K):
            z = np.searchsorted(gi[k], blocks[:, k, :], side="right")
            inc += bl[k][z]
        aux = np.ascontiguousarray(blocks.sum(axis=1))
        inc = np.ascontiguousarray(inc)
        yb, ub = y[rows], u[rows]
        bb, nb = base[rows], nxt[rows]
        os_, ou, oy = out_step[rows], out_u[rows], out_y[rows]
        scan.cusum_scan(inc, aux, yb, ub, bb, nb, thr, os_, ou, oy)
        y[rows], u[rows] = yb, ub
        base[rows], nxt[rows] = bb, nb
        out_step[rows], out_u[rows], out_y[rows] = os_, ou, oy

    def alive(rows):
        return rows[nxt[rows] < T]

    if post:
        mean_pre, sd = _sensor_moments(model, post=False)
        mean_post, _ = _sensor_moments(model, post=True)

        def scan_rows(rows, inc):
            m, _, L = inc.shape
            blocks = inc.reshape(m, K, L // r, r).sum(axis=3)
            scan_blocks(rows, blocks)

        _run_loop(reps, rep0, seed, (streams.DELAY,), K, sd, mean_pre,
                  mean_post, tau, scan_rows, alive, sched_mult=r,
                  step_cap=step_cap,
                  horizon_cap=None if horizon_cap_blocks is None
                  else horizon_cap_blocks * r)
    else:
        mean_s, sd_s = _sensor_moments(model, post=False)
        _run_loop(reps, rep0, seed, (streams.FALSE_ALARM, _FA_QCUSUM), K,
                  math.sqrt(r) * sd_s, r * mean_s, r * mean_s, None,
                  scan_blocks, alive, step_cap=step_cap,
                  horizon_cap=horizon_cap_blocks)
    return ScanOut(out_step, out_u, out_y)


# ---------------------------------------------------------------------------
# D-CUSUM (message-triggered fusion)
# ---------------------------------------------------------------------------

def dcusum_pass(model: SensorModel, qarrays, thresholds, reps: int,
                seed: int, *, post: bool, tau: int = 0, rep0: int = 0,
                step_cap: float = 1e8, horizon_cap: int | None = None,
                sched_mult: int = 1) -> ScanOut:
    """Fusion CUSUM driven by sensor exit messages, simulated per step.

    qarrays is the stacked quantizer parameter tuple
    (dbar, dund, eps_bar, eps_und, lam_bar, lam_und_signed) with shapes
    (K,), (K,), (K, d-1), (K, d-1), (K, d), (K, d); lam_und_signed holds
    the negated down-message LLRs.
    """
    dbar, dund, eps_bar, eps_und, lam_bar, lam_und = qarrays
    thr = np.ascontiguousarray(thresholds, dtype=np.float64)
    T = thr.size
    K = model.K
    ell = np.zeros((reps, K))
    ytil = np.zeros(reps)
    u = np.zeros(reps)
    msgs = np.zeros(reps, np.int64)
    base = np.zeros(reps, np.int64)
    nxt = np.zeros(reps, np.int64)
    out_step = np.full((reps, T), -1, np.int64)
    out_u = np.zeros((reps, T))
    out_ytil = np.zeros((reps, T))
    out_msgs = np.zeros((reps, T), np.int64)

    def scan_rows(rows, inc):
        eb, yb, ub = ell[rows], ytil[rows], u[rows]
        mb, bb, nb = msgs[rows], base[rows], nxt[rows]
        os_, ou = out_step[rows], out_u[rows]
        oy, om = out_ytil[rows], out_msgs[rows]
        scan.dcusum_scan(inc, eb, yb, ub, mb, bb, nb, dbar, dund, eps_bar,
                         eps_und, lam_bar, lam_und, thr, os_, ou, oy, om)
        ell[rows], ytil[rows], u[rows] = eb, yb, ub
        msgs[rows], base[rows], nxt[rows] = mb, bb, nb
        out_step[rows], out_u[rows] = os_, ou
        out_ytil[rows], out_msgs[rows] = oy, om

    def alive(rows):
        return rows[nxt[rows] < T]

    mean_pre, sd = _sensor_moments(model, post=False)
    mean_post, _ = _sensor_moments(model, post=True)
    if post:
        _run_loop(reps, rep0, seed, (streams.DELAY,), K, sd, mean_pre,
                  mean_post, tau, scan_rows, alive, sched_mult=sched_mult,
                  step_cap=step_cap, horizon_cap=horizon_cap)
    else:
        _run_loop(reps, rep0, seed, (streams.FALSE_ALARM, _FA_DCUSUM), K,
                  sd, mean_pre, mean_pre, None, scan_rows, alive,
                  sched_mult=sched_mult, step_cap=step_cap,
                  horizon_cap=horizon_cap)
    return ScanOut(out_step, out_u, out_ytil, out_msgs)


# ---------------------------------------------------------------------------
# local-CUSUM bank (Mei's rule and min-CUSUM in one pass)
# ---------------------------------------------------------------------------

def bank_pass(model: SensorModel, c_grid, reps: int, seed: int, *,
              post: bool, tau: int = 0, rep0: int = 0,
              step_cap: float = 1e8, horizon_cap: int | None = None,
              sched_mult: int = 1,
              want: str = "both") -> tuple[ScanOut, ScanOut]:
    """Per-sensor CUSUM bank; returns (all-above, any-above) records.

    c_grid is the ascending grid of proportionality constants; sensor k's
    threshold is c * I0^k (per step).  Message counters track upcrossings
    of the first grid value only, so they are meaningful for single-
    threshold runs.  want selects which rule must resolve before a row is
    released: the all-sensors rule lags the any-sensor rule by an
    exponential factor in the threshold, so callers interested in one
    side only should say so and read the other side as censored.
    """
    if want not in ("both", "all", "any"):
        raise ValueError("want must be 'both', 'all' or 'any'")
    thr = np.ascontiguousarray(c_grid, dtype=np.float64)
    T = thr.size
    K = model.K
    kl_step = np.asarray([mu * mu / 2.0 for mu in model.mus]) * model.dt_eff
    inv_i0 = np.ascontiguousarray(1.0 / kl_step)
    y = np.zeros((reps, K))
    u = np.zeros(reps)
    msgs = np.zeros(reps, np.int64)
    above = np.zeros((reps, K), np.uint8)
    base = np.zeros(reps, np.int64)
    nxt_all = np.zeros(reps, np.int64)
    nxt_any = np.zeros(reps, np.int64)
    oas = np.full((reps, T), -1, np.int64)
    oau = np.zeros((reps, T))
    oam = np.zeros((reps, T), np.int64)
    ons = np.full((reps, T), -1, np.int64)
    onu = np.zeros((reps, T))
    onm = np.zeros((reps, T), np.int64)

    def scan_rows(rows, inc):
        yb, ub, mb = y[rows], u[rows], msgs[rows]
        ab, bb = above[rows], base[rows]
        na, ny = nxt_all[rows], nxt_any[rows]
        a1, a2, a3 = oas[rows], oau[rows], oam[rows]
        n1, n2, n3 = ons[rows], onu[rows], onm[rows]
        scan.bank_scan(inc, yb, ub, mb, ab, bb, na, ny, inv_i0, thr,
                       a1, a2, a3, n1, n2, n3)
        y[rows], u[rows], msgs[rows] = yb, ub, mb
        above[rows], base[rows] = ab, bb
        nxt_all[rows], nxt_any[rows] = na, ny
        oas[rows], oau[rows], oam[rows] = a1, a2, a3
        ons[rows], onu[rows], onm[rows] = n1, n2, n3

    def alive(rows):
        if want == "all":
            return rows[nxt_all[rows] < T]
        if want == "any":
            return rows[nxt_any[rows] < T]
        return rows[(nxt_all[rows] < T) | (nxt_any[rows] < T)]

    mean_pre, sd = _sensor_moments(model, post=False)
    mean_post, _ = _sensor_moments(model, post=True)
    if post:
        _run_loop(reps, rep0, seed, (streams.DELAY,), K, sd, mean_pre,
                  mean_post, tau, scan_rows, alive, sched_mult=sched_mult,
                  step_cap=step_cap, horizon_cap=horizon_cap)
    else:
        _run_loop(reps, rep0, seed, (streams.FALSE_ALARM, _FA_BANK), K, sd,
                  mean_pre, mean_pre, None, scan_rows, alive,
                  sched_mult=sched_mult, step_cap=step_cap,
                  horizon_cap=horizon_cap)
    # the bank scan records no fused statistic; the message counter sits
    # in both the stat and msgs slots
    return (ScanOut(oas, oau, oam, oam), ScanOut(ons, onu, onm, onm))


# ---------------------------------------------------------------------------
# sharding across processes
# ---------------------------------------------------------------------------

_PASS_FNS = {
    "centralized": centralized_pass,
    "qcusum": qcusum_pass,
    "dcusum": dcusum_pass,
    "bank": bank_pass,
}


def _run_shard(name, args, seed, kwargs, rep0, reps):
    kwargs = dict(kwargs, rep0=rep0)
    return _PASS_FNS[name](*args, reps, seed, **kwargs)


def sharded_pass(name: str, args: tuple, reps: int, seed: int,
                 jobs: int = 1, **kwargs):
    """Run one of the *_pass drivers, optionally split over processes.

    args holds the positional arguments preceding reps; seed and the
    keyword arguments are forwarded.  Shards cover disjoint rep ranges and
    results are concatenated in replication order, so the output is
    bit-identical for every jobs value.
    """
    shards = _shard(reps, jobs)
    if len(shards) <= 1:
        return _run_shard(name, args, seed, kwargs, 0, reps)
    with ProcessPoolExecutor(max_workers=len(shards)) as pool:
        futs = [pool.submit(_run_shard, name, args, seed, kwargs, rep0, n)
                for rep0, n in shards]
        parts = [f.result() for f in futs]
    if name == "bank":
        out_all, out_any = parts[0]
        for pa, pn in parts[1:]:
            out_all, out_any = out_all.concat(pa), out_any.concat(pn)
        return out_all, out_any
    out = parts[0]
    for p in parts[1:]:
        out = out.concat(p)
    return out
