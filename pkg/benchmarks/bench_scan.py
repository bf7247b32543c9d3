"""Timing comparison of the compiled and pure-numpy scan kernels.

Runs each kernel on identical inputs through both backends, checks that
every contract output matches bit for bit, and reports throughput in
sensor-steps per second.  Workloads are sized so that no replication
finishes inside the chunk, which keeps every state array comparable and
makes the step counts exact.

    python3 benchmarks/bench_scan.py [--scale S] [--repeats N]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from cusumlab import _scan_py

try:
    from cusumlab import _scan
except ImportError:
    _scan = None


def _fresh(seed: int, shape) -> np.ndarray:
    rng = np.random.default_rng(seed)
    # small positive drift, sub-threshold scale: nothing exits the chunk
    return rng.normal(0.001, 0.02, size=shape)


def setup_exit(scale: int):
    m, L = 4000 * scale, 256
    inc = _fresh(1, (m, L))
    arrs = dict(inc=inc, ell=np.zeros(m), steps=np.zeros(m, np.int64),
                stop_step=np.full(m, -1, np.int64), stop_val=np.zeros(m))
    return arrs, m * L


def run_exit(mod, a):
    mod.exit_scan(a["inc"], a["ell"], a["steps"], a["stop_step"],
                  a["stop_val"], 50.0, 50.0)


def setup_cusum(scale: int):
    m, L = 4000 * scale, 256
    inc = _fresh(2, (m, L))
    thr = np.array([1e6])
    arrs = dict(inc=inc, y=np.zeros(m), u=np.zeros(m),
                base=np.zeros(m, np.int64), nxt=np.zeros(m, np.int64),
                thr=thr, out_step=np.full((m, 1), -1, np.int64),
                out_u=np.zeros((m, 1)), out_y=np.zeros((m, 1)))
    return arrs, m * L


def run_cusum(mod, a):
    mod.cusum_scan(a["inc"], a["inc"], a["y"], a["u"], a["base"], a["nxt"],
                   a["thr"], a["out_step"], a["out_u"], a["out_y"])


def setup_dcusum(scale: int):
    m, K, L = 800 * scale, 5, 256
    inc = _fresh(3, (m, K, L))
    arrs = dict(
        inc=inc, ell=np.zeros((m, K)), ytil=np.zeros(m), u=np.zeros(m),
        msgs=np.zeros(m, np.int64), base=np.zeros(m, np.int64),
        nxt=np.zeros(m, np.int64),
        dbar=np.full(K, 0.8), dund=np.full(K, 0.8),
        eps_bar=np.full((K, 1), 0.4), eps_und=np.full((K, 1), 0.4),
        lam_bar=np.tile([1.0, 1.6], (K, 1)),
        lam_und=np.tile([-0.9, -1.5], (K, 1)),
        thr=np.array([1e6]), out_step=np.full((m, 1), -1, np.int64),
        out_u=np.zeros((m, 1)), out_ytil=np.zeros((m, 1)),
        out_msgs=np.full((m, 1), -1, np.int64))
    return arrs, m * K * L


def run_dcusum(mod, a):
    mod.dcusum_scan(a["inc"], a["ell"], a["ytil"], a["u"], a["msgs"],
                    a["base"], a["nxt"], a["dbar"], a["dund"], a["eps_bar"],
                    a["eps_und"], a["lam_bar"], a["lam_und"], a["thr"],
                    a["out_step"], a["out_u"], a["out_ytil"], a["out_msgs"])


def setup_bank(scale: int):
    m, K, L = 800 * scale, 5, 256
    inc = _fresh(4, (m, K, L))
    arrs = dict(
        inc=inc, y=np.zeros((m, K)), u=np.zeros(m),
        msgs=np.zeros(m, np.int64), above=np.zeros((m, K), np.uint8),
        base=np.zeros(m, np.int64), nxt_all=np.zeros(m, np.int64),
        nxt_any=np.zeros(m, np.int64), inv_i0=np.full(K, 2.0),
        thr=np.array([1e6]),
        out_all_step=np.full((m, 1), -1, np.int64),
        out_all_u=np.zeros((m, 1)),
        out_all_msgs=np.full((m, 1), -1, np.int64),
        out_any_step=np.full((m, 1), -1, np.int64),
        out_any_u=np.zeros((m, 1)),
        out_any_msgs=np.full((m, 1), -1, np.int64))
    return arrs, m * K * L


def run_bank(mod, a):
    mod.bank_scan(a["inc"], a["y"], a["u"], a["msgs"], a["above"], a["base"],
                  a["nxt_all"], a["nxt_any"], a["inv_i0"], a["thr"],
                  a["out_all_step"], a["out_all_u"], a["out_all_msgs"],
                  a["out_any_step"], a["out_any_u"], a["out_any_msgs"])


KERNELS = [
    ("exit_scan", setup_exit, run_exit),
    ("cusum_scan", setup_cusum, run_cusum),
    ("dcusum_scan", setup_dcusum, run_dcusum),
    ("bank_scan", setup_bank, run_bank),
]


def time_one(mod, setup, run, scale: int, repeats: int):
    best = float("inf")
    final = None
    for _ in range(repeats):
        arrs, steps = setup(scale)
        t0 = time.perf_counter()
        run(mod, arrs)
        best = min(best, time.perf_counter() - t0)
        final = arrs
    return best, steps, final


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scale", type=int, default=1,
                    help="multiply replication counts by this factor")
    ap.add_argument("--repeats", type=int, default=3,
                    help="timing repeats per kernel (best is reported)")
    args = ap.parse_args()

    if _scan is None:
        print("compiled backend is not importable; timing the fallback only")
    header = (f"{'kernel':<12} {'steps':>10} {'python':>10} {'compiled':>10} "
              f"{'speedup':>8}  match")
    print(header)
    print("-" * len(header))
    for name, setup, run in KERNELS:
        t_py, steps, out_py = time_one(_scan_py, setup, run, args.scale,
                                       args.repeats)
        if _scan is None:
            print(f"{name:<12} {steps:>10,} {t_py:>9.3f}s {'-':>10} {'-':>8}")
            continue
        t_c, _, out_c = time_one(_scan, setup, run, args.scale, args.repeats)
        same = all(np.array_equal(np.asarray(out_py[k]), np.asarray(out_c[k]))
                   for k in out_py)
        print(f"{name:<12} {steps:>10,} {t_py:>9.3f}s {t_c:>9.3f}s "
              f"{t_py / t_c:>7.1f}x  {'yes' if same else 'NO'}")
        if not same:
            bad = [k for k in out_py
                   if not np.array_equal(np.asarray(out_py[k]),
                                         np.asarray(out_c[k]))]
            print(f"  backend mismatch in: {', '.join(bad)}")
            return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
