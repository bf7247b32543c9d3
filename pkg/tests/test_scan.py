"""Compiled and pure-numpy scan kernels must agree bit for bit.

Contract outputs (the write-once out_* arrays) are comparable in full;
carried state is compared only on rows that are still running, since the
compiled kernels abandon finished rows while the fallback keeps updating
them.
"""
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cusumlab import _scan_py
from cusumlab.backends import COMPILED

if COMPILED:
    from cusumlab import _scan
else:  # pragma: no cover - the build ships the extension
    _scan = None

needs_compiled = pytest.mark.skipif(not COMPILED,
                                    reason="compiled backend not built")

rng = np.random.default_rng(2024)


def _both(fn_name, build):
    """Run one kernel through both backends on identical inputs."""
    a = build()
    b = {k: (v.copy() if isinstance(v, np.ndarray) else v)
         for k, v in a.items()}
    getattr(_scan, fn_name)(**a)
    getattr(_scan_py, fn_name)(**b)
    return a, b


@needs_compiled
def test_exit_scan_backends_agree():
    m, L = 500, 64
    def build():
        return dict(inc=rng.normal(0.1, 0.5, (m, L)).copy(),
                    ell=np.zeros(m), steps=np.zeros(m, np.int64),
                    stop_step=np.full(m, -1, np.int64),
                    stop_val=np.zeros(m), lo=1.0, hi=1.0)
    a, b = _both("exit_scan", build)
    np.testing.assert_array_equal(a["stop_step"], b["stop_step"])
    np.testing.assert_array_equal(a["stop_val"], b["stop_val"])
    alive = a["stop_step"] < 0
    np.testing.assert_array_equal(a["steps"][alive], b["steps"][alive])
    np.testing.assert_array_equal(a["ell"][alive], b["ell"][alive])
    assert (~alive).sum() > 0.9 * m  # workload actually exits


def test_exit_scan_matches_cumsum_oracle():
    m, L = 200, 128
    inc = rng.normal(0.0, 0.6, (m, L)).copy()
    ell = np.zeros(m)
    steps = np.zeros(m, np.int64)
    stop_step = np.full(m, -1, np.int64)
    stop_val = np.zeros(m)
    _scan_py.exit_scan(inc, ell, steps, stop_step, stop_val, 1.2, 0.8)
    c = np.cumsum(inc, axis=1)
    outside = (c >= 0.8) | (c <= -1.2)
    for i in range(m):
        j = np.flatnonzero(outside[i])
        if j.size:
            assert stop_step[i] == j[0] + 1
            assert stop_val[i] == c[i, j[0]]
        else:
            assert stop_step[i] == -1


@needs_compiled
def test_cusum_scan_backends_agree_multi_threshold():
    m, L, T = 400, 96, 3
    thr = np.array([0.5, 2.0, 4.0])
    def build():
        inc = rng.normal(0.15, 1.0, (m, L)).copy()
        return dict(inc=inc, aux=inc * 0.5, y=np.zeros(m), u=np.zeros(m),
                    base=np.zeros(m, np.int64), nxt=np.zeros(m, np.int64),
                    thr=thr, out_step=np.full((m, T), -1, np.int64),
                    out_u=np.zeros((m, T)), out_y=np.zeros((m, T)))
    a, b = _both("cusum_scan", build)
    for k in ("out_step", "out_u", "out_y"):
        np.testing.assert_array_equal(a[k], b[k])
    alive = a["nxt"] < T
    for k in ("y", "u", "base", "nxt"):
        np.testing.assert_array_equal(a[k][alive], b[k][alive])


def test_cusum_scan_chunking_is_transparent():
    m, L, T = 64, 80, 2
    inc = rng.normal(0.1, 1.0, (m, L)).copy()
    thr = np.array([1.0, 3.0])

    def run(chunks):
        y, u = np.zeros(m), np.zeros(m)
        base, nxt = np.zeros(m, np.int64), np.zeros(m, np.int64)
        out_step = np.full((m, T), -1, np.int64)
        out_u, out_y = np.zeros((m, T)), np.zeros((m, T))
        for lo, hi in chunks:
            _scan_py.cusum_scan(inc[:, lo:hi].copy(), inc[:, lo:hi].copy(),
                                y, u, base, nxt, thr, out_step, out_u, out_y)
        return out_step, out_u, out_y

    one = run([(0, L)])
    two = run([(0, 33), (33, L)])
    for x, y in zip(one, two):
        np.testing.assert_array_equal(x, y)


@needs_compiled
def test_dcusum_scan_backends_agree():
    m, K, L = 200, 3, 96
    def build():
        return dict(
            inc=rng.normal(0.1, 0.45, (m, K, L)).copy(),
            ell=np.zeros((m, K)), ytil=np.zeros(m), u=np.zeros(m),
            msgs=np.zeros(m, np.int64), base=np.zeros(m, np.int64),
            nxt=np.zeros(m, np.int64),
            dbar=np.full(K, 0.9), dund=np.full(K, 0.9),
            eps_bar=np.full((K, 1), 0.3), eps_und=np.full((K, 1), 0.3),
            lam_bar=np.tile([1.1, 1.5], (K, 1)),
            lam_und=np.tile([-1.0, -1.4], (K, 1)),
            thr=np.array([2.0, 5.0]),
            out_step=np.full((m, 2), -1, np.int64),
            out_u=np.zeros((m, 2)), out_ytil=np.zeros((m, 2)),
            out_msgs=np.full((m, 2), -1, np.int64))
    a, b = _both("dcusum_scan", build)
    for k in ("out_step", "out_u", "out_ytil", "out_msgs"):
        np.testing.assert_array_equal(a[k], b[k])
    alive = a["nxt"] < 2
    for k in ("ell", "ytil", "u", "msgs", "base"):
        np.testing.assert_array_equal(a[k][alive], b[k][alive])
    assert a["out_step"][:, 0].max() > 0


@needs_compiled
def test_bank_scan_backends_agree():
    m, K, L = 200, 4, 96
    def build():
        return dict(
            inc=rng.normal(0.2, 1.0, (m, K, L)).copy(),
            y=np.zeros((m, K)), u=np.zeros(m),
            msgs=np.zeros(m, np.int64), above=np.zeros((m, K), np.uint8),
            base=np.zeros(m, np.int64), nxt_all=np.zeros(m, np.int64),
            nxt_any=np.zeros(m, np.int64), inv_i0=np.full(K, 2.0),
            thr=np.array([1.5, 6.0]),
            out_all_step=np.full((m, 2), -1, np.int64),
            out_all_u=np.zeros((m, 2)),
            out_all_msgs=np.full((m, 2), -1, np.int64),
            out_any_step=np.full((m, 2), -1, np.int64),
            out_any_u=np.zeros((m, 2)),
            out_any_msgs=np.full((m, 2), -1, np.int64))
    a, b = _both("bank_scan", build)
    for k in ("out_all_step", "out_all_u", "out_all_msgs",
              "out_any_step", "out_any_u", "out_any_msgs"):
        np.testing.assert_array_equal(a[k], b[k])
    alive = (a["nxt_all"] < 2) | (a["nxt_any"] < 2)
    for k in ("y", "u", "msgs", "base"):
        np.testing.assert_array_equal(a[k][alive], b[k][alive])


@needs_compiled
@given(st.integers(1, 6), st.integers(1, 24), st.integers(0, 2 ** 31))
@settings(max_examples=40, deadline=None)
def test_cusum_scan_backends_agree_property(m, L, seed):
    g = np.random.default_rng(seed)
    inc = g.normal(0.0, 1.0, (m, L)).copy()
    thr = np.sort(g.uniform(0.2, 4.0, 2))
    if thr[1] <= thr[0]:
        thr[1] = thr[0] + 0.1
    def build():
        return dict(inc=inc.copy(), aux=inc.copy(), y=np.zeros(m),
                    u=np.zeros(m), base=np.zeros(m, np.int64),
                    nxt=np.zeros(m, np.int64), thr=thr.copy(),
                    out_step=np.full((m, 2), -1, np.int64),
                    out_u=np.zeros((m, 2)), out_y=np.zeros((m, 2)))
    a, b = _both("cusum_scan", build)
    for k in ("out_step", "out_u", "out_y"):
        np.testing.assert_array_equal(a[k], b[k])


def test_backend_env_override_selects_python():
    code = ("import cusumlab, json; "
            "print(json.dumps([cusumlab.BACKEND, cusumlab.COMPILED]))")
    out = subprocess.run(
        [sys.executable, "-c", code],
        env={"PATH": "/usr/bin:/bin", "CUSUMLAB_BACKEND": "python"},
        capture_output=True, text=True, check=True)
    assert out.stdout.strip() == '["python", false]'


@needs_compiled
def test_backends_give_identical_estimates_end_to_end():
    """The same tiny experiment, run in subprocesses under each backend,
    reports bit-identical delay statistics."""
    code = (
        "from cusumlab.model import SensorModel\n"
        "from cusumlab.simharness import estimate_delay\n"
        "m = SensorModel.gaussian([1.0, 1.0])\n"
        "d = estimate_delay('centralized', m, 3.0, reps=400, seed=13)\n"
        "print(repr((d.mean_steps, d.stderr_steps, d.mean_kl, d.stderr_kl)))\n"
    )
    outs = []
    for backend in ("compiled", "python"):
        r = subprocess.run(
            [sys.executable, "-c", code],
            env={"PATH": "/usr/bin:/bin", "CUSUMLAB_BACKEND": backend},
            capture_output=True, text=True, check=True)
        outs.append(r.stdout)
    assert outs[0] == outs[1]
