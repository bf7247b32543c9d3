"""Delay and false-alarm estimation, OC sweeps, and the loss bound check."""
import math

import numpy as np
import pytest

from cusumlab.calibration import (CalibrationError, FalseAlarmTarget,
                                  ThresholdCache, calibrate_threshold)
from cusumlab.detectors import QcusumConfig
from cusumlab.model import SensorModel
from cusumlab.simharness import (CensoringError, ExperimentSpec, OCPoint,
                                 _delay_pass, communication_account,
                                 delay_tau_sweep, estimate_delay,
                                 estimate_false_alarm, oc_sweep,
                                 verify_theorem1)


def test_delay_grows_at_the_pooled_information_rate(m5):
    """Mean stopping step is near nu / (K * Ibar0) for the pooled rule."""
    nus = np.array([4.0, 6.0, 8.0])
    means = []
    for nu in nus:
        est = estimate_delay("centralized", m5, float(nu), reps=4_000,
                             seed=50)
        means.append(est.mean_steps)
    slope = np.polyfit(nus, np.array(means), 1)[0]
    assert abs(slope - 0.4) / 0.4 < 0.15


def test_tiny_threshold_stops_almost_immediately(m5):
    est = estimate_delay("centralized", m5, 1e-6, reps=4_000, seed=51)
    assert 1.0 <= est.mean_steps < 1.3
    assert est.censored_fraction == 0.0


def test_quantized_rule_pays_a_delay_premium(m5, q5_r3_d2):
    """At a matched false-alarm level the message-based rule is slower
    than the centralized one, and the shared replication streams make the
    paired comparison tighter than an independent one."""
    rec_d = calibrate_threshold("dcusum", m5, FalseAlarmTarget(1_000.0),
                                quantizers=q5_r3_d2, fa_reps=500, seed=52)
    rec_c = calibrate_threshold("centralized", m5,
                                FalseAlarmTarget(rec_d.achieved_gamma),
                                fa_reps=200_000, seed=52,
                                estimator="cycles")
    st_d, u_d, _ = _delay_pass("dcusum", m5, [rec_d.threshold], 3_000, 53,
                               quantizers=q5_r3_d2)
    st_c, u_c, _ = _delay_pass("centralized", m5, [rec_c.threshold], 3_000,
                               53)
    live = (st_d[:, 0] >= 0) & (st_c[:, 0] >= 0)
    diff = u_d[live, 0] - u_c[live, 0]
    n = diff.size
    se_pair = diff.std(ddof=1) / math.sqrt(n)
    assert diff.mean() > 3.0 * se_pair
    se_unpaired = math.hypot(u_d[live, 0].std(ddof=1),
                             u_c[live, 0].std(ddof=1)) / math.sqrt(n)
    assert se_pair < se_unpaired


def test_small_horizon_raises_censoring_error(m1):
    with pytest.raises(CensoringError):
        estimate_delay("centralized", m1, 50.0, reps=200, seed=54,
                       horizon=10)


def test_false_alarm_wald_identity_all_detectors(m5, q5_r3_d2):
    qc = QcusumConfig.equal_mass(m5, 3, 2, 1.0)
    cases = [("centralized", 4.0, {}),
             ("dcusum", 3.0, {"quantizers": q5_r3_d2}),
             ("qcusum", 4.0, {"qcusum": qc}),
             ("mei", 2.0, {}),
             ("min-cusum", 2.0, {})]
    for det, thr, kw in cases:
        est = estimate_false_alarm(det, m5, thr, reps=1_200, seed=55, **kw)
        z = abs(est.mean_kl - est.wald_kl) / est.stderr_kl
        assert z < 3.0, (det, est.mean_kl, est.wald_kl)
        assert est.wald_kl == pytest.approx(est.mean_steps * 2.5)


def test_delay_increases_with_threshold(m2):
    for det in ("centralized", "mei", "min-cusum"):
        lo = estimate_delay(det, m2, 2.0, reps=2_500, seed=56)
        hi = estimate_delay(det, m2, 4.0, reps=2_500, seed=56)
        gap = hi.mean_kl - lo.mean_kl
        assert gap > 3.0 * math.hypot(lo.stderr_kl, hi.stderr_kl)


def test_change_at_zero_is_the_slowest_case(m5):
    sweep = delay_tau_sweep("centralized", m5, 4.0, taus=(0, 10, 100),
                            reps=4_000, seed=57)
    (t0, d0), *rest = sweep
    assert t0 == 0
    for tau, d in rest:
        assert d0.mean_steps >= d.mean_steps - 3.0 * math.hypot(
            d0.stderr_steps, d.stderr_steps)


def test_message_rate_tracks_the_exit_period(m5, q5_r3_d2):
    """Post change, each sensor exits its band about every third step, so
    the long-run message rate per sensor sits near 1/3."""
    est = estimate_delay("dcusum", m5, 25.0, reps=500, seed=58,
                         quantizers=q5_r3_d2)
    assert est.msgs_per_step_per_sensor == pytest.approx(1.0 / 3.0,
                                                         rel=0.15)


def test_communication_account_counts_bits():
    assert communication_account(100.0, 50.0, 2, 1)["total_bits"] == 100.0
    assert communication_account(100.0, 50.0, 2, 2)["total_bits"] == 200.0
    acct = communication_account(100.0, 50.0, 2, 4)
    assert acct["total_bits"] == 300.0
    assert acct["msgs_per_step_per_sensor"] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        communication_account(-1.0, 50.0, 2, 1)
    with pytest.raises(ValueError):
        communication_account(1.0, 0.0, 2, 1)


def test_oc_sweep_is_reproducible_and_jobs_invariant(m2):
    spec = ExperimentSpec(model=m2, detectors=("centralized", "min-cusum"),
                          gammas=(50.0, 200.0), seed=59, delay_reps=400,
                          fa_reps=300)
    a = oc_sweep(spec)
    b = oc_sweep(spec)
    assert a.points == b.points and not a.errors and not b.errors
    spec2 = ExperimentSpec(model=m2, detectors=("centralized", "min-cusum"),
                           gammas=(50.0, 200.0), seed=59, delay_reps=400,
                           fa_reps=300, jobs=2)
    c = oc_sweep(spec2)
    assert c.points == a.points


def test_oc_sweep_captures_per_point_failures(m5):
    spec = ExperimentSpec(model=m5, detectors=("mei", "centralized"),
                          gammas=(100.0, 1_000.0), seed=60, delay_reps=400,
                          fa_reps=400)
    res = oc_sweep(spec)
    assert any(e.detector == "mei" and e.gamma == 100.0 for e in res.errors)
    assert [p.gamma for p in res.points["mei"]] == [1_000.0]
    assert [p.gamma for p in res.points["centralized"]] == [100.0, 1_000.0]
    for p in res.points["centralized"]:
        assert p.msgs_per_step_per_sensor == 1.0
        assert p.bits_per_message == math.inf


def test_oc_sweep_uses_threshold_cache(tmp_path, m2):
    path = str(tmp_path / "thr.json")
    spec = ExperimentSpec(model=m2, detectors=("centralized",),
                          gammas=(50.0,), seed=61, delay_reps=200,
                          fa_reps=300)
    cache = ThresholdCache(path)
    first = oc_sweep(spec, cache)
    assert len(cache) == 1
    # a second sweep with calibrate=False must run entirely off the cache
    reloaded = ThresholdCache(path)
    second = oc_sweep(spec, reloaded, calibrate=False)
    assert second.points == first.points
    empty = ThresholdCache(str(tmp_path / "none.json"))
    with pytest.raises(CalibrationError, match="no cached threshold"):
        oc_sweep(spec, empty, calibrate=False)


def test_spec_validation():
    m = SensorModel.gaussian([1.0])
    with pytest.raises(ValueError):
        ExperimentSpec(model=m, detectors=(), gammas=(10.0,))
    with pytest.raises(ValueError):
        ExperimentSpec(model=m, detectors=("sprt",), gammas=(10.0,))
    with pytest.raises(ValueError):
        ExperimentSpec(model=m, detectors=("mei",), gammas=())
    with pytest.raises(ValueError):
        ExperimentSpec(model=m, detectors=("mei",), gammas=(10.0, 5.0))
    with pytest.raises(ValueError):
        ExperimentSpec(model=m, detectors=("mei",), gammas=(-1.0, 5.0))
    with pytest.raises(ValueError):
        ExperimentSpec(model=m, detectors=("mei",), gammas=(10.0,),
                       delay_reps=1)


def test_oc_point_validation():
    good = dict(detector="centralized", gamma=10.0, threshold=2.0,
                mean_delay_steps=3.0, stderr_delay_steps=0.1,
                mean_delay_kl=5.0, stderr_delay_kl=0.2, mean_fa_period=20.0,
                achieved_gamma=10.0, msgs_per_step_per_sensor=1.0,
                bits_per_message=math.inf, reps=100)
    OCPoint(**good)
    with pytest.raises(ValueError):
        OCPoint(**{**good, "reps": 1})
    with pytest.raises(ValueError):
        OCPoint(**{**good, "stderr_delay_kl": 0.0})


def test_loss_bound_report_smoke():
    rep = verify_theorem1(K=2, deltas=(0.5,), gammas=(100.0,), dt=1e-3,
                          delay_reps=800, fa_reps=250, llr_reps=50_000,
                          seed=62)
    assert len(rep.rows) == 1
    row = rep.rows[0]
    assert row.bound == pytest.approx(4.0 * 2 * 0.5)
    for field in (row.j_dcusum, row.j_centralized, row.diff, row.diff_se,
                  row.gamma_matched, row.nu_tilde, row.nu_centralized):
        assert math.isfinite(field)
    assert row.diff < row.bound
    assert rep.all_passed == all(r.passed for r in rep.rows)
