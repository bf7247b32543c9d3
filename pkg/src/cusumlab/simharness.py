"""Monte-Carlo experiment engine.

Estimates detection delay and false-alarm period, sweeps operating
characteristics over a false-alarm grid with communication accounting, and
runs the empirical check of the fusion-vs-centralized performance-loss
bound.  Worst-case delay is measured at change time 0; a change-time sweep
diagnostic is provided to surface violations of that choice.

All delay runs, for every detector, consume the same per-replication
post-change streams, so delay comparisons between detectors are paired
path by path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _engine
from ._engine import BudgetError
from .calibration import (KL_UNITS, CalibrationError, CalibrationRecord,
                          FalseAlarmTarget, ThresholdCache, _fa_pass,
                          calibrate_many, calibrate_threshold,
                          nu_tilde_bound, quantizer_hash, sprt_cusum_oracle)
from .detectors import (CENTRALIZED, DCUSUM, MEI, MINCUSUM, QCUSUM,
                        QcusumConfig)
from .model import SensorModel, kl_numbers
from .quantizer import QuantizerConfig, calibrate_llr, design_for_model, stack_configs

_KNOWN = (CENTRALIZED, QCUSUM, DCUSUM, MEI, MINCUSUM)

#: a delay estimate is rejected when more than this fraction of the
#: replications is still running at the horizon cap
_CENSOR_LIMIT = 1e-3


class CensoringError(RuntimeError):
    """Raised when too many delay replications hit the horizon cap."""


# ---------------------------------------------------------------------------
# result containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DelayEstimate:
    """Worst-case delay of one calibrated detector, both clocks.

    mean_steps averages the 1-based stopping step; mean_kl averages the
    pooled LLR at the stop (the modified-criterion delay).  Censored
    replications are excluded from the averages and reported as a
    fraction.  msgs_per_step_per_sensor is None for rules without a
    message counter on this run.
    """

    mean_steps: float
    stderr_steps: float
    mean_kl: float
    stderr_kl: float
    censored_fraction: float
    reps: int
    msgs_per_step_per_sensor: Optional[float] = None


@dataclass(frozen=True)
class FalseAlarmEstimate:
    """Mean time to false alarm in steps, physical time, and KL units.

    wald_kl is the identity-based conversion K * Ibar_inf * dt * mean
    steps; it must agree with mean_kl within Monte-Carlo error on
    random-walk models.
    """

    mean_steps: float
    stderr_steps: float
    mean_time: float
    mean_kl: float
    stderr_kl: float
    wald_kl: float
    reps: int


@dataclass(frozen=True)
class OCPoint:
    """One operating-characteristic point of one detector.

    gamma is the target false-alarm level of the sweep grid;
    achieved_gamma the measured one (they differ on message-lattice
    detectors, where the achievable levels are shelves).  mean_fa_period
    is in physical time units.  stderr_delay_steps may be zero when the
    stopping step is lattice-degenerate (a block rule at a tiny
    threshold); the KL-unit spread is always positive.
    """

    detector: str
    gamma: float
    threshold: float
    mean_delay_steps: float
    stderr_delay_steps: float
    mean_delay_kl: float
    stderr_delay_kl: float
    mean_fa_period: float
    achieved_gamma: float
    msgs_per_step_per_sensor: float
    bits_per_message: float
    reps: int
    censored_fraction: float = 0.0

    def __post_init__(self):
        if self.reps < 2:
            raise ValueError("an OC point needs at least 2 replications")
        if not self.stderr_delay_kl > 0:
            raise ValueError("degenerate KL-unit delay spread")
        if self.stderr_delay_steps < 0:
            raise ValueError("negative stderr")


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything one OC sweep depends on.

    gammas is the strictly increasing false-alarm grid, in the units named
    by measure.  r, d size the message quantizers, b the block alphabet of
    the fixed-period rule.  horizon_factor caps delay runs at
    horizon_factor * expected + 512 steps.
    """

    model: SensorModel
    detectors: tuple[str, ...]
    gammas: tuple[float, ...]
    r: int = 3
    d: int = 1
    b: int = 2
    measure: str = KL_UNITS
    seed: int = 0
    delay_reps: int = 10_000
    fa_reps: int = 1_000
    quantizer_exits: int = 2_000_000
    jobs: int = 1
    step_cap: float = 1e8
    horizon_factor: float = 32.0

    def __post_init__(self):
        object.__setattr__(self, "detectors", tuple(self.detectors))
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        if not self.detectors:
            raise ValueError("need at least one detector")
        for det in self.detectors:
            if det not in _KNOWN:
                raise ValueError(f"unknown detector {det!r}")
        if not self.gammas:
            raise ValueError("gamma grid is empty")
        if any(g <= 0 for g in self.gammas):
            raise ValueError("gamma values must be positive")
        if any(b <= a for a, b in zip(self.gammas, self.gammas[1:])):
            raise ValueError("gamma grid must be strictly increasing")
        if self.delay_reps < 2 or self.fa_reps < 2:
            raise ValueError("replication counts must be at least 2")


@dataclass(frozen=True)
class SweepError:
    """A per-point failure captured without aborting the sweep."""

    detector: str
    gamma: float
    message: str


@dataclass(frozen=True)
class SweepResult:
    spec: ExperimentSpec
    points: dict[str, list[OCPoint]]
    errors: list[SweepError]


# ---------------------------------------------------------------------------
# delay estimation
# ---------------------------------------------------------------------------

def _expected_delay_steps(detector: str, model: SensorModel, thr: float,
                          qcusum: Optional[QcusumConfig] = None) -> float:
    """First-order mean delay used only to size horizon caps."""
    kl = kl_numbers(model)
    pooled = model.K * kl.ibar0 * model.dt_eff
    if detector == QCUSUM:
        per_block = max(qcusum.info_per_block(model), 1e-12)
        return qcusum.r * (thr / per_block + 2.0)
    if detector in (MEI, MINCUSUM):
        # local thresholds are c * I0_k, crossed at drift I0_k per step
        return thr + 2.0
    return thr / pooled + 2.0


def _delay_pass(detector: str, model: SensorModel, thresholds, reps: int,
                seed: int, *, tau: int = 0, rep0: int = 0, jobs: int = 1,
                quantizers=None, qcusum: Optional[QcusumConfig] = None,
                horizon: Optional[int] = None, horizon_factor: float = 32.0,
                step_cap: float = 1e8):
    """(steps, u, msgs) arrays of shape (reps, T) for post-change runs.

    steps holds physical 1-based stopping steps, -1 where the run was
    censored at the horizon; u the pooled LLR at the stop; msgs the
    message count where the detector has one, else None.  Thresholds must
    be ascending.  The horizon cap defaults to horizon_factor * expected
    + 512, and the step budget is widened to cover it, so a delay pass
    never trips the budget before the cap.
    """
    thr = np.ascontiguousarray(np.atleast_1d(thresholds), dtype=np.float64)
    if np.any(np.diff(thr) < 0):
        raise ValueError("thresholds must be ascending")
    if horizon is None:
        exp = _expected_delay_steps(detector, model, float(thr[-1]), qcusum)
        horizon = int(horizon_factor * exp + 512) + tau
    cap = max(step_cap, 1.1 * reps * model.K * horizon + 1e6)

    if detector == CENTRALIZED:
        out = _engine.sharded_pass("centralized", (model, thr), reps, seed,
                                   jobs=jobs, post=True, tau=tau, rep0=rep0,
                                   step_cap=cap, horizon_cap=horizon)
        return out.step.astype(np.float64), out.u.copy(), None
    if detector == DCUSUM:
        if not quantizers:
            raise ValueError("the message-driven rule needs quantizer configs")
        qa = stack_configs(quantizers)
        out = _engine.sharded_pass("dcusum", (model, qa, thr), reps, seed,
                                   jobs=jobs, post=True, tau=tau, rep0=rep0,
                                   step_cap=cap, horizon_cap=horizon)
        return out.step.astype(np.float64), out.u.copy(), out.msgs.copy()
    if detector == QCUSUM:
        if qcusum is None:
            raise ValueError("the block rule needs a QcusumConfig")
        blocks = max(1, math.ceil(horizon / qcusum.r))
        out = _engine.sharded_pass(
            "qcusum",
            (model, qcusum.gammas, qcusum.block_llrs, qcusum.r, thr),
            reps, seed, jobs=jobs, post=True, tau=tau, rep0=rep0,
            step_cap=cap, horizon_cap_blocks=blocks)
        steps = out.step.astype(np.float64)
        steps[steps > 0] *= qcusum.r
        return steps, out.u.copy(), None
    if detector in (MEI, MINCUSUM):
        want = "all" if detector == MEI else "any"
        out_all, out_any = _engine.sharded_pass(
            "bank", (model, thr), reps, seed, jobs=jobs, post=True, tau=tau,
            rep0=rep0, step_cap=cap, horizon_cap=horizon, want=want)
        out = out_all if detector == MEI else out_any
        return out.step.astype(np.float64), out.u.copy(), out.msgs.copy()
    raise ValueError(f"unknown detector {detector!r}")


def _column_stats(steps: np.ndarray, u: np.ndarray):
    """Means and standard errors over the uncensored rows of one column."""
    live = steps >= 0
    n = int(live.sum())
    if n < 2:
        raise CensoringError("fewer than 2 uncensored replications")
    st, uu = steps[live], u[live]
    return (float(st.mean()), float(st.std(ddof=1) / math.sqrt(n)),
            float(uu.mean()), float(uu.std(ddof=1) / math.sqrt(n)),
            1.0 - n / steps.size, n)


def estimate_delay(detector: str, model: SensorModel, threshold: float,
                   reps: int = 10_000, *, tau: int = 0, seed: int = 0,
                   rep0: int = 0, jobs: int = 1, quantizers=None,
                   qcusum: Optional[QcusumConfig] = None,
                   horizon: Optional[int] = None,
                   horizon_factor: float = 32.0,
                   step_cap: float = 1e8) -> DelayEstimate:
    """Worst-case delay of one detector at one calibrated threshold.

    Simulates change at step tau (0 by default, the worst case for the
    centralized rule and the measurement point used throughout), averages
    the stopping step and the pooled LLR at the stop over the
    replications that resolve before the horizon cap, and fails if more
    than a 1e-3 fraction is censored.
    """
    steps, u, msgs = _delay_pass(
        detector, model, [threshold], reps, seed, tau=tau, rep0=rep0,
        jobs=jobs, quantizers=quantizers, qcusum=qcusum, horizon=horizon,
        horizon_factor=horizon_factor, step_cap=step_cap)
    ms, ses, mk, sek, frac, n = _column_stats(steps[:, 0], u[:, 0])
    if frac > _CENSOR_LIMIT:
        raise CensoringError(
            f"censored fraction {frac:.2e} exceeds {_CENSOR_LIMIT:g}; "
            "raise the horizon cap or lower the threshold")
    rate = None
    if detector == QCUSUM:
        rate = 1.0 / qcusum.r
    elif msgs is not None:
        live = steps[:, 0] >= 0
        acct = communication_account(float(msgs[live, 0].sum()),
                                     float(steps[live, 0].sum()),
                                     model.K, 1)
        rate = acct["msgs_per_step_per_sensor"]
    return DelayEstimate(ms, ses, mk, sek, frac, n, rate)


def delay_tau_sweep(detector: str, model: SensorModel, threshold: float, *,
                    taus: Sequence[int] = (0, 10, 100), reps: int = 4_000,
                    seed: int = 0, jobs: int = 1, quantizers=None,
                    qcusum: Optional[QcusumConfig] = None,
                    step_cap: float = 1e8) -> list[tuple[int, DelayEstimate]]:
    """Delay measured at several change times, as a worst-case diagnostic.

    For tau > 0 the estimate conditions on the run surviving the
    pre-change stretch: replications that alarm before tau are dropped
    and the delay is the stopping step minus tau over the survivors.
    Keep tau well below the false-alarm period or few survive.
    """
    out = []
    for tau in taus:
        tau = int(tau)
        steps, u, _ = _delay_pass(
            detector, model, [threshold], reps, seed, tau=tau, jobs=jobs,
            quantizers=quantizers, qcusum=qcusum, step_cap=step_cap)
        st = steps[:, 0]
        keep = st > tau
        st = np.where(keep, st - tau, -1.0)
        ms, ses, mk, sek, frac, n = _column_stats(st, u[:, 0])
        out.append((tau, DelayEstimate(ms, ses, mk, sek, frac, n)))
    return out


# ---------------------------------------------------------------------------
# false-alarm estimation
# ---------------------------------------------------------------------------

def estimate_false_alarm(detector: str, model: SensorModel, threshold: float,
                         reps: int = 1_000, *, seed: int = 0, rep0: int = 0,
                         jobs: int = 1, quantizers=None,
                         qcusum: Optional[QcusumConfig] = None,
                         step_cap: float = 1e8,
                         estimator: str = "direct") -> FalseAlarmEstimate:
    """Mean time to false alarm under the pre-change law.

    Direct runs simulate every replication to its alarm with
    geometrically growing chunks (the budget cap is the only limit and
    exceeding it raises).  estimator="cycles" switches the centralized
    rule to the renewal-cycle estimator, which measures the same
    grid-resolution quantity at a fraction of the cost on fine time
    grids.
    """
    if estimator not in ("direct", "cycles"):
        raise ValueError("estimator must be 'direct' or 'cycles'")
    kl = kl_numbers(model)
    factor = model.K * kl.ibarinf * model.dt_eff
    if estimator == "cycles":
        if detector != CENTRALIZED:
            raise ValueError("the cycle estimator applies to the "
                             "centralized rule only")
        orc = sprt_cusum_oracle(model, float(threshold), reps, seed=seed,
                                salt=rep0)
        return FalseAlarmEstimate(
            orc.einf_steps, orc.einf_steps_se,
            orc.einf_steps * model.dt_eff,
            orc.einf_minus_u, orc.einf_minus_u_se,
            factor * orc.einf_steps, reps)
    steps, mu = _fa_pass(detector, model, np.array([float(threshold)]), reps,
                         seed, rep0=rep0, jobs=jobs, step_cap=step_cap,
                         quantizers=quantizers, qcusum=qcusum)
    st, m = steps[:, 0], mu[:, 0]
    n = st.size
    mean_steps = float(st.mean())
    return FalseAlarmEstimate(
        mean_steps, float(st.std(ddof=1) / math.sqrt(n)),
        mean_steps * model.dt_eff,
        float(m.mean()), float(m.std(ddof=1) / math.sqrt(n)),
        factor * mean_steps, n)


# ---------------------------------------------------------------------------
# communication accounting
# ---------------------------------------------------------------------------

def communication_account(messages: float, horizon: float, K: int,
                          d: int) -> dict:
    """Message-rate and bit totals for a d-cell message alphabet.

    Each message spends one sign bit plus ceil(log2 d) cell bits.
    """
    if messages < 0 or horizon <= 0 or K < 1 or d < 1:
        raise ValueError("counts must be nonnegative, horizon and sizes "
                         "positive")
    bits_each = 1 + int(math.ceil(math.log2(d)))
    return {"msgs_per_step_per_sensor": messages / (horizon * K),
            "total_bits": messages * bits_each}


def _message_stats(detector: str, model: SensorModel, steps: np.ndarray,
                   msgs: Optional[np.ndarray], r: int, d: int,
                   b: int) -> tuple[float, float]:
    """(msgs_per_step_per_sensor, bits_per_message) for one OC point."""
    if detector == CENTRALIZED:
        return 1.0, math.inf
    if detector == QCUSUM:
        # every sensor sends one b-ary symbol per block, unconditionally
        return 1.0 / r, float(math.ceil(math.log2(b)))
    total = float(msgs.sum())
    acct = communication_account(total, float(steps.sum()), model.K,
                                 d if detector == DCUSUM else 1)
    bits = acct["total_bits"] / total if total > 0 else 0.0
    return acct["msgs_per_step_per_sensor"], bits


# ---------------------------------------------------------------------------
# operating-characteristic sweep
# ---------------------------------------------------------------------------

def _sweep_setup(spec: ExperimentSpec, detector: str, quantizers=None):
    """Quantization config (if any) for one detector of the sweep."""
    if detector == DCUSUM:
        if quantizers is not None:
            if len(quantizers) != spec.model.K:
                raise ValueError("need one quantizer config per sensor")
            return list(quantizers), None
        q = design_for_model(spec.model, spec.r, spec.d, seed=spec.seed,
                             delta_reps=max(spec.quantizer_exits // 2, 1000),
                             level_reps=spec.quantizer_exits,
                             llr_reps=spec.quantizer_exits)
        return q, None
    if detector == QCUSUM:
        return None, QcusumConfig.equal_mass(spec.model, spec.r, spec.b, 1.0)
    return None, None


def _calibrate_points(spec: ExperimentSpec, detector: str, quantizers,
                      qcusum, cache: Optional[ThresholdCache],
                      calibrate: bool, errors: list[SweepError]):
    """Calibration records per gamma, reading and filling the cache."""
    qhash = quantizer_hash(quantizers=quantizers, qcusum=qcusum)

    def cache_key(g):
        return ThresholdCache.key(detector, spec.model, qhash, g,
                                  spec.measure, spec.seed, spec.fa_reps)

    recs: dict[float, CalibrationRecord] = {}
    missing = []
    for g in spec.gammas:
        hit = cache.get(cache_key(g)) if cache is not None else None
        if hit is not None:
            recs[g] = hit
        else:
            missing.append(g)
    if missing and not calibrate:
        raise CalibrationError(
            f"{detector}: no cached threshold for gamma "
            + ", ".join(f"{g:g}" for g in missing)
            + " and calibration is disabled")

    def one(g):
        return calibrate_threshold(
            detector, spec.model, FalseAlarmTarget(g, spec.measure),
            quantizers=quantizers, qcusum=qcusum, fa_reps=spec.fa_reps,
            seed=spec.seed, jobs=spec.jobs, step_cap=spec.step_cap)

    if missing:
        try:
            targets = [FalseAlarmTarget(g, spec.measure) for g in missing]
            new = calibrate_many(detector, spec.model, targets,
                                 quantizers=quantizers, qcusum=qcusum,
                                 fa_reps=spec.fa_reps, seed=spec.seed,
                                 jobs=spec.jobs, step_cap=spec.step_cap)
            recs.update(zip(missing, new))
        except (CalibrationError, BudgetError):
            # retry point by point so one infeasible target does not
            # take the rest of the curve down with it
            for g in missing:
                try:
                    recs[g] = one(g)
                except (CalibrationError, BudgetError) as exc:
                    errors.append(SweepError(detector, g, str(exc)))
        if cache is not None:
            for g in missing:
                if g in recs:
                    cache.put(cache_key(g), recs[g])
    return recs


def oc_sweep(spec: ExperimentSpec, cache: Optional[ThresholdCache] = None,
             *, calibrate: bool = True, quantizers=None) -> SweepResult:
    """Operating characteristics of every detector on the gamma grid.

    Per point: the threshold comes from the cache or a fresh calibration,
    the false-alarm statistics from the calibration record, and the delay
    from post-change runs at change time 0.  All detectors' delay runs
    share replication streams, so the curves are paired.  Calibration
    failures are captured per point in the errors list; the surviving
    points still come back.  quantizers overrides the message-quantizer
    design (one config per sensor), for callers that cache designs.
    """
    model = spec.model
    errors: list[SweepError] = []
    points: dict[str, list[OCPoint]] = {}
    for det in spec.detectors:
        det_quantizers, qcusum = _sweep_setup(spec, det, quantizers)
        recs = _calibrate_points(spec, det, det_quantizers, qcusum, cache,
                                 calibrate, errors)
        ok = [g for g in spec.gammas if g in recs]
        if not ok:
            points[det] = []
            continue
        thr = np.array([recs[g].threshold for g in ok])
        if det in (MEI, MINCUSUM):
            # single-threshold passes keep the announce counters meaningful
            cols = []
            for t in thr:
                st, u, ms = _delay_pass(det, model, [t], spec.delay_reps,
                                        spec.seed, jobs=spec.jobs,
                                        horizon_factor=spec.horizon_factor,
                                        step_cap=spec.step_cap)
                cols.append((st[:, 0], u[:, 0], ms[:, 0]))
        else:
            st, u, ms = _delay_pass(det, model, thr, spec.delay_reps,
                                    spec.seed, jobs=spec.jobs,
                                    quantizers=det_quantizers, qcusum=qcusum,
                                    horizon_factor=spec.horizon_factor,
                                    step_cap=spec.step_cap)
            cols = [(st[:, i], u[:, i],
                     None if ms is None else ms[:, i])
                    for i in range(len(ok))]
        pts = []
        for g, (stc, uc, mc) in zip(ok, cols):
            try:
                m_st, se_st, m_kl, se_kl, frac, n = _column_stats(stc, uc)
                if frac > _CENSOR_LIMIT:
                    raise CensoringError(
                        f"delay censoring {frac:.2e} exceeds "
                        f"{_CENSOR_LIMIT:g}")
                live = stc >= 0
                rate, bits = _message_stats(
                    det, model, stc[live],
                    None if mc is None else mc[live], spec.r, spec.d,
                    spec.b)
                rec = recs[g]
                pts.append(OCPoint(
                    detector=det, gamma=g, threshold=rec.threshold,
                    mean_delay_steps=m_st, stderr_delay_steps=se_st,
                    mean_delay_kl=m_kl, stderr_delay_kl=se_kl,
                    mean_fa_period=rec.fa_mean_steps * model.dt_eff,
                    achieved_gamma=rec.achieved_gamma,
                    msgs_per_step_per_sensor=rate, bits_per_message=bits,
                    reps=n, censored_fraction=frac))
            except (CensoringError, ValueError) as exc:
                errors.append(SweepError(det, g, str(exc)))
        points[det] = pts
    if cache is not None and calibrate:
        cache.save()
    return SweepResult(spec=spec, points=points, errors=errors)


# ---------------------------------------------------------------------------
# performance-loss bound verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Theorem1Row:
    """One (band width, false-alarm level) cell of the bound check.

    diff is the paired estimate of J[message-driven] - J[centralized] at
    the matched false-alarm level; the row passes when diff does not
    exceed bound + 3 paired standard errors.
    """

    delta: float
    gamma_target: float
    gamma_matched: float
    nu_tilde: float
    nu_centralized: float
    j_dcusum: float
    j_dcusum_se: float
    j_centralized: float
    j_centralized_se: float
    diff: float
    diff_se: float
    bound: float
    passed: bool


@dataclass(frozen=True)
class Theorem1Report:
    rows: list[Theorem1Row]
    warnings: list[str]

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)


def _fixed_band_configs(model: SensorModel, delta: float, llr_reps: int,
                        seed: int) -> tuple[list[QuantizerConfig], float]:
    """One-cell quantizers with both exit thresholds pinned at delta.

    Returns the per-sensor configs plus the relative overshoot penalty
    (lambda - delta) / delta of the up message, which measures how far
    the grid walk is from the zero-overshoot continuous limit.
    """
    lam_bar, lam_under = calibrate_llr(model, 0, (delta, delta), ((), ()),
                                       llr_reps, seed=seed)
    cfgs = [QuantizerConfig(
        sensor=k, mu=float(model.mus[k]), r=0.0, d=1, delta_bar=delta,
        delta_under=delta, eps_bar=(), eps_under=(), lambda_bar=lam_bar,
        lambda_under=lam_under, mc_reps=int(llr_reps), seed=int(seed))
        for k in range(model.K)]
    return cfgs, (lam_bar[0] - delta) / delta


def verify_theorem1(K: int = 2, deltas: Sequence[float] = (1.0, 0.5, 0.25),
                    gammas: Sequence[float] = (100.0, 1000.0),
                    dt: float = 1e-3, *, mu: float = 1.0, seed: int = 0,
                    delay_reps: int = 6_000, fa_reps: int = 600,
                    llr_reps: int = 400_000, jobs: int = 1,
                    step_cap: float = 1e8) -> Theorem1Report:
    """Check the 4*K*Delta performance-loss bound on the Brownian model.

    For each band half-width Delta (uniform across sensors, so Delta is
    also the largest width) the message-driven detector is calibrated at
    each gamma, the centralized rule is calibrated to the achieved level
    of that point, and both delays are measured on common paths.  The
    paired difference of the KL-unit delays must stay within
    4*K*Delta + 3 standard errors; it also shrinks as Delta does, since
    the fusion statistic tracks the pooled LLR to within K*Delta at all
    times (Delta -> 0 recovers the grid CUSUM itself).

    A warning is emitted when the mean overshoot penalty of a message
    exceeds 15% of Delta, the sign that dt is too coarse for that band.
    """
    model = SensorModel.brownian([mu] * K, dt)
    rows: list[Theorem1Row] = []
    warnings: list[str] = []
    for delta in deltas:
        cfgs, over = _fixed_band_configs(model, float(delta), llr_reps, seed)
        if over > 0.15:
            warnings.append(
                f"delta={delta:g}: overshoot penalty is {over:.1%} of the "
                f"band; dt={dt:g} is too coarse for this width")
        targets = [FalseAlarmTarget(g) for g in gammas]
        d_recs = calibrate_many(DCUSUM, model, targets, quantizers=cfgs,
                                fa_reps=fa_reps, seed=seed, jobs=jobs,
                                step_cap=step_cap)
        c_recs = [calibrate_threshold(
            CENTRALIZED, model, FalseAlarmTarget(rec.achieved_gamma),
            fa_reps=max(fa_reps * 100, 100_000), seed=seed, jobs=jobs,
            step_cap=step_cap, estimator="cycles") for rec in d_recs]
        thr_d = np.array([r.threshold for r in d_recs])
        thr_c = np.array([r.threshold for r in c_recs])
        st_d, u_d, _ = _delay_pass(DCUSUM, model, thr_d, delay_reps, seed,
                                   jobs=jobs, quantizers=cfgs,
                                   step_cap=step_cap)
        st_c, u_c, _ = _delay_pass(CENTRALIZED, model, thr_c, delay_reps,
                                   seed, jobs=jobs, step_cap=step_cap)
        for i, g in enumerate(gammas):
            live = (st_d[:, i] >= 0) & (st_c[:, i] >= 0)
            n = int(live.sum())
            ud, uc = u_d[live, i], u_c[live, i]
            dd = ud - uc
            jd, jc = float(ud.mean()), float(uc.mean())
            diff = float(dd.mean())
            diff_se = float(dd.std(ddof=1) / math.sqrt(n))
            bound = 4.0 * K * float(delta)
            rows.append(Theorem1Row(
                delta=float(delta), gamma_target=float(g),
                gamma_matched=d_recs[i].achieved_gamma,
                nu_tilde=d_recs[i].threshold,
                nu_centralized=c_recs[i].threshold,
                j_dcusum=jd,
                j_dcusum_se=float(ud.std(ddof=1) / math.sqrt(n)),
                j_centralized=jc,
                j_centralized_se=float(uc.std(ddof=1) / math.sqrt(n)),
                diff=diff, diff_se=diff_se, bound=bound,
                passed=diff <= bound + 3.0 * diff_se))
    return Theorem1Report(rows=rows, warnings=warnings)
