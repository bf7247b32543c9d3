"""Stopping rules: centralized CUSUM, quantized-block Q-CUSUM, message-driven
D-CUSUM, and the local-statistic rules of Mei and min-CUSUM.

Everything runs on the same one-sided recursion y <- (y)^+ + increment,
which along a path equals u_n - min_{s<n} u_s.  The runners here consume a
materialized PathBundle (or a message stream) and are the reference
semantics; the chunked Monte-Carlo driver reproduces them for large runs.

Stopping times are 1-based grid steps.  A run that exhausts its input
returns a result with stopped=False; callers doing false-alarm estimation
extend the horizon instead of treating that as an alarm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import groupby
from typing import Optional, Sequence, Union

import numpy as np
from scipy.stats import norm

from .model import PathBundle, SensorModel, kl_numbers
from .quantizer import Message, QuantizerConfig, message_llr

CENTRALIZED = "centralized"
QCUSUM = "qcusum"
DCUSUM = "dcusum"
MEI = "mei"
MINCUSUM = "min-cusum"


@dataclass(frozen=True)
class StoppingResult:
    """Outcome of one detector run plus communication counters.

    stop_time is the 1-based grid step of the alarm (for Q-CUSUM already
    multiplied back to physical steps).  u_at_stop carries the true pooled
    LLR at the stopping step where the runner can know it, for delay
    accounting in KL units; message-only runs store the reconstructed sum
    instead.  bits_transmitted is inf for the centralized rule, which ships
    real numbers.
    """

    detector: str
    stop_time: int
    stopped: bool
    statistic_at_stop: float
    u_at_stop: float
    messages_consumed: int
    bits_transmitted: float

    def to_dict(self) -> dict:
        return {
            "detector": self.detector,
            "stop_time": self.stop_time,
            "stopped": self.stopped,
            "statistic_at_stop": self.statistic_at_stop,
            "messages_consumed": self.messages_consumed,
            "bits_transmitted": self.bits_transmitted,
        }


@dataclass(frozen=True)
class CusumState:
    """One CUSUM statistic with the bookkeeping for the path cross-check.

    min_u is the minimum of u over steps strictly before the latest, so
    y == u - min_u holds at every step; y itself may dip below zero between
    resets, the (.)^+ in the next step restores it.
    """

    y: float = 0.0
    u: float = 0.0
    min_u: float = 0.0
    stopped_at: Optional[int] = None


def cusum_step(state: CusumState, increment: float) -> CusumState:
    """Advance the recursion y <- (y)^+ + increment by one step."""
    if state.stopped_at is not None:
        raise ValueError("state already stopped")
    u = state.u + increment
    return CusumState(y=max(state.y, 0.0) + increment, u=u,
                      min_u=min(state.min_u, state.u),
                      stopped_at=None)


def _pathdef(inc: np.ndarray):
    """(u, y) along one increment path, y in the strict-past-minimum form."""
    u = np.cumsum(inc)
    prior = np.minimum.accumulate(np.concatenate(([0.0], u)))[:-1]
    return u, u - prior


def _first_hit(y: np.ndarray) -> int:
    """Index of the first True, or -1."""
    hit = np.flatnonzero(y)
    return int(hit[0]) if hit.size else -1


def run_centralized(paths: PathBundle, nu: float) -> StoppingResult:
    """CUSUM on the pooled LLR; stops at the first step with y >= nu."""
    if not nu > 0:
        raise ValueError("threshold nu must be positive")
    K = paths.increments.shape[0]
    u, y = _pathdef(paths.increments.sum(axis=0))
    i = _first_hit(y >= nu)
    stopped = i >= 0
    if not stopped:
        i = paths.horizon - 1
    t = i + 1
    return StoppingResult(CENTRALIZED, t, stopped, float(y[i]), float(u[i]),
                          messages_consumed=K * t,
                          bits_transmitted=math.inf)


@dataclass(frozen=True)
class QcusumConfig:
    """Fixed-period block quantization plus the fusion threshold.

    gammas[k] holds the b-1 cell edges for sensor k's r-step LLR block
    (cells closed on the left); block_llrs[k, j] is log P0(cell j)/Pinf(cell
    j) for that sensor.
    """

    r: int
    b: int
    gammas: np.ndarray
    block_llrs: np.ndarray
    nu_hat: float

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("period r must be >= 1")
        if self.b < 2:
            raise ValueError("alphabet size b must be >= 2")
        if not self.nu_hat > 0:
            raise ValueError("fusion threshold must be positive")
        g = np.atleast_2d(np.asarray(self.gammas, dtype=np.float64))
        l = np.atleast_2d(np.asarray(self.block_llrs, dtype=np.float64))
        if g.shape[1] != self.b - 1 or l.shape[1] != self.b:
            raise ValueError("need b-1 cell edges and b cell LLRs per sensor")
        if g.shape[0] != l.shape[0]:
            raise ValueError("gammas and block_llrs disagree on sensor count")
        if np.any(np.diff(g, axis=1) <= 0):
            raise ValueError("cell edges must be strictly increasing")
        if not np.all(np.isfinite(l)):
            raise ValueError("cell LLRs must be finite")
        object.__setattr__(self, "gammas", g)
        object.__setattr__(self, "block_llrs", l)

    @classmethod
    def equal_mass(cls, model: SensorModel, r: int, b: int,
                   nu_hat: float) -> "QcusumConfig":
        """Cell edges with equal mass under the post-change block law.

        The r-step block sum is exactly Gaussian here, so the edges are
        quantiles and the cell LLRs are ratios of Gaussian cell masses in
        closed form.
        """
        m0, s = _block_moments(model, r, post=True)
        q = norm.ppf(np.arange(1, b) / b)
        gammas = m0[:, None] + s[:, None] * q[None, :]
        p0, pinf = _gauss_cell_masses(model, r, gammas)
        return cls(r=int(r), b=int(b), gammas=gammas,
                   block_llrs=np.log(p0 / pinf), nu_hat=float(nu_hat))

    @classmethod
    def from_edges(cls, model: SensorModel, r: int, gammas,
                   nu_hat: float) -> "QcusumConfig":
        """User-supplied cell edges; the cell LLRs still come from the exact
        Gaussian block masses.  Lets callers grid-search edges against
        info_per_block instead of taking the equal-mass default."""
        g = np.atleast_2d(np.asarray(gammas, dtype=np.float64))
        if g.shape[0] == 1 and model.K > 1:
            g = np.repeat(g, model.K, axis=0)
        p0, pinf = _gauss_cell_masses(model, r, g)
        return cls(r=int(r), b=g.shape[1] + 1, gammas=g,
                   block_llrs=np.log(p0 / pinf), nu_hat=float(nu_hat))

    def with_threshold(self, nu_hat: float) -> "QcusumConfig":
        return QcusumConfig(self.r, self.b, self.gammas, self.block_llrs,
                            nu_hat)

    def cell_masses(self, model: SensorModel):
        """(p0, pinf) cell masses, shape (K, b) each, in closed form."""
        return _gauss_cell_masses(model, self.r, self.gammas)

    def info_per_block(self, model: SensorModel) -> float:
        """KL information per block carried by the quantized messages,
        summed over sensors: the decentralized analogue of r*K*Ibar0."""
        p0, pinf = self.cell_masses(model)
        return float(np.sum(p0 * np.log(p0 / pinf)))


def _block_moments(model: SensorModel, r: int, post: bool):
    mean = model.step_mean(post) * r
    sd = model.step_std() * math.sqrt(r)
    return mean, sd


def _gauss_cell_masses(model: SensorModel, r: int, gammas: np.ndarray):
    out = []
    for post in (True, False):
        m, s = _block_moments(model, r, post)
        z = (gammas - m[:, None]) / s[:, None]
        cdf = np.concatenate([np.zeros((z.shape[0], 1)), norm.cdf(z),
                              np.ones((z.shape[0], 1))], axis=1)
        out.append(np.diff(cdf, axis=1))
    return out[0], out[1]


def run_qcusum(paths: PathBundle, config: QcusumConfig) -> StoppingResult:
    """Quantize r-step blocks, fuse their LLRs, stop on the block CUSUM.

    Decisions happen at block boundaries only, so the reported stop_time is
    a multiple of r.  u_at_stop is the true pooled LLR at that step.
    """
    K, n = paths.increments.shape
    r = config.r
    nb = n // r
    if nb < 1:
        raise ValueError("horizon shorter than one communication period")
    if config.gammas.shape[0] != K:
        raise ValueError("config sensor count does not match the bundle")
    blocks = paths.increments[:, :nb * r].reshape(K, nb, r).sum(axis=2)
    fused = np.zeros(nb)
    for k in range(K):
        cells = np.searchsorted(config.gammas[k], blocks[k], side="right")
        fused += config.block_llrs[k, cells]
    _, y = _pathdef(fused)
    i = _first_hit(y >= config.nu_hat)
    stopped = i >= 0
    if not stopped:
        i = nb - 1
    t = (i + 1) * r
    msgs = K * (i + 1)
    return StoppingResult(
        QCUSUM, t, stopped, float(y[i]),
        float(paths.increments[:, :t].sum()),
        messages_consumed=msgs,
        bits_transmitted=msgs * math.ceil(math.log2(config.b)))


@dataclass
class DcusumState:
    """Fusion statistic plus the per-sensor reconstructed LLR sums.

    The statistic changes only when a message arrives; between arrivals it
    is constant by construction.
    """

    y_tilde: float = 0.0
    u_sensors: dict = field(default_factory=dict)
    stopped_at: Optional[int] = None

    @property
    def u_tilde(self) -> float:
        return sum(self.u_sensors.values())


def _config_map(config) -> dict:
    if isinstance(config, QuantizerConfig):
        return {config.sensor: config}
    return {c.sensor: c for c in config}


def _bits_per_message(cfg: QuantizerConfig) -> int:
    # sign bit plus enough bits for the d overshoot cells
    return 1 + math.ceil(math.log2(cfg.d)) if cfg.d > 1 else 1


def run_dcusum(messages: Sequence[Message],
               config: Union[QuantizerConfig, Sequence[QuantizerConfig]],
               nu_tilde: float, horizon: Optional[int] = None,
               state: Optional[DcusumState] = None) -> StoppingResult:
    """Fold a time-ordered message stream into the fusion CUSUM.

    All messages sharing one arrival instant are folded into a single
    update y <- (y)^+ + sum of their LLRs, which makes the stopping time
    invariant to how simultaneous messages are enumerated.  The triggering
    group is counted in full.  u_at_stop is the reconstructed LLR sum (the
    fusion center never sees the true path); path-level runs should go
    through dcusum_from_paths, which fills in the true value.
    """
    if not nu_tilde > 0:
        raise ValueError("threshold nu_tilde must be positive")
    cfgs = _config_map(config)
    st = state if state is not None else DcusumState()
    consumed = 0
    bits = 0
    last_t = 0
    stopped = False
    for t, group in groupby(messages, key=lambda m: m.time):
        if t < last_t:
            raise ValueError("messages must be ordered by time")
        omega = 0.0
        prev_sensor = None
        for msg in group:
            if prev_sensor is not None and msg.sensor <= prev_sensor:
                raise ValueError("simultaneous messages must be ordered "
                                 "by sensor index")
            prev_sensor = msg.sensor
            cfg = cfgs.get(msg.sensor)
            if cfg is None:
                raise ValueError(f"no quantizer config for sensor {msg.sensor}")
            llr = message_llr(msg.level, cfg)
            omega += llr
            st.u_sensors[msg.sensor] = st.u_sensors.get(msg.sensor, 0.0) + llr
            consumed += 1
            bits += _bits_per_message(cfg)
        st.y_tilde = max(st.y_tilde, 0.0) + omega
        last_t = t
        if st.y_tilde >= nu_tilde:
            st.stopped_at = t
            stopped = True
            break
    stop_time = st.stopped_at if stopped else (
        horizon if horizon is not None else last_t)
    return StoppingResult(DCUSUM, int(stop_time), stopped,
                          float(st.y_tilde), float(st.u_tilde),
                          messages_consumed=consumed,
                          bits_transmitted=float(bits))


def dcusum_from_paths(paths: PathBundle, configs, nu_tilde: float,
                      return_messages: bool = False):
    """Run the sensors on a bundle, merge their messages, run the fusion.

    Replaces u_at_stop with the true pooled LLR at the stopping step, which
    is what delay accounting in KL units needs.
    """
    from .quantizer import run_sensor

    cfgs = _config_map(configs)
    K = paths.increments.shape[0]
    if sorted(cfgs) != list(range(K)):
        raise ValueError("need one quantizer config per sensor")
    msgs = sorted(
        (m for k in range(K)
         for m in run_sensor(paths.increments[k], cfgs[k])),
        key=lambda m: (m.time, m.sensor))
    res = run_dcusum(msgs, configs, nu_tilde, horizon=paths.horizon)
    u_true = float(paths.increments[:, :res.stop_time].sum())
    res = StoppingResult(res.detector, res.stop_time, res.stopped,
                         res.statistic_at_stop, u_true,
                         res.messages_consumed, res.bits_transmitted)
    return (res, msgs) if return_messages else res


@dataclass(frozen=True)
class LocalCusumBank:
    """Per-sensor CUSUM thresholds for Mei's rule and min-CUSUM."""

    thresholds: tuple[float, ...]

    def __post_init__(self):
        if len(self.thresholds) < 1 or any(c <= 0 for c in self.thresholds):
            raise ValueError("thresholds must be positive")
        object.__setattr__(self, "thresholds",
                           tuple(float(c) for c in self.thresholds))

    @classmethod
    def proportional(cls, model: SensorModel, c: float) -> "LocalCusumBank":
        """Thresholds c * I0_k in the per-step information scale, so one
        scalar c is the free calibration parameter."""
        info = kl_numbers(model)
        return cls(tuple(c * i * model.dt_eff for i in info.i0))


def _bank_run(paths: PathBundle, bank: LocalCusumBank, need_all: bool):
    K, n = paths.increments.shape
    if len(bank.thresholds) != K:
        raise ValueError("bank size does not match the bundle")
    c = np.asarray(bank.thresholds)
    y = np.empty((K, n))
    u = np.empty((K, n))
    for k in range(K):
        u[k], y[k] = _pathdef(paths.increments[k])
    above = y >= c[:, None]
    ok = above.all(axis=0) if need_all else above.any(axis=0)
    i = _first_hit(ok)
    stopped = i >= 0
    if not stopped:
        i = n - 1
    t = i + 1
    # one 1-bit announce per upcrossing of a local threshold, up to the stop
    fresh = above[:, :t] & ~np.concatenate(
        [np.zeros((K, 1), dtype=bool), above[:, :t - 1]], axis=1)
    msgs = int(fresh.sum())
    ratios = y[:, i] / c
    stat = float(ratios.min() if need_all else ratios.max())
    return StoppingResult(MEI if need_all else MINCUSUM, t, stopped, stat,
                          float(u[:, i].sum()), messages_consumed=msgs,
                          bits_transmitted=float(msgs))


def run_mei(paths: PathBundle, bank: LocalCusumBank) -> StoppingResult:
    """Stop when every local CUSUM is at or above its threshold at once.

    statistic_at_stop is min_k y_k/c_k (>= 1 exactly when stopped).
    """
    return _bank_run(paths, bank, need_all=True)


def run_mincusum(paths: PathBundle, bank: LocalCusumBank) -> StoppingResult:
    """Stop when any local CUSUM first reaches its threshold.

    statistic_at_stop is max_k y_k/c_k.
    """
    return _bank_run(paths, bank, need_all=False)
