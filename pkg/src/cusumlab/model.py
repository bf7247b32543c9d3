"""Sensor log-likelihood-ratio increment models and their information numbers.

Two model kinds share one parameterization: a discrete-time Gaussian mean
shift (one observation per step) and Brownian motion with drift observed on a
uniform grid of step dt. In both, sensor k's per-step LLR increment is

    mu_k * xi - mu_k^2 * dt_eff / 2

with xi ~ N(0, dt_eff) pre-change and N(mu_k * dt_eff, dt_eff) post-change,
where dt_eff is 1 for the discrete walk and dt for the grid. Every detector
in the package consumes these increments; raw observations are never
materialized.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import streams

GAUSSIAN = "gaussian-mean-shift"
BROWNIAN = "brownian-drift"

#: change_time value meaning "the change never happens" (pure pre-change law).
NEVER = math.inf


@dataclass(frozen=True)
class SensorModel:
    """Increment law of K sensors' LLR streams under both regimes."""

    kind: str
    mus: tuple[float, ...]
    dt: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in (GAUSSIAN, BROWNIAN):
            raise ValueError(f"unknown model kind: {self.kind!r}")
        if len(self.mus) < 1:
            raise ValueError("need at least one sensor")
        if any(mu == 0.0 for mu in self.mus):
            raise ValueError("every mu must be nonzero")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if self.kind == GAUSSIAN and self.dt != 1.0:
            raise ValueError("the discrete-time walk has a fixed unit step")

    @classmethod
    def gaussian(cls, mus) -> "SensorModel":
        """Discrete-time Gaussian mean-shift model, one unit-variance
        observation per sensor per step."""
        return cls(GAUSSIAN, _as_mus(mus), 1.0)

    @classmethod
    def brownian(cls, mus, dt: float = 1e-3) -> "SensorModel":
        """Brownian motion with post-change drift mu_k, simulated on a grid
        of step dt. Exits and stops are detected at grid resolution; the
        discretization bias this induces is reported by experiments, not
        hidden."""
        return cls(BROWNIAN, _as_mus(mus), float(dt))

    @property
    def K(self) -> int:
        return len(self.mus)

    @property
    def dt_eff(self) -> float:
        """Grid step: dt for the Brownian model, 1 for the discrete walk."""
        return self.dt if self.kind == BROWNIAN else 1.0

    def step_std(self) -> np.ndarray:
        """Per-sensor standard deviation of one LLR increment."""
        mus = np.asarray(self.mus)
        return np.abs(mus) * math.sqrt(self.dt_eff)

    def step_mean(self, post: bool) -> np.ndarray:
        """Per-sensor mean of one LLR increment under either regime."""
        mus = np.asarray(self.mus)
        half = mus * mus * (self.dt_eff / 2.0)
        return half if post else -half

    def pooled_step(self, post: bool) -> tuple[float, float]:
        """(mean, std) of the summed-over-sensors increment for one step.

        Valid because the per-sensor increments are independent Gaussians;
        used to draw the centralized statistic directly without materializing
        K per-sensor streams.
        """
        mus = np.asarray(self.mus)
        s2 = float(np.sum(mus * mus)) * self.dt_eff
        mean = s2 / 2.0
        return (mean if post else -mean), math.sqrt(s2)

    def spec_key(self) -> str:
        """Stable identity string for cache keys."""
        mus = ",".join(f"{m:.17g}" for m in self.mus)
        raw = f"{self.kind}|{mus}|{self.dt:.17g}"
        return hashlib.sha256(raw.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class KLNumbers:
    """Per-sensor and average KL information rates (per unit time).

    For both supported kinds I0^k = Iinf^k = mu_k^2 / 2; one grid step of the
    Brownian model advances the KL clock by I * dt.
    """

    i0: tuple[float, ...]
    iinf: tuple[float, ...]
    ibar0: float
    ibarinf: float


@dataclass(frozen=True)
class PathBundle:
    """Materialized LLR increments for one replication of K sensors.

    increments[k, i] is sensor k's increment for step i+1. Steps up to and
    including change_time follow the pre-change law, later steps the
    post-change law (change_time=0 means all post-change; NEVER means all
    pre-change). The same (model, horizon, seed) always yields the same
    Gaussian noise; change_time only shifts the means, so bundles with
    different change times are driven by common random numbers.
    """

    change_time: float
    horizon: int
    increments: np.ndarray
    seed: int


def _as_mus(mus) -> tuple[float, ...]:
    if np.isscalar(mus):
        return (float(mus),)
    return tuple(float(m) for m in mus)


def kl_numbers(model: SensorModel) -> KLNumbers:
    """Closed-form KL information numbers of the model."""
    i0 = tuple(mu * mu / 2.0 for mu in model.mus)
    return KLNumbers(i0=i0, iinf=i0, ibar0=sum(i0) / model.K,
                     ibarinf=sum(i0) / model.K)


def generate_paths(model: SensorModel, change_time: float, horizon: int,
                   seed: int) -> PathBundle:
    """Draw one PathBundle. Sensors use independent substreams of `seed`.

    change_time is a grid index >= 0, or NEVER for a pure pre-change run.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if change_time != NEVER:
        change_time = int(change_time)
        if change_time < 0:
            raise ValueError("change_time must be >= 0 or NEVER")
    sd = model.step_std()
    mean_pre = model.step_mean(post=False)
    shift = mean_pre * (-2.0)  # post minus pre = mu^2 * dt_eff
    inc = np.empty((model.K, horizon))
    for k in range(model.K):
        g = streams.substream(seed, streams.PATHS, k)
        inc[k] = g.standard_normal(horizon) * sd[k] + mean_pre[k]
        if change_time != NEVER and change_time < horizon:
            inc[k, int(change_time):] += shift[k]
    return PathBundle(change_time=change_time, horizon=horizon,
                      increments=inc, seed=int(seed))


def s_function(x: float, y: float) -> float:
    """Mean exit value of drifted Brownian motion from the band (-x, y).

    s(x, y) = (-x(e^y - 1) + y e^y (e^x - 1)) / (e^{x+y} - 1), evaluated in
    the overflow-safe form obtained by multiplying through by e^{-(x+y)}.
    E0[ell] = s(DeltaUnder, DeltaBar) and Einf[-ell] = s(DeltaBar, DeltaUnder).
    """
    if not (x > 0.0 and y > 0.0):
        raise ValueError("s_function needs positive arguments")
    ax = -math.expm1(-x)  # 1 - e^{-x}
    ay = -math.expm1(-y)
    num = y * ax - x * math.exp(-x) * ay
    den = -math.expm1(-(x + y))
    return num / den


def ct_closed_forms(nu: float) -> tuple[float, float]:
    """Continuous-time CUSUM performance at threshold nu, in KL units.

    Returns (gamma, delay) = (e^nu - nu - 1, e^{-nu} + nu - 1): the exact
    false-alarm level Einf[-u at stop] and worst-case delay E0[u at stop] of
    the continuous-path CUSUM.
    """
    if not nu > 0.0:
        raise ValueError("nu must be positive")
    return math.expm1(nu) - nu, math.expm1(-nu) + nu
