"""Sensor-side communication scheme: two-sided exits, overshoot quantization,
and the Monte-Carlo calibration of thresholds, levels, and message LLRs.

A sensor accumulates its LLR since the last message and transmits when the
sum leaves the band (-delta_under, delta_bar).  The message carries the exit
side and which of d equal-mass cells the overshoot fell in.  The fusion side
maps each message to a constant log-likelihood ratio Lambda, computed here
from the conditional-expectation identities

    Lambda_bar_j  = Delta_bar_j  - log E0  [ exp(-(ell - Delta_bar_j))  | z = +j ]
    Lambda_under_j= Delta_under_j- log Einf[ exp(+(ell + Delta_under_j))| z = -j ]

with Delta_bar_j = delta_bar + eps_bar_{j-1}, which need only ordinary
simulation of the exit pair (tau, ell) under each regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from . import _engine
from .model import SensorModel

# Salt codes for the exit-sampling streams, combined with the sensor index.
_SALT_DELTA1 = 1
_SALT_DELTA2 = 2
_SALT_LEVELS_UP = 3
_SALT_LEVELS_DOWN = 4
_SALT_LLR_UP = 5
_SALT_LLR_DOWN = 6
_SALT_FRESH_UP = 7
_SALT_FRESH_DOWN = 8

_MIN_CONDITIONAL = 1000


class CalibrationDataError(RuntimeError):
    """Raised when a calibration has too little conditional data to proceed."""


def _salt(sensor: int, what: int) -> int:
    return sensor * 16 + what


@dataclass(frozen=True)
class QuantizerConfig:
    """Per-sensor exit thresholds, overshoot cells, and message LLRs.

    eps_bar / eps_under hold the d-1 interior cell edges on the overshoot
    scale (the implicit outer edges are 0 and infinity).  lambda_bar and
    lambda_under hold the d message LLR magnitudes per side.  mu, r, mc_reps
    and seed record how the numbers were produced.
    """

    sensor: int
    mu: float
    r: float
    d: int
    delta_bar: float
    delta_under: float
    eps_bar: tuple[float, ...]
    eps_under: tuple[float, ...]
    lambda_bar: tuple[float, ...]
    lambda_under: tuple[float, ...]
    mc_reps: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("alphabet half-size d must be >= 1")
        if self.delta_bar <= 0 or self.delta_under <= 0:
            raise ValueError("exit thresholds must be positive")
        for eps in (self.eps_bar, self.eps_under):
            if len(eps) != self.d - 1:
                raise ValueError("need d-1 interior cell edges per side")
            if any(e <= 0 for e in eps):
                raise ValueError("cell edges must be positive")
            if any(b <= a for a, b in zip(eps, eps[1:])):
                raise ValueError("cell edges must be strictly increasing")
        for lam, delta, eps in ((self.lambda_bar, self.delta_bar, self.eps_bar),
                                (self.lambda_under, self.delta_under, self.eps_under)):
            if len(lam) != self.d:
                raise ValueError("need d message LLRs per side")
            edges = (0.0,) + tuple(eps)
            if any(l <= delta + e for l, e in zip(lam, edges)):
                raise ValueError("message LLR must exceed its cell threshold")
            if any(b <= a for a, b in zip(lam, lam[1:])):
                raise ValueError("message LLRs must be strictly increasing")

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["k"] = rec.pop("sensor")
        for f in ("eps_bar", "eps_under", "lambda_bar", "lambda_under"):
            rec[f] = list(rec[f])
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "QuantizerConfig":
        rec = dict(rec)
        rec["sensor"] = rec.pop("k")
        for f in ("eps_bar", "eps_under", "lambda_bar", "lambda_under"):
            rec[f] = tuple(rec[f])
        return cls(**rec)


@dataclass(frozen=True)
class Message:
    """One transmission: which sensor, the grid step of the exit, and the
    signed overshoot cell (level > 0 for upward exits)."""

    sensor: int
    time: int
    level: int


@dataclass(frozen=True)
class ExitSample:
    duration: int
    ell: float


def stack_configs(configs: Sequence[QuantizerConfig]):
    """Stack per-sensor configs into the array tuple the scan kernels take.

    Returns (dbar, dund, eps_bar, eps_under, lam_bar, lam_und_signed);
    lam_und_signed holds the negated down-side LLRs, ready to add.
    """
    d = configs[0].d
    if any(c.d != d for c in configs):
        raise ValueError("all sensors must share the alphabet size d")
    dbar = np.ascontiguousarray([c.delta_bar for c in configs])
    dund = np.ascontiguousarray([c.delta_under for c in configs])
    eps_bar = np.ascontiguousarray([c.eps_bar for c in configs]).reshape(len(configs), d - 1)
    eps_und = np.ascontiguousarray([c.eps_under for c in configs]).reshape(len(configs), d - 1)
    lam_bar = np.ascontiguousarray([c.lambda_bar for c in configs])
    lam_und = -np.ascontiguousarray([c.lambda_under for c in configs])
    return dbar, dund, eps_bar, eps_und, lam_bar, lam_und


def quantize_overshoot(ell: float, config: QuantizerConfig) -> int:
    """Map an exit value to its signed message level.

    Cells are closed on the left: an overshoot exactly on an edge belongs
    to the higher cell.
    """
    if ell >= config.delta_bar:
        v = ell - config.delta_bar
        return 1 + int(np.searchsorted(config.eps_bar, v, side="right"))
    if ell <= -config.delta_under:
        v = -(ell + config.delta_under)
        return -(1 + int(np.searchsorted(config.eps_under, v, side="right")))
    raise ValueError(f"ell={ell} is inside the continuation band")


def message_llr(z: int, config: QuantizerConfig) -> float:
    """LLR the fusion center books for level z (signed)."""
    if z == 0 or abs(z) > config.d:
        raise ValueError(f"level must satisfy 1 <= |z| <= d={config.d}")
    if z > 0:
        return config.lambda_bar[z - 1]
    return -config.lambda_under[-z - 1]


def run_sensor(increments: np.ndarray, config: QuantizerConfig) -> list[Message]:
    """Feed one sensor's LLR increments through the exit/reset loop.

    Returns the messages in time order; times are 1-based grid steps.  The
    running sum resets to zero after each message.  A tie with either
    boundary counts as an exit.
    """
    inc = np.asarray(increments, dtype=np.float64).ravel()
    out: list[Message] = []
    i0 = 0
    n = inc.size
    while i0 < n:
        cs = np.cumsum(inc[i0:])
        outside = (cs >= config.delta_bar) | (cs <= -config.delta_under)
        if not outside.any():
            break
        j = int(np.argmax(outside))
        out.append(Message(config.sensor, i0 + j + 1,
                           quantize_overshoot(float(cs[j]), config)))
        i0 += j + 1
    return out


def sample_exit_pairs(model: SensorModel, sensor: int, deltas, n: int,
                      seed: int, salt: int, post: bool):
    """(ell, steps) for n band exits of one sensor under either regime."""
    dbar, dund = deltas
    mean = float(model.step_mean(post)[sensor])
    sd = float(model.step_std()[sensor])
    bulk = _engine.exit_bulk_len(mean, sd, dbar, dund)
    cap = 1e8 + 25.0 * n * bulk
    return _engine.sample_exits(mean, sd, dund, dbar, n, seed, salt, bulk,
                                step_cap=cap)


def calibrate_delta(model: SensorModel, sensor: int, r: float,
                    regime: str = "post", *, seed: int = 0, tol: float = 5e-3,
                    phase1_reps: int = 20_000, phase2_reps: int = 1_000_000,
                    bracket: tuple[float, float] = (1e-3, 50.0)) -> tuple[float, float]:
    """Symmetric band half-width giving mean exit time r under the regime.

    Bisection on a pathwise-monotone objective: all evaluations within a
    phase replay the same increments (common random numbers), so the mean
    exit time is exactly nondecreasing in the half-width and the root is
    clean.  A small first phase shrinks the bracket before the full-budget
    phase polishes to absolute tolerance tol.
    """
    if r <= 1:
        raise ValueError("target period must exceed one step")
    if regime not in ("post", "pre"):
        raise ValueError("regime must be 'post' or 'pre'")
    post = regime == "post"
    mean = float(model.step_mean(post)[sensor])
    sd = float(model.step_std()[sensor])
    lo, hi = bracket

    def mean_period(delta, n, salt, bulk):
        cap = 1e8 + 25.0 * n * bulk
        _, steps = _engine.sample_exits(mean, sd, delta, delta, n, seed,
                                        salt, bulk, step_cap=cap)
        return float(steps.mean())

    def bisect(lo, hi, n, salt, bulk, width):
        f_lo = mean_period(lo, n, salt, bulk)
        f_hi = mean_period(hi, n, salt, bulk)
        if not (f_lo <= r <= f_hi):
            raise CalibrationDataError(
                f"period {r} not bracketed on [{lo:.4g}, {hi:.4g}] "
                f"(got [{f_lo:.4g}, {f_hi:.4g}])")
        while hi - lo > width:
            mid = 0.5 * (lo + hi)
            if mean_period(mid, n, salt, bulk) < r:
                lo = mid
            else:
                hi = mid
        return lo, hi

    bulk1 = _engine.exit_bulk_len(mean, sd, hi, hi)
    lo, hi = bisect(lo, hi, phase1_reps, _salt(sensor, _SALT_DELTA1), bulk1,
                    max(16 * tol, 0.05))
    pad = 4 * tol
    lo = max(bracket[0], lo - pad)
    hi = min(bracket[1], hi + pad)
    bulk2 = _engine.exit_bulk_len(mean, sd, hi, hi)
    lo, hi = bisect(lo, hi, phase2_reps, _salt(sensor, _SALT_DELTA2), bulk2, tol)
    delta = 0.5 * (lo + hi)
    return delta, delta


def calibrate_levels(model: SensorModel, sensor: int, deltas, d: int,
                     mc_reps: int = 4_000_000, *, seed: int = 0):
    """Equal-mass overshoot cell edges per side.

    The upper side uses the post-change law, the lower side the pre-change
    law, matching how each side's overshoots matter.  Quantiles are lower
    order statistics, so the edges are observed values.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if d == 1:
        return (), ()
    dbar, dund = deltas
    probs = [j / d for j in range(1, d)]

    def side_edges(post, salt, pick_up):
        ell, _ = sample_exit_pairs(model, sensor, deltas, mc_reps, seed,
                                   _salt(sensor, salt), post)
        v = ell[ell >= dbar] - dbar if pick_up else -(ell[ell <= -dund] + dund)
        if v.size < _MIN_CONDITIONAL:
            raise CalibrationDataError(
                f"only {v.size} conditional exits on one side; need "
                f"{_MIN_CONDITIONAL}")
        edges = tuple(float(np.quantile(v, p, method="inverted_cdf"))
                      for p in probs)
        if any(b <= a for a, b in zip((0.0,) + edges, edges)):
            raise CalibrationDataError("degenerate overshoot quantiles")
        return edges

    eps_bar = side_edges(True, _SALT_LEVELS_UP, True)
    eps_under = side_edges(False, _SALT_LEVELS_DOWN, False)
    return eps_bar, eps_under


def calibrate_llr(model: SensorModel, sensor: int, deltas, levels,
                  mc_reps: int = 4_000_000, *, seed: int = 0,
                  return_se: bool = False):
    """Message LLRs through the conditional-expectation identities.

    Overshoots are simulated under the post-change law for the up side and
    the pre-change law for the down side; no rare events are involved.  With
    return_se, also returns per-level standard errors (delta method on the
    log of the conditional mean).
    """
    dbar, dund = deltas
    eps_bar, eps_under = levels
    d = len(eps_bar) + 1

    def side(post, salt, pick_up, delta, eps):
        ell, _ = sample_exit_pairs(model, sensor, deltas, mc_reps, seed,
                                   _salt(sensor, salt), post)
        v = ell[ell >= dbar] - dbar if pick_up else -(ell[ell <= -dund] + dund)
        cells = np.searchsorted(np.asarray(eps), v, side="right")
        lam = []
        ses = []
        edges = (0.0,) + tuple(eps)
        for j in range(d):
            vj = v[cells == j] - edges[j]
            if vj.size < _MIN_CONDITIONAL:
                raise CalibrationDataError(
                    f"only {vj.size} exits in overshoot cell {j + 1}; need "
                    f"{_MIN_CONDITIONAL}")
            w = np.exp(-vj)
            m = float(w.mean())
            lam.append(delta + edges[j] - math.log(m))
            ses.append(float(w.std(ddof=1) / (m * math.sqrt(w.size))))
        return tuple(lam), tuple(ses)

    lam_bar, se_bar = side(True, _SALT_LLR_UP, True, dbar, eps_bar)
    lam_under, se_under = side(False, _SALT_LLR_DOWN, False, dund, eps_under)
    if return_se:
        return lam_bar, lam_under, se_bar, se_under
    return lam_bar, lam_under


def fresh_cell_masses(model: SensorModel, config: QuantizerConfig,
                      mc_reps: int = 2_000_000, *, seed: int = 0):
    """Conditional cell masses on samples not used for calibration.

    Returns (up_masses, down_masses), each of length d; by construction
    both should be flat at 1/d.
    """
    deltas = (config.delta_bar, config.delta_under)

    def side(post, salt, pick_up, eps):
        ell, _ = sample_exit_pairs(model, config.sensor, deltas, mc_reps,
                                   seed, _salt(config.sensor, salt), post)
        v = (ell[ell >= config.delta_bar] - config.delta_bar if pick_up
             else -(ell[ell <= -config.delta_under] + config.delta_under))
        if v.size == 0:
            raise CalibrationDataError("no conditional exits on one side")
        cells = np.searchsorted(np.asarray(eps), v, side="right")
        return tuple(float(np.mean(cells == j)) for j in range(config.d))

    up = side(True, _SALT_FRESH_UP, True, config.eps_bar)
    down = side(False, _SALT_FRESH_DOWN, False, config.eps_under)
    return up, down


def design_quantizer(model: SensorModel, sensor: int, r: float, d: int, *,
                     seed: int = 0, delta_reps: int = 1_000_000,
                     level_reps: int = 4_000_000,
                     llr_reps: int = 4_000_000) -> QuantizerConfig:
    """Full sensor calibration: band, cell edges, message LLRs."""
    deltas = calibrate_delta(model, sensor, r, seed=seed,
                             phase2_reps=delta_reps)
    levels = calibrate_levels(model, sensor, deltas, d, level_reps, seed=seed)
    lam_bar, lam_under = calibrate_llr(model, sensor, deltas, levels,
                                       llr_reps, seed=seed)
    return QuantizerConfig(
        sensor=sensor, mu=float(model.mus[sensor]), r=float(r), d=int(d),
        delta_bar=deltas[0], delta_under=deltas[1],
        eps_bar=levels[0], eps_under=levels[1],
        lambda_bar=lam_bar, lambda_under=lam_under,
        mc_reps=int(max(delta_reps, level_reps, llr_reps)), seed=int(seed))


def design_for_model(model: SensorModel, r: float, d: int, *, seed: int = 0,
                     **reps) -> list[QuantizerConfig]:
    """Design one config per sensor, reusing work across equal means."""
    by_mu: dict[float, QuantizerConfig] = {}
    out = []
    for k, mu in enumerate(model.mus):
        if mu in by_mu:
            ref = by_mu[mu]
            out.append(QuantizerConfig(
                sensor=k, mu=ref.mu, r=ref.r, d=ref.d,
                delta_bar=ref.delta_bar, delta_under=ref.delta_under,
                eps_bar=ref.eps_bar, eps_under=ref.eps_under,
                lambda_bar=ref.lambda_bar, lambda_under=ref.lambda_under,
                mc_reps=ref.mc_reps, seed=ref.seed))
        else:
            try:
                cfg = design_quantizer(model, k, r, d, seed=seed, **reps)
            except CalibrationDataError as exc:
                raise CalibrationDataError(f"sensor {k}: {exc}") from exc
            by_mu[mu] = cfg
            out.append(cfg)
    return out
