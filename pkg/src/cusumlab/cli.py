"""Command-line front end.

Three subcommands drive the package: `calibrate` fills the quantizer and
threshold caches for a configured experiment, `sweep` produces the
operating-characteristic CSV tables, and `verify` runs the cross-module
assertion suites.  Configuration is TOML; flags override environment
variables (CUSUMLAB_SEED, CUSUMLAB_JOBS, CUSUMLAB_OUT), which override the
config file.  Exit codes: 0 success, 1 usage or config error, 2
calibration failure, 3 verification failure.

Output files are deterministic functions of the config text, the package
version, and the resolved seed; nothing embeds wall-clock state, so
re-running an invocation reproduces every file byte for byte.  Timestamps
appear only in stderr logging.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import numpy as np

from . import __version__
from ._engine import BudgetError
from .calibration import (CalibrationError, KL_UNITS, PHYSICAL_TIME,
                          ThresholdCache, nu_tilde_bound, sprt_cusum_oracle)
from .detectors import (CENTRALIZED, DCUSUM, MEI, MINCUSUM, QCUSUM,
                        QcusumConfig)
from .model import BROWNIAN, GAUSSIAN, SensorModel, kl_numbers
from .quantizer import (CalibrationDataError, QuantizerConfig, calibrate_llr,
                        design_for_model)
from .simharness import (ExperimentSpec, SweepResult, _calibrate_points,
                         estimate_false_alarm, oc_sweep, verify_theorem1)

log = logging.getLogger("cusumlab")

_CSV_HEADER = ("detector,gamma,threshold,mean_delay_steps,stderr_delay,"
               "mean_delay_kl,mean_fa_period,msgs_per_step,bits_per_msg,"
               "reps,seed")
_EOL = "\r\n"

_DETECTOR_ORDER = (CENTRALIZED, DCUSUM, QCUSUM, MEI, MINCUSUM)

QUANTIZER_FILE = "quantizers.json"
THRESHOLD_FILE = "thresholds.json"
PROVENANCE_FILE = "provenance.json"


class UsageError(RuntimeError):
    """Configuration or invocation problem; maps to exit code 1."""


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Resolved invocation: subcommand, config, and the override chain.

    seed defaults to the [sweep] seed and finally 0; out to the [sweep]
    out directory and finally "out"; jobs to 1.  The output directory is
    created if absent.
    """

    subcommand: str
    config_path: str
    config_text: str
    config: dict
    out_dir: str
    seed: int
    jobs: int
    verbose: int

    @property
    def config_sha256(self) -> str:
        return hashlib.sha256(self.config_text.encode()).hexdigest()


def _load_config(path: str) -> tuple[dict, str]:
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        cfg = tomllib.loads(raw.decode())
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"config file {path} is not valid TOML: {exc}")
    return cfg, raw.decode()


def _resolve(flag, env_name: str, cfg_value, default):
    """flag > environment > config > default."""
    if flag is not None:
        return flag
    env = os.environ.get(env_name)
    if env is not None:
        return env
    if cfg_value is not None:
        return cfg_value
    return default


def build_run_config(args: argparse.Namespace) -> RunConfig:
    cfg, text = _load_config(args.config)
    sweep = cfg.get("sweep", {})
    try:
        seed = int(_resolve(args.seed, "CUSUMLAB_SEED", sweep.get("seed"), 0))
        jobs = int(_resolve(args.jobs, "CUSUMLAB_JOBS", sweep.get("jobs"), 1))
    except (TypeError, ValueError):
        raise UsageError("seed and jobs must be integers")
    out = str(_resolve(args.out, "CUSUMLAB_OUT", sweep.get("out"), "out"))
    if seed < 0 or jobs < 1:
        raise UsageError("seed must be >= 0 and jobs >= 1")
    return RunConfig(subcommand=args.subcommand, config_path=args.config,
                     config_text=text, config=cfg, out_dir=out, seed=seed,
                     jobs=jobs, verbose=args.verbose)


def _build_model(cfg: dict) -> SensorModel:
    sec = cfg.get("model")
    if not sec:
        raise UsageError("config needs a [model] section")
    kind = sec.get("kind", "gaussian")
    mus = sec.get("mus")
    if mus is None:
        raise UsageError("[model] needs a mus array")
    try:
        if kind in ("gaussian", GAUSSIAN):
            return SensorModel.gaussian(mus)
        if kind in ("brownian", BROWNIAN):
            return SensorModel.brownian(mus, float(sec.get("dt", 1e-3)))
    except ValueError as exc:
        raise UsageError(f"[model] is invalid: {exc}")
    raise UsageError(f"[model] kind must be gaussian or brownian, "
                     f"got {kind!r}")


def _detector_list(cfg: dict) -> tuple[str, ...]:
    sec = cfg.get("detectors")
    if not sec:
        raise UsageError("config needs at least one [detectors.*] section")
    out = []
    for name in _DETECTOR_ORDER:
        if name in sec:
            out.append(name)
    unknown = set(sec) - set(_DETECTOR_ORDER)
    if unknown:
        raise UsageError("unknown detector section(s): "
                         + ", ".join(sorted(unknown)))
    return tuple(out)


def _build_spec(run: RunConfig, model: SensorModel) -> ExperimentSpec:
    cfg = run.config
    q = cfg.get("quantizer", {})
    sweep = cfg.get("sweep", {})
    measure = sweep.get("measure", KL_UNITS)
    if measure not in (KL_UNITS, PHYSICAL_TIME):
        raise UsageError(f"[sweep] measure must be {KL_UNITS} or "
                         f"{PHYSICAL_TIME}")
    try:
        return ExperimentSpec(
            model=model,
            detectors=_detector_list(cfg),
            gammas=tuple(float(g) for g in sweep.get("gammas", ())),
            r=int(q.get("r", 3)),
            d=int(q.get("d", 1)),
            b=int(q.get("b", 2)),
            measure=measure,
            seed=run.seed,
            delay_reps=int(sweep.get("delay_reps", 10_000)),
            fa_reps=int(sweep.get("fa_reps", 1_000)),
            quantizer_exits=int(q.get("exits", 2_000_000)),
            jobs=run.jobs,
            step_cap=float(sweep.get("step_cap", 1e8)))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid experiment configuration: {exc}")


# ---------------------------------------------------------------------------
# deterministic output files
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    """Nine-significant-digit float formatting; plain ints stay ints."""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".9g")


def _csv_field(s: str) -> str:
    if any(c in s for c in ",\"\r\n"):
        return '"' + s.replace('"', '""') + '"'
    return s


def _preamble(run: RunConfig) -> str:
    return (f"# config_sha256={run.config_sha256} seed={run.seed} "
            f"version={__version__}")


def _point_row(p, seed: int) -> list[str]:
    return [p.detector, _fmt(p.gamma), _fmt(p.threshold),
            _fmt(p.mean_delay_steps), _fmt(p.stderr_delay_steps),
            _fmt(p.mean_delay_kl), _fmt(p.mean_fa_period),
            _fmt(p.msgs_per_step_per_sensor), _fmt(p.bits_per_message),
            str(p.reps), str(seed)]


def _write_lines(path: str, lines: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_EOL.join(lines) + _EOL)


def _write_oc_csv(path: str, run: RunConfig, points, seed: int) -> None:
    lines = [_preamble(run), _CSV_HEADER]
    for p in points:
        lines.append(",".join(_csv_field(f) for f in _point_row(p, seed)))
    _write_lines(path, lines)


def _write_summary_csv(path: str, run: RunConfig, res: SweepResult) -> None:
    lines = [_preamble(run), _CSV_HEADER + ",error"]
    for det in res.spec.detectors:
        by_gamma = {p.gamma: p for p in res.points.get(det, ())}
        errs = {e.gamma: e.message for e in res.errors if e.detector == det}
        for g in res.spec.gammas:
            if g in by_gamma:
                row = _point_row(by_gamma[g], res.spec.seed) + [""]
            else:
                row = [det, _fmt(g)] + [""] * 8 + [str(res.spec.seed),
                                                   errs.get(g, "missing")]
            lines.append(",".join(_csv_field(f) for f in row))
    _write_lines(path, lines)


def _write_dat(path: str, run: RunConfig, points, seed: int) -> None:
    lines = [_preamble(run).replace("\r", ""),
             "# " + _CSV_HEADER.replace(",", " ")]
    for p in points:
        lines.append(" ".join(_point_row(p, seed)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_provenance(run: RunConfig, extra_args: dict,
                      outputs: list[str]) -> None:
    hashes = {}
    for name in outputs:
        p = os.path.join(run.out_dir, name)
        with open(p, "rb") as fh:
            hashes[name] = hashlib.sha256(fh.read()).hexdigest()
    doc = {
        "version": __version__,
        "subcommand": run.subcommand,
        "config_path": run.config_path,
        "config_sha256": run.config_sha256,
        "config_text": run.config_text,
        "seed": run.seed,
        "jobs": run.jobs,
        "args": extra_args,
        "outputs": hashes,
    }
    path = os.path.join(run.out_dir, PROVENANCE_FILE)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# quantizer design cache
# ---------------------------------------------------------------------------

def _design_meta(run: RunConfig, model: SensorModel,
                 spec: ExperimentSpec) -> dict:
    return {"model": model.spec_key(), "r": spec.r, "d": spec.d,
            "seed": spec.seed, "exits": spec.quantizer_exits}


def _load_quantizers(run: RunConfig, model: SensorModel,
                     spec: ExperimentSpec):
    """Cached per-sensor designs, or None when absent or stale."""
    path = os.path.join(run.out_dir, QUANTIZER_FILE)
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("meta") != _design_meta(run, model, spec):
        log.info("quantizer cache %s does not match this config; ignoring",
                 path)
        return None
    return [QuantizerConfig.from_record(rec) for rec in doc["configs"]]


def _save_quantizers(run: RunConfig, model: SensorModel,
                     spec: ExperimentSpec, configs) -> None:
    doc = {"meta": _design_meta(run, model, spec),
           "configs": [c.to_record() for c in configs]}
    path = os.path.join(run.out_dir, QUANTIZER_FILE)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _quantizers_for(run: RunConfig, model: SensorModel,
                    spec: ExperimentSpec, write: bool):
    """Load or design the message quantizers for a dcusum experiment."""
    if DCUSUM not in spec.detectors:
        return None
    cached = _load_quantizers(run, model, spec)
    if cached is not None:
        return cached
    log.info("designing message quantizers (r=%d, d=%d, %d exits)",
             spec.r, spec.d, spec.quantizer_exits)
    q = design_for_model(model, spec.r, spec.d, seed=spec.seed,
                         delta_reps=max(spec.quantizer_exits // 2, 1000),
                         level_reps=spec.quantizer_exits,
                         llr_reps=spec.quantizer_exits)
    if write:
        _save_quantizers(run, model, spec, q)
    return q


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

def cmd_calibrate(run: RunConfig, args: argparse.Namespace) -> int:
    model = _build_model(run.config)
    spec = _build_spec(run, model)
    if args.dry_run:
        _print_plan(run, spec)
        return 0
    os.makedirs(run.out_dir, exist_ok=True)
    quantizers = _quantizers_for(run, model, spec, write=True)
    if quantizers is not None:
        c0 = quantizers[0]
        print(f"quantizer sensor 0: delta_bar={c0.delta_bar:.4f} "
              f"delta_under={c0.delta_under:.4f} "
              f"lambda_bar={tuple(round(l, 4) for l in c0.lambda_bar)}")
    cache = ThresholdCache(os.path.join(run.out_dir, THRESHOLD_FILE))
    errors = []
    for det in spec.detectors:
        qcusum = (QcusumConfig.equal_mass(model, spec.r, spec.b, 1.0)
                  if det == QCUSUM else None)
        recs = _calibrate_points(spec, det,
                                 quantizers if det == DCUSUM else None,
                                 qcusum, cache, True, errors)
        for g in spec.gammas:
            if g in recs:
                r = recs[g]
                print(f"{det}: gamma={g:g} -> threshold={r.threshold:.6g} "
                      f"achieved={r.achieved_gamma:.6g}")
    cache.save()
    _write_provenance(run, {"calibrate": True}, _existing_outputs(run))
    for e in errors:
        print(f"calibration failed: {e.detector} at gamma={e.gamma:g}: "
              f"{e.message}", file=sys.stderr)
    if errors:
        return 2
    print(f"threshold cache: {len(cache)} entries -> "
          f"{os.path.join(run.out_dir, THRESHOLD_FILE)}")
    return 0


def _existing_outputs(run: RunConfig) -> list[str]:
    names = []
    for name in (QUANTIZER_FILE, THRESHOLD_FILE):
        if os.path.exists(os.path.join(run.out_dir, name)):
            names.append(name)
    return names


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _print_plan(run: RunConfig, spec: ExperimentSpec) -> None:
    m = spec.model
    print(f"config: {run.config_path} (sha256 {run.config_sha256[:16]})")
    print(f"model: {m.kind}, K={m.K}, mus={list(m.mus)}, dt={m.dt:g}")
    print(f"detectors: {', '.join(spec.detectors)}")
    print(f"gammas: {[f'{g:g}' for g in spec.gammas]} ({spec.measure})")
    print(f"quantizer: r={spec.r} d={spec.d} b={spec.b} "
          f"exits={spec.quantizer_exits}")
    print(f"reps: delay={spec.delay_reps} fa={spec.fa_reps}")
    print(f"seed={spec.seed} jobs={spec.jobs} out={run.out_dir}")
    print("dry run; nothing written")


def cmd_sweep(run: RunConfig, args: argparse.Namespace) -> int:
    model = _build_model(run.config)
    spec = _build_spec(run, model)
    if args.dry_run:
        _print_plan(run, spec)
        return 0
    cache_path = os.path.join(run.out_dir, THRESHOLD_FILE)
    if not args.calibrate and not os.path.exists(cache_path):
        raise UsageError(
            f"no threshold cache at {cache_path}; run the calibrate "
            "subcommand first or pass --calibrate")
    os.makedirs(run.out_dir, exist_ok=True)
    quantizers = _quantizers_for(run, model, spec, write=args.calibrate)
    cache = ThresholdCache(cache_path)
    res = oc_sweep(spec, cache, calibrate=args.calibrate,
                   quantizers=quantizers)
    outputs = _existing_outputs(run)
    for det in spec.detectors:
        name = f"oc_{det}.csv"
        _write_oc_csv(os.path.join(run.out_dir, name), run,
                      res.points.get(det, ()), spec.seed)
        outputs.append(name)
        if args.dat:
            dname = f"oc_{det}.dat"
            _write_dat(os.path.join(run.out_dir, dname), run,
                       res.points.get(det, ()), spec.seed)
            outputs.append(dname)
    _write_summary_csv(os.path.join(run.out_dir, "summary.csv"), run, res)
    outputs.append("summary.csv")
    _write_provenance(run, {"calibrate": args.calibrate, "dat": args.dat},
                      outputs)
    n_points = sum(len(v) for v in res.points.values())
    print(f"{n_points} OC points across {len(spec.detectors)} detectors "
          f"-> {run.out_dir}")
    for e in res.errors:
        print(f"point skipped: {e.detector} at gamma={e.gamma:g}: "
              f"{e.message}", file=sys.stderr)
    if n_points == 0:
        print("all sweep points failed", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def _check_wald_oracle(run: RunConfig, lines: list[str]) -> bool:
    """Cycle oracle vs direct simulation, both false-alarm measures."""
    sec = run.config.get("verify", {}).get("wald", {})
    model = _build_model(run.config)
    nu = float(sec.get("nu", 4.0))
    reps = int(sec.get("reps", 4_000))
    cycles = int(sec.get("cycles", 200_000))
    orc = sprt_cusum_oracle(model, nu, cycles, seed=run.seed)
    direct = estimate_false_alarm(CENTRALIZED, model, nu, reps,
                                  seed=run.seed, jobs=run.jobs)
    ok = True
    for name, a, a_se, b, b_se in (
            ("E_inf[-u]", orc.einf_minus_u, orc.einf_minus_u_se,
             direct.mean_kl, direct.stderr_kl),
            ("E_inf[steps]", orc.einf_steps, orc.einf_steps_se,
             direct.mean_steps, direct.stderr_steps)):
        z = abs(a - b) / math.hypot(a_se, b_se)
        good = z <= 3.0
        ok &= good
        lines.append(f"{'PASS' if good else 'FAIL'} wald-oracle {name}: "
                     f"cycle {a:.4f} vs direct {b:.4f} ({z:.2f} sigma, "
                     f"tolerance 3)")
    z = abs(direct.mean_kl - direct.wald_kl) / math.hypot(
        direct.stderr_kl,
        direct.wald_kl / direct.mean_steps * direct.stderr_steps)
    good = z <= 3.0
    ok &= good
    lines.append(f"{'PASS' if good else 'FAIL'} wald-identity: "
                 f"E[-u] {direct.mean_kl:.4f} vs K*Ibar*E[T] "
                 f"{direct.wald_kl:.4f} ({z:.2f} sigma, tolerance 3)")
    return ok


def _check_lemma4(run: RunConfig, lines: list[str]) -> bool:
    """Calibrated fusion thresholds against the log-gamma bound."""
    sec = run.config.get("verify", {}).get("lemma4", {})
    model = _build_model(run.config)
    spec = _build_spec(run, model)
    gammas = tuple(float(g) for g in sec.get("gammas", spec.gammas))
    if not gammas:
        raise UsageError("[verify.lemma4] needs a gamma grid")
    spec = ExperimentSpec(
        model=model, detectors=(DCUSUM,), gammas=gammas, r=spec.r, d=spec.d,
        b=spec.b, seed=spec.seed, delay_reps=spec.delay_reps,
        fa_reps=int(sec.get("fa_reps", spec.fa_reps)),
        quantizer_exits=spec.quantizer_exits, jobs=spec.jobs,
        step_cap=spec.step_cap)
    quantizers = _quantizers_for(run, model, spec, write=False)
    cache = ThresholdCache(os.path.join(run.out_dir, THRESHOLD_FILE))
    errors = []
    recs = _calibrate_points(spec, DCUSUM, quantizers, None, cache, True,
                             errors)
    for e in errors:
        lines.append(f"FAIL lemma4: calibration at gamma={e.gamma:g} "
                     f"failed: {e.message}")
    ibarinf = kl_numbers(model).ibarinf
    ok = not errors
    for g in gammas:
        if g not in recs:
            continue
        rec = recs[g]
        bound = nu_tilde_bound(rec.achieved_gamma, ibarinf)
        good = rec.threshold <= bound + 1e-12
        ok &= good
        lines.append(f"{'PASS' if good else 'FAIL'} lemma4 gamma={g:g}: "
                     f"nu_tilde {rec.threshold:.4f} <= log(gamma_hat) - "
                     f"log(IbarInf) = {bound:.4f}")
    return ok


def _check_theorem1(run: RunConfig, lines: list[str]) -> bool:
    sec = run.config.get("verify", {}).get("theorem1", {})
    rep = verify_theorem1(
        K=int(sec.get("K", 2)),
        deltas=tuple(float(d) for d in sec.get("deltas", (0.5,))),
        gammas=tuple(float(g) for g in sec.get("gammas", (100.0,))),
        dt=float(sec.get("dt", 1e-3)),
        seed=run.seed,
        delay_reps=int(sec.get("delay_reps", 3_000)),
        fa_reps=int(sec.get("fa_reps", 400)),
        llr_reps=int(sec.get("llr_reps", 150_000)),
        jobs=run.jobs)
    for w in rep.warnings:
        lines.append(f"WARN theorem1: {w}")
    for r in rep.rows:
        lines.append(
            f"{'PASS' if r.passed else 'FAIL'} theorem1 delta={r.delta:g} "
            f"gamma={r.gamma_target:g}: J_gap {r.diff:.4f} +- {r.diff_se:.4f}"
            f" <= bound {r.bound:g} + 3 sigma")
    return rep.all_passed


def _check_quantizer_llr(run: RunConfig, lines: list[str]) -> bool:
    """Recompute the message LLRs and compare to the cached design."""
    sec = run.config.get("verify", {}).get("quantizer", {})
    model = _build_model(run.config)
    spec = _build_spec(run, model)
    configs = _load_quantizers(run, model, spec)
    if configs is None:
        configs = _quantizers_for(run, model, spec, write=False)
    if configs is None:
        lines.append("PASS quantizer-llr: no message quantizer in this "
                     "config; nothing to check")
        return True
    reps = int(sec.get("llr_reps", 300_000))
    ok = True
    cfg = configs[0]
    deltas = (cfg.delta_bar, cfg.delta_under)
    levels = (cfg.eps_bar, cfg.eps_under)
    lam_bar, lam_under, se_bar, se_under = calibrate_llr(
        model, cfg.sensor, deltas, levels, reps, seed=run.seed + 7919,
        return_se=True)
    for side, stored, fresh, ses in (("up", cfg.lambda_bar, lam_bar, se_bar),
                                     ("down", cfg.lambda_under, lam_under,
                                      se_under)):
        for j, (a, b, se) in enumerate(zip(stored, fresh, ses), start=1):
            tol = max(8.0 * se, 0.02 * abs(b))
            good = abs(a - b) <= tol
            ok &= good
            lines.append(
                f"{'PASS' if good else 'FAIL'} quantizer-llr {side} cell "
                f"{j}: stored {a:.4f} vs recomputed {b:.4f} "
                f"(tolerance {tol:.4f})")
    return ok


_CHECKS = {
    "wald": _check_wald_oracle,
    "lemma4": _check_lemma4,
    "theorem1": _check_theorem1,
    "quantizer": _check_quantizer_llr,
}


def cmd_verify(run: RunConfig, args: argparse.Namespace) -> int:
    sec = run.config.get("verify", {})
    names = sec.get("checks", list(_CHECKS))
    unknown = [n for n in names if n not in _CHECKS]
    if unknown:
        raise UsageError("unknown verify check(s): " + ", ".join(unknown))
    if args.dry_run:
        print(f"config: {run.config_path} (sha256 {run.config_sha256[:16]})")
        print(f"checks: {', '.join(names)}")
        print("dry run; nothing executed")
        return 0
    lines: list[str] = []
    all_ok = True
    for name in names:
        try:
            all_ok &= _CHECKS[name](run, lines)
        except (CalibrationError, CalibrationDataError, BudgetError,
                UsageError, ValueError) as exc:
            lines.append(f"FAIL {name}: {exc}")
            all_ok = False
    for line in lines:
        print(line)
    n_fail = sum(1 for l in lines if l.startswith("FAIL"))
    print(f"verify: {len(lines) - n_fail} checks passed, {n_fail} failed")
    return 0 if all_ok else 3


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cusumlab",
        description="Monte-Carlo experiments for centralized and "
                    "decentralized CUSUM change detection")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp):
        sp.add_argument("--config", required=True,
                        help="TOML experiment configuration")
        sp.add_argument("--out", default=None,
                        help="output directory (default: [sweep] out, then "
                             "'out'; env CUSUMLAB_OUT)")
        sp.add_argument("--seed", type=int, default=None,
                        help="master seed (default: [sweep] seed, then 0; "
                             "env CUSUMLAB_SEED)")
        sp.add_argument("--jobs", type=int, default=None,
                        help="process-level parallelism (default: 1; env "
                             "CUSUMLAB_JOBS)")
        sp.add_argument("--dry-run", action="store_true",
                        help="print the resolved plan and write nothing")
        sp.add_argument("-v", "--verbose", action="count", default=0,
                        help="log progress to stderr")

    sp = sub.add_parser("calibrate",
                        help="fill the quantizer and threshold caches")
    common(sp)
    sp = sub.add_parser("sweep",
                        help="emit operating-characteristic CSV tables")
    common(sp)
    sp.add_argument("--calibrate", action="store_true",
                    help="calibrate missing thresholds instead of "
                         "requiring a cache")
    sp.add_argument("--dat", action="store_true",
                    help="also emit gnuplot-style .dat tables")
    sp = sub.add_parser("verify",
                        help="run the cross-module assertion suites")
    common(sp)
    return p


_COMMANDS = {
    "calibrate": cmd_calibrate,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        run = build_run_config(args)
        return _COMMANDS[args.subcommand](run, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CalibrationError, CalibrationDataError, BudgetError) as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
