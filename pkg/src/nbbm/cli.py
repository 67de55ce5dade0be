"""Command line front end.

Subcommands: `simulate` runs one of the particle systems from a config
file, `kernels-selfcheck` cross-validates the closed-form kernels,
`levy` tabulates the limit exponent and samples increments, `couple`
drives the three-system domination check, and `report` turns previously
written CSV logs into a verdict bundle and plot-ready tables.

Reproducibility rules: every run is identified by a manifest whose hash
is embedded in each output file; all randomness is drawn from
counter-based streams keyed by (seed, replica, lane); files are written
by the collecting thread in replica order.  Identical manifests therefore
produce identical bytes, whatever the thread count.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from nbbm import __version__
from nbbm.engine import (
    CapacityError,
    Event,
    IntervalParams,
    Population,
    ReproductionLaw,
    SimConfig,
    advance,
    rng_stream,
)
from nbbm.kernels import selfcheck, sine_exp_density
from nbbm.levy import LevyParams, kappa, recentering, sample_levy_increment
from nbbm.runio import (
    MODES,
    ExperimentManifest,
    canonical_hash,
    fmt_real,
    read_events_csv,
    read_levy_csv,
    read_series_csv,
    save_population,
    write_events_csv,
    write_levy_csv,
    write_series_csv,
)
from nbbm.selection import (
    CouplingError,
    apply_nbbm_selection,
    run_bbbm,
    run_bflat,
    run_bsharp,
    run_coupled,
    run_nbbm,
)
from nbbm.stats import (
    empirical_density,
    increment_vs_levy,
    oracle_Z,
    speed_estimate,
)

_LANE_EVENT_LOG = 4
_LANE_LEVY = 5

_CF_LAMBDAS = (-2.0, -1.0, -0.5, 0.5, 1.0, 2.0)


class ConfigError(ValueError):
    """Configuration problem, message always names the offending key path."""


# ---------------------------------------------------------------------------
# config parsing

_KNOWN_KEYS = {
    "interval": {"a"},
    "bbbm": {"A", "epsilon", "eta", "y", "zeta", "delta_color", "c_center",
             "zeta_breakout"},
    "selection": {"N", "alphas"},
    "run": {"mode", "dt", "horizon", "replicas", "seed",
            "sample_every", "threads", "max_segments"},
}


def _get_float(cp, section, key, default=None):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(
            f"[{section}] {key} must be a number, got {raw!r}") from None


def _get_int(cp, section, key, default=None):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(
            f"[{section}] {key} must be an integer, got {raw!r}") from None


def parse_config(path: str | Path) -> tuple[SimConfig, str | None]:
    """Read an INI run description into a validated SimConfig plus mode.

    Physically meaningful parameters (the offspring law, a, N, A, ...) have
    no defaults and must be spelled out; only numerics (dt, sample cadence)
    default.  Regime warnings are left to SimConfig.validate so the caller
    decides where to print them.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path)
    except configparser.Error as e:
        raise ConfigError(f"config syntax: {e}") from None

    for section in cp.sections():
        if section != "law" and section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown section [{section}]")
        if section != "law":
            for key in cp.options(section):
                if key not in {k.lower() for k in _KNOWN_KEYS[section]}:
                    raise ConfigError(f"unknown key [{section}] {key}")

    if not cp.has_section("law"):
        raise ConfigError("missing required section [law]")
    q: dict[int, float] = {}
    for key in cp.options("law"):
        m = re.fullmatch(r"q(\d+)", key)
        if not m:
            raise ConfigError(
                f"unknown key [law] {key}; offspring weights are q0, q1, ...")
        q[int(m.group(1))] = _get_float(cp, "law", key)
    if not q:
        raise ConfigError("[law] must list offspring weights q0, q1, ...")
    total = math.fsum(q.values())
    if abs(total - 1.0) > 1e-12:
        raise ConfigError(
            f"offspring probabilities in [law] sum to {total:g}, not 1")
    try:
        law = ReproductionLaw.from_dict(q)
    except ValueError as e:
        raise ConfigError(f"[law]: {e}") from None

    interval = None
    a = _get_float(cp, "interval", "a") if cp.has_section("interval") else None
    if a is not None:
        if not a > 0.0:
            raise ConfigError(f"[interval] a must be > 0, got {a:g}")
        try:
            interval = IntervalParams(a)
        except ValueError as e:
            raise ConfigError(f"[interval] a: {e}") from None

    alphas = (0.5,)
    if cp.has_option("selection", "alphas"):
        raw = cp.get("selection", "alphas")
        try:
            alphas = tuple(float(v) for v in re.split(r"[,\s]+", raw.strip()))
        except ValueError:
            raise ConfigError(
                f"[selection] alphas must be numbers, got {raw!r}") from None

    zeta_breakout = True
    if cp.has_option("bbbm", "zeta_breakout"):
        try:
            zeta_breakout = cp.getboolean("bbbm", "zeta_breakout")
        except ValueError:
            raise ConfigError(
                "[bbbm] zeta_breakout must be a boolean") from None

    mode = cp.get("run", "mode", fallback=None)
    if mode is not None and mode not in MODES:
        raise ConfigError(
            f"[run] mode must be one of {'|'.join(MODES)}, got {mode!r}")

    cfg = SimConfig(
        law=law,
        interval=interval,
        dt=_get_float(cp, "run", "dt", 0.1),
        horizon=_get_float(cp, "run", "horizon"),
        replicas=_get_int(cp, "run", "replicas", 1),
        seed=_get_int(cp, "run", "seed", 0),
        n_select=_get_int(cp, "selection", "N"),
        alphas=alphas,
        A=_get_float(cp, "bbbm", "A"),
        epsilon=_get_float(cp, "bbbm", "epsilon"),
        eta=_get_float(cp, "bbbm", "eta"),
        y=_get_float(cp, "bbbm", "y"),
        zeta=_get_float(cp, "bbbm", "zeta"),
        delta_color=_get_float(cp, "bbbm", "delta_color"),
        c_center=_get_float(cp, "bbbm", "c_center", 0.0),
        sample_every=_get_float(cp, "run", "sample_every"),
        threads=_get_int(cp, "run", "threads", 1),
        zeta_breakout=zeta_breakout,
        max_segments=_get_int(cp, "run", "max_segments", 50_000_000),
    )
    try:
        cfg.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return cfg, mode


_MODE_NEEDS = {
    "nbbm": (("n_select", "[selection] N"),),
    "coupled": (("n_select", "[selection] N"), ("horizon", "[run] horizon")),
    "bbbm": (("interval", "[interval] a"), ("A", "[bbbm] A"),
             ("epsilon", "[bbbm] epsilon"), ("y", "[bbbm] y"),
             ("zeta", "[bbbm] zeta")),
}
_MODE_NEEDS["bflat"] = _MODE_NEEDS["bbbm"] + (("delta_color", "[bbbm] delta_color"),)
_MODE_NEEDS["bsharp"] = _MODE_NEEDS["bflat"]
_MODE_NEEDS["csharp"] = _MODE_NEEDS["bflat"]


def _check_mode_requirements(cfg: SimConfig, mode: str) -> None:
    missing = [key for attr, key in _MODE_NEEDS[mode]
               if getattr(cfg, attr) is None]
    if missing:
        raise ConfigError(
            f"mode {mode} requires {', '.join(missing)} (missing)")


# ---------------------------------------------------------------------------
# helpers


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON-serializable: {type(o).__name__}")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True,
                               default=_json_default) + "\n")


def _pmap(fn, n: int, threads: int) -> list:
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(n)))


def _env_threads() -> int | None:
    raw = os.environ.get("NBBM_THREADS")
    if raw is None:
        return None
    try:
        val = int(raw)
    except ValueError:
        raise ConfigError(
            f"NBBM_THREADS must be an integer, got {raw!r}") from None
    if val < 1:
        raise ConfigError(f"NBBM_THREADS must be >= 1, got {val}")
    return val


def _nbbm_event_log(cfg: SimConfig, horizon: float) -> list[Event]:
    """Labelled object-lane N-BBM run for event logging.

    The fast lane drops genealogy, so event logs come from a companion run
    on its own stream (deterministic, but a different sample path than
    replica 0 of the series).  Selection is applied at step ends.
    """
    n_sel = cfg.n_select
    rng = rng_stream(cfg.seed, 0, _LANE_EVENT_LOG)
    a_init = (recentering(n_sel).a_N if n_sel >= 16
              else max(math.pi, math.log(n_sel) + 1.0))
    pop = Population.from_positions(
        sine_exp_density(a_init, 1.0).sample(n_sel, rng))
    events: list[Event] = []
    n_steps = int(math.ceil(horizon / cfg.dt - 1e-9))
    for i in range(n_steps):
        advance(pop, min((i + 1) * cfg.dt, horizon), law=cfg.law, dt=cfg.dt,
                rng=rng, events=events, max_segments=cfg.max_segments)
        apply_nbbm_selection(pop, n_sel)
    return events


# ---------------------------------------------------------------------------
# simulate


def _cmd_simulate(args) -> int:
    cfg, mode = parse_config(args.config)
    if args.mode is not None:
        mode = args.mode
    if mode is None:
        raise ConfigError("no mode: set [run] mode or pass --mode")
    if args.replicas is not None:
        cfg.replicas = args.replicas
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    env_threads = _env_threads()
    if env_threads is not None:
        cfg.threads = env_threads
    _check_mode_requirements(cfg, mode)
    for w in cfg.validate():
        print(f"warning: {w}", file=sys.stderr)

    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    manifest = ExperimentManifest(config=cfg, mode=mode)
    if args.stamp:
        manifest.created_at = datetime.now(timezone.utc).isoformat()
    h = manifest.hash()

    runinfo: dict = {"manifest": h, "mode": mode, "replicas": cfg.replicas}
    series_list = None
    final_pop: Population | None = None

    if mode == "nbbm":
        res = run_nbbm(cfg)
        series_list = res.series
        runinfo["n_select"] = res.n_select
        runinfo["horizon"] = res.horizon
        if res.constants is not None:
            runinfo["a_N"] = res.constants.a_N
            runinfo["mu_N"] = res.constants.mu_N
        final_pop = Population.from_positions(res.final_positions[0],
                                              time=res.horizon)
        if args.log_events:
            events = _nbbm_event_log(cfg, res.horizon)
            write_events_csv(outdir / "events.csv", events, h)
            manifest.outputs["events"] = "events.csv"
            runinfo["events_logged"] = len(events)
    elif mode == "coupled":
        results = _pmap(
            lambda r: run_coupled(cfg.law, cfg.n_select,
                                  horizon=cfg.horizon, seed=cfg.seed,
                                  replica=r),
            cfg.replicas, cfg.threads)
        runinfo["coupled"] = [
            {"replica": r, "events": res.events, "checks": res.checks,
             "dominance_verified": res.dominance_verified}
            for r, res in enumerate(results)]
        final_pop = Population.from_positions(results[0].final_mid,
                                              time=cfg.horizon)
    else:
        if args.log_events:
            raise ConfigError(
                "event logs are only available for mode nbbm "
                "(the labelled lane); the vectorized barrier lanes record "
                "series and piece diagnostics instead")
        runner = {"bbbm": run_bbbm, "bflat": run_bflat,
                  "bsharp": run_bsharp,
                  "csharp": lambda c, r: run_bsharp(c, r, csharp=True)}[mode]
        results = _pmap(lambda r: runner(cfg, r), cfg.replicas, cfg.threads)
        series_list = [res.series for res in results]
        runinfo["barrier"] = [
            {"replica": r, "trials_run": res.trials_run,
             "suppressed_breakouts": res.suppressed_breakouts,
             "clamped_responses": res.clamped_responses,
             "reinjected": res.reinjected, "wall_hits": res.wall_hits,
             "depth_capped": res.depth_capped,
             "pieces": res.pieces, "colour_stats": res.colour_stats}
            for r, res in enumerate(results)]
        final_pop = Population.from_positions(results[0].final_positions,
                                              time=results[0].series.times[-1])

    if series_list is not None:
        write_series_csv(outdir / "series.csv", series_list, h)
        manifest.outputs["series"] = "series.csv"
    if args.checkpoint:
        save_population(outdir / "final.ckpt", final_pop, h)
        manifest.outputs["checkpoint"] = "final.ckpt"
    manifest.outputs["runinfo"] = "runinfo.json"
    _write_json(outdir / "runinfo.json", runinfo)
    manifest.save(outdir / "manifest.json")
    print(f"{mode}: {cfg.replicas} replica(s) -> {outdir}  manifest {h}")
    return 0


# ---------------------------------------------------------------------------
# kernels-selfcheck


def _cmd_selfcheck(args) -> int:
    report = selfcheck()
    for c in report["checks"]:
        status = "PASS" if c["pass"] else "FAIL"
        print(f"{status} {c['name']}: max err {c['max_abs_err']:.3g} "
              f"(tol {c['tol']:g})")
    print(f"{'PASS' if report['passed'] else 'FAIL'} "
          f"({report['elapsed_s']:.2f} s)")
    return 0 if report["passed"] else 1


# ---------------------------------------------------------------------------
# levy


def _cmd_levy(args) -> int:
    params = LevyParams(c=args.c, jump_truncation=args.delta,
                        refine_small_jumps=not args.no_refine)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    ident = {"schema": "nbbm-levy-manifest-1",
             "code_version": __version__,
             "t": args.t, "samples": args.samples, "seed": args.seed,
             "delta": params.jump_truncation, "c": params.c,
             "refine_small_jumps": params.refine_small_jumps}
    h = canonical_hash(ident)
    _write_json(outdir / "manifest.json", dict(ident, hash=h))

    lams = sorted(set(_CF_LAMBDAS) | {la for la in args.lambdas})
    lines = [f"# manifest={h}", "lam,re_kappa,im_kappa"]
    for la in lams:
        k = kappa(la, params)
        lines.append(f"{fmt_real(la)},{fmt_real(k.real)},{fmt_real(k.imag)}")
    (outdir / "kappa.csv").write_text("\n".join(lines) + "\n")

    rng = rng_stream(args.seed, 0, _LANE_LEVY)
    values = sample_levy_increment(args.t, args.samples, rng, params)
    write_levy_csv(outdir / "increments.csv",
                   np.arange(args.samples), np.full(args.samples, args.t),
                   values, args.seed, h)
    print(f"levy: {args.samples} increments of L_{args.t:g} and "
          f"kappa at {len(lams)} points -> {outdir}  manifest {h}")
    return 0


# ---------------------------------------------------------------------------
# couple


def _cmd_couple(args) -> int:
    rows = []
    for r in range(args.replicas):
        res = run_coupled(ReproductionLaw.binary(), args.n,
                          horizon=args.horizon, seed=args.seed, replica=r,
                          slack=args.slack, extra=args.extra,
                          inject_fault=args.inject_fault)
        rows.append({"replica": r, "events": res.events,
                     "checks": res.checks,
                     "dominance_verified": res.dominance_verified})
        print(f"replica {r}: {res.events} events, "
              f"{res.checks} checks, dominance "
              f"{'verified' if res.dominance_verified else 'NOT verified'}")
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        _write_json(outdir / "runinfo.json",
                    {"coupled": rows, "n": args.n, "horizon": args.horizon,
                     "slack": args.slack, "extra": args.extra,
                     "seed": args.seed})
    ok = all(row["dominance_verified"] for row in rows)
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# report


def _series_verdicts(path: str, burn_in: float | None,
                     plot_dir: Path) -> tuple[list[dict], dict]:
    h, series_list = read_series_csv(path)
    times = series_list[0].times
    cols = list(series_list[0].columns)
    verdicts: list[dict] = []

    med_keys = [c for c in cols if c.startswith("med_")]
    for key in med_keys:
        med = np.stack([s.columns[key] for s in series_list])
        finite = np.isfinite(med).all(axis=0)
        if len(series_list) >= 2 and finite.sum() >= 3:
            t_f = times[finite]
            bi = burn_in if burn_in is not None else 0.25 * t_f[-1]
            try:
                slope, se = speed_estimate(t_f, med[:, finite], burn_in=bi)
                verdicts.append({"name": f"speed_{key}", "verdict": "info",
                                 "slope": slope, "stderr": se,
                                 "burn_in": bi})
            except ValueError as e:
                verdicts.append({"name": f"speed_{key}",
                                 "verdict": "skipped", "reason": str(e)})
        else:
            verdicts.append({"name": f"speed_{key}", "verdict": "skipped",
                             "reason": "need >= 2 replicas and >= 3 finite "
                                       "sample times"})

    if "Z" in cols:
        z0 = np.array([s.columns["Z"][0] for s in series_list])
        zt = np.array([s.columns["Z"][-1] for s in series_list])
        try:
            rep = oracle_Z(z0, zt)
            verdicts.append({"name": "martingale_Z",
                             "verdict": "pass" if rep.passed else "fail",
                             "line": rep.line()})
        except ValueError as e:
            verdicts.append({"name": "martingale_Z", "verdict": "skipped",
                             "reason": str(e)})

    # plot-ready: replica mean of every column on the common grid
    mean_lines = [f"# manifest={h}", ",".join(["t"] + cols)]
    stacks = {c: np.stack([s.columns[c] for s in series_list]) for c in cols}
    for i, t in enumerate(times):
        row = [fmt_real(t)]
        for c in cols:
            col_i = stacks[c][:, i]
            row.append(fmt_real(np.mean(col_i) if np.isfinite(col_i).all()
                                else math.nan))
        mean_lines.append(",".join(row))
    (plot_dir / "series_mean.csv").write_text("\n".join(mean_lines) + "\n")

    summary = {"hash": h, "replicas": len(series_list),
               "t_final": float(times[-1]), "columns": cols}
    return verdicts, summary


def _levy_verdicts(path: str, delta: float,
                   plot_dir: Path) -> tuple[list[dict], dict]:
    h, table = read_levy_csv(path)
    values, t_grid = table["value"], table["t"]
    t_span = float(t_grid[0])
    verdicts: list[dict] = []
    if not np.all(t_grid == t_span):
        verdicts.append({"name": "cf_vs_kappa", "verdict": "skipped",
                         "reason": "mixed increment spans in levy CSV"})
        return verdicts, {"hash": h, "samples": len(values)}

    params = LevyParams(jump_truncation=delta)
    try:
        cmp_ = increment_vs_levy(values, t_span, _CF_LAMBDAS, params,
                                 fit_c=True)
        verdicts.append({
            "name": "cf_vs_kappa",
            "verdict": "pass" if cmp_.passed else "fail",
            "max_deviation": float(np.max(cmp_.deviation)),
            "worst_ratio_vs_3se": cmp_.worst_ratio,
            "fitted_c": cmp_.fitted_c,
            "n": cmp_.n,
        })
        fitted = LevyParams(c=cmp_.fitted_c, jump_truncation=delta)
        lines = [f"# manifest={h}",
                 "lam,emp_re,emp_im,model_re,model_im,deviation,se"]
        for j, la in enumerate(cmp_.lams):
            phi = np.mean(np.exp(1j * la * values))
            model = np.exp(t_span * kappa(la, fitted))
            lines.append(",".join(fmt_real(v) for v in (
                la, phi.real, phi.imag, model.real, model.imag,
                cmp_.deviation[j], cmp_.se[j])))
        (plot_dir / "cf_table.csv").write_text("\n".join(lines) + "\n")
    except ValueError as e:
        verdicts.append({"name": "cf_vs_kappa", "verdict": "skipped",
                         "reason": str(e)})

    lo, hi = float(np.min(values)), float(np.max(values))
    if hi > lo:
        dens = empirical_density(values, bins=max(10, min(60, len(values) // 50)),
                                 lo=lo, hi=hi)
        dlines = [f"# manifest={h}", "bin_lo,bin_hi,mass"]
        for i in range(len(dens.mass)):
            dlines.append(",".join(fmt_real(v) for v in (
                dens.edges[i], dens.edges[i + 1], dens.mass[i])))
        (plot_dir / "increment_density.csv").write_text(
            "\n".join(dlines) + "\n")
    return verdicts, {"hash": h, "samples": len(values), "t": t_span}


def _events_verdicts(path: str, plot_dir: Path) -> tuple[list[dict], dict]:
    h, events = read_events_csv(path)
    by_kind: dict[str, int] = {}
    for ev in events:
        by_kind[ev.kind] = by_kind.get(ev.kind, 0) + 1
    verdicts = [{"name": "event_counts", "verdict": "info", **by_kind}]
    stopped = np.array([ev.position for ev in events
                        if ev.kind in ("absorb_lo", "absorb_hi", "freeze")])
    if len(stopped) >= 10 and float(np.min(stopped)) < float(np.max(stopped)):
        dens = empirical_density(stopped, bins=max(10, min(50, len(stopped) // 20)),
                                 lo=float(np.min(stopped)),
                                 hi=float(np.max(stopped)))
        lines = [f"# manifest={h}", "bin_lo,bin_hi,mass"]
        for i in range(len(dens.mass)):
            lines.append(",".join(fmt_real(v) for v in (
                dens.edges[i], dens.edges[i + 1], dens.mass[i])))
        (plot_dir / "stopped_density.csv").write_text("\n".join(lines) + "\n")
    return verdicts, {"hash": h, "events": len(events)}


def _cmd_report(args) -> int:
    if not (args.series or args.levy or args.events):
        raise ConfigError(
            "report needs at least one input: --series, --levy or --events")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    verdicts: list[dict] = []
    inputs: dict[str, dict] = {}
    if args.series:
        v, s = _series_verdicts(args.series, args.burn_in, outdir)
        verdicts += v
        inputs["series"] = s
    if args.levy:
        v, s = _levy_verdicts(args.levy, args.delta, outdir)
        verdicts += v
        inputs["levy"] = s
    if args.events:
        v, s = _events_verdicts(args.events, outdir)
        verdicts += v
        inputs["events"] = s
    bundle = {"inputs": inputs, "verdicts": verdicts,
              "failed": sum(1 for v in verdicts if v["verdict"] == "fail")}
    _write_json(outdir / "verdicts.json", bundle)
    for v in verdicts:
        detail = v.get("line") or v.get("reason") or ""
        print(f"{v['verdict'].upper():7s} {v['name']}  {detail}".rstrip())
    return 0 if bundle["failed"] == 0 else 1


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nbbm",
        description="Monte Carlo toolkit for branching Brownian motion "
                    "with selection")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser(
        "simulate", help="run a particle system from a config file")
    sim.add_argument("--config", required=True, help="INI run description")
    sim.add_argument("--mode", choices=MODES,
                     help="override [run] mode from the config")
    sim.add_argument("--replicas", type=int, help="override [run] replicas")
    sim.add_argument("--seed", type=int, help="override [run] seed")
    sim.add_argument("--threads", type=int,
                     help="override [run] threads (NBBM_THREADS env wins)")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--stamp", action="store_true",
                     help="record wall-clock creation time in the manifest"
                          " (off by default to keep reruns byte-identical)")
    sim.add_argument("--checkpoint", action="store_true",
                     help="write final.ckpt with replica 0's end state")
    sim.add_argument("--log-events", action="store_true",
                     help="also write events.csv from the labelled lane "
                          "(mode nbbm only)")
    sim.set_defaults(fn=_cmd_simulate)

    chk = sub.add_parser(
        "kernels-selfcheck",
        help="cross-validate the closed-form kernels, exit 0 iff all pass")
    chk.set_defaults(fn=_cmd_selfcheck)

    lev = sub.add_parser(
        "levy", help="tabulate the limit exponent and sample increments")
    lev.add_argument("--out", required=True)
    lev.add_argument("--samples", type=int, default=10_000)
    lev.add_argument("--t", type=float, default=1.0,
                     help="time span of each sampled increment")
    lev.add_argument("--delta", type=float, default=1e-3,
                     help="small-jump truncation level")
    lev.add_argument("--c", type=float, default=0.0,
                     help="centering constant")
    lev.add_argument("--seed", type=int, default=0)
    lev.add_argument("--lambdas", type=float, nargs="*", default=(),
                     help="extra CF grid points for the kappa table")
    lev.add_argument("--no-refine", action="store_true",
                     help="disable the small-jump Gaussian refinement")
    lev.set_defaults(fn=_cmd_levy)

    cpl = sub.add_parser(
        "couple", help="three-system domination check on shared noise")
    cpl.add_argument("--n", type=int, required=True,
                     help="selection size of the middle system")
    cpl.add_argument("--horizon", type=float, required=True)
    cpl.add_argument("--replicas", type=int, default=1)
    cpl.add_argument("--seed", type=int, default=0)
    cpl.add_argument("--slack", type=int, default=0,
                     help="upper system trims only beyond n + slack")
    cpl.add_argument("--extra", type=int, default=0,
                     help="lower system over-culls to n - extra")
    cpl.add_argument("--out", help="optional directory for runinfo.json")
    cpl.add_argument("--inject-fault", action="store_true",
                     help=argparse.SUPPRESS)
    cpl.set_defaults(fn=_cmd_couple)

    rep = sub.add_parser(
        "report", help="turn CSV logs into verdicts and plot-ready tables")
    rep.add_argument("--series", help="series CSV from simulate")
    rep.add_argument("--levy", help="increments CSV from the levy command")
    rep.add_argument("--events", help="events CSV from simulate")
    rep.add_argument("--out", required=True)
    rep.add_argument("--burn-in", type=float, default=None,
                     help="burn-in for speed fits (default: quarter of the "
                          "series)")
    rep.add_argument("--delta", type=float, default=1e-3,
                     help="truncation level used when the increments were "
                          "sampled")
    rep.set_defaults(fn=_cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError, OSError, CouplingError,
            CapacityError) as e:
        record = {"error": {"type": type(e).__name__, "message": str(e)}}
        print(json.dumps(record), file=sys.stderr)
        out = getattr(args, "out", None)
        if out and Path(out).is_dir():
            _write_json(Path(out) / "error.json", record)
        return 1


if __name__ == "__main__":
    sys.exit(main())
