"""Command-line entry point: ``mmisac <subcommand> --seed N [options]``.

Exit status is 0 on success, 1 on a usage or validation error and 2 on a
runtime error.  Data goes to ``--out`` (or stdout); diagnostics go to
stderr.  With ``--out``, run metadata is written to ``<out>.meta.json``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .array import PhasedArray, sector_codebook
from .cancellation import cancel_pipeline, sensing_beamformers
from .channel import TxInterference, compose, dbm_to_mw, gen_sensing_channel
from .fusion import (
    point_cloud,
    raw_fix,
    run_ekf,
    synthetic_scan,
    track_csv,
)
from .io import csv_text, load_config
from .probing import sector_sweep, ti_probe, trn_sequence
from .scheduling import emulate_time_span
from .sim import (
    SCHEDULERS,
    ConfigError,
    ScenarioConfig,
    respiration_scene,
    run_baselines,
    run_scenario,
    sweep_large_scale,
    tracking_scenario,
)

SUBCOMMANDS = ("probe", "cancel", "schedule", "track", "pointcloud", "respiration",
               "sweep", "baselines", "codebook")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--seed", type=int, help="random seed (required here or in --config)")
    p.add_argument("--config", type=Path, help="scenario config file (JSON)")
    p.add_argument("--out", type=Path, help="output file (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--threads", type=int, default=1, help="worker processes (0 = all cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmisac", description="mmWave sensing and communication simulator")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("probe", help="sector sweep from the first AP to every UE")
    _common(p)
    p = sub.add_parser("cancel", help="Tx-interference cancellation on the first subject")
    _common(p)
    p.add_argument("--packets", type=int, default=50)
    p.add_argument("--enob", type=float, default=None, help="ADC effective bits")
    p = sub.add_parser("schedule", help="RR / BC-Set / Opt time spans on random placements")
    _common(p)
    p.add_argument("--ues", type=int, default=6)
    p.add_argument("--subjects", type=int, default=14)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--no-opt", action="store_true", help="skip the integer program")
    p = sub.add_parser("track", help="EKF on a walker circling a rectangle")
    _common(p)
    p.add_argument("--duration", type=float, default=20.0)
    p.add_argument("--q", type=float, default=0.5, help="process noise intensity")
    p = sub.add_parser("pointcloud", help="point cloud of a synthetic scan")
    _common(p)
    p.add_argument("--threshold", type=float, default=-20.0, help="dB")
    p = sub.add_parser("respiration", help="breathing-rate scenario")
    _common(p)
    p.add_argument("--scheduler", choices=SCHEDULERS, default=None)
    p = sub.add_parser("sweep", help="large-scale trend sweep")
    _common(p)
    p.add_argument("--case", type=int, choices=(1, 2), required=True)
    p.add_argument("--trials", type=int, default=None)
    p = sub.add_parser("baselines", help="SO / CO / RR / BC-Set comparison")
    _common(p)
    p = sub.add_parser("codebook", help="sector codebook as (amplitude, phase) pairs")
    _common(p)
    p.add_argument("--elements", type=int, default=16)
    p.add_argument("--sectors", type=int, default=32)
    return parser


# ---------------------------------------------------------------------------
# handlers: each returns (csv_text, json_object)
# ---------------------------------------------------------------------------


def _config(args) -> ScenarioConfig:
    if args.config is not None:
        return load_config(args.config, seed=args.seed)
    if args.seed is None:
        raise ConfigError(["seed is required (config key or --seed)"])
    return ScenarioConfig(respiration_scene(), seed=args.seed)


def _require_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    if args.config is not None:
        return load_config(args.config).seed
    raise ConfigError(["seed is required (config key or --seed)"])


def _probe(args):
    cfg = _config(args)
    ap = cfg.scene.aps[0]
    cb = sector_codebook(ap.array, cfg.codebook_size)
    results = sector_sweep(ap, cfg.scene.ues, cb, cfg.ofdm, tx_power_dbm=cfg.tx_power_dbm,
                           k_factor=cfg.k_factor, rng_seed=cfg.seed)
    rows, obj = [], []
    for r in results:
        for side, rep in (("initiator", r.initiator_side), ("responder", r.responder_side)):
            rows += [(r.peer, side, i, float(v)) for i, v in enumerate(rep.per_sector_rssi)]
        obj.append({"peer": r.peer, "initiator": r.initiator_side.to_dict(),
                    "responder": r.responder_side.to_dict()})
    return csv_text(("peer", "side", "sector", "rssi_db"), rows), obj


def _cancel(args):
    cfg = _config(args)
    if not cfg.scene.subjects:
        raise ConfigError(["cancel needs at least one subject in the scene"])
    if args.packets < 1:
        raise ConfigError(["--packets must be >= 1"])
    ap, subj = cfg.scene.aps[0], cfg.scene.subjects[0]
    arr = ap.array
    bearing = ap.bearing_to(subj.position)
    bf = sensing_beamformers(arr, arr, bearing)
    proc = TxInterference(cfg.ofdm, arr, arr, seed=cfg.seed, margin_db=cfg.interference_margin_db,
                          n_sectors=cfg.codebook_size)
    v = bf.tx_matrix()[:, 0]
    h_ti = proc.for_awv(v, 0)
    est = ti_probe([v], [h_ti], cfg.ofdm, tx_power_dbm=cfg.tx_power_dbm, leak_taps=proc.n_taps,
                   rng_seed=[cfg.seed, 5]).per_sector[0]
    zero = np.zeros_like(h_ti)
    snaps = [compose(h_ti, gen_sensing_channel(ap, ap, cfg.scene.subjects, cfg.ofdm, t=n * cfg.slot_duration),
                     zero, zero) for n in range(args.packets)]
    s = math.sqrt(dbm_to_mw(cfg.tx_power_dbm) / cfg.ofdm.n_subcarriers) * trn_sequence(
        cfg.ofdm.n_subcarriers, [cfg.seed, 4])
    g = 10 * math.log10(arr.element_count) - 3.0
    out = cancel_pipeline(snaps, bf, est, s, cfg.ofdm, tx_array=arr, rx_array=arr,
                          mainlobe_targets=[(bearing, g)], max_iters=cfg.nulling_iters,
                          rng_seed=[cfg.seed, 6], adc_enob=args.enob)
    rep = out.report
    return rep.csv_header() + "\n" + rep.csv_row() + "\n", rep.to_dict()


def _schedule(args):
    seed = _require_seed(args)
    if min(args.ues, args.subjects) < 0 or args.trials < 1 or args.chains < 1:
        raise ConfigError(["--ues/--subjects must be >= 0, --trials and --chains >= 1"])
    res = emulate_time_span(args.ues, args.subjects, args.trials, args.chains, seed,
                            run_opt=not args.no_opt)
    obj = {"n_chains": args.chains, "rr_span": res.rr, "bcset_span": res.bcset, "opt_span": res.opt,
           "trials": [{"trial": t, "rr_span": r, "bcset_span": b, "opt_span": o}
                      for t, r, b, o in res.rows]}
    return res.csv(args.chains), obj


def _track(args):
    seed = _require_seed(args)
    times, batches, sensors, truth = tracking_scenario(seed, duration=args.duration)
    first = batches[0][0]
    x0 = np.r_[raw_fix(first, sensors["ap"][:2]), 0.0, 0.0]
    states = run_ekf(times, batches, sensors, x0, np.diag([0.1, 0.1, 1.0, 1.0]), q=args.q)
    obj = [{"t": s.time, "x": s.mean[0], "y": s.mean[1], "vx": s.mean[2], "vy": s.mean[3],
            "trace_p": float(np.trace(s.covariance))} for s in states]
    return track_csv(states), obj


def _pointcloud(args):
    seed = _require_seed(args)
    rng = np.random.default_rng(seed)
    # a person-sized cluster of reflectors 2 m ahead
    refl = [(rng.normal(0, 0.08), rng.normal(0, 0.2), 2.0 + rng.normal(0, 0.05), rng.uniform(-10, 0))
            for _ in range(12)]
    az = np.radians(np.arange(-45, 45.1, 1.5))
    el = np.radians(np.arange(-30, 30.1, 1.5))
    pts = point_cloud(synthetic_scan(refl, az, el, np.radians(6.4), 0.075), args.threshold)
    return (csv_text(("x", "y", "z"), [tuple(map(float, p)) for p in pts]),
            [{"x": float(x), "y": float(y), "z": float(z)} for x, y, z in pts])


def _metrics_rows(metrics):
    header = ("scheduler", "mean_throughput_bps", "mean_s_snr_db", "rate_bpm", "rate_error_bpm", "time_span")
    rows = [(m.scheduler, m.mean_throughput, m.mean_s_snr_db, m.rate_bpm, m.rate_error_bpm, m.time_span)
            for m in metrics]
    return csv_text(header, rows)


def _respiration(args):
    cfg = _config(args)
    if args.scheduler:
        cfg = ScenarioConfig(**{**cfg.__dict__, "scheduler": args.scheduler})
    m = run_scenario(cfg)
    return _metrics_rows([m]), m.to_dict()


def _sweep(args):
    seed = _require_seed(args)
    trials = args.trials
    if args.config is not None:
        cfg = load_config(args.config, seed=args.seed)
        trials = trials or cfg.trials
        counts = {"ue_counts": cfg.ue_counts, "ap_counts": cfg.ap_counts}
    else:
        counts = {}
    trials = trials or 500
    if trials < 1:
        raise ConfigError(["--trials must be >= 1"])
    table = sweep_large_scale(args.case, trials=trials, seed=seed, workers=args.threads, **counts)
    rho_t, rho_s = table.spearman()
    obj = {"case": table.case, "setting": table.setting_name, "settings": table.settings,
           "mean_throughput_bps": table.throughput, "mean_s_snr_db": table.s_snr,
           "spearman_throughput": rho_t, "spearman_s_snr": rho_s}
    return table.csv(), obj


def _baselines(args):
    out = run_baselines(_config(args))
    return _metrics_rows(out.values()), {k: m.to_dict() for k, m in out.items()}


def _codebook(args):
    _require_seed(args)
    if args.elements < 1 or args.sectors < 1:
        raise ConfigError(["--elements and --sectors must be >= 1"])
    cb = sector_codebook(PhasedArray(args.elements), args.sectors)
    pairs = [[[float(abs(w)), float(np.angle(w))] for w in awv] for awv in cb]
    rows = [(i, m, a, p) for i, awv in enumerate(pairs) for m, (a, p) in enumerate(awv)]
    return csv_text(("sector", "element", "amplitude", "phase"), rows), pairs


HANDLERS = {
    "probe": _probe, "cancel": _cancel, "schedule": _schedule, "track": _track,
    "pointcloud": _pointcloud, "respiration": _respiration, "sweep": _sweep,
    "baselines": _baselines, "codebook": _codebook,
}


def _round(obj):
    if isinstance(obj, float):
        return float(f"{obj:.9g}") if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def dispatch(args) -> int:
    csv_out, obj = HANDLERS[args.command](args)
    text = csv_out if args.format == "csv" else json.dumps(_round(obj), sort_keys=True) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text)
        meta = {"command": args.command, "argv": sys.argv[1:], "version": __version__}
        if args.config is not None:
            meta["config"] = str(args.config)
        Path(str(args.out) + ".meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "mmisac: error: a subcommand is required")
        return dispatch(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures map to exit 2
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


__all__ = ["build_parser", "dispatch", "main"]
