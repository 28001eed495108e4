"""Command-line entry point: ``latentdem {deblur,posefree,bench,synth,metrics,oracle}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io as lio
from .codec import pool_codec
from .config import ConfigError, RunConfig, load_config
from .em import (
    TRACE_COLUMNS,
    EMStepError,
    SkipSchedule,
    count_skipped,
    pose_error_deg,
    run_blind_deblur,
    run_posefree,
)
from .forward import PoseParam
from .metrics import mnc, mse_grid, psnr, report, ssim
from .mstep import pose_loss, simplex_project
from .oracle import mnc_bruteforce, pose_grid_search, simplex_project_bruteforce
from .prior import PriorScore
from .scenes import make_deblur_scene, make_latent_model, make_view_pair

log = logging.getLogger("latentdem")


def _setup_logging() -> None:
    level = os.environ.get("LATENTDEM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _latent_model(cfg: RunConfig):
    sc = cfg.scene
    return make_latent_model(cfg.seed, sc.image_size, sc.latent_dim, sc.components, sc.spread,
                             sc.comp_var, sc.offset, sc.codec)


def write_trace(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_image(stem: Path, img) -> None:
    lio.write_ldemf32(stem.with_suffix(".ldemf32"), img)
    lio.write_pgm(stem.with_suffix(".pgm"), img)


# -- deblur ---------------------------------------------------------------------

def deblur_trial(cfg: RunConfig, trial: int, out_dir: Path | None = None) -> dict:
    """Run one blind-deblurring trial; write its artifacts when ``out_dir`` is given."""
    em = cfg.em
    sched = em.schedule()
    model = _latent_model(cfg)
    if cfg.inputs.observation is not None:
        y = lio.read_image(cfg.inputs.observation)
        x_true = lio.read_image(cfg.inputs.ground_truth) if cfg.inputs.ground_truth else None
        k_true = lio.read_kernel_text(cfg.inputs.kernel) if cfg.inputs.kernel else None
    else:
        scene = make_deblur_scene(model, cfg.seed, cfg.scene.kernel, cfg.scene.sigma, index=trial)
        y, x_true, k_true = scene.y, scene.x, scene.kernel
    res = run_blind_deblur(em, y, PriorScore(model.prior, sched), model.codec,
                           trial=trial, k_true=k_true, sched=sched)
    r0, r1 = res.residuals(y)
    metrics = {
        "trial": trial,
        "psnr": None, "ssim": None, "kernel_mse": None, "mnc": None, "mnc_initial": None,
        "residual_initial": r0, "residual_final": r1,
        "skipped_steps": count_skipped(em.skip, sched.T),
        "wall_ms": res.wall_ms,
    }
    if x_true is not None:
        rep = report(res.x0, x_true)
        metrics.update(psnr=rep.psnr_db, ssim=rep.ssim)
    if k_true is not None:
        metrics.update(kernel_mse=mse_grid(res.kernel, k_true), mnc=mnc(res.kernel, k_true),
                       mnc_initial=mnc(res.initial_kernel, k_true))
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_image(out_dir / "x0", res.x0)
        lio.write_kernel_text(out_dir / "kernel.txt", res.kernel)
        _write_json(out_dir / "metrics.json", metrics)
        if cfg.trace:
            write_trace(out_dir / "trace.csv", res.trace)
    return metrics


def _trial_dir(out: Path, trial: int) -> Path:
    return out / f"trial-{trial:03d}"


def _run_trials(fn, cfg: RunConfig) -> list[dict]:
    dirs = [_trial_dir(cfg.out, i) for i in range(cfg.trials)]
    if cfg.jobs == 1 or cfg.trials == 1:
        return [fn(cfg, i, d) for i, d in enumerate(dirs)]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        futs = [pool.submit(fn, cfg, i, d) for i, d in enumerate(dirs)]
        return [f.result() for f in futs]


def cmd_deblur(cfg: RunConfig) -> int:
    results = _run_trials(deblur_trial, cfg)
    for m in results:
        print(f"trial {m['trial']}: mnc={_num(m['mnc'])} psnr={_num(m['psnr'])} "
              f"residual {m['residual_initial']:.4g} -> {m['residual_final']:.4g} ({m['wall_ms']:.0f} ms)")
    return 0


def _num(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


# -- pose-free -----------------------------------------------------------------

def _view_codec(cfg: RunConfig):
    n = cfg.scene.image_size
    return pool_codec((n, n), 2)


def posefree_trial(cfg: RunConfig, trial: int, out_dir: Path | None = None) -> dict:
    codec = _view_codec(cfg)
    if cfg.inputs.view1 is not None or cfg.inputs.view2 is not None:
        if cfg.inputs.view1 is None or cfg.inputs.view2 is None:
            raise ConfigError("[input] needs both view1 and view2")
        y1, y2 = lio.read_image(cfg.inputs.view1), lio.read_image(cfg.inputs.view2)
        phi1, theta = PoseParam(0.0), None
    else:
        pair = make_view_pair(cfg.seed, cfg.scene.image_size, cfg.scene.theta_deg, index=trial)
        y1, y2, phi1, theta = pair.y1, pair.y2, pair.phi1, pair.theta_deg
    res = run_posefree(cfg.em, y1, phi1, y2, codec, trial=trial, theta_true_deg=theta)
    oracle, flat, _ = pose_grid_search(lambda a: pose_loss(y2, res.synth, y1, phi1, a, 1.0, 1.0, codec), 1.0)
    pose = {
        "trial": trial,
        "phi2_deg": res.phi2.signed_degrees,
        "theta_true_deg": theta,
        "error_deg": None if theta is None else pose_error_deg(res.phi2, theta),
        "oracle_deg": oracle.signed_degrees,
        "oracle_flat": flat,
        "wall_ms": res.wall_ms,
    }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_image(out_dir / "synth", res.synth)
        _write_json(out_dir / "pose.json", pose)
        if cfg.trace:
            write_trace(out_dir / "trace.csv", res.trace)
    return pose


def cmd_posefree(cfg: RunConfig) -> int:
    for p in _run_trials(posefree_trial, cfg):
        print(f"trial {p['trial']}: phi2={p['phi2_deg']:.3f} deg oracle={p['oracle_deg']:.1f} deg")
    return 0


# -- bench ---------------------------------------------------------------------

BENCH_COLUMNS = ("method", "skipped_M", "seed", "running_time_ms", "image_psnr", "kernel_mse")


def _bench_one(cfg: RunConfig, K: int, seed: int) -> dict:
    em = dataclasses.replace(cfg.em, skip=SkipSchedule(cfg.bench.S_T, K), trace=False)
    run_cfg = dataclasses.replace(cfg.with_seed(seed), em=dataclasses.replace(em, seed=seed), trace=False)
    m = deblur_trial(run_cfg, 0)
    return {
        "method": f"K={K}",
        "skipped_M": count_skipped(em.skip, em.T),
        "seed": seed,
        "running_time_ms": m["wall_ms"],
        "image_psnr": m["psnr"],
        "kernel_mse": m["kernel_mse"],
    }


def cmd_bench(cfg: RunConfig) -> int:
    """Sweep the skip period K over seeds; rows per (K, seed) plus per-K medians.

    Runs within one seed are interleaved across K so slow drift in machine
    load affects every setting alike.
    """
    if not cfg.bench.K or cfg.bench.seeds < 1:
        log.error("bench sweep is empty")
        print("error: bench sweep is empty (need at least one K and one seed)", file=sys.stderr)
        return 2
    jobs = [(K, cfg.seed + s) for s in range(cfg.bench.seeds) for K in cfg.bench.K]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_bench_one, [cfg] * len(jobs), *zip(*jobs)))
    else:
        rows = [_bench_one(cfg, K, s) for K, s in jobs]
    cfg.out.mkdir(parents=True, exist_ok=True)
    with open(cfg.out / "bench.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    summary = bench_summary(rows)
    with open(cfg.out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS[:2] + BENCH_COLUMNS[3:], lineterminator="\n")
        w.writeheader()
        w.writerows(summary)
    for r in summary:
        print(f"{r['method']:>6} M={r['skipped_M']:>4} time={r['running_time_ms']:.0f} ms "
              f"psnr={_num(r['image_psnr'])} kernel_mse={_num(r['kernel_mse'])}")
    return 0


def bench_summary(rows) -> list[dict]:
    """Median of each numeric column per method, in first-seen order."""
    order = list(dict.fromkeys(r["method"] for r in rows))
    out = []
    for meth in order:
        sel = [r for r in rows if r["method"] == meth]

        def med(key):
            vals = [r[key] for r in sel if r[key] is not None]
            return statistics.median(vals) if vals else None

        out.append({
            "method": meth,
            "skipped_M": sel[0]["skipped_M"],
            "running_time_ms": med("running_time_ms"),
            "image_psnr": med("image_psnr"),
            "kernel_mse": med("kernel_mse"),
        })
    return out


# -- synth ---------------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    """Write ``scene.count`` ground-truth scenes (deblur or view pairs) with their seeds."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    model = _latent_model(cfg) if cfg.task == "deblur" else None
    for i in range(cfg.scene.count):
        d = cfg.out / f"scene-{i:03d}"
        d.mkdir(exist_ok=True)
        meta = {"seed": cfg.seed, "index": i, "task": cfg.task}
        if cfg.task == "deblur":
            sc = make_deblur_scene(model, cfg.seed, cfg.scene.kernel, cfg.scene.sigma, index=i)
            _write_image(d / "x", sc.x)
            _write_image(d / "y", sc.y)
            lio.write_kernel_text(d / "kernel.txt", sc.kernel)
            meta.update(kernel=cfg.scene.kernel, sigma=cfg.scene.sigma)
        else:
            vp = make_view_pair(cfg.seed, cfg.scene.image_size, cfg.scene.theta_deg, index=i)
            _write_image(d / "view1", vp.y1)
            _write_image(d / "view2", vp.y2)
            meta.update(theta_deg=vp.theta_deg)
        _write_json(d / "scene.json", meta)
    print(f"wrote {cfg.scene.count} scene(s) to {cfg.out}")
    return 0


# -- metrics / oracle ----------------------------------------------------------

def cmd_metrics(args) -> int:
    a, b = lio.read_image(args.image), lio.read_image(args.reference)
    out = {"psnr": psnr(a, b, args.peak), "ssim": ssim(a, b, args.peak), "mse": mse_grid(a, b)}
    if args.kernels:
        k1, k2 = (lio.read_kernel_text(p) for p in args.kernels)
        out.update(kernel_mse=mse_grid(k1, k2), mnc=mnc(k1, k2))
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_oracle(args) -> int:
    if args.what == "simplex":
        v = np.array(args.values, dtype=np.float64)
        out = {"bruteforce": simplex_project_bruteforce(v).tolist(), "fast": simplex_project(v).tolist()}
    elif args.what == "mnc":
        k1, k2 = (lio.read_kernel_text(p) for p in args.values)
        out = {"bruteforce": mnc_bruteforce(k1, k2), "fast": mnc(k1, k2)}
    else:  # pose
        y1, y2 = (lio.read_image(p) for p in args.values)
        codec = pool_codec(y1.shape, 2)
        phi1 = PoseParam(0.0)
        p, flat, _ = pose_grid_search(lambda a: pose_loss(y2, y1, y1, phi1, a, 1.0, 1.0, codec), args.resolution)
        out = {"argmin_deg": p.signed_degrees, "flat": flat}
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


# -- entry ---------------------------------------------------------------------

RUN_COMMANDS = {"deblur": cmd_deblur, "posefree": cmd_posefree, "bench": cmd_bench, "synth": cmd_synth}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="latentdem", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in RUN_COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--jobs", type=int, help="worker processes")
        p.add_argument("--trace", action="store_true", help="write per-step trace CSVs")
    p = sub.add_parser("metrics", help="compare two images (and optionally two kernels)")
    p.add_argument("image")
    p.add_argument("reference")
    p.add_argument("--kernels", nargs=2, metavar=("K_HAT", "K_TRUE"))
    p.add_argument("--peak", type=float, default=1.0)
    p = sub.add_parser("oracle", help="reference solutions for ad-hoc checks")
    p.add_argument("what", choices=("simplex", "mnc", "pose"))
    p.add_argument("values", nargs="+", help="vector entries, two kernel files, or two view images")
    p.add_argument("--resolution", type=float, default=1.0, help="pose grid step in degrees")
    return ap


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out=Path(args.out))
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = dataclasses.replace(cfg, jobs=args.jobs)
    if args.trace:
        cfg = dataclasses.replace(cfg, trace=True, em=dataclasses.replace(cfg.em, trace=True))
    return cfg


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "metrics":
            return cmd_metrics(args)
        if args.command == "oracle":
            return cmd_oracle(args)
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command in ("deblur", "posefree") and cfg.task != args.command:
            cfg = dataclasses.replace(cfg, task=args.command, em=dataclasses.replace(cfg.em, task=args.command))
        return RUN_COMMANDS[args.command](cfg)
    except (ConfigError, FileNotFoundError, EMStepError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
