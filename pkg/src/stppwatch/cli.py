"""Command-line entry point: simulate, train, calibrate, detect, evaluate,
and plot subcommands over JSON run configurations.

Exit codes: 0 on success, 2 on configuration errors, 3 on numerical
divergence.  `--jobs` (or the STPP_WATCH_JOBS environment variable) sizes
the worker pool for trial-parallel commands; results are reduced in seed
order so parallelism never changes outputs.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import bin_events, fit_gaussian_bin_model
from .calibrate import CalibrationConfig, calibrate_threshold, empirical_arl
from .config import ConfigError, RunConfig
from .detect import DetectionResult, run_detector, run_online_detector
from .events import read_events_csv, write_events_csv
from .nets import DSMConfig, NeuralScoreModel, TrainingDivergedError, train_score_model, write_loss_trace
from .evaluate import (edd, edd_report, jaccard_at_stop, region_evolution,
                       run_trial_batch, tradeoff_curve, write_tradeoff_csv)
from .plots import plot_region_snapshots, plot_tradeoff, plot_trajectory
from .score import AnalyticScoreModel, WeightConfig
from .simulate import ChangeScenario, derive_seeds, simulate


def build_models(cfg: RunConfig):
    """Score-model pair per the detector config (analytic or checkpointed)."""
    det = cfg.detector
    score = det.score or {"kind": "analytic"}
    kind = score.get("kind", "analytic")
    if kind == "analytic":
        return (AnalyticScoreModel(params=cfg.scenario.pre, delta=det.delta),
                AnalyticScoreModel(params=cfg.scenario.post, delta=det.delta))
    if kind == "neural":
        c0, c1 = score.get("checkpoint0"), score.get("checkpoint1")
        if not c0:
            raise ConfigError("neural score requires checkpoint0")
        m0 = NeuralScoreModel.load(c0)
        m1 = NeuralScoreModel.load(c1) if c1 else m0.copy()
        return m0, m1
    raise ConfigError(f"unknown score kind {kind!r}")


def build_runner(cfg: RunConfig):
    """(stream, gamma) -> DetectionResult per the configured detector."""
    det = cfg.detector
    domain = cfg.scenario.domain
    if det.kind == "stcusum":
        m0, m1 = build_models(cfg)
        wcfg = WeightConfig(mode=det.weight_mode, cap=det.weight_cap)

        def run(stream, gamma):
            return run_detector(stream, m0, m1, gamma, det.epochs, det.delta,
                                wcfg, domain, warm_start=det.warm_start)
        return run
    if det.kind == "cusum":
        from .baselines import cusum_binned

        def run(stream, gamma):
            series = bin_events(stream, det.grid, det.dt_bin, domain)
            return cusum_binned(series, cfg.scenario.pre.mu, cfg.scenario.post.mu, gamma)
        return run
    if det.kind == "min_cusum":
        from .baselines import min_cusum

        def run(stream, gamma):
            series = bin_events(stream, det.grid, det.dt_bin, domain)
            return min_cusum(series, cfg.scenario.pre.mu, cfg.scenario.post.mu,
                             gamma, aggregation=det.aggregation)
        return run
    if det.kind == "pp_cusum":
        from .baselines import pp_cusum

        def run(stream, gamma):
            return pp_cusum(stream, cfg.scenario.pre, cfg.scenario.post, gamma, domain)
        return run
    if det.kind == "scusum":
        ref_pre = simulate(ChangeScenario.no_change(cfg.scenario.pre, domain), cfg.seed + 90001)
        ref_post = simulate(ChangeScenario.no_change(cfg.scenario.post, domain), cfg.seed + 90002)
        g0 = fit_gaussian_bin_model(bin_events(ref_pre, det.grid, det.dt_bin, domain))
        g1 = fit_gaussian_bin_model(bin_events(ref_post, det.grid, det.dt_bin, domain))
        from .baselines import scusum_binned

        def run(stream, gamma):
            series = bin_events(stream, det.grid, det.dt_bin, domain)
            return scusum_binned(series, g0, g1, gamma)
        return run
    raise ConfigError(f"unknown detector kind {det.kind!r}")


def _write_manifest(out_dir: Path, command: str, cfg: RunConfig, outputs: list) -> None:
    manifest = {
        "tool": "stppwatch",
        "tool_version": __version__,
        "command": command,
        "config": cfg.to_dict(),
        "outputs": sorted(str(p.relative_to(out_dir)) for p in outputs),
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def _out_dir(args, cfg) -> Path:
    out = Path(args.out if args.out else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    n = args.n_seeds if args.n_seeds else int(cfg.evaluation.get("n_trials", 1))
    seeds = derive_seeds(cfg.seed, n)
    outputs = []
    rows = []
    for i, seed in enumerate(seeds):
        stream = simulate(cfg.scenario, seed)
        path = out / f"stream_{i:04d}.csv"
        write_events_csv(stream, path)
        outputs.append(path)
        rows.append({"index": i, "seed": seed, "n_events": len(stream),
                     "file": path.name})
    index_path = out / "streams.json"
    with open(index_path, "w") as fh:
        json.dump(rows, fh, indent=1)
    outputs.append(index_path)
    _write_manifest(out, "simulate", cfg, outputs)
    print(f"wrote {n} stream(s) to {out}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    if not args.data:
        print("error: train requires --data", file=sys.stderr)
        return 2
    streams = []
    for path in args.data:
        stream = read_events_csv(path)
        if len(stream) == 0:
            print(f"error: training data {path} is empty", file=sys.stderr)
            return 2
        streams.append(stream)
    score = cfg.detector.score or {}
    dsm = DSMConfig(sigma=float(score.get("sigma", 0.02)),
                    epochs=int(score.get("epochs", 200)),
                    batch_size=int(score.get("batch_size", 128)),
                    learning_rate=float(score.get("learning_rate", 2e-3)),
                    seed=int(score.get("seed", cfg.seed)))
    model, trace = train_score_model(streams, cfg.detector.delta, dsm,
                                     hidden=int(score.get("hidden", 8)),
                                     ff=int(score.get("ff", 64)))
    tag = args.regime
    ckpt = out / f"score_{tag}.json"
    model.save(ckpt)
    loss_csv = out / f"loss_{tag}.csv"
    write_loss_trace(trace, loss_csv)
    _write_manifest(out, "train", cfg, [ckpt, loss_csv])
    print(f"checkpoint {ckpt} (final loss {trace[-1]:.4f})")
    return 0


def cmd_calibrate(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    runner = build_runner(cfg)
    cal = CalibrationConfig(
        n_trials=int(cfg.calibration.get("n_trials", 200)),
        horizon=float(cfg.calibration.get("horizon", 2.0 * cfg.scenario.domain.t_end)),
        target_arl=float(cfg.calibration.get("target_arl", 5.0 * cfg.scenario.domain.t_end)),
        seed=int(cfg.calibration.get("seed", cfg.seed)))
    report = calibrate_threshold(runner, cfg.scenario, cal)
    path = out / "calibration.json"
    with open(path, "w") as fh:
        fh.write(report.to_json())
    _write_manifest(out, "calibrate", cfg, [path])
    print(f"gamma = {report.gamma!r} (quantile level {report.level:.4f})")
    return 0


def cmd_detect(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    if not args.stream:
        print("error: detect requires --stream", file=sys.stderr)
        return 2
    stream = read_events_csv(args.stream)
    gamma = args.gamma if args.gamma is not None else cfg.detector.gamma
    if gamma is None:
        gamma = math.inf
    if args.online:
        m0, _ = build_models(cfg)
        online = cfg.detector.online or {}
        wcfg = WeightConfig(mode=cfg.detector.weight_mode, cap=cfg.detector.weight_cap)
        result = run_online_detector(
            stream, m0, gamma, cfg.detector.epochs, cfg.detector.delta, wcfg,
            cfg.scenario.domain, eta=float(online.get("eta", 1e-3)),
            steps_per_event=int(online.get("steps_per_event", 1)),
            sigma=float(online.get("sigma", 0.02)), seed=cfg.seed)
    else:
        runner = build_runner(cfg)
        result = runner(stream, gamma)
    res_path = out / "result.json"
    with open(res_path, "w") as fh:
        fh.write(result.to_json())
    traj_path = out / "trajectory.csv"
    result.write_trajectory_csv(traj_path)
    fig_path = out / "trajectory.svg"
    plot_trajectory(result.trajectory_t, result.trajectory_w, fig_path,
                    gamma=gamma, tau=cfg.scenario.tau)
    _write_manifest(out, "detect", cfg, [res_path, traj_path, fig_path])
    state = f"stopped at {result.nu!r}" if result.stopped else "horizon exhausted"
    print(f"{state}; tau_hat = {result.tau_hat!r}")
    return 0


def _eval_one(payload):
    """Worker for trial-parallel evaluation; rebuilt from plain dicts."""
    cfg_dict, gamma, seed, mode, horizon = payload
    cfg = RunConfig.from_dict(cfg_dict)
    runner = build_runner(cfg)
    if mode == "pre":
        from .events import Domain
        domain = Domain(t_end=horizon, s_bounds=cfg.scenario.domain.s_bounds)
        scenario = ChangeScenario.no_change(cfg.scenario.pre, domain)
    else:
        scenario = cfg.scenario
    stream = simulate(scenario, seed)
    result = runner(stream, gamma)
    return result.to_dict()


def _pmap(payloads, jobs):
    if jobs <= 1 or len(payloads) <= 1:
        return [_eval_one(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_eval_one, payloads))


def _parallel_tradeoff(cfg: RunConfig, gamma_grid, n_trials, arl_horizon) -> list[dict]:
    """Trial-parallel version of the tradeoff table; identical outputs to the
    serial path because every trial derives from (seed, trial index)."""
    from .regions import RegionUnion, jaccard as jaccard_of

    cfg_dict = cfg.to_dict()
    omega = cfg.scenario.omega
    tau = cfg.scenario.tau
    t_end = cfg.scenario.domain.t_end
    pre_seeds = derive_seeds(cfg.seed, n_trials)
    change_seeds = derive_seeds(cfg.seed + 1, n_trials)
    rows = []
    for gamma in gamma_grid:
        pre = _pmap([(cfg_dict, gamma, s, "pre", arl_horizon) for s in pre_seeds],
                    cfg.jobs)
        stops = [r["nu"] if r["stopped"] else arl_horizon for r in pre]
        censored = sum(1 for r in pre if not r["stopped"])
        change = _pmap([(cfg_dict, gamma, s, "change", t_end) for s in change_seeds],
                       cfg.jobs)
        detected = [r for r in change if r["stopped"] and r["nu"] > tau]
        delays = [min(r["nu"] - tau, t_end - tau) for r in detected]
        n_exhausted = sum(1 for r in change if not r["stopped"])
        jvals = [jaccard_of(RegionUnion.from_dict(r["omega_hat"]), omega)
                 for r in detected]
        rows.append({
            "detector": cfg.detector.kind,
            "gamma": gamma,
            "arl": float(np.mean(stops)),
            "arl_censored": censored,
            "edd": float(np.mean(delays)) if delays else None,
            "edd_censored": float(np.mean(delays + [t_end - tau] * n_exhausted))
                            if (delays or n_exhausted) else None,
            "jaccard": float(np.mean(jvals)) if jvals else None,
            "n_detected": len(detected),
            "n_false_alarm": sum(1 for r in change
                                 if r["stopped"] and r["nu"] <= tau),
            "n_exhausted": n_exhausted,
        })
    return rows


def cmd_evaluate(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    runner = build_runner(cfg)
    ev = cfg.evaluation
    n_trials = int(ev.get("n_trials", 20))
    gamma_grid = ev.get("gamma_grid")
    if not gamma_grid:
        if cfg.detector.gamma is None:
            print("error: evaluation needs gamma_grid or detector.gamma",
                  file=sys.stderr)
            return 2
        gamma_grid = [float(cfg.detector.gamma)]
    arl_horizon = float(ev.get("arl_horizon", 2.0 * cfg.scenario.domain.t_end))
    if cfg.jobs > 1:
        rows = _parallel_tradeoff(cfg, [float(g) for g in gamma_grid],
                                  n_trials, arl_horizon)
    else:
        rows = tradeoff_curve(cfg.scenario, runner, [float(g) for g in gamma_grid],
                              n_trials, cfg.seed, detector=cfg.detector.kind,
                              arl_horizon=arl_horizon)
    outputs = []
    csv_path = out / "tradeoff.csv"
    write_tradeoff_csv(rows, csv_path)
    outputs.append(csv_path)
    for metric in ("edd", "jaccard"):
        fig = out / f"tradeoff_{metric}.svg"
        plot_tradeoff(rows, fig, metric=metric)
        outputs.append(fig)
    snapshot_times = ev.get("snapshot_times")
    if snapshot_times:
        stream = simulate(cfg.scenario, derive_seeds(cfg.seed, 1)[0])
        snaps = region_evolution(stream, runner, [float(t) for t in snapshot_times])
        snap_json = out / "region_snapshots.json"
        with open(snap_json, "w") as fh:
            json.dump([{"t": t, "omega": r.to_dict()} for t, r in snaps], fh, indent=1)
        fig = out / "region_snapshots.svg"
        plot_region_snapshots(snaps, cfg.scenario.omega, cfg.scenario.domain,
                              fig, stream=stream)
        outputs.extend([snap_json, fig])
    batch = run_trial_batch(cfg.scenario, runner, float(gamma_grid[-1]),
                            n_trials, cfg.seed + 1, detector=cfg.detector.kind)
    report = edd_report(batch)
    report["jaccard"] = jaccard_at_stop(batch, cfg.scenario.omega)
    report["gamma"] = float(gamma_grid[-1])
    rep_path = out / "batch_report.json"
    mean_rt = report.pop("mean_runtime_s")
    with open(rep_path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    outputs.append(rep_path)
    # wall-clock timings live outside the idempotent output set
    with open(out / "timings.csv", "w") as fh:
        fh.write("metric,value\nmean_trial_runtime_s,%r\n" % mean_rt)
    _write_manifest(out, "evaluate", cfg, outputs)
    print(f"evaluation written to {out}")
    return 0


def cmd_plot(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    outputs = []
    if args.tradeoff:
        rows = []
        with open(args.tradeoff) as fh:
            header = fh.readline().strip().split(",")
            for line in fh:
                cells = line.rstrip("\n").split(",")
                row = dict(zip(header, cells))
                for k in ("gamma", "arl", "edd", "edd_censored", "jaccard"):
                    row[k] = float(row[k]) if row.get(k) not in (None, "",) else None
                rows.append(row)
        for metric in ("edd", "jaccard"):
            fig = out / f"tradeoff_{metric}.svg"
            plot_tradeoff(rows, fig, metric=metric)
            outputs.append(fig)
    if args.result:
        with open(args.result) as fh:
            result = DetectionResult.from_dict(json.load(fh))
        fig = out / "trajectory.svg"
        plot_trajectory(result.trajectory_t, result.trajectory_w, fig,
                        tau=cfg.scenario.tau)
        outputs.append(fig)
    if not outputs:
        print("error: plot requires --tradeoff and/or --result", file=sys.stderr)
        return 2
    _write_manifest(out, "plot", cfg, outputs)
    print(f"plots written to {out}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stppwatch",
                                description="sequential space-time change detection")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--seed", type=int, help="override config seed")
        sp.add_argument("--jobs", type=int, help="worker pool size")

    sp = sub.add_parser("simulate", help="write event-stream CSVs")
    common(sp)
    sp.add_argument("--n-seeds", type=int, help="number of streams")

    sp = sub.add_parser("train", help="fit a score model by denoising score matching")
    common(sp)
    sp.add_argument("--data", nargs="+", help="reference event CSVs")
    sp.add_argument("--regime", choices=["pre", "post"], default="pre")

    sp = sub.add_parser("calibrate", help="pick a threshold for a target run length")
    common(sp)

    sp = sub.add_parser("detect", help="run a detector over one stream")
    common(sp)
    sp.add_argument("--stream", help="event CSV to monitor")
    sp.add_argument("--gamma", type=float, help="override threshold")
    sp.add_argument("--online", action="store_true",
                    help="adapt the post-change score model online")

    sp = sub.add_parser("evaluate", help="tradeoff tables, reports, figures")
    common(sp)

    sp = sub.add_parser("plot", help="re-render figures from tables")
    common(sp)
    sp.add_argument("--tradeoff", help="tradeoff CSV to plot")
    sp.add_argument("--result", help="detection result JSON to plot")
    return p


_COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        d = cfg.to_dict()
        d["seed"] = args.seed
        cfg = RunConfig.from_dict(d)
    jobs = args.jobs
    if jobs is None:
        env = os.environ.get("STPP_WATCH_JOBS")
        jobs = int(env) if env else cfg.jobs
    if jobs <= 0:
        jobs = os.cpu_count() or 1
    cfg.jobs = jobs
    try:
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return 3
    except np.linalg.LinAlgError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
