"""Command-line entry points wiring the modules into reproducible experiments.

Exit codes: 0 success, 2 usage error, 3 backend failure, 4 validation
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import shlex
import sys
from pathlib import Path

from .backend import SyntheticBackend, SyntheticWorldConfig
from .core import ArConfig, AtsError, BackendError, ContextLimits, ExecutionError, ProtocolError
from .executor import (
    ExecPolicy,
    gate_and_regenerate,
    run_ar,
    run_tree,
    seam_scan_and_repair,
    write_run_dir,
    load_run_dir,
)
from .metrics import (
    ResetSchedule,
    drift_report,
    quality_series,
    write_per_boundary_csv,
    write_per_chunk_csv,
    write_report_csv,
)
from .planner import PlannerConfig, load_plan, plan_tree, reseed_plan, save_plan, validate_plan
from .protocol import WorkerBackend
from .schedsim import LatencyProfile, makespan_ar, makespan_tree, sweep, write_sweep_csv
from .backend import synth_conditioning

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BACKEND = 3
EXIT_VALIDATION = 4


def _world_from_args(args: argparse.Namespace) -> SyntheticWorldConfig:
    overrides = {}
    if getattr(args, "config", None):
        overrides.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    if getattr(args, "fps", None) is not None:
        overrides["fps"] = args.fps
    return SyntheticWorldConfig.from_dict(overrides)


def _limits_from_args(args: argparse.Namespace) -> ContextLimits:
    return ContextLimits(
        m_min=args.m_min,
        m_max=args.m_max,
        stride_sf=args.stride,
        anchor_width=args.anchor_width,
    )


def _add_limit_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--m-min", type=int, default=33, dest="m_min")
    parser.add_argument("--m-max", type=int, default=81, dest="m_max")
    parser.add_argument("--stride", type=int, default=8)
    parser.add_argument("--anchor-width", type=int, default=1, dest="anchor_width")
    parser.add_argument("--leaf-target", type=int, default=None, dest="leaf_target")


def cmd_plan(args: argparse.Namespace) -> int:
    limits = _limits_from_args(args)
    config = PlannerConfig(
        limits=limits,
        leaf_target=args.leaf_target,
        placement=args.placement,
        adaptive_window=args.adaptive_window,
        adaptive_bias=args.adaptive_bias,
    )
    conditioning = None
    if args.placement == "adaptive":
        world = _world_from_args(args)
        conditioning = synth_conditioning(args.horizon, world)
    plan = plan_tree(args.horizon, config, conditioning, seed=args.seed)
    report = validate_plan(plan)
    if not report.ok:
        print(report, file=sys.stderr)
        return EXIT_VALIDATION
    save_plan(args.out, plan)
    print(f"plan: {len(plan.calls)} calls, leaf level {plan.hierarchy.leaf_level}, -> {args.out}")
    return EXIT_OK


def _make_backend(spec: str, workdir: Path, world: SyntheticWorldConfig, anchor_width: int):
    if spec == "synthetic":
        return SyntheticBackend(world, anchor_width=anchor_width)
    if spec.startswith("worker:"):
        command = shlex.split(spec[len("worker:") :])
        return WorkerBackend(command, workdir, world_params=world.to_dict())
    raise ValueError(f"unknown backend {spec!r} (use 'synthetic' or 'worker:<cmd>')")


def cmd_run(args: argparse.Namespace) -> int:
    plan = load_plan(args.plan)
    report = validate_plan(plan)
    if not report.ok:
        print(report, file=sys.stderr)
        return EXIT_VALIDATION
    world = _world_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    backend = _make_backend(args.backend, out_dir / "worker-scratch", world, plan.limits.anchor_width)
    if args.seed is not None:
        plan = reseed_plan(plan, args.seed)
    policy = ExecPolicy(
        workers=args.workers,
        retry_limit=args.retries,
        gate_threshold=args.gate if args.gate is not None else math.inf,
        seam_half_width=int(args.seam_repair[0]) if args.seam_repair else 19,
        seam_threshold=args.seam_repair[1] if args.seam_repair else math.inf,
    )
    conditioning = synth_conditioning(plan.horizon, world)
    try:
        artifact = run_tree(plan, backend, policy, conditioning)
        gate_report = None
        seam_report = None
        if args.gate is not None:
            artifact, gate_report = gate_and_regenerate(artifact, plan, backend, policy, conditioning)
        if args.seam_repair:
            artifact, seam_report = seam_scan_and_repair(artifact, plan, backend, policy, conditioning)
    finally:
        if hasattr(backend, "close"):
            backend.close()
    write_run_dir(out_dir, artifact, world, gate_report, seam_report)
    print(f"run: {len(artifact.trace)} calls over [1, {plan.horizon}] -> {out_dir}")
    return EXIT_OK


def cmd_ar_run(args: argparse.Namespace) -> int:
    world = _world_from_args(args)
    variant = "position_shift" if args.variant == "position-shift" else args.variant
    arcfg = ArConfig(
        chunk_len=args.chunk,
        reset_period_frames=int(round(args.reset_period_s * world.fps)),
        carry_window=args.carry_window,
        variant=variant,
    )
    backend = SyntheticBackend(world)
    conditioning = synth_conditioning(args.horizon, world)
    artifact = run_ar(args.horizon, arcfg, backend, conditioning, seed=args.seed)
    out = write_run_dir(Path(args.out), artifact, world)
    print(f"ar-run: {len(artifact.trace)} chunks, {len(artifact.reset_frames)} resets -> {out}")
    return EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    frames, meta, world = load_run_dir(args.run)
    horizon = frames.interval.end
    conditioning = synth_conditioning(horizon, world)
    series = quality_series(frames, conditioning, world)
    schedule = ResetSchedule.periodic(horizon, args.fps, args.reset_period_s)
    report = drift_report(meta.get("method", "ats"), series, schedule, n_keyframes=args.keyframes)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(out_dir / "report.csv", [report])
    write_per_chunk_csv(out_dir / "per_chunk.csv", [report])
    write_per_boundary_csv(out_dir / "per_boundary.csv", [report])
    print(
        f"metrics[{report.method}]: global {report.global_mean:.3f}, "
        f"chunk drift {report.chunk_drift_mean:.3f}, reset jump {report.reset_jump_mean:.3f} -> {out_dir}"
    )
    return EXIT_OK


def cmd_schedsim(args: argparse.Namespace) -> int:
    profile = LatencyProfile(tau_call=args.tau, workers=args.gpus)
    plan = load_plan(args.plan)
    tree_s = makespan_tree(plan, profile)
    ar_s = makespan_ar(plan.horizon, plan.limits.m_max, profile)
    print(f"tree makespan: {tree_s:.6g} s on {args.gpus} workers")
    print(f"ar makespan:   {ar_s:.6g} s (sequential)")
    print(f"speedup:       {ar_s / tree_s:.3f}x")
    return EXIT_OK


def cmd_schedsim_sweep(args: argparse.Namespace) -> int:
    horizons = [int(h) for h in args.horizons.split(",")]
    limits = _limits_from_args(args)
    config = PlannerConfig(limits=limits, leaf_target=args.leaf_target)
    profile = LatencyProfile(tau_call=args.tau, workers=args.gpus)
    rows = sweep(horizons, config, profile, fps=args.fps)
    write_sweep_csv(args.out, rows)
    print(f"sweep: {len(rows)} rows -> {args.out}")
    return EXIT_OK


def cmd_bench_drift(args: argparse.Namespace) -> int:
    from .bench import run_drift_bench

    summary = run_drift_bench(
        out_dir=Path(args.out),
        seeds=args.seeds,
        horizon_min=args.horizon_min,
        fps=args.fps,
        reset_period_s=args.reset_period_s,
        workers=args.workers,
    )
    for line in summary.lines():
        print(line)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ats", description="anchor-tree scheduling engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p_plan = sub.add_parser("plan", help="plan an anchor tree")
    p_plan.add_argument("--horizon", type=int, required=True)
    _add_limit_flags(p_plan)
    p_plan.add_argument("--placement", choices=["uniform", "adaptive"], default="uniform")
    p_plan.add_argument("--adaptive-window", type=int, default=16, dest="adaptive_window")
    p_plan.add_argument("--adaptive-bias", type=float, default=0.5, dest="adaptive_bias")
    p_plan.add_argument("--seed", type=int, default=0)
    p_plan.add_argument("--fps", type=int, default=None)
    p_plan.add_argument("--config", type=str, default=None, help="world-config JSON file")
    p_plan.add_argument("--out", type=str, required=True)
    p_plan.set_defaults(func=cmd_plan)

    p_run = sub.add_parser("run", help="execute a plan")
    p_run.add_argument("--plan", type=str, required=True)
    p_run.add_argument("--backend", type=str, default="synthetic")
    p_run.add_argument("--workers", type=int, default=4)
    p_run.add_argument(
        "--seed", type=int, default=None, help="re-derive all call seeds from this root seed"
    )
    p_run.add_argument("--gate", type=float, default=None, metavar="THETA")
    p_run.add_argument("--retries", type=int, default=3)
    p_run.add_argument(
        "--seam-repair", type=float, nargs=2, default=None, metavar=("H", "THETA_S"), dest="seam_repair"
    )
    p_run.add_argument("--fps", type=int, default=None)
    p_run.add_argument("--config", type=str, default=None)
    p_run.add_argument("--out", type=str, required=True)
    p_run.set_defaults(func=cmd_run)

    p_ar = sub.add_parser("ar-run", help="chunked autoregressive rollout")
    p_ar.add_argument("--horizon", type=int, required=True)
    p_ar.add_argument("--chunk", type=int, default=81)
    p_ar.add_argument("--variant", choices=["reset", "position-shift"], default="reset")
    p_ar.add_argument("--reset-period-s", type=float, default=192.0, dest="reset_period_s")
    p_ar.add_argument("--carry-window", type=int, default=1, dest="carry_window")
    p_ar.add_argument("--fps", type=int, default=16)
    p_ar.add_argument("--seed", type=int, default=0)
    p_ar.add_argument("--config", type=str, default=None)
    p_ar.add_argument("--out", type=str, required=True)
    p_ar.set_defaults(func=cmd_ar_run)

    p_metrics = sub.add_parser("metrics", help="quality and drift metrics for a run")
    p_metrics.add_argument("--run", type=str, required=True)
    p_metrics.add_argument("--fps", type=int, default=16)
    p_metrics.add_argument("--reset-period-s", type=float, default=192.0, dest="reset_period_s")
    p_metrics.add_argument("--keyframes", type=int, default=60)
    p_metrics.add_argument("--out", type=str, required=True)
    p_metrics.set_defaults(func=cmd_metrics)

    p_sched = sub.add_parser("schedsim", help="makespan simulation")
    sched_sub = p_sched.add_subparsers(dest="sched_mode")
    p_sched.add_argument("--plan", type=str, default=None)
    p_sched.add_argument("--tau", type=float, default=1.0)
    p_sched.add_argument("--gpus", type=int, default=8)
    p_sched.set_defaults(func=cmd_schedsim)

    p_sweep = sched_sub.add_parser("sweep", help="runtime-vs-duration sweep")
    p_sweep.add_argument("--horizons", type=str, required=True)
    _add_limit_flags(p_sweep)
    p_sweep.add_argument("--tau", type=float, default=1.0)
    p_sweep.add_argument("--gpus", type=int, default=8)
    p_sweep.add_argument("--fps", type=int, default=None)
    p_sweep.add_argument("--out", type=str, required=True)
    p_sweep.set_defaults(func=cmd_schedsim_sweep)

    p_bench = sub.add_parser("bench", help="benchmark suites")
    bench_sub = p_bench.add_subparsers(dest="bench_mode", required=True)
    p_drift = bench_sub.add_parser("drift", help="drift comparison across methods")
    p_drift.add_argument("--seeds", type=int, default=20)
    p_drift.add_argument("--horizon-min", type=float, default=30.0, dest="horizon_min")
    p_drift.add_argument("--fps", type=int, default=16)
    p_drift.add_argument("--reset-period-s", type=float, default=192.0, dest="reset_period_s")
    p_drift.add_argument("--workers", type=int, default=4)
    p_drift.add_argument("--out", type=str, required=True)
    p_drift.set_defaults(func=cmd_bench_drift)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "schedsim" and getattr(args, "sched_mode", None) is None and args.plan is None:
        parser.error("schedsim requires --plan (or the sweep subcommand)")
    try:
        return args.func(args)
    except (BackendError, ProtocolError, ExecutionError) as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except AtsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
