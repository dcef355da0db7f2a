"""
Command-line surface of the lab.

Exit codes: 0 success, 2 bad configuration / bad or missing artifact, 1 runtime failure.
Failures print one line to stderr: ``error=<ClassName> message=<text>``.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from src.config import settings
from src.exceptions import ConfigError, DatasetError
from src.imitation import load_dataset
from src.pipeline import (
    EXPORTS,
    RunConfig,
    compare_gains,
    evaluate,
    export,
    load_run_config,
    record_imitation,
    sweep,
    train_position,
    train_torque,
)
from src.ppo import load_checkpoint

logger = logging.getLogger(__name__)


# ------------------------------------------------------------------
# Parser
# ------------------------------------------------------------------
def _float_list(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _str_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Run config (JSON file or bundled name)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Dotted-key override, e.g. ppo.iterations=50 (repeatable)",
    )
    parser.add_argument("--seed", type=int, help="Seed for all randomness of the run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decap-lab",
        description="Torque-space locomotion learning with imitation data and decaying action priors",
    )
    parser.add_argument("--quiet", action="store_true", help="Hide progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-position", help="Stage 1: train a position-space policy")
    _add_config_args(p)
    p.add_argument("--out", help="Run directory")

    p = sub.add_parser("record-imitation", help="Record tracked states from a position policy")
    _add_config_args(p)
    p.add_argument("--policy", required=True, help="Position policy checkpoint")
    p.add_argument("--commands", type=_float_list, help="Comma-separated forward-velocity commands")
    p.add_argument("--steps", type=int, help="Steps per command (settle window included)")
    p.add_argument("--out", required=True, help="Output .imit file")
    p.add_argument(
        "--compare-gains",
        type=float,
        metavar="FACTOR",
        help="Also report desired vs tracked angle RMSE with Kp scaled by FACTOR",
    )

    p = sub.add_parser("train-torque", help="Stage 2: train a torque-space policy")
    _add_config_args(p)
    p.add_argument("--mode", choices=["torque", "imitation", "decap"], default="decap")
    p.add_argument("--imitation", help="Imitation dataset (.imit)")
    p.add_argument("--out", help="Run directory")

    p = sub.add_parser("evaluate", help="Deterministic evaluation of a checkpoint")
    _add_config_args(p)
    p.add_argument("--policy", required=True, help="Policy checkpoint")
    p.add_argument("--episodes", type=int, default=settings.EVAL_EPISODES)
    p.add_argument("--assist-policy", help="Position policy for position-assisted torque deployment")
    p.add_argument("--imitation", help="Imitation dataset for the RMSE metric")
    p.add_argument("--out", help="Metrics JSON (default <policy dir>/evaluate.json)")

    p = sub.add_parser("sweep", help="Imitation-weight sensitivity sweep")
    _add_config_args(p)
    p.add_argument("--imitation", help="Imitation dataset (.imit)")
    p.add_argument("--scales", type=_float_list, default=[0.5, 1.0, 5.0, 10.0])
    p.add_argument("--modes", type=_str_list, default=["imitation", "decap"])
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="Sweep directory")

    p = sub.add_parser("export", help="Plot-ready CSV from a run or sweep directory")
    p.add_argument("--run", required=True, help="Run or sweep directory")
    p.add_argument("--what", required=True, choices=list(EXPORTS))
    p.add_argument("--out", help="Output CSV (default <run>/<what>.csv)")
    return parser


# ------------------------------------------------------------------
# Commands
# ------------------------------------------------------------------
def _config(args, default: str, extra: Sequence[str] = ()) -> RunConfig:
    overrides = list(extra) + list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_run_config(args.config or default, overrides)


def _train_position(args) -> int:
    extra = [f"output_dir={json.dumps(args.out)}"] if args.out else []
    cfg = _config(args, "hopper_position", extra)
    _, manifest = train_position(cfg, show_progress=not args.quiet)
    print(f"run_dir={manifest.run_dir} checkpoint_id={manifest.checkpoint_id}")
    return 0


def _record_imitation(args) -> int:
    extra = []
    if args.commands:
        extra.append(f"record.commands={json.dumps(args.commands)}")
    if args.steps is not None:
        extra.append(f"record.steps={args.steps}")
    cfg = _config(args, "hopper_position", extra)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_name(out.name + ".config.json").write_text(cfg.snapshot() + "\n", encoding="utf-8")

    dataset = record_imitation(cfg, args.policy, out, show_progress=not args.quiet)
    print(f"dataset={out} trajectories={len(dataset.trajectories)} frames={dataset.n_frames}")
    if args.compare_gains is not None:
        result = compare_gains(cfg, args.policy, args.compare_gains)
        print(
            f"rmse_desired={result.rmse_desired:.6g} rmse_tracked={result.rmse_tracked:.6g} "
            f"ratio={result.ratio:.3g}"
        )
    return 0


def _train_torque(args) -> int:
    extra = [f"mode={args.mode}"]
    if args.imitation:
        extra.append(f"imitation={json.dumps(args.imitation)}")
    if args.out:
        extra.append(f"output_dir={json.dumps(args.out)}")
    cfg = _config(args, f"hopper_{args.mode}", extra)
    _, manifest = train_torque(cfg, show_progress=not args.quiet)
    print(f"run_dir={manifest.run_dir} checkpoint_id={manifest.checkpoint_id} final_rmse={manifest.final_rmse}")
    return 0


def _evaluate(args) -> int:
    policy, _ = load_checkpoint(args.policy)
    default = f"hopper_{policy.mode}" if policy.mode in ("position", "torque", "imitation", "decap") else "hopper_position"
    extra = [f"mode={policy.mode}"] if policy.mode else []
    cfg = _config(args, default, extra)
    out = Path(args.out) if args.out else Path(args.policy).with_name("evaluate.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_name(out.name + ".config.json").write_text(cfg.snapshot() + "\n", encoding="utf-8")

    dataset = load_dataset(args.imitation, expected_dt=cfg.task.dt) if args.imitation else None
    assist = load_checkpoint(args.assist_policy)[0] if args.assist_policy else None
    metrics = evaluate(policy, cfg, args.episodes, dataset=dataset, assist_policy=assist)
    payload = {"config": cfg.model_dump(mode="json"), "metrics": metrics.to_dict()}
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(metrics.to_dict(), sort_keys=True))
    return 0


def _sweep(args) -> int:
    extra = ["mode=imitation"]
    if args.imitation:
        extra.append(f"imitation={json.dumps(args.imitation)}")
    cfg = _config(args, "hopper_imitation", extra)

    rows = sweep(cfg, args.scales, args.modes, args.seeds, jobs=args.jobs, sweep_dir=args.out)

    print("\n" + "=" * 80)
    print("SWEEP SUMMARY")
    print("=" * 80)
    for row in rows:
        print(f"scale={row['scale']:g} mode={row['mode']} seed={row['seed']} status={row['status']} final_rmse={row['final_rmse']}")
    failed = sum(1 for r in rows if r["status"] != "completed")
    print(f"\nTotal cells: {len(rows)}  Failed: {failed}")
    return 0 if failed == 0 else 1


def _export(args) -> int:
    path = export(args.run, args.what, args.out)
    print(f"exported={path}")
    return 0


COMMANDS = {
    "train-position": _train_position,
    "record-imitation": _record_imitation,
    "train-torque": _train_torque,
    "evaluate": _evaluate,
    "sweep": _sweep,
    "export": _export,
}


def _report(error: BaseException) -> None:
    message = " ".join(str(error).split())
    print(f"error={type(error).__name__} message={message}", file=sys.stderr)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse `argv`, dispatch the subcommand and map failures to exit codes"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DatasetError) as e:
        logger.debug("Configuration or input error", exc_info=True)
        _report(e)
        return 2
    except Exception as e:
        logger.exception(f"{args.command} failed")
        _report(e)
        return 1
