"""Command-line entry points: train, eval, replay.

Every run directory receives a manifest (written before training starts),
a learning curve and a final checkpoint — enough to re-run evaluation
without the original flags.  All files are plain text except checkpoints.

Curve columns: epoch, episodes_seen, timesteps_seen, epsilon,
eval_mean_return, eval_std_return, wall_seconds.

The ``CYBERDIAL_OUT_ROOT`` environment variable re-roots relative ``--out``
paths.  Master seeds split into per-purpose streams as described in
``seeding``; identical master seeds reproduce runs end to end (wall-clock
columns aside).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dial import DialConfig, DialTrainer
from .env import REPLAY_LOG_VERSION
from .lanes import CyberLane
from .nn import load_checkpoint, save_checkpoint
from .qmix import QmixConfig, QmixTrainer
from .scenario import (BUILTIN_NAMES, ScenarioConfig, builtin_scenario,
                       load_scenario, serialize_scenario, with_detection_rate)

CURVE_COLUMNS = ("epoch", "episodes_seen", "timesteps_seen", "epsilon",
                 "eval_mean_return", "eval_std_return", "wall_seconds")


class UsageError(ValueError):
    pass


def resolve_out_dir(out: str) -> Path:
    root = os.environ.get("CYBERDIAL_OUT_ROOT")
    path = Path(out)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def resolve_scenario(name_or_path: str, detection: float | None,
                     message_bits: int | None) -> ScenarioConfig:
    if name_or_path in BUILTIN_NAMES:
        config = builtin_scenario(name_or_path)
    else:
        path = Path(name_or_path)
        if not path.exists():
            raise UsageError(f"unknown scenario {name_or_path!r} "
                             f"(not a builtin, not a file)")
        config = load_scenario(path.read_text())
    if detection is not None:
        config = with_detection_rate(config, detection)
    if message_bits is not None and message_bits != config.message_bits:
        from dataclasses import replace
        config = replace(config, message_bits=message_bits)
    return config


def make_env_factory(config: ScenarioConfig, sau: bool, block: bool, red: bool):
    def factory():
        return CyberLane(config, sau_enabled=sau, block_enabled=block,
                         red_enabled=red)
    return factory


def build_trainer(algo: str, config: ScenarioConfig, seed: int, epochs: int,
                  episodes: int, sau: bool, block: bool, red: bool,
                  eval_episodes: int = 32, lanes: int = 8):
    factory = make_env_factory(config, sau, block, red)
    if algo == "dial":
        tc = DialConfig(epochs=epochs, episodes_per_epoch=episodes,
                        rollout_lanes=min(lanes, episodes),
                        eval_episodes=eval_episodes)
        return DialTrainer(tc, factory, seed)
    if algo == "qmix":
        tc = QmixConfig(epochs=epochs, episodes_per_epoch=episodes,
                        rollout_lanes=min(lanes, episodes),
                        eval_episodes=eval_episodes)
        return QmixTrainer(tc, factory, seed)
    raise UsageError(f"unknown algorithm {algo!r}")


def checkpoint_header(algo: str, scenario: ScenarioConfig, trainer, sau: bool,
                      block: bool) -> dict:
    """Everything needed to rebuild the evaluation setting from the file alone."""
    hidden = trainer.config.hidden
    return {
        "algorithm": algo,
        "scenario": scenario.name,
        "scenario_yaml": serialize_scenario(scenario),
        "hidden": hidden,
        "message_bits": scenario.message_bits,
        "n_agents": scenario.agent_count,
        "max_actions": trainer.max_actions,
        "horizon": trainer.horizon,
        "sau": sau,
        "block": block,
        "train_steps": trainer.timesteps_seen,
    }


def write_curve(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(CURVE_COLUMNS) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in CURVE_COLUMNS) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    config = resolve_scenario(args.scenario, args.detection, args.message_bits)
    out_dir = resolve_out_dir(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sau = args.sau == "on"
    block = args.block == "on"
    trainer = build_trainer(args.algo, config, args.seed, args.epochs,
                            args.episodes, sau, block, red=True,
                            eval_episodes=args.eval_episodes, lanes=args.lanes)
    if args.checkpoint:
        store, header = load_checkpoint(args.checkpoint)
        _check_compat(header, args.algo, trainer, config)
        _online_store(trainer).copy_from(store)

    scenario_text = serialize_scenario(config)
    (out_dir / "scenario.yaml").write_text(scenario_text)
    manifest = {
        "scenario": config.name,
        "scenario_sha256": hashlib.sha256(scenario_text.encode()).hexdigest(),
        "algorithm": args.algo,
        "seed": args.seed,
        "epochs": args.epochs,
        "episodes_per_epoch": args.episodes,
        "hyperparameters": {k: v for k, v in vars(trainer.config).items()},
        "sau": sau,
        "block": block,
        "detection": args.detection,
        "message_bits": config.message_bits,
        "code_version": __version__,
        "start_time": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": {
            "curve": "curve.csv",
            "final_checkpoint": "checkpoint_final.npz",
        },
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                      sort_keys=True) + "\n")

    curve_path = out_dir / "curve.csv"
    rows: list[dict] = []

    # periodic checkpoints default to roughly four per run
    every_default = max(1, args.epochs // 4)

    def on_epoch(row, tr):
        rows.append(row)
        write_curve(curve_path, rows)
        every = args.checkpoint_every or every_default
        if tr.epochs_done < args.epochs and tr.epochs_done % every == 0:
            save_checkpoint(out_dir / f"checkpoint_epoch_{tr.epochs_done:05d}.npz",
                            _online_store(tr),
                            checkpoint_header(args.algo, config, tr, sau, block))
        if not args.quiet:
            print(f"epoch {row['epoch']:5d}  eval {row['eval_mean_return']:8.3f} "
                  f"+- {row['eval_std_return']:6.3f}  eps {row['epsilon']:5.3f}",
                  flush=True)

    trainer.train(on_epoch=on_epoch)
    save_checkpoint(out_dir / "checkpoint_final.npz", _online_store(trainer),
                    checkpoint_header(args.algo, config, trainer, sau, block))
    (out_dir / "completed.json").write_text(json.dumps(
        {"end_time": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
         "epochs_done": trainer.epochs_done}, indent=2) + "\n")
    return 0


def _online_store(trainer):
    return trainer.net.store if isinstance(trainer, DialTrainer) else trainer.store


def _check_compat(header: dict, algo: str, trainer, config: ScenarioConfig) -> None:
    problems = []
    if header.get("algorithm") != algo:
        problems.append(f"algorithm {header.get('algorithm')} != {algo}")
    if header.get("max_actions") != trainer.max_actions:
        problems.append(f"action width {header.get('max_actions')} != "
                        f"{trainer.max_actions}")
    if header.get("n_agents") != config.agent_count:
        problems.append(f"agent count {header.get('n_agents')} != "
                        f"{config.agent_count}")
    if header.get("message_bits") != config.message_bits:
        problems.append(f"message bits {header.get('message_bits')} != "
                        f"{config.message_bits}")
    if problems:
        raise UsageError("checkpoint does not fit the scenario: "
                         + "; ".join(problems))


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise UsageError("--checkpoint is required for eval")
    store, header = load_checkpoint(args.checkpoint)
    if args.scenario:
        config = resolve_scenario(args.scenario, args.detection, args.message_bits)
    elif header.get("scenario_yaml"):
        # the checkpoint is self-describing: exact config, detection included
        config = load_scenario(header["scenario_yaml"])
        if args.detection is not None:
            config = with_detection_rate(config, args.detection)
    else:
        config = resolve_scenario(header.get("scenario"), args.detection,
                                  args.message_bits)
    sau = (args.sau == "on") if args.sau else bool(header.get("sau", True))
    block = (args.block == "on") if args.block else bool(header.get("block", True))
    algo = header.get("algorithm", "dial")
    trainer = build_trainer(algo, config, args.seed, epochs=1,
                            episodes=args.episodes, sau=sau, block=block,
                            red=not args.no_red)
    _check_compat(header, algo, trainer, config)
    _online_store(trainer).copy_from(store)

    report = trainer.evaluate(args.episodes, seed_index_base=0,
                              collect_records=True, seed_master=args.seed)
    returns = report["returns"]
    breakdown: dict[str, float] = {}
    for record in report["records"]:
        for item in record["reward_items"]:
            breakdown[item["category"]] = breakdown.get(item["category"], 0.0) \
                + item["amount"]
    doc = {
        "algorithm": algo,
        "scenario": config.name,
        "checkpoint": str(args.checkpoint),
        "episodes": args.episodes,
        "seed": args.seed,
        "sau": sau,
        "block": block,
        "red_enabled": not args.no_red,
        "returns": [float(r) for r in returns],
        "mean_return": report["mean"],
        "std_return": report["std"],
        "message_rate": report["message_rate"],
        "penalty_breakdown_total": {k: breakdown[k] for k in sorted(breakdown)},
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        out_dir = resolve_out_dir(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "eval_report.json").write_text(text)
        with open(out_dir / "replay.jsonl", "w", encoding="utf-8") as fh:
            _write_replay(fh, config, args, report)
    sys.stdout.write(text)
    return 0


def _write_replay(fh, config, args, report) -> None:
    header = {"v": REPLAY_LOG_VERSION, "type": "header", "scenario": config.name,
              "seed": args.seed, "episodes": args.episodes}
    fh.write(json.dumps(header) + "\n")
    by_lane: dict[int, list[dict]] = {}
    for record in report["records"]:
        by_lane.setdefault(record["lane"], []).append(record)
    for lane in sorted(by_lane):
        steps = sorted(by_lane[lane], key=lambda r: r["t"])
        for record in steps:
            fh.write(json.dumps(record) + "\n")
        total = math.fsum(item["amount"] for r in steps
                          for item in r["reward_items"])
        fh.write(json.dumps({"v": REPLAY_LOG_VERSION, "type": "end",
                             "lane": lane, "return": total}) + "\n")


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def cmd_replay(args) -> int:
    path = Path(args.log)
    if not path.exists():
        raise UsageError(f"no such replay log: {path}")
    steps = 0
    lane_totals: dict[int, float] = {}
    lane_items: dict[int, list] = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        if record.get("v") != REPLAY_LOG_VERSION:
            raise UsageError(f"replay log version {record.get('v')} "
                             f"!= supported {REPLAY_LOG_VERSION}")
        kind = record.get("type")
        if kind == "header":
            print(f"replay: scenario={record['scenario']} seed={record['seed']} "
                  f"episodes={record['episodes']}")
        elif kind == "step":
            steps += 1
            lane = record.get("lane", 0)
            lane_items.setdefault(lane, []).extend(record["reward_items"])
            acts = ", ".join(f"a{a['agent']}:{a['action']}"
                             for a in record["actions"])
            msgs = "".join(f" msg a{m['agent']}->{m['bits']}"
                           for m in record.get("messages", []))
            red = record.get("red")
            red_txt = f" red:{red['action']}" + (f"({red['target']})"
                                                 if red and red.get("target") else "") \
                if red else ""
            alerts = "".join(
                f" alert:{al['type']}@{al['host']}"
                + ("[false-positive]" if al.get("false_positive") else "")
                for al in record.get("alerts", []))
            pens = "".join(f" {it['category']}:{it['amount']:+.1f}@{it['target']}"
                           for it in record["reward_items"])
            print(f"[lane {lane} t={record['t']:3d}] {acts}{msgs}{red_txt}"
                  f"{alerts}{pens} reward={record['reward']:+.3f}")
        elif kind == "end":
            lane = record.get("lane", 0)
            lane_totals[lane] = record["return"]
    print(f"{steps} steps")
    for lane, total in sorted(lane_totals.items()):
        recomputed = math.fsum(item["amount"] for item in lane_items.get(lane, []))
        status = "ok" if recomputed == total else "MISMATCH"
        print(f"lane {lane}: logged return {total:+.4f}, "
              f"itemized sum {recomputed:+.4f} [{status}]")
        if recomputed != total:
            raise UsageError(f"lane {lane}: itemized penalties do not sum to "
                             f"the logged return")
    return 0


# ---------------------------------------------------------------------------
# argument surface
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cyberdial",
        description="Train and evaluate communicating cyber-defence agents.")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train dial or qmix on a scenario")
    train.add_argument("--algo", choices=("dial", "qmix"), required=True)
    train.add_argument("--scenario", required=True,
                       help="builtin name (small, small_green, large) or a YAML path")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--epochs", type=int, default=5000)
    train.add_argument("--episodes", type=int, default=128,
                       help="episodes collected per epoch")
    train.add_argument("--out", default="runs/latest")
    train.add_argument("--detection", type=float, default=None)
    train.add_argument("--message-bits", type=int, default=None)
    train.add_argument("--sau", choices=("on", "off"), default="on")
    train.add_argument("--block", choices=("on", "off"), default="on")
    train.add_argument("--checkpoint", default=None,
                       help="warm-start weights from a compatible checkpoint")
    train.add_argument("--eval-episodes", type=int, default=32)
    train.add_argument("--lanes", type=int, default=8)
    train.add_argument("--checkpoint-every", type=int, default=0,
                       help="periodic checkpoint interval in epochs "
                            "(0 = about four per run)")
    train.add_argument("--quiet", action="store_true")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--scenario", default=None)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--episodes", type=int, default=128)
    ev.add_argument("--out", default=None)
    ev.add_argument("--detection", type=float, default=None)
    ev.add_argument("--message-bits", type=int, default=None)
    ev.add_argument("--sau", choices=("on", "off"), default=None)
    ev.add_argument("--block", choices=("on", "off"), default=None)
    ev.add_argument("--no-red", action="store_true",
                    help="debug: disable the attacker entirely")
    ev.set_defaults(func=cmd_eval)

    rp = sub.add_parser("replay", help="narrate a replay log")
    rp.add_argument("--log", required=True)
    rp.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
