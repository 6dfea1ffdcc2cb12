"""Command-line entry point.

Subcommands: train, sweep, compare-policies, longtail, ablate, serve, report.
Settings come from defaults, then an optional JSON config file, then flags,
in increasing precedence. Every command honors --seed (falling back to the
MATAGENT_SEED environment variable) and is deterministic on the synthetic
environment: rerunning with the same inputs rewrites byte-identical files.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .catalog import Catalog, JointConfig, build_default_catalog
from .coordinator import (
    MASK_PRESETS,
    Coordinator,
    RunConfig,
    conditional_probability_report,
    episode_seeds,
    selection_frequency_report,
)
from .curiosity import CuriosityConfig
from .env.surrogate import RHO_PRESETS, SurrogateEnv, default_spec, run_static
from .qlearn import AgentConfig, ArmStats, ExplorationSchedule, PolicyKind, epsilon_greedy, epsilon_at, thompson_select, ucb1_select
from .reward import RewardWeights, ShapingParams
from .state import EmaPair, extended_feature_names
from . import bridge

SEED_ENV_VAR = "MATAGENT_SEED"
CONVERGENCE_MAP_THRESHOLD = 0.8

SCHEMA_VERSIONS = {"decision_log": 1, "trajectory": 1, "frequencies": 1, "run_meta": 1}

TRAJECTORY_COLUMNS = (
    "step",
    "map_val",
    "rare_f1",
    "head_f1",
    "mid_f1",
    "tail_f1",
    "loss_train",
    "loss_val",
    "grad_norm",
    "rel_update_mag",
    "texture_richness",
    "reward_total",
    "reward_combined",
)


# ---------------------------------------------------------------------------
# configuration plumbing

DEFAULT_CONFIG = {
    "seed": None,
    "env": "synthetic",
    "rho": 0.0,
    "horizon": 25,
    "episodes": 1,
    "weights": {"w_map": 1.0, "w_stab": 1.0, "w_conv": 0.8, "w_pen": 0.2},
    "shaping": {"kappa": 2.0, "tau": 0.005},
    "stability_window": 5,
    "spike_threshold": 0.5,
    "agent": {"alpha": 1e-3, "gamma": 0.95, "sync_interval": 1000, "minibatch": 32, "policy": "dqn"},
    "exploration": {"eps_start": 1.0, "eps_end": 0.1, "horizon": None},
    "ema": {"fast": 0.3, "slow": 0.05},
    "replay": {"capacity": 50000, "min_fill": None},
    "curiosity": {"enabled": True, "lambda_i": 0.1, "lambda_e": 1.0, "lr": 1e-3},
    "mask": "full",
    "uncoordinated": False,
}


def _deep_update(base: dict, overlay: dict) -> dict:
    out = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_update(out[key], value)
        else:
            out[key] = value
    return out


def resolve_settings(args: argparse.Namespace) -> dict:
    """defaults < config file < flags."""
    settings = dict(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        with open(args.config, "rb") as fh:
            settings = _deep_update(settings, json.load(fh))
    flag_map = {
        "seed": ("seed",),
        "env": ("env",),
        "rho": ("rho",),
        "steps": ("horizon",),
        "episodes": ("episodes",),
        "w_map": ("weights", "w_map"),
        "w_stab": ("weights", "w_stab"),
        "w_conv": ("weights", "w_conv"),
        "w_pen": ("weights", "w_pen"),
        "alpha": ("agent", "alpha"),
        "gamma": ("agent", "gamma"),
        "sync_interval": ("agent", "sync_interval"),
        "minibatch": ("agent", "minibatch"),
        "policy": ("agent", "policy"),
        "mask": ("mask",),
    }
    for flag, path in flag_map.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        node = settings
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = value
    if getattr(args, "no_intrinsic", False):
        settings["curiosity"] = dict(settings["curiosity"], enabled=False)
    if settings["seed"] is None:
        settings["seed"] = int(os.environ.get(SEED_ENV_VAR, "0"))
    return settings


def run_config_from_settings(s: dict) -> RunConfig:
    mask_name = s["mask"]
    if mask_name == "no-coordination":
        mask, uncoordinated = MASK_PRESETS["full"], True
    else:
        if mask_name not in MASK_PRESETS:
            raise SystemExit(f"unknown mask {mask_name!r}; choose from {sorted(MASK_PRESETS)} or no-coordination")
        mask, uncoordinated = MASK_PRESETS[mask_name], bool(s["uncoordinated"])
    exploration = None
    if s["exploration"]["horizon"] is not None:
        exploration = ExplorationSchedule(
            eps_start=s["exploration"]["eps_start"],
            eps_end=s["exploration"]["eps_end"],
            horizon=int(s["exploration"]["horizon"]),
        )
    return RunConfig(
        horizon=int(s["horizon"]),
        episodes=int(s["episodes"]),
        weights=RewardWeights(**s["weights"]),
        shaping=ShapingParams(**s["shaping"]),
        stability_window=int(s["stability_window"]),
        spike_threshold=float(s["spike_threshold"]),
        agent=AgentConfig(
            alpha=float(s["agent"]["alpha"]),
            gamma=float(s["agent"]["gamma"]),
            sync_interval=int(s["agent"]["sync_interval"]),
            minibatch=int(s["agent"]["minibatch"]),
            policy_kind=PolicyKind(s["agent"]["policy"]),
        ),
        exploration=exploration,
        ema=EmaPair(fast=float(s["ema"]["fast"]), slow=float(s["ema"]["slow"])),
        replay_capacity=int(s["replay"]["capacity"]),
        min_fill=s["replay"]["min_fill"],
        curiosity=CuriosityConfig(
            lambda_i=float(s["curiosity"]["lambda_i"]),
            lambda_e=float(s["curiosity"]["lambda_e"]),
            enabled=bool(s["curiosity"]["enabled"]),
            lr=float(s["curiosity"]["lr"]),
        ),
        mask=mask,
        uncoordinated=uncoordinated,
    )


def make_env(settings: dict, catalog: Catalog) -> SurrogateEnv:
    if settings["env"] != "synthetic":
        raise SystemExit(f"unknown env {settings['env']!r}; only 'synthetic' runs locally (use serve for remote)")
    return SurrogateEnv(catalog, default_spec(rho=float(settings["rho"])), horizon=int(settings["horizon"]))


# ---------------------------------------------------------------------------
# output files


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_run_outputs(out_dir: Path, catalog: Catalog, result, settings: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "decisions.jsonl", "w", encoding="utf-8") as fh:
        for rec in result.decisions:
            fh.write(json.dumps(rec.to_obj(catalog), separators=(",", ":"), sort_keys=True))
            fh.write("\n")
    with open(out_dir / "trajectory.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for step, (report, rec) in enumerate(zip(result.trajectory, result.decisions)):
            writer.writerow(
                [
                    step,
                    report.map_val,
                    report.rare_f1,
                    report.head_f1,
                    report.mid_f1,
                    report.tail_f1,
                    report.loss_train,
                    report.loss_val,
                    report.grad_norm,
                    report.rel_update_mag,
                    report.texture_richness,
                    rec.reward.total,
                    rec.combined,
                ]
            )
    _write_json(
        out_dir / "frequencies.json",
        {"v": SCHEMA_VERSIONS["frequencies"], "selection": result.frequencies,
         "conditional": conditional_probability_report(result.decisions, catalog)},
    )
    _write_json(
        out_dir / "run_meta.json",
        {
            "v": SCHEMA_VERSIONS["run_meta"],
            "schemas": SCHEMA_VERSIONS,
            "settings": settings,
            "steps": result.steps,
            "final": {"map_val": result.final_metrics.map_val, "loss_val": result.final_metrics.loss_val},
            "feature_manifest": extended_feature_names(),
        },
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    catalog = build_default_catalog()
    cfg = run_config_from_settings(settings)
    env = make_env(settings, catalog)
    coordinator = Coordinator(catalog, env, cfg, seed=int(settings["seed"]))
    result = coordinator.run()
    write_run_outputs(Path(args.out_dir), catalog, result, settings)
    print(f"steps={result.steps} final_map={result.final_metrics.map_val:.4f} out={args.out_dir}")
    return 0


def _sweep_point(payload: tuple) -> dict:
    """One (weight name, value, seed) run. Module-level so it pickles."""
    settings, weight_name, value, seed = payload
    settings = _deep_update(settings, {"weights": {weight_name: value}, "seed": seed})
    catalog = build_default_catalog()
    cfg = run_config_from_settings(settings)
    env = make_env(settings, catalog)
    result = Coordinator(catalog, env, cfg, seed=seed).run()
    losses = [m.loss_val for m in result.trajectory]
    conv = next(
        (i for i, m in enumerate(result.trajectory) if m.map_val >= CONVERGENCE_MAP_THRESHOLD), -1
    )
    return {
        "weight": weight_name,
        "value": value,
        "seed": seed,
        "final_map": result.final_metrics.map_val,
        "loss_variance": float(np.var(losses)),
        "convergence_step": conv,
    }


SWEEP_RANGES = {
    "w_map": (0.4, 1.6),
    "w_stab": (1.0, 1.2),
    "w_conv": (0.5, 1.5),
    "w_pen": (0.1, 0.5),
}


def cmd_sweep(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    weights = [args.weight] if args.weight else list(SWEEP_RANGES)
    jobs = []
    for name in weights:
        lo, hi = SWEEP_RANGES[name]
        grid = [round(lo + i * (hi - lo) / (args.points - 1), 10) for i in range(args.points)]
        for value in grid:
            for s in range(args.seeds):
                jobs.append((settings, name, value, int(settings["seed"]) + s))
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(job) for job in jobs]

    # Aggregate in grid order; per-run results are independent of worker count.
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["weight", "value", "runs", "final_map_mean", "final_map_std",
                         "loss_variance_mean", "convergence_step_mean"])
        seen = []
        for row in rows:
            key = (row["weight"], row["value"])
            if key not in seen:
                seen.append(key)
        for key in seen:
            group = [r for r in rows if (r["weight"], r["value"]) == key]
            fmap = np.array([r["final_map"] for r in group])
            writer.writerow(
                [
                    key[0],
                    key[1],
                    len(group),
                    float(fmap.mean()),
                    float(fmap.std()),
                    float(np.mean([r["loss_variance"] for r in group])),
                    float(np.mean([r["convergence_step"] for r in group])),
                ]
            )
    print(f"swept {len(seen)} grid points x {args.seeds} seeds -> {out}")
    return 0


def run_bandit(
    policy: PolicyKind,
    means: list[float],
    sigma: float,
    pulls: int,
    seed: int,
    checkpoints: tuple[int, ...] = (),
) -> dict:
    """Stationary Gaussian bandit episode; returns greedy pick and regret curve."""
    rng = np.random.default_rng(seed)
    arms = ArmStats(len(means))
    schedule = ExplorationSchedule(eps_start=1.0, eps_end=0.1, horizon=max(pulls, 1))
    best = float(np.max(means))
    regret = 0.0
    regret_at = {}
    for t in range(pulls):
        if policy == PolicyKind.UCB1:
            a = ucb1_select(arms)
        elif policy == PolicyKind.THOMPSON:
            a = thompson_select(arms, rng)
        else:
            a = epsilon_greedy(arms.value_estimates(), epsilon_at(schedule, t), rng)
        reward = float(rng.normal(means[a], sigma))
        arms.update(a, reward)
        regret += best - means[a]
        if (t + 1) in checkpoints:
            regret_at[t + 1] = regret
    regret_at[pulls] = regret
    greedy_arm = int(np.argmax(arms.value_estimates()))
    return {"greedy_arm": greedy_arm, "regret": regret, "regret_at": regret_at}


def cmd_compare_policies(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    seed0 = int(settings["seed"])
    means = [float(x) for x in args.means.split(",")]
    best_arm = int(np.argmax(means))
    rows = []
    for policy in (PolicyKind.EPS_GREEDY_DQN, PolicyKind.UCB1, PolicyKind.THOMPSON):
        hits = 0
        regret_1k = []
        regret_end = []
        for s in range(args.seeds):
            outcome = run_bandit(
                policy, means, args.sigma, args.pulls, seed0 + s, checkpoints=(1000,)
            )
            hits += outcome["greedy_arm"] == best_arm
            regret_1k.append(outcome["regret_at"].get(1000, outcome["regret"]))
            regret_end.append(outcome["regret"])
        rows.append(
            {
                "policy": policy.value,
                "best_arm_rate": hits / args.seeds,
                "mean_regret_1k": float(np.mean(regret_1k)),
                f"mean_regret_{args.pulls}": float(np.mean(regret_end)),
            }
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(row)
    return 0


STATIC_BCE_BASELINE = JointConfig(0, 0, 0, 0)  # Basic, SGD, Step, BCE


def cmd_longtail(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    catalog = build_default_catalog()
    rhos = [float(r) for r in args.rhos.split(",")] if args.rhos else list(RHO_PRESETS)
    horizon = int(settings["horizon"])
    rows = []
    for rho in rhos:
        spec = default_spec(rho=rho)
        finals = [
            run_static(catalog, spec, horizon, STATIC_BCE_BASELINE, seed)
            for seed in episode_seeds(int(settings["seed"]), args.seeds)
        ]
        head = float(np.mean([m.head_f1 for m in finals]))
        mid = float(np.mean([m.mid_f1 for m in finals]))
        tail = float(np.mean([m.tail_f1 for m in finals]))
        bacc = 0.25 * head + 0.5 * mid + 0.25 * tail
        for metric, value in (("head_f1", head), ("mid_f1", mid), ("tail_f1", tail), ("bacc", bacc)):
            rows.append({"rho": rho, "metric": metric, "value": value})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["rho", "metric", "value"])
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(f"rho={row['rho']:g} {row['metric']}={row['value']:.4f}")
    return 0


ABLATION_MASKS = ("full", "no-aug", "no-opt", "no-lrs", "no-loss", "no-all", "no-coordination")


def cmd_ablate(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    catalog = build_default_catalog()
    masks = args.masks.split(",") if args.masks else list(ABLATION_MASKS)
    rows = []
    for mask in masks:
        finals = []
        for s in range(args.seeds):
            mask_settings = _deep_update(settings, {"mask": mask})
            cfg = run_config_from_settings(mask_settings)
            env = make_env(mask_settings, catalog)
            coordinator = Coordinator(catalog, env, cfg, seed=int(settings["seed"]) + s)
            coordinator.run()
            eval_seed = episode_seeds(int(settings["seed"]) + s, cfg.episodes)[-1] + 1
            finals.append(coordinator.evaluate_episode(eval_seed).final_metrics.map_val)
        rows.append({"mask": mask, "runs": len(finals),
                     "final_map_mean": float(np.mean(finals)),
                     "final_map_std": float(np.std(finals))})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["mask", "runs", "final_map_mean", "final_map_std"])
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(f"{row['mask']}: {row['final_map_mean']:.4f} +/- {row['final_map_std']:.4f}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    catalog = build_default_catalog()
    cfg = run_config_from_settings(settings)
    if args.listen:
        host, _, port = args.listen.rpartition(":")
        channel = bridge.tcp_listen_channel(host or "127.0.0.1", int(port), timeout=args.timeout)
    else:
        channel = bridge.stdio_channel()
    make_coordinator = lambda env: Coordinator(catalog, env, cfg, seed=int(settings["seed"]))
    outcome = bridge.serve(channel, catalog, make_coordinator, horizon=cfg.horizon, timeout=args.timeout)
    print(json.dumps(outcome, sort_keys=True), file=sys.stderr)
    return 0 if outcome["status"] == "ok" else 1


def cmd_report(args: argparse.Namespace) -> int:
    catalog = build_default_catalog()
    from .coordinator import DecisionRecord
    from .reward import RewardBreakdown

    decisions = []
    with open(args.log, "r", encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            decisions.append(
                DecisionRecord(
                    t=obj["t"],
                    state_digest=obj["state_digest"],
                    config=catalog.config_from_names(obj["config"]),
                    reward=RewardBreakdown(**obj["reward"]),
                    intrinsic=obj["intrinsic"],
                    combined=obj["combined"],
                    eps=obj["eps"],
                    q_chosen=obj["q_chosen"],
                )
            )
    report = {
        "v": SCHEMA_VERSIONS["frequencies"],
        "selection": selection_frequency_report(decisions, catalog),
        "conditional": conditional_probability_report(decisions, catalog),
    }
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help=f"run seed (falls back to ${SEED_ENV_VAR}, then 0)")
    p.add_argument("--config", default=None, help="JSON run-config file")
    p.add_argument("--env", default=None, choices=["synthetic"])
    p.add_argument("--steps", type=int, default=None, help="decision steps per episode")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--rho", type=float, default=None, help="class-imbalance level")
    p.add_argument("--w-map", dest="w_map", type=float, default=None)
    p.add_argument("--w-stab", dest="w_stab", type=float, default=None)
    p.add_argument("--w-conv", dest="w_conv", type=float, default=None)
    p.add_argument("--w-pen", dest="w_pen", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--sync-interval", dest="sync_interval", type=int, default=None)
    p.add_argument("--minibatch", type=int, default=None)
    p.add_argument("--policy", default=None, choices=[k.value for k in PolicyKind])
    p.add_argument("--mask", default=None)
    p.add_argument("--no-intrinsic", dest="no_intrinsic", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trainctl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the controller and write logs")
    _add_common(p)
    p.add_argument("--out-dir", default="runs/train")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sweep", help="reward-weight sensitivity sweep")
    _add_common(p)
    p.add_argument("--weight", choices=list(SWEEP_RANGES), default=None,
                   help="sweep only this weight (default: each in turn)")
    p.add_argument("--points", type=int, default=4)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="runs/sweep.csv")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("compare-policies", help="selection-policy comparison on a bandit fixture")
    _add_common(p)
    p.add_argument("--means", default="0.3,0.5,0.7")
    p.add_argument("--sigma", type=float, default=0.3)
    p.add_argument("--pulls", type=int, default=10000)
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--out", default="runs/policies.csv")
    p.set_defaults(fn=cmd_compare_policies)

    p = sub.add_parser("longtail", help="imbalance presets vs strata F1 for the static baseline")
    _add_common(p)
    p.add_argument("--rhos", default=None, help="comma list; default presets 1,2,5,10")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", default="runs/longtail.csv")
    p.set_defaults(fn=cmd_longtail)

    p = sub.add_parser("ablate", help="agent ablation table")
    _add_common(p)
    p.add_argument("--masks", default=None, help=f"comma list from {ABLATION_MASKS}")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", default="runs/ablate.csv")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("serve", help="drive a remote trainer over the bridge")
    _add_common(p)
    p.add_argument("--listen", default=None, metavar="HOST:PORT", help="TCP instead of stdio")
    p.add_argument("--timeout", type=float, default=bridge.STEP_TIMEOUT)
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("report", help="frequency tables from a decision log")
    p.add_argument("--log", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
