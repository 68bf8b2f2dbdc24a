"""Command-line entry point: ``evacsim <subcommand> [options]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .building import ConfigError, exit_distances, max_degree, min_evacuation_steps, read_config
from .harness import ExperimentError, ExperimentSpec, MetricsSummary, compare, run_experiment
from .reduction import build_importance, save_mask
from .tabular import apply_noise, save_qmatrix, train_qmatrix


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="config path or shipped name (fig2, fig12, uia91)")
    p.add_argument("--out", type=Path, default=None, help="output file or directory")


def _run_options(p: argparse.ArgumentParser, seeds_default=(0,)) -> None:
    p.add_argument("--seed", type=int, nargs="+", default=list(seeds_default))
    p.add_argument("--episodes", type=int, default=None,
                   help="default 500; 5000 with --full-scale on a large building")
    p.add_argument("--p-override", type=float, default=None, help="replace the action-ignore probability")
    p.add_argument("--timing", action="store_true", help="write wall_ms columns (breaks byte-identical output)")


def _learner_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sigma", type=float, default=10.0, help="Q-matrix offset before pretraining")
    p.add_argument("--k", default=None, help="mask size per room: integer, 'auto' (max degree) or 'none'")
    p.add_argument("--full-scale", action="store_true", help="large network for big buildings")
    p.add_argument("--reward-mode", choices=("clip", "raw"), default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--replay", action=argparse.BooleanOptionalAction, default=None,
                   help="experience replay (on by default); --no-replay learns from each step alone")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evacsim", description="Fire-evacuation RL experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-config", help="check a building config and print its key numbers")
    p.add_argument("--config", required=True)

    p = sub.add_parser("pretrain", help="learn the shortest-path Q-matrix and write it as CSV")
    _common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.0, help="offset applied before writing (0 = raw)")

    p = sub.add_parser("build-mask", help="write the action-importance mask CSV")
    _common(p)
    p.add_argument("--k", default="auto")

    p = sub.add_parser("train", help="train one agent variant over one or more seeds")
    _common(p)
    p.add_argument("--agent", choices=("dqn", "ddqn", "dueling"), default="dueling")
    p.add_argument("--pretrain", action=argparse.BooleanOptionalAction, default=True)
    _learner_options(p)
    _run_options(p)

    p = sub.add_parser("compare", help="run several variants under shared seeds")
    _common(p)
    p.add_argument("--variants", nargs="+", default=["dueling", "qmp-dueling"],
                   help="e.g. dqn qmp-dqn ddqn qmp-ddqn dueling qmp-dueling random")
    _learner_options(p)
    _run_options(p, seeds_default=(0, 1, 2))

    p = sub.add_parser("random-baseline", help="uniformly random actions, no learning")
    _common(p)
    _run_options(p)
    p.set_defaults(episodes=100)
    return parser


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "reward_mode", None):
        out["reward_mode"] = args.reward_mode
    if getattr(args, "gamma", None) is not None:
        out["gamma"] = args.gamma
    if getattr(args, "replay", None) is not None:
        out["replay"] = args.replay
    return out


def _print_summary(s: MetricsSummary) -> None:
    print(f"{s.label}: episodes={s.episodes} average={s.average:.3f} minimum={s.minimum} "
          f"trailing{100}={s.trailing_mean:.3f}")
    for row in s.per_seed:
        print(f"  seed {row['seed']}: average={row['average']:.3f} minimum={row['minimum']} "
              f"trailing={row['trailing_mean']:.3f}")


def cmd_validate(args) -> int:
    g = read_config(args.config)
    dist = exit_distances(g)
    print(f"rooms={g.n} exits={sorted(g.exits)} fires={sorted(g.fires)} people={int(g.occupancy0.sum())}")
    print(f"max_degree={max_degree(g)} min_evacuation_steps={min_evacuation_steps(g)} "
          f"max_exit_distance={int(dist.max())} uncertainty={g.uncertainty}")
    return 0


def cmd_pretrain(args) -> int:
    g = read_config(args.config)
    q = train_qmatrix(g, seed=args.seed)
    if args.sigma:
        q = apply_noise(q, args.sigma)
    out = args.out or Path(f"qmatrix_{g.n}.csv")
    save_qmatrix(q, out)
    print(f"wrote {out}")
    return 0


def cmd_build_mask(args) -> int:
    g = read_config(args.config)
    k = max_degree(g) if str(args.k).lower() == "auto" else int(args.k)
    ai = build_importance(g, k)
    out = args.out or Path(f"mask_{g.n}.csv")
    save_mask(ai, out)
    print(f"k={ai.k} retained={ai.retained}/{ai.n_actions} reduction={100 * ai.reduction:.1f}% -> {out}")
    return 0


def _spec(args, agent: str, pretrain: bool) -> ExperimentSpec:
    return ExperimentSpec(
        config=args.config,
        agent=agent,
        pretrain=pretrain,
        sigma=getattr(args, "sigma", 10.0),
        k=getattr(args, "k", None),
        seeds=tuple(args.seed),
        episodes=args.episodes,
        out=args.out,
        p_override=args.p_override,
        full_scale=getattr(args, "full_scale", False),
        record_timing=args.timing,
        agent_overrides=_overrides(args),
    )


def cmd_train(args) -> int:
    result = run_experiment(_spec(args, args.agent, args.pretrain))
    _print_summary(result.summary)
    if result.mask is not None:
        print(f"mask: retained {result.mask.retained}/{result.mask.n_actions} "
              f"({100 * result.mask.reduction:.1f}% reduction)")
    return 0


def cmd_compare(args) -> int:
    results = compare(args.variants, _spec(args, "dueling", True))
    for res in results.values():
        _print_summary(res.summary)
    return 0


def cmd_random(args) -> int:
    result = run_experiment(_spec(args, "random", False))
    _print_summary(result.summary)
    return 0


COMMANDS = {
    "validate-config": cmd_validate,
    "pretrain": cmd_pretrain,
    "build-mask": cmd_build_mask,
    "train": cmd_train,
    "compare": cmd_compare,
    "random-baseline": cmd_random,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
