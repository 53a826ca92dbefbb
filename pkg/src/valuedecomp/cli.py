"""Command-line entry point: ``valuedecomp train | evaluate | analyze``."""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, checkpoint, training
from .config import ConfigError, load_config
from .envs import Episode, rollout
from .policy import deterministic_action
from .sacd import NonFiniteLossError

log = logging.getLogger("valuedecomp")

MODES = ("influence-trajectory", "influence-summary", "returns-vs-predictions")


class CliError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def resolve_checkpoint(path):
    """A checkpoint file, or the latest checkpoint inside a run directory."""
    path = Path(path)
    if path.is_file():
        return path
    ckpts = sorted((path / "checkpoints").glob("ckpt_*.bin")) if path.is_dir() else []
    if not ckpts:
        raise CliError(f"{path}: expected a checkpoint file or a run directory containing checkpoints/ckpt_*.bin")
    return ckpts[-1]


def resolve_metrics(path):
    path = Path(path)
    if path.is_dir():
        path = path / training.METRICS_FILE
    if not path.is_file():
        raise CliError(f"{path}: expected a metric log ({training.METRICS_FILE}) from a training run")
    return path


def _load(path):
    try:
        return checkpoint.load(resolve_checkpoint(path))
    except checkpoint.CheckpointError as exc:
        raise CliError(f"{path}: {exc}") from None


def _episode_seeds(seed, n):
    rng = np.random.default_rng(seed)
    return [training.Streams.episode_seed(rng) for _ in range(n)]


def _output_dir(args, fallback):
    out = Path(args.output_dir or fallback)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands


def cmd_train(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    if args.output_dir is not None:
        config = config.replace(output_dir=args.output_dir)
    run_dir = Path(config.output_dir)
    result = training.train(config, run_dir)
    print(f"trained {result.state.step} gradient steps; artifacts in {run_dir}")
    return run_dir


def cmd_evaluate(args):
    state, config = _load(args.checkpoint)
    env = config.make_env()
    names = list(env.components)
    weights = state.weights()[: len(names)]
    episodes = training.evaluate_policy(env, state.policy, args.episodes, _episode_seeds(args.seed, args.episodes))
    table = training.eval_returns(episodes, weights)
    ckpt = Path(args.checkpoint)
    out = _output_dir(args, ckpt if ckpt.is_dir() else ckpt.parent)
    path = out / "evaluation.csv"
    analysis.write_csv(path, ["episode"] + names + ["composite"], ([i] + list(row) for i, row in enumerate(table)))
    print(f"wrote {path}")
    return path


def _analyze_influence_trajectory(args, out):
    state, config = _load(args.input[0])
    if not config.agent.variant.decomposed:
        raise CliError("influence needs a decomposed critic; this checkpoint was trained with plain SAC")
    env = config.make_env()
    seed = _episode_seeds(args.seed, 1)[0]
    if args.max_steps == 0:
        obs = np.zeros((0, env.obs_dim))
    else:
        ep = rollout(env, lambda o: deterministic_action(state.policy, o), seed, args.max_steps)
        obs = ep.observations[: len(ep)]
    frac, degenerate = analysis.trajectory_influence(obs, state.critic, state.policy, state.weights())
    path = out / "influence_trajectory.csv"
    rows = ([t] + list(f) + [int(d)] for t, (f, d) in enumerate(zip(frac, degenerate)))
    analysis.write_csv(path, ["t"] + list(state.head_names) + ["degenerate"], rows)
    return path


def _analyze_influence_summary(args, out):
    logs = [training.read_metrics(resolve_metrics(p)) for p in args.input]
    try:
        steps, names, table = analysis.influence_training_summary(logs)
    except ValueError as exc:
        raise CliError(f"{args.input[0]}: {exc}") from None
    path = out / "influence_summary.csv"
    analysis.write_csv(path, ["step"] + names, ([s] + list(row) for s, row in zip(steps, table)))
    return path


def _analyze_returns(args, out):
    state, config = _load(args.input[0])
    env = config.make_env()
    names = list(env.components)
    w = state.weights()
    view = analysis.MinCompositeView(state.critic, w)
    policy = state.policy
    episodes = training.evaluate_policy(env, policy, args.episodes, _episode_seeds(args.seed, args.episodes))
    if args.successful_only:
        episodes = [ep for ep in episodes if env.is_success(ep.rewards)]
    if config.agent.variant.decomposed:

        def predict(obs, actions):
            return view.values(obs, actions)[:, : len(names)]

    else:
        # a single composite head is compared against the weighted return
        env_w = w[: len(names)]
        episodes = [Episode(e.observations, e.actions, (e.rewards @ env_w)[:, None], e.terminated, e.truncated) for e in episodes]
        names = ["composite"]

        def predict(obs, actions):
            return view.values(obs, actions)

    report = analysis.prediction_accuracy(episodes, predict, config.agent.gamma, args.window, names=names)
    path = out / "returns_vs_predictions.csv"
    header = ["component", "iqm_rmse", "iqm_correlation", "n_trajectories", "n_skipped", "n_undefined_correlation"]
    analysis.write_csv(path, header, report.rows())
    return path


def cmd_analyze(args):
    if args.mode != "influence-summary" and len(args.input) != 1:
        raise CliError(f"--mode {args.mode} takes exactly one --input")
    first = Path(args.input[0])
    out = _output_dir(args, first if first.is_dir() else first.parent)
    handler = {
        "influence-trajectory": _analyze_influence_trajectory,
        "influence-summary": _analyze_influence_summary,
        "returns-vs-predictions": _analyze_returns,
    }[args.mode]
    path = handler(args, out)
    print(f"wrote {path}")
    return path


# ---------------------------------------------------------------- parser


def _global_options():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", default=None, help="where artifacts are written")
    common.add_argument("--seed", type=int, default=None, help="root seed (train) or evaluation seed")
    return common


def build_parser():
    common = _global_options()

    parser = argparse.ArgumentParser(prog="valuedecomp", parents=[common], description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train an agent from a YAML config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="deterministic evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint file or run directory")
    p.add_argument("--episodes", type=int, default=10)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", parents=[common], help="influence and prediction-accuracy reports")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--input", nargs="+", required=True, help="checkpoint, run directory or metric log(s)")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--max-steps", type=int, default=None, help="episode length cap for influence-trajectory")
    p.add_argument("--window", type=int, default=25, help="last-K window for returns-vs-predictions")
    p.add_argument("--successful-only", action="store_true", help="keep only successful episodes")
    p.set_defaults(func=cmd_analyze)
    return parser


def _merge_globals(argv, args):
    # subparser defaults shadow values given before the subcommand
    head = argv[: argv.index(args.command)] if args.command in argv else []
    pre = _global_options().parse_known_args(head)[0]
    if args.output_dir is None:
        args.output_dir = pre.output_dir
    if args.seed is None:
        args.seed = pre.seed
    return args


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = _merge_globals(argv, parser.parse_args(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command != "train" and args.seed is None:
        args.seed = 0
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteLossError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 3
    except (CliError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
