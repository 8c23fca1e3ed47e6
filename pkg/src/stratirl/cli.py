"""Command-line entry point: ``stratirl {generate,learn,analyze,bench-rl,replay}``.

Every flag can also come from a JSON or YAML file given with ``--config``;
explicit flags win over the file. ``--seed`` is the master seed; each stage
derives its own seed as ``sha256("<seed>:<stage>...")``.

Exit codes: 0 success, 1 I/O or configuration error, 2 usage error,
3 partial failure (some matches failed to learn).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .kpirl import KpirlParams
from .rl import START_HEURISTICS, DeiParams

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("stratirl")


class ConfigError(Exception):
    pass


def _counts(text: str) -> dict[str, int]:
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("counts take three integers: fallback,assault,flank")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad counts {text!r}") from None
    if min(vals) < 1:
        raise argparse.ArgumentTypeError("counts must be positive")
    return dict(zip(("fallback", "assault", "flank"), vals))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or YAML file supplying any of the flags")
    p.add_argument("--seed", type=int, default=0, help="master seed (default: 0)")
    p.add_argument("--workers", type=int, default=1, help="worker processes (default: 1)")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _add_kernel(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bandwidth", type=float, default=0.25, help="Gaussian kernel width (default: 0.25)")


def _add_dei(p: argparse.ArgumentParser) -> None:
    d = DeiParams()
    g = p.add_argument_group("direct estimate iteration")
    g.add_argument("--iterations", type=int, default=d.iterations)
    g.add_argument("--episodes", type=int, default=d.episodes_per_iter, help="episodes per iteration")
    g.add_argument("--steps", type=int, default=d.steps_per_episode, help="steps per episode")
    g.add_argument("--window", type=int, default=d.window)
    g.add_argument("--discount", type=float, default=d.discount)
    g.add_argument("--start-heuristic", default=d.start_heuristic, choices=START_HEURISTICS)
    g.add_argument("--temperature", type=float, default=d.softmax_temperature)
    g.add_argument("--max-depth", type=int, default=d.max_depth)
    g.add_argument("--min-leaf", type=int, default=d.min_leaf)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stratirl", description=__doc__.split("\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic match dataset")
    _add_common(p)
    p.add_argument("--out", default="data", help="dataset directory (default: data)")
    p.add_argument("--counts", type=_counts, default=_counts("11,12,13"),
                   help="matches per strategy as fallback,assault,flank (default: 11,12,13)")
    p.add_argument("--kill-probability", type=float, default=None)
    p.add_argument("--max-duration", type=float, default=None)

    p = sub.add_parser("learn", help="KPIRL reward per match")
    _add_common(p)
    _add_kernel(p)
    _add_dei(p)
    p.add_argument("--data", default="data", help="dataset directory with manifest.csv")
    p.add_argument("--out", default="learned", help="output directory (default: learned)")
    p.add_argument("--epsilon", type=float, default=KpirlParams().epsilon,
                   help="termination threshold as a fraction of the expert norm")
    p.add_argument("--max-irl-iterations", type=int, default=KpirlParams().max_iterations)
    p.add_argument("--force", action="store_true", help="recompute matches whose outputs exist")

    p = sub.add_parser("analyze", help="strategy identification on learned vectors")
    _add_common(p)
    p.add_argument("--learned", default="learned", help="output directory of the learn stage")
    p.add_argument("--data", default="data", help="dataset directory (for labels)")
    p.add_argument("--out", default="analysis", help="output directory (default: analysis)")
    p.add_argument("--C", type=float, default=1.0, dest="C", help="SVM box constraint")
    p.add_argument("--kernel", choices=["linear", "gaussian"], default="linear",
                   help="SVM kernel over the RKHS vectors (default: linear)")
    p.add_argument("--perplexity", type=float, default=5.0)
    p.add_argument("--tsne-iterations", type=int, default=1000)
    p.add_argument("--k", type=int, default=3, help="cluster count for the dendrogram cut")
    p.add_argument("--reward-scale", choices=["unit", "raw"], default="unit",
                   help="compare learned rewards at unit norm (default) or as learned")

    p = sub.add_parser("bench-rl", help="compare forward RL solvers on random rewards")
    _add_common(p)
    _add_kernel(p)
    _add_dei(p)
    p.add_argument("--out", default="bench", help="output directory (default: bench)")
    p.add_argument("--rewards", type=int, default=30, help="random rewards (default: 30)")
    p.add_argument("--budget", type=int, default=10_000, help="interactions per solver (default: 10000)")
    p.add_argument("--match", action="append", default=None,
                   help="bench on this match file instead of the lattice replay MDP (repeatable)")

    p = sub.add_parser("replay", help="replace the controlled agent by a learned policy")
    _add_common(p)
    _add_dei(p)
    p.add_argument("--match", required=True, help="match file")
    p.add_argument("--reward", required=True, help="reward file from the learn stage")
    p.add_argument("--agent", default=None, help="agent to replace (default: the match's controlled agent)")
    p.add_argument("--out", default="replay", help="output directory (default: replay)")
    p.add_argument("--no-svg", action="store_true")
    return parser


def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.endswith((".yaml", ".yml")):
            import yaml
            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
    except Exception as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of flag names to values")
    return {k.replace("-", "_"): v for k, v in data.items()}


def parse_args(argv) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` replace defaults, explicit flags replace both."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.config:
        return args
    config = load_config(args.config)
    choices = parser._subparsers._group_actions[0].choices
    subparser = choices[args.command]
    known = {a.dest: a for a in subparser._actions}
    # one file may carry flags of several commands; only keys no command knows are errors
    everywhere = {a.dest for sp in choices.values() for a in sp._actions}
    unknown = sorted(set(config) - everywhere)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    config = {k: v for k, v in config.items() if k in known}
    for key, value in config.items():
        action = known.get(key)
        if action is not None and action.type is not None and isinstance(value, str):
            config[key] = action.type(value)
        elif key == "counts" and isinstance(value, (list, tuple)):
            config[key] = _counts(",".join(str(v) for v in value))
    subparser.set_defaults(**{k: v for k, v in config.items() if k != "config"})
    return parser.parse_args(argv)


def dei_from_args(args) -> DeiParams:
    return DeiParams(iterations=args.iterations, episodes_per_iter=args.episodes,
                     steps_per_episode=args.steps, window=args.window, discount=args.discount,
                     start_heuristic=args.start_heuristic, softmax_temperature=args.temperature,
                     max_depth=args.max_depth, min_leaf=args.min_leaf)


def cmd_generate(args) -> int:
    from .skirmish import GenConfig, generate_dataset
    from .pipeline import stage_seed
    base = GenConfig()
    overrides = {k: v for k, v in (("kill_probability", args.kill_probability),
                                   ("max_duration", args.max_duration)) if v is not None}
    base = replace(base, **overrides)
    entries = generate_dataset(args.out, args.counts, stage_seed(args.seed, "generate"), base, args.workers)
    print(f"generated,{len(entries)},{args.out}")
    return EXIT_OK


def cmd_learn(args) -> int:
    from .pipeline import PipelineConfig, run_learn
    if not (Path(args.data) / "manifest.csv").exists():
        log.error("no manifest.csv in %s", args.data)
        return EXIT_IO
    config = PipelineConfig(seed=args.seed, bandwidth=args.bandwidth, dei=dei_from_args(args),
                            kpirl=KpirlParams(epsilon=args.epsilon, max_iterations=args.max_irl_iterations))
    outcome = run_learn(args.data, args.out, config, force=args.force, workers=args.workers)
    print(f"learned,{len(outcome.done)}\nskipped,{len(outcome.skipped)}\nfailed,{len(outcome.failed)}")
    for mid, err in sorted(outcome.failed.items()):
        print(f"failure,{mid},{err}")
    return EXIT_PARTIAL if outcome.failed else EXIT_OK


def cmd_analyze(args) -> int:
    from .pipeline import AnalyticsParams, run_analyze
    params = AnalyticsParams(C=args.C, kernel=args.kernel, perplexity=args.perplexity,
                             tsne_iterations=args.tsne_iterations, k=args.k,
                             reward_scale=args.reward_scale)
    try:
        summaries = run_analyze(args.learned, args.data, args.out, params, args.seed)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_IO
    print("role,items,loo_accuracy,fallback_concentration")
    for s in summaries:
        print(f"{s.role},{s.n},{s.accuracy:.4f},{s.fallback_concentration:.4f}")
    return EXIT_OK


def cmd_bench_rl(args) -> int:
    from .pipeline import run_bench
    from .trajectory import read_match
    matches = [read_match(p) for p in args.match] if args.match else None
    report = run_bench(args.out, args.rewards, args.budget, args.seed, dei_from_args(args),
                       args.bandwidth, matches)
    print("solver,mean_return")
    for s in report.solvers():
        print(f"{s},{report.mean(s):.6f}")
    return EXIT_OK


def cmd_replay(args) -> int:
    from .pipeline import SpecMismatchError, run_replay
    try:
        res = run_replay(args.match, args.reward, args.out, dei_from_args(args), args.seed,
                         agent_id=args.agent, svg=not args.no_svg)
    except SpecMismatchError as exc:
        log.error("%s", exc)
        return EXIT_IO
    print(f"ticks,{len(res.times)}\nmean_displacement_m,{res.mean_displacement():.4f}\n"
          f"mean_displacement_first_half_m,{res.mean_displacement(0.5):.4f}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "learn": cmd_learn, "analyze": cmd_analyze,
            "bench-rl": cmd_bench_rl, "replay": cmd_replay}


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    except (ConfigError, argparse.ArgumentTypeError) as exc:
        print(f"stratirl: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
