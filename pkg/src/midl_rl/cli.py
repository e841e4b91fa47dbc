"""Command line front end.

Every subcommand accepts ``--config``, ``--seed`` and ``--out``. Errors are
printed as one ``CODE: message`` line on stderr with a nonzero exit status.
"""

import argparse
import json
import sys

from . import pipeline
from .config import RunConfig, load
from .errors import DomainError, MidlError

EXIT_ERROR = 1
EXIT_USAGE = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"E_USAGE: {' '.join(message.split())}\n")
        raise SystemExit(EXIT_USAGE)


def _shared(p):
    p.add_argument("--config", help="run configuration file (defaults when omitted)")
    p.add_argument("--seed", type=int, help="master seed; overrides [run] seed")
    p.add_argument("--out", help=f"output root; overrides ${pipeline.RUN_DIR_ENV}")


def _agent_overrides(p):
    p.add_argument("--lam", type=float, help="penalty coefficient lambda")
    p.add_argument("--horizon", type=int, help="model rollout horizon H")
    p.add_argument("--iterations", type=int, help="outer training iterations")


def build_parser():
    parser = _Parser(prog="midl-rl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (("gen-data", "generate the offline toy dataset"),
                       ("train-model", "train the dynamics ensemble"),
                       ("train-agent", "train the actor-critic"),
                       ("evaluate", "evaluate the trained policy"),
                       ("plot", "write diagnostic CSVs and SVG panels"),
                       ("full-run", "run every stage in order")):
        p = sub.add_parser(name, help=text)
        _shared(p)
        if name in ("train-agent", "full-run"):
            _agent_overrides(p)
        if name == "evaluate":
            p.add_argument("--episodes", type=int, help="number of episodes")
            p.add_argument("--checkpoint", help="agent checkpoint (defaults to the run's final one)")
    p = sub.add_parser("verify", help="check the tabular guarantees on random instances")
    _shared(p)
    p.add_argument("--theorem", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--instances", type=int, default=10)
    return parser


def _config(args):
    cfg = load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    agent = {k: getattr(args, k, None) for k in ("lam", "horizon", "iterations")}
    agent = {k: v for k, v in agent.items() if v is not None}
    if agent:
        cfg = cfg.replace("agent", **agent)
    return cfg


def _progress(every=250):
    def report(rec):
        if (rec["iter"] + 1) % every == 0:
            sys.stderr.write(f"iter {rec['iter'] + 1}: critic {rec['critic_loss']:.4g} "
                             f"actor {rec['actor_loss']:.4g} alpha {rec['alpha']:.4g}\n")
    return report


def run(args, stdout):
    if args.command == "verify":
        from .theorems import verify
        if args.instances < 1:
            raise DomainError("--instances must be at least 1")
        seed = 0 if args.seed is None else args.seed
        for rec in verify(args.theorem, args.instances, seed):
            stdout.write(json.dumps(rec) + "\n")
        return 0
    cfg = _config(args)
    if args.command == "full-run":
        paths, result, summary = pipeline.run_pipeline(cfg, args.out, _progress())
        stdout.write(json.dumps({"run_dir": str(paths.root), **result, **summary}) + "\n")
        return 0
    paths = pipeline.prepare(cfg, args.out)
    if args.command == "gen-data":
        pipeline.run_stage("gen-data", pipeline.gen_data, cfg, paths)
        out = {"dataset": str(paths.dataset)}
    elif args.command == "train-model":
        pipeline.run_stage("train-model", pipeline.train_model, cfg, paths)
        out = {"model": str(paths.model)}
    elif args.command == "train-agent":
        pipeline.run_stage("train-agent", pipeline.train_agent, cfg, paths, _progress())
        out = {"agent": str(paths.agent), "metrics": str(paths.metrics)}
    elif args.command == "evaluate":
        if args.checkpoint or args.episodes is not None:
            episodes = cfg.run.eval_episodes if args.episodes is None else args.episodes
            mean, std = pipeline.run_stage(
                "evaluate", pipeline.evaluate, args.checkpoint or paths.agent, episodes,
                pipeline.stage_seeds(cfg.run.seed)["eval"], cfg.toy_spec(), cfg.run.eval_horizon)
            out = {"episodes": episodes, "mean_return": mean, "std_return": std}
        else:
            out = pipeline.run_stage("evaluate", pipeline.evaluate_stage, cfg, paths)
    else:
        out = pipeline.run_stage("plot", pipeline.emit_diagnostics, paths)
    stdout.write(json.dumps({"run_dir": str(paths.root), **out}) + "\n")
    return 0


def main(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        return run(args, stdout)
    except MidlError as exc:
        stderr.write(exc.line() + "\n")
        return EXIT_ERROR
    except OSError as exc:
        stderr.write(f"E_IO: {' '.join(str(exc).split())}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
