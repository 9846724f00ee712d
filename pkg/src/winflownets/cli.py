"""Command-line entry point: ``winflownets {train,transfer,ablate,eval,inspect}``."""

import argparse
import logging
import os
import sys

import numpy as np

from .config import VARIANTS, Config, canonical_variant, desk_scale, load_config, parse_config_text
from .envs import dump_trajectory, make_fault
from .errors import ConfigError, NumericError
from .metrics import fmt
from .training import (checkpoint_summary, evaluate, flow_policy, load_run_state, rollout,
                       run_variant, transfer_to_fault)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

ENV_NAMES = {"reacher2": "reacher2", "reacher": "reacher2", "point_sparse": "point_sparse",
             "point": "point_sparse"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--env", help="reacher2 | point_sparse")
    common.add_argument("--fault", help="none | ad | rom")
    common.add_argument("--variant", help=" | ".join(VARIANTS))
    common.add_argument("--out", metavar="DIR", default="runs")
    common.add_argument("--desk-scale", action="store_true", help="apply the small presets")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config field (repeatable)")
    common.add_argument("-q", "--quiet", action="store_true")

    p = _Parser(prog="winflownets", description=__doc__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    sub.add_parser("train", parents=[common], help="train one variant")
    t = sub.add_parser("transfer", parents=[common], help="resume a run under a fault")
    t.add_argument("checkpoint")
    t.add_argument("--steps", type=int, help="dual-training steps after transfer")
    t.add_argument("--reset-buffer", action="store_true")
    sub.add_parser("ablate", parents=[common], help="train all four variants with one seed")
    e = sub.add_parser("eval", parents=[common], help="score a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--dump-trajectory", metavar="CSV")
    i = sub.add_parser("inspect", parents=[common], help="print checkpoint and buffer stats")
    i.add_argument("checkpoint")
    return p


def build_config(args, base=None):
    cfg = base or Config()
    if args.desk_scale:
        cfg = desk_scale(cfg)
    if args.config:
        cfg = load_config(args.config, cfg)
    if args.set:
        cfg = parse_config_text("\n".join(args.set), cfg)
    env, train = {}, {}
    if args.env:
        if args.env not in ENV_NAMES:
            raise ConfigError(f"unknown env {args.env!r}")
        env["kind"] = ENV_NAMES[args.env]
    if args.fault:
        make_fault(args.fault)
        env["fault"] = args.fault
    if args.variant:
        train["variant"] = canonical_variant(args.variant)
    if args.seed is not None:
        train["seed"] = args.seed
    return cfg.override(env=env, train=train)


def _run_name(cfg):
    return f"{cfg.train.variant}_{cfg.env.kind}_{cfg.env.fault}_seed{cfg.train.seed}"


def _print_reports(state):
    for r in state.reports:
        print(f"step={r.timestep} mean={fmt(r.mean_reward)} std={fmt(r.std_reward)} "
              f"ci={fmt(r.ci_width)}")


def cmd_train(args):
    cfg = build_config(args)
    run_dir = os.path.join(args.out, _run_name(cfg))
    state = run_variant(cfg, run_dir)
    if not args.quiet:
        _print_reports(state)
    print(run_dir)


def cmd_ablate(args):
    cfg = build_config(args)
    for variant in VARIANTS:
        vcfg = cfg.override(train={"variant": variant})
        run_dir = os.path.join(args.out, variant)
        run_variant(vcfg, run_dir)
        print(run_dir)


def cmd_transfer(args):
    fault = args.fault or "ad"
    base = load_run_state(args.checkpoint).config
    cfg = build_config(args, base)
    run_dir = os.path.join(args.out, f"transfer_{fault}_{_run_name(cfg)}")
    state = transfer_to_fault(args.checkpoint, fault, cfg, run_dir, steps=args.steps,
                              reset_buffer=args.reset_buffer)
    if not args.quiet:
        _print_reports(state)
    print(run_dir)


def cmd_eval(args):
    state = load_run_state(args.checkpoint)
    cfg = build_config(args, state.config)
    report = evaluate(state.flow.params, cfg, n=args.episodes, timestep=state.step)
    print(f"step={report.timestep} mean={fmt(report.mean_reward)} std={fmt(report.std_reward)} "
          f"ci={fmt(report.ci_width)} n={report.n}")
    if args.dump_trajectory:
        rng = np.random.default_rng([cfg.train.seed, state.step])
        pol = flow_policy(state.flow.params, cfg.flow.M, cfg.flow.tau_soft, rng)
        states, actions, rewards = rollout(cfg.env, make_fault(cfg.env.fault), pol, rng)
        dump_trajectory(args.dump_trajectory, states[:-1], actions, rewards)


def cmd_inspect(args):
    print(checkpoint_summary(args.checkpoint))


COMMANDS = {"train": cmd_train, "transfer": cmd_transfer, "ablate": cmd_ablate,
            "eval": cmd_eval, "inspect": cmd_inspect}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.quiet:
            logging.basicConfig(level=logging.INFO, format="%(message)s")
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
