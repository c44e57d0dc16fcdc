"""Command-line entry point.

Exit codes: 0 success, 1 invalid config or arguments, 2 runtime failure.
"""
import argparse
import logging
import os
import sys

import numpy as np

from . import config as config_mod
from .errors import FedArenaError, ParseError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("fedarena")


def _parse(path):
    if not os.path.isfile(path):
        raise ValidationError("config", f"no such file {path!r}")
    return config_mod.parse_config(path)


def _cmd_validate(args):
    cfg = _parse(args.config)
    sys.stdout.write(config_mod.dumps(cfg))
    return EXIT_OK


def _cmd_run(args):
    from .orchestrator import run_experiment
    from .reporting import write_outputs

    cfg = _parse(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    out = args.out or cfg.out_dir or os.path.join("runs", os.path.splitext(os.path.basename(args.config))[0])
    report = run_experiment(cfg)
    paths = write_outputs(out, cfg, report)
    if args.plot:
        from .plotting import plot_run
        plot_run(out)
    fair = "undefined" if report.fairness is None else f"{report.fairness:.2f}"
    print(f"max_accuracy={report.max_accuracy:.4f} fairness={fair} removed={sorted(report.removed)}")
    print(f"wrote {paths['rounds']}, {paths['report']}, {paths['config']}")
    return EXIT_OK


def _cmd_suite(args):
    from . import suite

    if args.list:
        for name in sorted(suite.suite_table()):
            print(f"suite  {name} ({len(suite.expand(name))} configs)")
        for name in suite.preset_names():
            print(f"preset {name}")
        return EXIT_OK
    if not args.name:
        raise ValidationError("name", "a suite or preset name is required (see --list)")
    try:
        suite.expand(args.name)
    except KeyError as exc:
        raise ValidationError("name", exc.args[0]) from None
    text = suite.run_suite(args.name, args.out or os.path.join("runs", args.name), jobs=args.jobs, seed=args.seed)
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_gradcheck(args):
    from .data import synth_classification
    from .model import ModelSpec, init_model, numeric_gradient_check

    train, _ = synth_classification(3, 6, 40, seed=args.seed)
    shard = train.subset(np.arange(8))
    worst = 0.0
    for label, hidden in (("logreg", 0), ("mlp", 5)):
        err = numeric_gradient_check(init_model(ModelSpec(6, hidden, 3), args.seed), shard)
        worst = max(worst, err)
        print(f"{label}: max relative error {err:.3e}")
    ok = worst < args.tolerance
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_RUNTIME


def _cmd_plot(args):
    from .plotting import plot_run

    if not os.path.isfile(os.path.join(args.run_dir, "rounds.csv")):
        raise ValidationError("run_dir", f"no rounds.csv in {args.run_dir!r}")
    for path in plot_run(args.run_dir, args.out):
        print(path)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="fedarena", description="Deterministic federated learning simulator.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: out_dir from the config, else runs/<name>)")
    r.add_argument("--seed", type=int)
    r.add_argument("--plot", action="store_true", help="also render PNG figures from rounds.csv")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("suite", help="run a named batch of stored presets")
    s.add_argument("name", nargs="?")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--list", action="store_true", help="list suites and presets")
    s.set_defaults(func=_cmd_suite)

    v = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)

    g = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tolerance", type=float, default=1e-5)
    g.set_defaults(func=_cmd_gradcheck)

    pl = sub.add_parser("plot", help="render PNG figures from a run directory")
    pl.add_argument("run_dir")
    pl.add_argument("--out", help="directory for the PNGs (default: run_dir)")
    pl.set_defaults(func=_cmd_plot)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FedArenaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
