"""Command line: ``run``, ``verify``, ``plotdata``, ``loo``, ``split``."""
import argparse
import json
import os
import sys
from dataclasses import asdict

from . import experiment, theory
from .errors import ConfigurationError


def _common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, nargs="+", dest="seeds",
                   help="seeds to run (overrides the config)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--policy", help="comma list of none,fixed,curriculum,transductive")
    p.add_argument("--confidence", help="comma list of softmax,tsim")
    p.add_argument("--gamma", type=float, help="diversity strength")
    p.add_argument("--workers", type=int, help="parallel seed workers")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="any other config override, repeatable")


def _config(args):
    over = []
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        over.append((key.strip(), value.strip()))
    if args.seeds:
        over.append(("seeds", ",".join(str(s) for s in args.seeds)))
    for key, attr in (("out", "out"), ("policies", "policy"),
                      ("confidences", "confidence"), ("gamma", "gamma"),
                      ("workers", "workers")):
        value = getattr(args, attr, None)
        if value is not None:
            over.append((key, str(value)))
    return experiment.load_config(args.config, over)


def build_parser():
    parser = argparse.ArgumentParser(prog="diverse-selftrain", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the configured experiment grid")
    _common(p)

    p = sub.add_parser("verify", help="run the theory verification battery")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the JSON report here (default: stdout)")
    p.add_argument("--instances", type=int, default=100,
                   help="instances per check (gradient check uses half)")
    p.add_argument("--gradient-constant", type=float, default=2.0,
                   help="leading constant of the gradient under test; anything "
                        "but 2 is a deliberate mutation")

    p = sub.add_parser("plotdata", help="emit tidy CSVs from a record")
    p.add_argument("--record", required=True, help="record.json from `run`")
    p.add_argument("--kind", required=True, choices=experiment.PLOT_KINDS)
    p.add_argument("--out", help="output directory (default: next to the record)")

    p = sub.add_parser("loo", help="leave-one-out accuracy on the labeled sets")
    _common(p)
    p.add_argument("--modes", help="comma list of labeling modes (default: config)")

    p = sub.add_parser("split", help="write split manifests")
    _common(p)
    return parser


def _verify(args):
    const = args.gradient_constant

    def grad(inst, W):
        return theory.gradient(inst, W) * (const / 2.0)

    n = args.instances
    checks = theory.run_battery(args.seed, n_gradient=max(1, n // 2), n_stationary=n,
                                n_convexity=n, n_theorem=n,
                                gradient_fn=None if const == 2.0 else grad)
    report = {"seed": args.seed, "gradient_constant": const,
              "passed": all(c.passed for c in checks),
              "checks": [asdict(c) for c in checks]}
    text = json.dumps(report, indent=1)
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name} (n={c.count}, worst={c.worst:.3g})",
              file=sys.stderr)
    return 0 if report["passed"] else 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return _verify(args)
        if args.command == "plotdata":
            with open(args.record) as fh:
                record = json.load(fh)
            out = args.out or os.path.dirname(os.path.abspath(args.record))
            print(experiment.emit_plot_data(record, args.kind, out))
            return 0
        cfg = _config(args)
        if args.command == "run":
            record = experiment.run_experiment(cfg)
            for name, m in record["summary"].items():
                print(f"{name}: {m['mean']:.4f} +- {m['std']:.4f}")
            print(f"wrote {os.path.join(cfg.out, 'record.json')}")
            return 0 if record["complete"] else 2
        if args.command == "loo":
            modes = args.modes.split(",") if args.modes else None
            res = experiment.run_loo(cfg, modes)
            os.makedirs(cfg.out, exist_ok=True)
            with open(os.path.join(cfg.out, "loo.json"), "w") as fh:
                json.dump(res, fh, indent=1)
            for mode, m in res.items():
                print(f"loo/{mode}: {m['mean']:.4f} +- {m['std']:.4f}")
            return 0
        if args.command == "split":
            for path in experiment.write_splits(cfg):
                print(path)
            return 0
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
