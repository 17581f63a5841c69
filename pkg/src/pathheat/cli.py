"""Command line entry point: ``pathheat <suite> --config FILE --seed N --out DIR``."""

import argparse
import os
import sys

from .errors import ScenarioError
from .runner import SUITES, load_config, run, split_config

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SEED_ENV = "PATHHEAT_SEED"


def build_parser():
    ap = argparse.ArgumentParser(
        prog="pathheat",
        description="Run verification suites for the path-dependent heat equation.")
    ap.add_argument("suite", choices=SUITES + ("all",))
    ap.add_argument("--config", help="JSON scenario file (suite parameters)")
    ap.add_argument("--seed", type=int, default=0,
                    help=f"base seed; the {SEED_ENV} environment variable takes precedence")
    ap.add_argument("--out", default="pathheat-out", help="output directory")
    ap.add_argument("--threads", type=int, default=None, help="worker threads for sampling")
    return ap


def _seed(args):
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return args.seed
    try:
        return int(env)
    except ValueError:
        raise ScenarioError(f"{SEED_ENV} must be an integer, got {env!r}", field=SEED_ENV) from None


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        seed = _seed(args)
        config = load_config(args.config) if args.config else {}
        params = split_config(args.suite, config)
    except (ScenarioError, OSError) as exc:
        print(f"pathheat: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = run(args.suite, params, seed, args.out, args.threads)
    for c in report["checks"]:
        status = "PASS" if c["pass"] else "FAIL"
        print(f"{status}  {c['suite']:<12} {c['name']}")
    print(f"overall: {'PASS' if report['pass'] else 'FAIL'} -> {args.out}/report.json")
    return EXIT_PASS if report["pass"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
