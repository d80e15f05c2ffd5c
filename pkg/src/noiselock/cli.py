"""Command line entry point.

::

    noiselock run <preset|config-file> [--seed N] [--out DIR] [--scale F]
    noiselock show <preset>
    noiselock selftest [--criteria 1,2,...]

Exit status is 0 on success, 1 when a verdict or acceptance criterion fails
and 2 for configuration errors.
"""

import argparse
import os
import sys

from .config import ConfigError, emit_config, load_config, parse_config
from .presets import PRESETS, _with, get_preset

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _resolve(target):
    if target in PRESETS:
        return get_preset(target), target
    if os.path.isfile(target):
        return load_config(target), os.path.splitext(os.path.basename(target))[0]
    raise ConfigError(f"{target!r} is neither a preset ({', '.join(PRESETS)}) nor a config file")


def _overrides(cfg, seed, scale):
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if scale is not None:
        changes["scale_factor"] = scale
    if not changes:
        return cfg
    # round trip through the text form so overrides get the same range checks as a file
    return parse_config(emit_config(_with(cfg, experiment=changes)))


def _cmd_run(args):
    from .experiments import run_experiment

    cfg, name = _resolve(args.target)
    cfg = _overrides(cfg, args.seed, args.scale)
    out = args.out or os.path.join(cfg.experiment.output_dir, name)
    summary = run_experiment(cfg, out, name)
    for v in summary["verdicts"]:
        print(f"{'PASS' if v['passed'] else 'FAIL'} {v['name']}: {v['value']} ({v['tolerance']})")
    print(f"wrote {len(summary['files']) + 1} files to {out} (scale_factor {summary['scale_factor']:g})")
    return EXIT_OK if summary["passed"] else EXIT_FAIL


def _cmd_show(args):
    cfg, _ = _resolve(args.target)
    sys.stdout.write(emit_config(cfg))
    return EXIT_OK


def _cmd_selftest(args):
    from .acceptance import run_all

    numbers = None
    if args.criteria:
        try:
            numbers = {int(x) for x in args.criteria.split(",")}
        except ValueError:
            raise ConfigError(f"--criteria expects comma-separated integers, got {args.criteria!r}") from None
    results = run_all(numbers)
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria passed")
    return EXIT_OK if n_pass == len(results) else EXIT_FAIL


def build_parser():
    p = argparse.ArgumentParser(prog="noiselock", description="Noise-locking loop simulator.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a preset or a config file")
    run.add_argument("target", help=f"preset name ({', '.join(PRESETS)}) or path to a config file")
    run.add_argument("--seed", type=int, help="override the experiment seed")
    run.add_argument("--out", help="output directory")
    run.add_argument("--scale", type=float, help="override the frequency scale factor")
    run.set_defaults(func=_cmd_run)
    show = sub.add_parser("show", help="print the config text of a preset or file")
    show.add_argument("target")
    show.set_defaults(func=_cmd_show)
    st = sub.add_parser("selftest", help="run the acceptance suite")
    st.add_argument("--criteria", help="comma-separated subset, e.g. 1,12")
    st.set_defaults(func=_cmd_selftest)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
