"""Command line: ``dirl compile | run | eval | plot``."""

from __future__ import annotations

import argparse
import json
import sys

from .graph import compile_spec, to_dot, to_text
from .harness import (OUT_ROOT_VAR, SPEC_PRESETS, evaluate_run, load_config, plot_curves,
                      resolve_layout, resolve_spec, run_experiment)
from .spec_lang import SpecSyntaxError


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def cmd_compile(args) -> int:
    layout = resolve_layout(args.env)
    try:
        _, phi = resolve_spec(args.spec, layout)
    except SpecSyntaxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    G = compile_spec(phi)
    print(to_dot(G) if args.dot else to_text(G))
    return 0


def cmd_run(args) -> int:
    over = _overrides(args.set)
    if args.out:
        over["out_dir"] = args.out
    cfg = load_config(args.config, over)
    manifest = run_experiment(cfg, log=lambda m: print(m, file=sys.stderr))
    print(json.dumps({"csv": manifest["csv"], "all_completed": manifest["all_completed"],
                      "certificate_holds": manifest["certificate_holds"]}))
    return 0 if manifest["all_completed"] else 1


def cmd_eval(args) -> int:
    res = evaluate_run(args.run_dir, args.rollouts, args.seed, args.horizon)
    print(json.dumps(res))
    return 0


def cmd_plot(args) -> int:
    print(plot_curves(args.csv, args.output, args.title))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dirl", description="Compositional RL from task specifications.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile", help="compile a spec and print its abstract graph")
    c.add_argument("spec", help=f"preset id ({', '.join(SPEC_PRESETS)}), .spec file, or DSL text")
    c.add_argument("--env", default="rooms9", help="layout preset or YAML file (for atom geometry)")
    c.add_argument("--dot", action="store_true", help="emit Graphviz instead of text")
    c.set_defaults(func=cmd_compile)

    r = sub.add_parser("run", help="run a k-sweep and write CSV + manifest",
                       epilog=f"Relative output dirs are placed under ${OUT_ROOT_VAR} if set.")
    r.add_argument("--config", help="YAML experiment config")
    r.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field, e.g. --set k_values=3000,6000")
    r.add_argument("--out", help="output directory")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="re-evaluate a saved run from its checkpoints")
    e.add_argument("run_dir")
    e.add_argument("--rollouts", type=int, default=1000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--horizon", type=int, default=20, help="per-edge episode length m")
    e.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plot", help="plot learning curves from CSV files to SVG")
    pl.add_argument("csv", nargs="+")
    pl.add_argument("-o", "--output", default="curve.svg")
    pl.add_argument("--title", default="")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
