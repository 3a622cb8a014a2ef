"""Command-line entry point: ``train``, ``sweep``, ``report`` and ``oracle``.

Exit codes: 0 success, 1 partial failure, 2 invalid configuration.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields

from .errors import ConfigurationError
from .training import TrainConfig

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2

_EXPERIMENT_KEYS = {"problem", "mode", "balancer", "seeds", "output", "use_preset", "workers"}


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_assignment(text: str):
    if "=" not in text:
        raise ConfigurationError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), _parse_value(value)


def _experiment_dict(args) -> dict:
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read {args.config}: {exc}") from None
    data.setdefault("train", {})
    for key in ("problem", "mode", "balancer", "output", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if args.seeds is not None:
        data["seeds"] = args.seeds
    if args.steps is not None:
        data["train"]["max_steps"] = args.steps
    if args.no_preset:
        data["use_preset"] = False
    train_keys = {f.name for f in fields(TrainConfig)}
    for item in args.set or []:
        key, value = _parse_assignment(item)
        key = key[len("train."):] if key.startswith("train.") else key
        if key in _EXPERIMENT_KEYS:
            data[key] = value
        elif key in train_keys:
            data["train"][key] = value
        else:
            raise ConfigurationError(f"unknown option {key!r}")
    return data


def _add_experiment_flags(p):
    p.add_argument("--config", help="experiment JSON document")
    p.add_argument("--problem", choices=["burgers", "kirchhoff", "helmholtz"])
    p.add_argument("--mode", choices=["forward", "inverse"])
    p.add_argument("--balancer")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--steps", type=int, help="shorthand for --set max_steps=N")
    p.add_argument("--output", help="artifact directory (relative paths go under $PINNBAL_OUTPUT_ROOT)")
    p.add_argument("--workers", type=int)
    p.add_argument("--no-preset", action="store_true", help="do not apply the tuned per-problem settings")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any experiment or training field (JSON values)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pinnbal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one experiment over its seeds")
    _add_experiment_flags(p)

    p = sub.add_parser("sweep", help="grid sweep over training settings")
    _add_experiment_flags(p)
    p.add_argument("--spec", help="sweep JSON document with axes, runs_per_cell and budget")
    p.add_argument("--axis", action="append", metavar="NAME=V1,V2,...",
                   help="axis values; repeat for more axes")
    p.add_argument("--runs", type=int, help="runs per cell (default 3)")
    p.add_argument("--budget", type=int, help="maximum total number of runs")

    p = sub.add_parser("report", help="aggregate experiment directories into tables and plot data")
    p.add_argument("directories", nargs="+")
    p.add_argument("--output", required=True)
    p.add_argument("--grid", type=int, default=128, help="points per axis of the field grids")

    p = sub.add_parser("oracle", help="run the independent verification checks")
    p.add_argument("--quick", action="store_true", help="coarser grid solver for the Burgers cross-check")
    return parser


def _sweep_spec(args):
    from .harness import SweepSpec

    data = {}
    if args.spec:
        try:
            with open(args.spec) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read {args.spec}: {exc}") from None
    axes = dict(data.get("axes", {}))
    for item in args.axis or []:
        name, _ = _parse_assignment(item)
        raw = item.split("=", 1)[1]
        axes[name] = [_parse_value(v) for v in raw.split(",") if v]
    data["axes"] = axes
    if args.runs is not None:
        data["runs_per_cell"] = args.runs
    if args.budget is not None:
        data["budget"] = args.budget
    return SweepSpec.from_dict(data)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "oracle":
            from .oracles import oracle_suite

            results = oracle_suite(quick=args.quick)
            failed = [r for r in results if not r.passed]
            print(f"{len(results) - len(failed)}/{len(results)} checks passed")
            return EXIT_OK if not failed else EXIT_PARTIAL

        from .harness import ExperimentConfig, report, run_experiment, sweep

        if args.command == "report":
            res = report(args.directories, args.output, args.grid)
            for f in res.files:
                print(f)
            for g in res.gaps:
                print(f"gap: {g}", file=sys.stderr)
            return res.exit_code

        cfg = ExperimentConfig.from_dict(_experiment_dict(args))
        if args.command == "train":
            res = run_experiment(cfg)
            agg = res.summary["aggregate"]
            print(f"{cfg.name}: {res.status}; median val_u {agg['val_u']['median']:.3e}, "
                  f"rel_max_err {agg['rel_max_err']['median']:.3e} -> {res.directory}")
            return res.exit_code
        res = sweep(_sweep_spec(args), cfg)
        for cell in res.cells:
            print(cell)
        return res.exit_code
    except (ConfigurationError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
