"""Command-line front end: ingest -> discover -> metrics -> partition ->
correlate -> train -> report, plus the synthetic-scenario generator.

Options can come from a YAML config file (--config) with command-line flags
winning over file values.  Exit codes: 0 ok, 1 runtime failure,
2 configuration/validation failure.  Errors print one machine-parsable line:
``E_CONFIG|E_INPUT|E_RUNTIME: message``.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields

import yaml

from .errors import ConfigurationError, InputError, SchemaError
from .learn import FAMILIES
from .pipeline import STAGES, PipelineConfig, run

_CONFIG_FIELDS = {f.name for f in fields(PipelineConfig)}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config file; flags override file values")
    parser.add_argument("--out", dest="out_dir", help="output directory (default: out)")
    parser.add_argument("--seed", type=int, help="master seed for stochastic stages")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="idemine",
        description="Mine development-process models and metrics from IDE event logs.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate a synthetic two-practice scenario")
    _add_common(p)

    p = sub.add_parser("ingest", help="parse, verify and deduplicate raw events")
    _add_common(p)
    p.add_argument("--input", help="raw event file (JSON-lines or CSV)")
    p.add_argument(
        "--format", dest="event_format", choices=["json-lines", "csv"],
        help="input format (default: json-lines)",
    )
    p.add_argument(
        "--verify-hashes", dest="verify_hashes", action="store_true", default=None,
        help="recompute event digests and reject mismatches",
    )

    p = sub.add_parser("discover", help="discover the process model and export DOT")
    _add_common(p)
    p.add_argument("--input", help="clean event file (default: <out>/clean_events.jsonl)")
    p.add_argument("--level", type=int, choices=[0, 1, 2], help="hierarchy level to flatten")
    p.add_argument("--filter-activities", dest="filter_activities", type=float,
                   help="fraction of most frequent activities to keep, in (0,1]")
    p.add_argument("--filter-paths", dest="filter_paths", type=float,
                   help="fraction of most frequent arcs to keep, in (0,1]")
    p.add_argument("--overlay", choices=["absolute-frequency", "none"],
                   help="DOT frequency overlay (default: absolute-frequency)")

    p = sub.add_parser("metrics", help="compute per-team features and deltas")
    _add_common(p)
    p.add_argument("--input", help="clean event file (default: <out>/clean_events.jsonl)")
    p.add_argument("--products", help="product snapshot CSV (t0/t1 rows per team)")
    p.add_argument("--labels", help="CSV with team,practice columns (ground_truth.csv works)")
    p.add_argument("--catalog", help="command catalog file (default: packaged catalog)")
    p.add_argument("--features", choices=["standard", "extended"],
                   help="feature set to assemble")

    p = sub.add_parser("partition", help="assign PCC_LEVEL and VG_LEVEL bins")
    _add_common(p)
    p.add_argument("--input", help="feature table (default: <out>/features.csv)")
    p.add_argument("--k", type=int, help="number of VG levels (default: 3)")
    p.add_argument("--pcc-k", dest="pcc_k", type=int, help="number of PCC levels (default: 2)")

    p = sub.add_parser("correlate", help="Spearman correlation matrices per cohort")
    _add_common(p)
    p.add_argument("--input", help="feature table (default: partitioned or plain features)")
    p.add_argument("--alpha", type=float, help="significance level (default: 0.05)")

    p = sub.add_parser("train", help="train and evaluate a classifier")
    _add_common(p)
    p.add_argument("--input", help="feature table (default: partitioned or plain features)")
    p.add_argument("--family", choices=list(FAMILIES), help="classifier family")
    p.add_argument("--features", choices=["standard", "extended"], help="feature set")
    p.add_argument("--target", choices=["practice", "vg_level"], help="label to predict")
    p.add_argument("--folds", type=int, help="cross-validation folds (default: 10)")
    p.add_argument("--grid", action="store_true", default=None,
                   help="search the documented hyperparameter grid")
    p.add_argument("--select", choices=["forward", "backward"],
                   help="greedy stepwise feature selection")
    p.add_argument("--noise-features", dest="noise_features", type=int,
                   help="inject N seeded noise columns before training")

    p = sub.add_parser("report", help="aggregate stage outputs and render figures")
    _add_common(p)

    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    values: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as handle:
                loaded = yaml.safe_load(handle) or {}
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"invalid config file: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigurationError("config file must hold a mapping")
        unknown = set(loaded) - _CONFIG_FIELDS
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(loaded)
    for name in _CONFIG_FIELDS:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            values[name] = flag_value
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args)
        result = run(args.subcommand, config)
    except (ConfigurationError, SchemaError) as exc:
        print(f"E_CONFIG: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"E_INPUT: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"E_RUNTIME: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"stage": args.subcommand, "result": result}, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
