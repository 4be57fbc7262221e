"""Command-line entry point: ``cafe test``, ``cafe diagnose``, ``cafe simulate``.

Exit codes
    test       0 fit not rejected, 2 rejected, 1 error
    diagnose   10 / 11 / 12 for decisions D1 / D2 / D3, 1 error
    simulate   0 report written, 1 error
"""

import argparse
import json
import sys
from pathlib import Path

from .data import Schema, attach_predictions, check_common_support, load_dataset
from .engine import STATISTICS, diagnose, run_test
from .errors import CafeError
from .partition import PartitionRule, build_partition
from .simulation import ScenarioSpec, print_progress, run_scenario

EXIT_OK, EXIT_ERROR, EXIT_REJECT = 0, 1, 2
EXIT_DECISION = {"D1": 10, "D2": 11, "D3": 12}


def _load_toml(path):
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _add_common(p):
    p.add_argument("--config", help="TOML file whose keys provide defaults for these flags")
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--seed", type=int, default=0, help="random seed (unsigned 64-bit)")


def _add_data(p, stats):
    p.add_argument("--rct", help="trial CSV")
    p.add_argument("--predictions", help="prediction CSV for the trial rows (tau_hat, optional e_hat, id)")
    p.add_argument("--treatment-col", default="a", help="treatment column name (default: a)")
    p.add_argument("--outcome-col", default="y", help="outcome column name (default: y)")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    p.add_argument("--id-col", default="id", help="id column used to join predictions (default: id)")
    p.add_argument("--partition-by", default="propensity",
                   help="propensity | cate | covariate:<name> (default: propensity)")
    p.add_argument("--groups", default="auto", help="'auto' (floor(n^(2/7)), min 2) or an integer >= 2")
    p.add_argument("--alpha", type=float, default=0.05, help="significance level (default: 0.05)")
    p.add_argument("--stat", choices=stats, default=stats[0], help=f"test statistic (default: {stats[0]})")
    p.add_argument("--os-ranges", help="CSV covariate,min,max of the observational data; warns on "
                                       "trial values outside these ranges")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cafe", description="Goodness-of-fit tests for observational CATE estimates using trial data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="test CATE predictions against a randomized trial",
                       description="Exit 0 if the fit is not rejected, 2 if rejected, 1 on error.")
    _add_data(p, ("cafe", "cafe-m", "both"))
    _add_common(p)

    p = sub.add_parser("diagnose", help="two-stage attribution of lack of fit",
                       description="Exit 10/11/12 for decisions D1/D2/D3, 1 on error.")
    _add_data(p, STATISTICS)
    p.add_argument("--os-test", help="held-out observational test CSV (needed when stage 1 rejects)")
    p.add_argument("--os-predictions", help="prediction CSV for the observational test rows")
    p.add_argument("--stage2-stat", choices=STATISTICS,
                   help="statistic for stage 2 (default: same as --stat)")
    _add_common(p)

    p = sub.add_parser("simulate", help="run a Monte Carlo scenario",
                       description="Flags override keys from --config.")
    p.add_argument("--setting", help="P1 | P2 | P3")
    p.add_argument("--m", type=int, help="observational sample size")
    p.add_argument("--n", type=int, help="trial sample size")
    p.add_argument("--learner", help="t | s | r")
    p.add_argument("--variant", help="correct | misspecified")
    p.add_argument("--partition-by", help="propensity | cate | covariate:<name>")
    p.add_argument("--groups", help="'auto' or an integer >= 2")
    p.add_argument("--alpha", type=float, help="significance level")
    p.add_argument("--replicates", type=int, help="number of replicates")
    p.add_argument("--test-fraction", type=float,
                   help="hold out this share of the observational sample and run the two-stage procedure")
    p.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    p.add_argument("--csv", help="write per-replicate p-values and decisions here")
    p.add_argument("--qq-csv", help="write Q-Q points here")
    _add_common(p)
    return parser


def _apply_config(args, argv):
    if not args.config:
        return args
    cfg = _load_toml(args.config)
    cfg = cfg.get(args.command, cfg)
    given = {a.split("=", 1)[0] for a in argv if a.startswith("--")}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            continue
        if f"--{dest.replace('_', '-')}" not in given:
            setattr(args, dest, value)
    return args


def _schema(args):
    cov = tuple(c.strip() for c in args.covariates.split(",")) if args.covariates else None
    return Schema(args.treatment_col, args.outcome_col, cov, args.id_col)


def _load_pair(data_path, pred_path, schema, source, what):
    if not data_path or not pred_path:
        raise CafeError(f"{what}: both a data CSV and a prediction CSV are required")
    ds = load_dataset(data_path, schema, source)
    return ds, attach_predictions(ds, pred_path, schema.id_column)


def _write(path, payload):
    if path:
        Path(path).write_text(payload + "\n", encoding="utf-8")


def cmd_test(args):
    schema = _schema(args)
    rct, preds = _load_pair(args.rct, args.predictions, schema, "RCT", "--rct/--predictions")
    if args.os_ranges:
        check_common_support(rct, args.os_ranges)
    rule = PartitionRule.parse(args.partition_by, args.groups)
    part = build_partition(rct, preds, rule)
    stats = ("cafe", "cafe-m") if args.stat == "both" else (args.stat,)
    reports = {s: run_test(rct, preds, part, s, args.alpha) for s in stats}
    if len(reports) == 1:
        payload = next(iter(reports.values())).to_dict()
    else:
        payload = {s: r.to_dict() for s, r in reports.items()}
    _write(args.out, json.dumps(payload, indent=2))
    print("\n\n".join(r.render() for r in reports.values()))
    return EXIT_REJECT if any(r.reject for r in reports.values()) else EXIT_OK


def cmd_diagnose(args):
    schema = _schema(args)
    rct, preds = _load_pair(args.rct, args.predictions, schema, "RCT", "--rct/--predictions")
    if args.os_ranges:
        check_common_support(rct, args.os_ranges)
    os_test = os_preds = None
    if args.os_test or args.os_predictions:
        os_test, os_preds = _load_pair(args.os_test, args.os_predictions, schema, "OS",
                                       "--os-test/--os-predictions")
    rule = PartitionRule.parse(args.partition_by, args.groups)
    decision = diagnose(rct, preds, rule, os_test, os_preds, args.alpha, args.stat, args.stage2_stat)
    _write(args.out, decision.to_json())
    print(decision.render())
    return EXIT_DECISION[decision.label]


_SIM_FLAGS = {"setting": "setting", "m": "m", "n": "n", "learner": "learner", "variant": "spec_variant",
              "partition_by": "partition_by", "groups": "groups", "alpha": "alpha",
              "replicates": "replicates", "test_fraction": "test_fraction"}


def cmd_simulate(args, argv):
    base = {}
    if args.config:
        base = dict(_load_toml(args.config))
        base = dict(base.get("scenario", base))
    for flag, key in _SIM_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            base[key] = v
    if "--seed" in argv or "seed" not in base:
        base["seed"] = args.seed
    groups = base.get("groups")
    if isinstance(groups, str) and groups != "auto":
        base["groups"] = int(groups) if groups.isdigit() else groups
    spec = ScenarioSpec.from_dict(base)
    report = run_scenario(spec, workers=args.workers, progress=print_progress)
    if args.out:
        report.write_json(args.out)
    if args.csv:
        report.write_csv(args.csv)
    if args.qq_csv:
        report.write_qq_csv(args.qq_csv)
    for key in report.p_values:
        print(f"{key:12s} rejection rate {report.rejection_rate(key):.3f}")
    for key in report.decisions:
        freq = report.decision_frequencies(key)
        print(f"{key:16s} " + "  ".join(f"{k} {v:.3f}" for k, v in freq.items()))
    return EXIT_OK


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = [a.split("=", 1)[0] for a in argv if a.startswith("--")]
    try:
        if args.command == "simulate":
            return cmd_simulate(args, flags)
        args = _apply_config(args, argv)
        if args.command == "test":
            return cmd_test(args)
        return cmd_diagnose(args)
    except (CafeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
