"""Command-line interface: simulation runs, policy learning, evaluation, balance.

Every command resolves its configuration, writes a manifest.json (resolved
parameters plus sha256 of each input file) before any computation, then
writes its result files and an outputs.sha256 covering the deterministic
primary outputs. Wall-clock measurements go to a separate timings.csv so
rerunning a command with identical inputs reproduces the primary outputs
byte for byte.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .dataset import CsvSchema, load_csv, normalized_differences
from .evaluation import (
    aipw_value_estimate,
    arm_proportion_propensity,
    cross_validate,
    fit_linear_probability,
)
from .policytree import LearnConfig, TreePolicy, constant_policy, evaluate_policy, impute_scores, learn_policy
from .simulation import (
    METHODS,
    SimulationSpec,
    learn_with_method,
    run_experiment,
    summarize_results,
    write_results_csv,
    write_summary_csv,
    write_timings_csv,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
OUT_DIR_ENV = "MBPOLICY_OUT"

BUDGETS = {
    # (scenarios, main effects, contrasts, train sizes, methods, replications)
    "smoke": ((1,), ("linear",), ("tree",), (200,), ("mb-m5", "mb-lasso-m5"), 3),
    "desk": (
        (1, 2, 3, 4, 5),
        ("linear", "nonlinear"),
        ("tree", "nontree"),
        (500,),
        ("mb-m5", "mb-lasso-m5", "aipw-tree"),
        20,
    ),
    "full": (
        (1, 2, 3, 4, 5),
        ("linear", "nonlinear"),
        ("tree", "nontree"),
        (200, 500, 1000),
        tuple(sorted(METHODS)),
        200,
    ),
}


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out or os.environ.get(OUT_DIR_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(
    out: Path, command: str, parameters: dict, inputs: dict[str, Path]
) -> None:
    manifest = {
        "command": command,
        "parameters": parameters,
        "inputs": {
            name: {"path": str(path), "sha256": _sha256(path)}
            for name, path in inputs.items()
        },
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _write_checksums(out: Path, names: list[str]) -> None:
    lines = [f"{_sha256(out / name)}  {name}" for name in names]
    (out / "outputs.sha256").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _split_csv_flag(flag_value: str) -> list[str]:
    return [item.strip() for item in flag_value.split(",") if item.strip()]


def _load_dataset(args: argparse.Namespace):
    path = Path(args.data)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise ValueError(f"{path}: empty file, expected a header row")
    if args.covariates:
        covariates = _split_csv_flag(args.covariates)
    else:
        covariates = [c for c in header if c not in (args.treatment_col, args.outcome_col)]
    schema = CsvSchema(
        treatment=args.treatment_col,
        outcome=args.outcome_col,
        covariates=tuple(covariates),
    )
    data = load_csv(path, schema)
    if args.exclude:
        data = data.excluding_from_policy(_split_csv_flag(args.exclude))
    return data, path


def _resolve_policy(spec: str, feature_names: tuple[str, ...]) -> TreePolicy:
    if spec == "treat-all":
        return constant_policy(1, feature_names)
    if spec == "treat-none":
        return constant_policy(0, feature_names)
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(
            f"policy {spec!r} is not 'treat-all', 'treat-none', or an existing file"
        )
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return TreePolicy.from_json(text)
    return TreePolicy.from_text(text)


def cmd_simulate(args: argparse.Namespace) -> int:
    methods = _split_csv_flag(args.method)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        print(
            f"unknown method(s) {unknown}; choose from {sorted(METHODS)}",
            file=sys.stderr,
        )
        return EXIT_USAGE
    out = _out_dir(args)
    settings = [
        SimulationSpec(args.scenario, args.main, args.contrast, n=args.n, seed=0)
    ]
    _write_manifest(
        out,
        "simulate",
        {
            "scenario": args.scenario,
            "main": args.main,
            "contrast": args.contrast,
            "n": args.n,
            "methods": methods,
            "reps": args.reps,
            "seed": args.seed,
            "test_n": args.test_n,
            "depth": args.depth,
            "threads": args.threads,
        },
        inputs={},
    )
    rows = run_experiment(
        settings,
        methods,
        args.reps,
        seed=args.seed,
        test_n=args.test_n,
        depth=args.depth,
        threads=args.threads,
    )
    write_results_csv(rows, out / "results.csv")
    write_summary_csv(rows, out / "summary.csv")
    write_timings_csv(rows, out / "timings.csv")
    _write_checksums(out, ["results.csv", "summary.csv"])
    for summary in summarize_results(rows):
        print(
            f"{summary['method']}: mean value {summary['mean_value']:.4f} "
            f"(sd {summary['sd_value']:.4f}), mean regret {summary['mean_regret']:.4f}, "
            f"failed {summary['failed']}/{summary['replications']}"
        )
    if all(row.error for row in rows):
        print("all replicates failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_replicate(args: argparse.Namespace) -> int:
    scenarios, mains, contrasts, sizes, methods, reps = BUDGETS[args.budget]
    out = _out_dir(args)
    _write_manifest(
        out,
        "replicate",
        {
            "budget": args.budget,
            "seed": args.seed,
            "test_n": args.test_n,
            "threads": args.threads,
            "scenarios": list(scenarios),
            "mains": list(mains),
            "contrasts": list(contrasts),
            "sizes": list(sizes),
            "methods": list(methods),
            "reps": reps,
        },
        inputs={},
    )
    settings = [
        SimulationSpec(s, main, contrast, n=n, seed=0)
        for s in scenarios
        for main in mains
        for contrast in contrasts
        for n in sizes
    ]
    rows = run_experiment(
        settings,
        list(methods),
        reps,
        seed=args.seed,
        test_n=args.test_n,
        threads=args.threads,
    )
    write_results_csv(rows, out / "results.csv")
    write_summary_csv(rows, out / "summary.csv")
    write_timings_csv(rows, out / "timings.csv")
    _write_checksums(out, ["results.csv", "summary.csv"])
    n_failed = sum(1 for row in rows if row.error)
    print(f"{len(rows)} replicate rows written, {n_failed} failed")
    if rows and n_failed == len(rows):
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_learn(args: argparse.Namespace) -> int:
    data, path = _load_dataset(args)
    out = _out_dir(args)
    config = LearnConfig(
        m=args.m,
        correction=args.correction,
        depth=args.depth,
        lasso_folds=args.lasso_folds,
        seed=args.seed,
    )
    _write_manifest(
        out,
        "learn",
        {
            "m": args.m,
            "correction": args.correction,
            "depth": args.depth,
            "lasso_folds": args.lasso_folds,
            "seed": args.seed,
            "treatment_col": args.treatment_col,
            "outcome_col": args.outcome_col,
            "covariates": list(data.feature_names),
            "excluded_from_policy": sorted(
                set(data.feature_names)
                - {data.feature_names[j] for j in data.eligible_feature_indices()}
            ),
        },
        inputs={"data": path},
    )
    imputed = impute_scores(data, config)
    tree = learn_policy(data, config, imputed=imputed)
    (out / "policy.txt").write_text(tree.to_text(), encoding="utf-8")
    (out / "policy.json").write_text(tree.to_json() + "\n", encoding="utf-8")
    with open(out / "gamma.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit", "w", "y", "y0_imputed", "y1_imputed", "gamma"])
        for i in range(data.n):
            writer.writerow(
                [
                    i,
                    int(data.w[i]),
                    repr(float(data.y[i])),
                    repr(float(imputed.y0[i])),
                    repr(float(imputed.y1[i])),
                    repr(float(imputed.gamma[i])),
                ]
            )
    _write_checksums(out, ["policy.txt", "policy.json", "gamma.csv"])
    print(tree.to_text(), end="")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    data, path = _load_dataset(args)
    out = _out_dir(args)
    e_hat = (
        fit_linear_probability(data)
        if args.propensity == "linear"
        else arm_proportion_propensity(data)
    )
    parameters = {
        "propensity": args.propensity,
        "seed": args.seed,
        "treatment_col": args.treatment_col,
        "outcome_col": args.outcome_col,
        "covariates": list(data.feature_names),
    }
    if args.cv:
        parameters.update(cv=True, method=args.method, folds=args.folds,
                          repeats=args.repeats, depth=args.depth)
        _write_manifest(out, "evaluate", parameters, inputs={"data": path})
        report = cross_validate(
            data,
            lambda train: learn_with_method(train, args.method, args.seed, args.depth),
            folds=args.folds,
            repeats=args.repeats,
            seed=args.seed,
            e_hat=e_hat,
        )
        report.to_csv(out / "cv_values.csv")
        payload = {
            "cv_mean": report.mean,
            "cv_std": report.std,
            "folds": report.folds,
            "repeats": report.repeats,
            "failed_repeats": report.n_failed_repeats,
            "method": args.method,
        }
        (out / "evaluation.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        _write_checksums(out, ["evaluation.json", "cv_values.csv"])
        print(f"cross-validated value: mean {report.mean:.1f} (sd {report.std:.1f})")
        if report.n_failed_repeats:
            print(f"{report.n_failed_repeats} repeats failed", file=sys.stderr)
            if report.n_failed_repeats == report.repeats:
                return EXIT_RUNTIME
        return EXIT_OK
    parameters.update(cv=False, policy=args.policy)
    _write_manifest(out, "evaluate", parameters, inputs={"data": path})
    tree = _resolve_policy(args.policy, data.feature_names)
    assignments = evaluate_policy(tree, data.x)
    value = aipw_value_estimate(data, assignments, e_hat, _quadratic_mu(data))
    payload = {"policy": args.policy, "value": value, "n_treated_by_policy": int(assignments.sum())}
    (out / "evaluation.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_checksums(out, ["evaluation.json"])
    print(f"estimated value under policy {args.policy!r}: {value:.1f}")
    return EXIT_OK


def _quadratic_mu(data):
    from .outcome_models import fit_ols_per_arm, predict_matrix

    model = fit_ols_per_arm(data, "quadratic")

    def mu(points: np.ndarray, arm: int) -> np.ndarray:
        return predict_matrix(model, points, arm)

    return mu


def cmd_balance(args: argparse.Namespace) -> int:
    data, path = _load_dataset(args)
    out = _out_dir(args)
    _write_manifest(
        out,
        "balance",
        {
            "treatment_col": args.treatment_col,
            "outcome_col": args.outcome_col,
            "covariates": list(data.feature_names),
        },
        inputs={"data": path},
    )
    report = normalized_differences(data)
    report.to_csv(out / "balance.csv")
    _write_checksums(out, ["balance.csv"])
    width = max(len(name) for name in report.feature_names)
    print(f"{'covariate':<{width}}  normalized difference")
    for name, diff in zip(report.feature_names, report.normalized_diffs):
        print(f"{name:<{width}}  {diff:+.3f}")
    print(f"(control n={report.n_control}, treated n={report.n_treated})")
    return EXIT_OK


def _add_data_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--data", required=True, help="input CSV file")
    sub.add_argument(
        "--treatment-col", default="treat", help="binary treatment column (default: treat)"
    )
    sub.add_argument(
        "--outcome-col", default="re78", help="outcome column (default: re78)"
    )
    sub.add_argument(
        "--covariates",
        default="",
        help="comma-separated covariate columns (default: all other columns)",
    )
    sub.add_argument(
        "--exclude",
        default="",
        help="comma-separated covariates barred from policy splits "
        "(still used for matching and evaluation)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mbpolicy",
        description="Matching-based policy learning: simulate, learn, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="replicated simulation runs on one setting")
    sim.add_argument("--scenario", type=int, choices=range(1, 6), required=True)
    sim.add_argument("--main", choices=("linear", "nonlinear"), required=True)
    sim.add_argument("--contrast", choices=("tree", "nontree"), required=True)
    sim.add_argument("--n", type=_positive_int, required=True, help="training size")
    sim.add_argument(
        "--method",
        default="mb-lasso-m5",
        help=f"comma-separated methods from {sorted(METHODS)}",
    )
    sim.add_argument("--reps", type=_positive_int, default=50)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--test-n", type=_positive_int, default=20_000)
    sim.add_argument("--depth", type=int, choices=(1, 2), default=2)
    sim.add_argument("--threads", type=_positive_int, default=1)
    sim.add_argument("--out", default="", help=f"output dir (or ${OUT_DIR_ENV})")
    sim.set_defaults(func=cmd_simulate)

    rep = sub.add_parser("replicate", help="bundled simulation grids")
    rep.add_argument("--budget", choices=sorted(BUDGETS), default="desk")
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--test-n", type=_positive_int, default=20_000)
    rep.add_argument("--threads", type=_positive_int, default=1)
    rep.add_argument("--out", default="")
    rep.set_defaults(func=cmd_replicate)

    learn = sub.add_parser("learn", help="learn a tree policy from a CSV")
    _add_data_flags(learn)
    learn.add_argument("--m", type=_positive_int, default=5, help="matches per unit")
    learn.add_argument("--correction", choices=("none", "ols", "lasso"), default="lasso")
    learn.add_argument("--depth", type=int, choices=(1, 2), default=2)
    learn.add_argument("--lasso-folds", type=_positive_int, default=5)
    learn.add_argument("--seed", type=int, default=0)
    learn.add_argument("--out", default="")
    learn.set_defaults(func=cmd_learn)

    ev = sub.add_parser("evaluate", help="value a policy on a CSV, single or CV")
    _add_data_flags(ev)
    ev.add_argument(
        "--policy",
        default="treat-all",
        help="'treat-all', 'treat-none', or a policy file (.json or text form)",
    )
    ev.add_argument("--cv", action="store_true", help="cross-validated learner value")
    ev.add_argument("--method", choices=sorted(METHODS), default="mb-lasso-m5")
    ev.add_argument("--folds", type=_positive_int, default=5)
    ev.add_argument("--repeats", type=_positive_int, default=100)
    ev.add_argument("--depth", type=int, choices=(1, 2), default=2)
    ev.add_argument(
        "--propensity",
        choices=("proportions", "linear"),
        default="proportions",
        help="plug-in propensity: arm proportions (randomized) or linear probability",
    )
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", default="")
    ev.set_defaults(func=cmd_evaluate)

    bal = sub.add_parser("balance", help="normalized covariate differences")
    _add_data_flags(bal)
    bal.add_argument("--out", default="")
    bal.set_defaults(func=cmd_balance)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
