"""Command-line front end.

Subcommands: scale, simulate, recover, validate, fit-logistic, pu-encode,
select-pairs, linkfit, stats. Every run writes a ``run.json`` echoing the
resolved options and the library version next to its outputs. All outputs
are plain CSV or JSON and are byte-identical across runs with the same
inputs and seed.

Exit codes: 0 success, 1 usage error, 2 data integrity error, 3 numerical
failure (non-convergence under --strict).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .design import PairBatch, select_cross_dataset_pairs, select_gmad_pairs
from .errors import (
    ConvergenceError,
    DegenerateDataError,
    DesignError,
    DisconnectedGraphError,
    IntegrityError,
    JodscaleError,
    ParseError,
    UndefinedCorrelationError,
    UndefinedPairError,
)
from .linkfit import fit_report
from .metricmap import correlation_metrics, eval_logistic, fit_logistic, pairwise_accuracy
from .model import ComparisonGraph, ConditionId, DatasetCollection, load_collection
from .photometry import (
    DisplayModel,
    PuLut,
    build_pu_lut,
    display_forward,
    log_encode,
    pu_encode,
    tabulated_threshold,
)
from .scaling import UnifiedScale, bootstrap_ci, scale
from .simulate import RecoveryConfig, recovery_experiment, synthesize_collection

_ACCURACY_THRESHOLDS = (0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_run_config(out_dir: Path, args: argparse.Namespace) -> None:
    options = {k: v for k, v in vars(args).items() if k not in ("func", "subcommand")}
    _write_json(
        out_dir / "run.json",
        {"version": __version__, "subcommand": args.subcommand, "options": options},
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _open_input(path):
    try:
        return open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc}") from exc


def _read_keyed_csv(path, value_column: str) -> dict[str, float]:
    out: dict[str, float] = {}
    with _open_input(path) as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or "condition" not in reader.fieldnames \
                or value_column not in reader.fieldnames:
            raise ParseError(f"{path} needs columns 'condition' and '{value_column}'")
        for row in reader:
            key = row["condition"].strip()
            if key in out:
                raise IntegrityError(f"duplicate condition {key!r} in {path}")
            try:
                out[key] = float(row[value_column])
            except ValueError as exc:
                raise ParseError(f"non-numeric {value_column} {row[value_column]!r}") from exc
    return out


def _read_values_csv(path) -> np.ndarray:
    values = []
    with _open_input(path) as handle:
        reader = csv.reader(handle)
        for row in reader:
            if not row:
                continue
            cell = row[0].strip()
            if cell == "value" or cell.startswith("#"):
                continue
            try:
                values.append(float(cell))
            except ValueError as exc:
                raise ParseError(f"non-numeric value {cell!r} in {path}") from exc
    return np.asarray(values, dtype=float)


def _joined_scores(scores_path, scale_path) -> tuple[list[str], np.ndarray, np.ndarray]:
    scores = _read_keyed_csv(scores_path, "score")
    jods = _read_keyed_csv(scale_path, "jod")
    keys = [key for key in scores if key in jods]
    if not keys:
        raise IntegrityError("the score and scale files share no conditions")
    return (
        keys,
        np.array([scores[k] for k in keys]),
        np.array([jods[k] for k in keys]),
    )


def _write_scale_outputs(out: Path, result: UnifiedScale, intervals) -> None:
    with open(out / "scale.csv", "w", newline="") as handle:
        handle.write("condition,jod,ci_low,ci_high\n")
        for idx, cond in enumerate(result.conditions):
            if intervals is None:
                handle.write(f"{cond.key},{result.q[idx]:.6f},,\n")
            else:
                low, high = intervals[idx]
                handle.write(f"{cond.key},{result.q[idx]:.6f},{low:.6f},{high:.6f}\n")
    _write_json(
        out / "links.json",
        {name: {"a": link.a, "b": link.b, "c": link.c}
         for name, link in sorted(result.links.items())},
    )
    _write_json(
        out / "report.json",
        {
            "log_posterior": result.log_posterior,
            "iterations": result.iterations,
            "converged": result.converged,
        },
    )


def _cmd_scale(args) -> int:
    out = _out_dir(args)
    collection = load_collection(args.manifest)
    result = scale(
        collection,
        prior_enabled=args.prior,
        tol=args.tol,
        max_iter=args.max_iter,
        per_component=args.per_component,
    )
    if args.strict and not result.converged:
        raise ConvergenceError(
            f"optimizer did not reach tolerance {args.tol} within {args.max_iter} iterations"
        )
    intervals = None
    if args.bootstrap > 0:
        intervals = bootstrap_ci(
            collection,
            args.bootstrap,
            seed=args.seed,
            alpha=args.alpha,
            threads=args.threads,
            prior_enabled=args.prior,
            tol=args.tol,
            max_iter=args.max_iter,
        )
    _write_scale_outputs(out, result, intervals)
    _write_run_config(out, args)
    print(f"scaled {collection.n} conditions; log posterior {result.log_posterior:.4f}")
    return 0


def _write_collection_files(collection: DatasetCollection, out: Path) -> None:
    datasets = []
    for name in sorted(collection.manifest):
        meta = collection.manifest[name]
        cond_file = f"conditions_{name}.csv"
        with open(out / cond_file, "w", newline="") as handle:
            handle.write("condition\n")
            for cond in collection.conditions:
                if cond.dataset == name:
                    handle.write(cond.key + "\n")
        entry = {
            "name": name,
            "experiment": meta.experiment,
            "conditions": cond_file,
            "dynamic_range": meta.dynamic_range,
        }
        if meta.display is not None:
            entry["display"] = {
                "L_peak": meta.display.l_peak,
                "L_black": meta.display.l_black,
                "gamma": meta.display.gamma,
            }
        if name in collection.ratings:
            rating_file = f"ratings_{name}.csv"
            entry["ratings"] = rating_file
            with open(out / rating_file, "w", newline="") as handle:
                handle.write("condition,observer,score\n")
                for record in collection.ratings[name].records:
                    cond = collection.conditions[record.condition]
                    handle.write(f"{cond.key},{record.observer},{record.score!r}\n")
        datasets.append(entry)
    with open(out / "comparisons.csv", "w", newline="") as handle:
        handle.write("cond_a,cond_b,count_a_over_b\n")
        for (i, j) in sorted(collection.graph.entries):
            count = collection.graph.entries[(i, j)]
            handle.write(
                f"{collection.conditions[i].key},{collection.conditions[j].key},{count}\n"
            )
    _write_json(out / "manifest.json", {"datasets": datasets, "comparisons": "comparisons.csv"})


def _recovery_config(args) -> RecoveryConfig:
    return RecoveryConfig(
        n_conditions=args.conditions,
        n_datasets=args.datasets,
        trials_per_pair=args.trials,
        observers=args.observers,
        graph_density=args.density,
        seed=args.seed,
    )


def _cmd_simulate(args) -> int:
    out = _out_dir(args)
    _, collection = synthesize_collection(_recovery_config(args))
    _write_collection_files(collection, out)
    _write_run_config(out, args)
    print(f"simulated {collection.n} conditions into {out}")
    return 0


def _cmd_recover(args) -> int:
    out = _out_dir(args)
    report = recovery_experiment(_recovery_config(args))
    runtime = report.pop("runtime_seconds")
    _write_json(out / "report.json", report)
    _write_run_config(out, args)
    print(json.dumps({**report, "runtime_seconds": runtime}, sort_keys=True, indent=2))
    print(f"recovery finished in {runtime:.2f} s", file=sys.stderr)
    return 0


def _accuracy_curve(mapped: dict[str, float], manifest_path) -> list[list[float]]:
    collection = load_collection(manifest_path)
    scores = np.zeros(collection.n)
    known = np.zeros(collection.n, dtype=bool)
    for key, value in mapped.items():
        try:
            idx = collection.index_of(key)
        except IntegrityError:
            continue
        scores[idx] = value
        known[idx] = True
    entries = {
        (i, j): c
        for (i, j), c in collection.graph.entries.items()
        if known[i] and known[j]
    }
    sub = ComparisonGraph(collection.n, entries)
    curve = []
    for threshold in _ACCURACY_THRESHOLDS:
        try:
            result = pairwise_accuracy(scores, sub, threshold)
        except (DesignError, IntegrityError):
            continue
        curve.append([threshold, result.accuracy])
    return curve


def _cmd_validate(args) -> int:
    out = _out_dir(args)
    keys, scores, jods = _joined_scores(args.scores, args.scale)
    fit = fit_logistic(scores, jods)
    mapped = eval_logistic(fit.params, scores)
    stats = correlation_metrics(mapped, jods)
    payload = {
        "srocc": stats.srocc,
        "plcc": stats.plcc,
        "rmse": stats.rmse,
        "n_conditions": len(keys),
        "logistic_converged": fit.converged,
        "accuracy_curve": [],
    }
    if args.manifest:
        payload["accuracy_curve"] = _accuracy_curve(
            dict(zip(keys, mapped.tolist())), args.manifest
        )
    _write_json(out / "validation.json", payload)
    _write_run_config(out, args)
    print(json.dumps(payload, sort_keys=True, indent=2))
    return 0


def _cmd_fit_logistic(args) -> int:
    out = _out_dir(args)
    keys, scores, jods = _joined_scores(args.scores, args.scale)
    fit = fit_logistic(scores, jods)
    mapped = eval_logistic(fit.params, scores)
    _write_json(
        out / "logistic.json",
        {
            "params": {
                "a1": fit.params.a1,
                "a2": fit.params.a2,
                "a3": fit.params.a3,
                "a4": fit.params.a4,
                "a5": fit.params.a5,
            },
            "rmse": fit.rmse,
            "converged": fit.converged,
        },
    )
    with open(out / "mapped.csv", "w", newline="") as handle:
        handle.write("condition,score,jod\n")
        for key, score, value in zip(keys, scores, mapped):
            handle.write(f"{key},{float(score)!r},{value:.6f}\n")
    _write_run_config(out, args)
    print(f"fit rmse {fit.rmse:.6f} over {len(keys)} conditions")
    return 0


def _cmd_pu_encode(args) -> int:
    out = _out_dir(args)
    values = _read_values_csv(args.input)
    if args.lut:
        lut = PuLut.from_csv(args.lut)
    else:
        threshold = tabulated_threshold(args.threshold) if args.threshold else None
        lut = build_pu_lut(threshold, args.l_min, args.l_max, args.knots)
    if args.l_peak is not None:
        display = DisplayModel(args.l_peak, args.l_black, args.gamma)
        values = display_forward(values, display, strict=args.strict)
    if args.log_encode:
        encoded = log_encode(values)
    else:
        encoded = pu_encode(values, lut, strict=args.strict)
    with open(out / "encoded.csv", "w", newline="") as handle:
        handle.write("value\n")
        for item in encoded:
            handle.write(f"{item:.6f}\n")
    if args.save_lut:
        lut.to_csv(out / args.save_lut)
    _write_run_config(out, args)
    print(f"encoded {encoded.size} values")
    return 0


def _scale_from_csv(path) -> UnifiedScale:
    jods = _read_keyed_csv(path, "jod")
    conditions = tuple(ConditionId.parse(key) for key in jods)
    q = np.array([jods[c.key] for c in conditions])
    return UnifiedScale(
        q=q, links={}, log_posterior=0.0, converged=True, iterations=0,
        conditions=conditions,
    )


def _write_pair_batch(out: Path, batch: PairBatch, conditions, mode: str, window: float):
    with open(out / "pairs.csv", "w", newline="") as handle:
        handle.write("cond_a,cond_b,count_a_over_b\n")
        for i, j in batch.pairs:
            handle.write(f"{conditions[i].key},{conditions[j].key},0\n")
    _write_json(
        out / "selection.json",
        {
            "mode": mode,
            "window": window,
            "pairs": [
                {
                    "cond_a": conditions[i].key,
                    "cond_b": conditions[j].key,
                    "rationale": rationale,
                }
                for (i, j), rationale in zip(batch.pairs, batch.rationale)
            ],
        },
    )


def _cmd_select_pairs(args) -> int:
    out = _out_dir(args)
    if args.mode == "cross-dataset":
        if not args.scale:
            raise UsageError("--scale is required for cross-dataset selection")
        scale_result = _scale_from_csv(args.scale)
        batch = select_cross_dataset_pairs(scale_result, args.k, args.window, args.bins)
        conditions = scale_result.conditions
    else:
        if not (args.metric_test and args.metric_bench):
            raise UsageError("--metric-test and --metric-bench are required for gmad")
        test = _read_keyed_csv(args.metric_test, "score")
        bench = _read_keyed_csv(args.metric_bench, "score")
        keys = sorted(set(test) & set(bench))
        if not keys:
            raise IntegrityError("the metric files share no conditions")
        conditions = tuple(ConditionId.parse(key) for key in keys)
        batch = select_gmad_pairs(
            np.array([test[k] for k in keys]),
            np.array([bench[k] for k in keys]),
            args.k,
            args.window,
            allow_reuse=args.allow_reuse,
        )
    _write_pair_batch(out, batch, conditions, args.mode, args.window)
    _write_run_config(out, args)
    print(f"selected {len(batch)} pairs")
    return 0


def _cmd_linkfit(args) -> int:
    out = _out_dir(args)
    collection = load_collection(args.manifest)
    jods = _read_keyed_csv(args.scale, "jod")
    payload = {}
    rows = []
    for name in sorted(collection.ratings):
        table = collection.ratings[name]
        by_condition: dict[int, list[float]] = {}
        for record in table.records:
            by_condition.setdefault(record.condition, []).append(record.score)
        keys, mos, jod = [], [], []
        for idx in sorted(by_condition):
            key = collection.conditions[idx].key
            if key not in jods:
                continue
            keys.append(key)
            mos.append(float(np.mean(by_condition[idx])))
            jod.append(jods[key])
        if len(keys) < 5:
            raise IntegrityError(f"dataset {name!r} has too few rated conditions to fit")
        fits = fit_report(np.array(mos), np.array(jod))
        payload[name] = [
            {
                "order": fit.order,
                "r2": fit.r2,
                "r2_adj": fit.r2_adj,
                "monotone": fit.monotone_on_range,
            }
            for fit in fits
        ]
        for fit in fits:
            rows.append(
                f"{name:>12s}  order {fit.order}  r2 {fit.r2:.4f}  "
                f"r2_adj {fit.r2_adj:.4f}  monotone {fit.monotone_on_range}"
            )
    _write_json(out / "linkfit.json", payload)
    _write_run_config(out, args)
    print("\n".join(rows))
    return 0


def _cmd_stats(args) -> int:
    out = _out_dir(args)
    values = _read_values_csv(args.input)
    positive = values[values > 0]
    excluded = int(values.size - positive.size)
    if positive.size == 0:
        raise DegenerateDataError("no positive luminance values to summarize")
    logs = np.log10(positive)
    edges = np.linspace(logs.min(), logs.max(), args.bins + 1)
    counts, _ = np.histogram(logs, bins=edges)
    payload = {
        "n": int(values.size),
        "excluded_nonpositive": excluded,
        "min": float(positive.min()),
        "max": float(positive.max()),
        "mean_log10": float(logs.mean()),
        "percentiles": {
            str(p): float(np.percentile(positive, p)) for p in (1, 25, 50, 75, 99)
        },
        "histogram": {
            "log10_edges": [float(e) for e in edges],
            "counts": [int(c) for c in counts],
        },
    }
    _write_json(out / "stats.json", payload)
    _write_run_config(out, args)
    print(json.dumps(payload, sort_keys=True, indent=2))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="jodscale", description=__doc__)
    parser.add_argument("--version", action="version", version=f"jodscale {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def add_common(p):
        p.add_argument("--out", default=".", help="output directory (default: cwd)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--strict", action="store_true",
                       help="escalate clamping warnings and non-convergence to errors")

    p = sub.add_parser("scale", help="scale a collection onto the unified JOD scale")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--prior", action=argparse.BooleanOptionalAction, default=True,
                   help="Gaussian score prior (default on; disable for oracle checks)")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--per-component", action="store_true")
    p.add_argument("--bootstrap", type=int, default=0, metavar="N",
                   help="bootstrap replicates for confidence intervals")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=_cmd_scale)

    p = sub.add_parser("simulate", help="emit a synthetic collection as manifest + CSVs")
    add_common(p)
    p.add_argument("--conditions", type=int, default=50)
    p.add_argument("--datasets", type=int, default=3)
    p.add_argument("--trials", type=int, default=30)
    p.add_argument("--observers", type=int, default=15)
    p.add_argument("--density", type=float, default=0.5)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("recover", help="run a full synthetic recovery experiment")
    add_common(p)
    p.add_argument("--conditions", type=int, default=50)
    p.add_argument("--datasets", type=int, default=3)
    p.add_argument("--trials", type=int, default=30)
    p.add_argument("--observers", type=int, default=15)
    p.add_argument("--density", type=float, default=0.5)
    p.set_defaults(func=_cmd_recover)

    p = sub.add_parser("validate", help="validate metric scores against a scale")
    add_common(p)
    p.add_argument("--scores", required=True, help="CSV with condition,score")
    p.add_argument("--scale", required=True, help="CSV with condition,jod")
    p.add_argument("--manifest", help="manifest for the pairwise accuracy curve")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("fit-logistic", help="fit the metric-to-JOD logistic mapping")
    add_common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--scale", required=True)
    p.set_defaults(func=_cmd_fit_logistic)

    p = sub.add_parser("pu-encode", help="encode luminance (or display values) to PU units")
    add_common(p)
    p.add_argument("--input", required=True, help="single-column CSV of values")
    p.add_argument("--l-peak", type=float, default=None,
                   help="treat input as normalized display values with this peak")
    p.add_argument("--l-black", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--lut", help="load the PU look-up table from CSV")
    p.add_argument("--save-lut", help="write the look-up table next to the output")
    p.add_argument("--threshold", help="tabulated detection threshold CSV")
    p.add_argument("--l-min", type=float, default=1e-3)
    p.add_argument("--l-max", type=float, default=1e6)
    p.add_argument("--knots", type=int, default=4096)
    p.add_argument("--log-encode", action="store_true",
                   help="use the logarithmic alternative instead of PU")
    p.set_defaults(func=_cmd_pu_encode)

    p = sub.add_parser("select-pairs", help="select comparison pairs for an experiment")
    add_common(p)
    p.add_argument("--mode", choices=("cross-dataset", "gmad"), required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--window", type=float, default=1.0)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--scale", help="scale CSV (cross-dataset mode)")
    p.add_argument("--metric-test", help="condition,score CSV (gmad mode)")
    p.add_argument("--metric-bench", help="condition,score CSV (gmad mode)")
    p.add_argument("--allow-reuse", action="store_true",
                   help="allow a condition to appear in several gmad pairs")
    p.set_defaults(func=_cmd_select_pairs)

    p = sub.add_parser("linkfit", help="polynomial MOS-to-JOD fits per rating dataset")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scale", required=True)
    p.set_defaults(func=_cmd_linkfit)

    p = sub.add_parser("stats", help="log-luminance histogram summary of a value file")
    add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--bins", type=int, default=64)
    p.set_defaults(func=_cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConvergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (
        ParseError,
        IntegrityError,
        UndefinedPairError,
        DisconnectedGraphError,
        DegenerateDataError,
        DesignError,
        UndefinedCorrelationError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except JodscaleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
