"""Command-line front-end.

Commands
    estimate      run a model on CSV data per a JSON config
    simulate      run the Monte Carlo harness per a JSON config
    inspect       print weights / MSPE / fold tables from a results file
    export-folds  write the fold assignment a config would generate

Every run is reproducible from (config, seed): the results JSON embeds
the resolved config, never a timestamp, and is byte-identical across
repeat runs. --threads 1 is the serial reference mode; higher thread
counts must and do produce identical output.

Exit codes: 0 ok, 2 config error, 3 data validation error, 4 estimation
degeneracy or solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .data import ModelKind, load_csv
from .errors import ConfigError, DataError, DdmlError, EstimationError
from .folds import assign_folds, export_folds_csv
from .learners import LearnerSpec
from .pipeline import PipelineResult, PipelineSpec, run_pipeline
from .rng import derive_seed
from .simulate import DgpSpec, run_mc

SCHEMA_VERSION = 1

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ESTIMATION = 4


def _load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _require(cfg: dict, key: str, where: str):
    if key not in cfg:
        raise ConfigError(f"{where}: missing required field '{key}'")
    return cfg[key]


def _pipeline_spec_from_config(cfg: dict, seed_override=None) -> PipelineSpec:
    model = ModelKind(_require(cfg, "model", "config"))
    learners = _require(cfg, "learners", "config")

    def role_specs(role):
        return [LearnerSpec.from_config(c) for c in learners.get(role, [])]

    folds_cfg = cfg.get("folds", {})
    est_cfg = cfg.get("estimation", {})
    stack_cfg = cfg.get("stacking", {})
    seed = seed_override if seed_override is not None else folds_cfg.get("seed", cfg.get("seed", 0))
    return PipelineSpec(
        model=model,
        y_learners=role_specs("y"),
        d_learners=role_specs("d"),
        z_learners=role_specs("z"),
        k=folds_cfg.get("k", 5),
        reps=folds_cfg.get("reps", 1),
        seed=seed,
        cluster_folds=folds_cfg.get("by_cluster", False),
        shortstack=stack_cfg.get("shortstack", False),
        stacking=stack_cfg.get("mode", "none"),
        stack_v=stack_cfg.get("v", 5),
        allcombos=est_cfg.get("allcombos", False),
        effect=est_cfg.get("effect", "ate"),
        trim=est_cfg.get("trim", 0.01),
        vce=est_cfg.get("vce", "hc1"),
        constant=est_cfg.get("constant", True),
        aggregate=est_cfg.get("aggregate", "median"),
    )


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)!r}")


def _dump_json(payload: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _estimate_rows(result: PipelineResult) -> list[dict]:
    rows = []
    for est in result.estimates + result.aggregates:
        rows.append({
            "spec": est.spec,
            "rep": est.rep,
            "target": est.target,
            "theta": est.theta,
            "se": est.se,
            "n": est.n_used,
            "vce": est.vce,
            "opt": isinstance(est.rep, int) and result.opt_labels.get(est.rep) == est.spec,
        })
    return rows


def _weights_rows(result: PipelineResult) -> list[dict]:
    rows = []
    for sf in result.crossfit.shortstack:
        rows.append({
            "cef": sf.kind.value, "col": sf.col, "rep": sf.rep + 1,
            "scope": "shortstack",
            "learners": sf.weights.labels,
            "weights": [float(w) for w in sf.weights.weights],
        })
    for si in result.stack_info:
        for sw in si.fold_weights:
            rows.append({
                "cef": si.kind.value, "col": si.col, "rep": si.rep + 1,
                "scope": sw.scope,
                "learners": sw.labels,
                "weights": [float(w) for w in sw.weights],
            })
    return rows


def _result_payload(result: PipelineResult, config: dict) -> dict:
    folds = result.crossfit.folds
    return {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "model": result.spec.model.value,
        "estimates": _estimate_rows(result),
        "opt_labels": {str(rep): label for rep, label in result.opt_labels.items()},
        "mspe": result.mspe_rows(),
        "weights": _weights_rows(result),
        "folds": {
            "k": folds.k,
            "reps": folds.reps,
            "sizes": [[int(s) for s in folds.sizes(r)] for r in range(folds.reps)],
        },
    }


def _print_estimates(result: PipelineResult) -> None:
    print("estimation results:")
    header = f"{'spec':<40} {'rep':>4} {'target':<10} {'theta':>12} {'se':>12}"
    print(header)
    for est in result.estimates:
        mark = "*" if result.opt_labels.get(est.rep) == est.spec else " "
        print(f"{mark}{est.spec:<39} {est.rep:>4} {est.target:<10} "
              f"{est.theta:>12.6f} {est.se:>12.6f}")
    for est in result.aggregates:
        print(f" {est.spec:<39} {est.rep:>4} {est.target:<10} "
              f"{est.theta:>12.6f} {est.se:>12.6f}")
    print("* = minimum-MSPE specification for that repetition")


def _export_cef_csv(result: PipelineResult, path: str) -> None:
    """Cross-fitted prediction columns, fold ids, and short-stack columns."""
    import csv

    folds = result.crossfit.folds
    cols: list[tuple[str, np.ndarray]] = []
    for r in range(folds.reps):
        cols.append((f"fold_{r + 1}", folds.assignment[:, r]))
    for fit in result.crossfit.fits:
        name = f"{fit.kind.value}_{fit.label}_{fit.rep + 1}"
        if fit.col:
            name = f"{fit.kind.value}{fit.col + 1}_{fit.label}_{fit.rep + 1}"
        cols.append((name, fit.oos))
    for sf in result.crossfit.shortstack:
        cols.append((f"{sf.kind.value}_shortstack_{sf.rep + 1}", sf.preds))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([name for name, _ in cols])
        n = len(cols[0][1])
        for i in range(n):
            writer.writerow([
                repr(float(arr[i])) if arr.dtype.kind == "f" else int(arr[i])
                for _, arr in cols
            ])


def cmd_estimate(args) -> int:
    config = _load_config(args.config)
    spec = _pipeline_spec_from_config(config, seed_override=args.seed)
    data_cfg = _require(config, "data", "config")
    data = load_csv(_require(data_cfg, "path", "config.data"),
                    _require(data_cfg, "roles", "config.data"), model=spec.model)
    result = run_pipeline(data, spec, threads=args.threads)
    _print_estimates(result)

    resolved = dict(config)
    if args.seed is not None:
        resolved["seed"] = args.seed
    out_path = args.out or config.get("output", {}).get("json", "ddml_results.json")
    _dump_json(_result_payload(result, resolved), out_path)
    print(f"results written to {out_path}")
    cef_path = config.get("output", {}).get("cef_csv")
    if cef_path:
        _export_cef_csv(result, cef_path)
        print(f"cross-fitted columns written to {cef_path}")
    return 0


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    dgp_cfg = _require(config, "dgp", "config")
    if isinstance(dgp_cfg, dict):
        dgp_id = _require(dgp_cfg, "id", "config.dgp")
        n = _require(dgp_cfg, "n", "config.dgp")
        theta0 = dgp_cfg.get("theta0", 0.5)
    else:
        dgp_id, n, theta0 = dgp_cfg, _require(config, "n", "config"), config.get("theta0", 0.5)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    reps = _require(config, "reps", "config")
    estimators = _require(config, "estimators", "config")
    report = run_mc(DgpSpec(dgp_id, n, theta0, seed=seed), estimators, reps,
                    seed=seed, threads=args.threads)

    print(f"monte carlo: design {dgp_id}, n={n}, {reps} replications")
    print(f"{'estimator':<24} {'MAB':>10} {'coverage':>10} {'used':>6} {'failed':>7}")
    for er in report.estimators:
        print(f"{er.label:<24} {er.mab:>10.5f} {er.coverage:>10.3f} "
              f"{er.reps_used:>6} {er.failures:>7}")

    resolved = dict(config)
    resolved["seed"] = seed
    out_path = args.out or config.get("output", {}).get("json", "mc_results.json")
    payload = {"schema_version": SCHEMA_VERSION, "config": resolved,
               "report": report.to_dict()}
    _dump_json(payload, out_path)
    print(f"report written to {out_path}")

    csv_path = config.get("output", {}).get("csv")
    if csv_path:
        import csv as _csv

        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["estimator", "rep", "theta", "se"])
            for er in report.estimators:
                for i, (theta, se) in enumerate(zip(er.thetas, er.ses), start=1):
                    writer.writerow([er.label, i, repr(theta), repr(se)])
        print(f"per-replication estimates written to {csv_path}")
    return 0


def cmd_inspect(args) -> int:
    try:
        with open(args.results, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"results file not found: {args.results}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.results}: invalid JSON: {exc.msg}") from None

    what = args.what
    if what == "weights":
        rows = payload.get("weights", [])
        if not rows:
            print("no stacking weights in this results file")
            return 0
        print(f"{'cef':<14} {'rep':>4} {'scope':<12} weights")
        means: dict = {}
        for row in rows:
            pairs = ", ".join(f"{l}={w:.4f}" for l, w in zip(row["learners"], row["weights"]))
            print(f"{row['cef']:<14} {row['rep']:>4} {row['scope']:<12} {pairs}")
            key = (row["cef"], row["col"], row["rep"])
            means.setdefault(key, []).append(np.array(row["weights"]))
        for (cef, col, rep), ws in means.items():
            if len(ws) > 1:
                mean_w = np.mean(ws, axis=0)
                print(f"{cef:<14} {rep:>4} {'mean':<12} "
                      + ", ".join(f"{v:.4f}" for v in mean_w))
    elif what == "mspe":
        print(f"{'cef':<14} {'learner':<22} {'rep':>4} {'overall':>12}  by fold")
        for row in payload.get("mspe", []):
            by_fold = " ".join("." if v is None else f"{v:.4g}" for v in row["fold_mspe"])
            print(f"{row['cef']:<14} {row['learner']:<22} {row['rep']:>4} "
                  f"{row['mspe']:>12.6g}  {by_fold}")
    elif what == "folds":
        folds = payload.get("folds", {})
        print(f"k={folds.get('k')} reps={folds.get('reps')}")
        for r, sizes in enumerate(folds.get("sizes", []), start=1):
            for k, size in enumerate(sizes, start=1):
                print(f"rep {r} fold {k}: {size}")
    else:
        raise ConfigError(f"unknown inspect target {what!r} (weights|mspe|folds)")
    return 0


def cmd_export_folds(args) -> int:
    config = _load_config(args.config)
    data_cfg = _require(config, "data", "config")
    model = ModelKind(_require(config, "model", "config"))
    data = load_csv(_require(data_cfg, "path", "config.data"),
                    _require(data_cfg, "roles", "config.data"), model=model)
    folds_cfg = config.get("folds", {})
    seed = args.seed if args.seed is not None else folds_cfg.get("seed", config.get("seed", 0))
    cluster = data.cluster if folds_cfg.get("by_cluster", False) else None
    folds = assign_folds(data.n, folds_cfg.get("k", 5), folds_cfg.get("reps", 1),
                         derive_seed(seed, "folds"), cluster=cluster)
    out = args.out or "folds.csv"
    export_folds_csv(folds, out)
    print(f"fold assignment written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddml",
        description="Cross-fitted double/debiased machine learning estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads (1 = serial)")
        p.add_argument("--out", default=None, help="output path override")

    p_est = sub.add_parser("estimate", help="estimate a model on CSV data")
    common(p_est)
    p_est.set_defaults(func=cmd_estimate)

    p_sim = sub.add_parser("simulate", help="run the Monte Carlo harness")
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_ins = sub.add_parser("inspect", help="inspect a results JSON file")
    p_ins.add_argument("results", help="results JSON produced by `estimate`")
    p_ins.add_argument("what", choices=["weights", "mspe", "folds"])
    p_ins.set_defaults(func=cmd_inspect)

    p_exp = sub.add_parser("export-folds", help="write the fold assignment as CSV")
    common(p_exp)
    p_exp.set_defaults(func=cmd_export_folds)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except DdmlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
