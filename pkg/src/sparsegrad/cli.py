"""Command line frontend for training, evaluation, and verification.

Exit codes: 0 success, 1 invalid input (bad flags, config, or dataset
params), 2 numeric failure (diverged training, a check exceeding its
tolerance, normalization non-convergence).  Progress and human-readable
results go to stderr; machine-readable artifacts are written under
--output-dir and nowhere else.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .data import bfs_geodesics, make_classify, make_traffic
from .experiments import (
    ExperimentConfig,
    compare_methods,
    evaluate_split,
    restore_model,
    run,
    save_model_checkpoint,
    write_metrics_csv,
    write_summary_json,
)
from .gradcheck import op_suite
from .normalization import NonConvergenceError, balanced_normalize, sinkhorn
from .proximal import ProxSpec, prox_oracle_check

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERIC = 2


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _parse_overrides(pairs: list) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not KEY=VALUE")
        key, _, raw = item.partition("=")
        key = key.strip()
        if not key:
            raise ValueError(f"override {item!r} has an empty key")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _canonical(d: dict) -> dict:
    # "lambda" and "lam" are aliases; resolve within each layer so a flag
    # spelled either way replaces the file value instead of colliding
    if "lambda" in d and "lam" in d:
        raise ValueError("give lambda or lam, not both")
    if "lambda" in d:
        d = dict(d)
        d["lam"] = d.pop("lambda")
    return d


def _load_config(path: str | None, overrides: list) -> ExperimentConfig:
    """Assemble a config dict: defaults < file < flags < SPARSEGRAD_SEED."""
    merged: dict = {}
    if path is not None:
        with open(path) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        merged.update(_canonical(loaded))
    merged.update(_canonical(_parse_overrides(overrides)))
    env_seed = os.environ.get("SPARSEGRAD_SEED")
    if env_seed is not None:
        merged["seed"] = int(env_seed)
    return ExperimentConfig.from_dict(merged)


def _prefix(config: ExperimentConfig) -> str:
    lam = f"{config.lam:g}".replace(".", "p")
    return f"{config.harness}-{config.method}-seed{config.seed}-lam{lam}"


def _write_run_outputs(result, out_dir: str) -> str:
    stem = os.path.join(out_dir, _prefix(result.config))
    write_metrics_csv(result.records, stem + "-metrics.csv")
    save_model_checkpoint(result, stem + "-checkpoint.json")
    write_summary_json(result, stem + "-summary.json",
                       checkpoint_path=stem + "-checkpoint.json")
    return stem


def _cmd_train(args) -> int:
    config = _load_config(args.config, args.override)
    os.makedirs(args.output_dir, exist_ok=True)
    cells = ([replace(config, lam=lam, sweep=None) for lam in config.sweep]
             if config.sweep else [config])
    for cell in cells:
        _log(f"training {cell.harness}/{cell.method} seed={cell.seed} "
             f"lam={cell.lam:g} epochs={cell.epochs}")
        result = run(cell)
        stem = _write_run_outputs(result, args.output_dir)
        final = result.final
        _log(f"  eval-error {final.eval_error:.4f}, "
             f"nonzero {final.nonzero_count}/{final.total}, "
             f"outputs at {stem}-*")
    return EXIT_OK


def _cmd_eval(args) -> int:
    config, model, bundle = restore_model(args.checkpoint)
    metrics = evaluate_split(config, model, bundle, args.split)
    os.makedirs(args.output_dir, exist_ok=True)
    path = os.path.join(args.output_dir,
                        _prefix(config) + f"-eval-{args.split}.json")
    with open(path, "w") as fh:
        json.dump({"config": config.to_dict(), "split": args.split,
                   "metrics": metrics}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log(f"{args.split} eval-error {metrics['eval_error']:.4f} -> {path}")
    return EXIT_OK


def _cmd_grad_check(args) -> int:
    reports = op_suite(seed=args.seed)
    worst = 0.0
    ok = True
    for label, report in reports:
        worst = max(worst, report.max_error)
        status = "ok" if report.passed else "FAIL"
        _log(f"{label}: max rel err {report.max_error:.3e} [{status}]")
        ok = ok and report.passed
    _log(f"{len(reports)} graphs checked, worst {worst:.3e}")
    return EXIT_OK if ok else EXIT_NUMERIC


def _cmd_prox_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    tol = 1e-3
    worst = 0.0
    for kind in ("l1", "group-l21", "exclusive-l12", "exclusive-nonneg"):
        kind_worst = 0.0
        for _ in range(args.instances):
            n = int(rng.integers(1, 3))
            w = rng.uniform(-1.5, 1.5, size=n)
            if kind == "exclusive-nonneg":
                w = np.abs(w)
            spec = ProxSpec(kind, float(rng.uniform(0.01, 1.0)),
                            float(rng.uniform(1e-4, 1e-2)))
            kind_worst = max(kind_worst, prox_oracle_check(spec, w))
        status = "ok" if kind_worst < tol else "FAIL"
        _log(f"{kind}: max deviation {kind_worst:.2e} [{status}]")
        worst = max(worst, kind_worst)
    return EXIT_OK if worst < tol else EXIT_NUMERIC


def _cmd_sinkhorn_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    tol = 1e-8
    worst = 0.0
    try:
        for _ in range(args.instances):
            n = int(rng.integers(2, 11))
            m = rng.uniform(0.05, 3.0, size=(n, n))
            for normalize in (sinkhorn, balanced_normalize):
                out = normalize(m).values.data
                dev = max(np.abs(out.sum(axis=0) - 1.0).max(),
                          np.abs(out.sum(axis=1) - 1.0).max())
                scaled = normalize(m * 7.5).values.data
                dev = max(dev, float(np.abs(scaled - out).max()))
                worst = max(worst, float(dev))
    except NonConvergenceError as exc:
        _log(f"sinkhorn-check: {exc}")
        return EXIT_NUMERIC
    status = "ok" if worst < tol else "FAIL"
    _log(f"{args.instances} matrices: worst deviation {worst:.2e} [{status}]")
    return EXIT_OK if worst < tol else EXIT_NUMERIC


def _cmd_compare(args) -> int:
    with open(args.config) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{args.config}: config must be a JSON object")
    known = {"harness", "methods", "seeds", "lam_by_method", "aggregate"}
    table = compare_methods(
        raw.get("harness", ""), raw.get("methods", []),
        raw.get("seeds", [0]), lam_by_method=raw.get("lam_by_method"),
        aggregate=raw.get("aggregate", "median"),
        **{k: v for k, v in raw.items() if k not in known})
    os.makedirs(args.output_dir, exist_ok=True)
    base = os.path.join(args.output_dir, f"compare-{table['harness']}")
    with open(base + ".json", "w") as fh:
        json.dump(table, fh, indent=2, sort_keys=True)
        fh.write("\n")
    fieldnames = list(table["rows"][0]) if table["rows"] else []
    with open(base + ".csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(table["rows"])
    for entry in table["summary"]:
        _log(f"{entry['method']}: eval-error {entry['eval_error']:.4f}, "
             f"nonzero {entry['nonzero_count']:.0f} "
             f"({table['aggregation']} over {entry['n_seeds']} seeds)")
    _log(f"outputs at {base}.json / {base}.csv")
    return EXIT_OK


def _write_rows_csv(path: str, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _cmd_gen_data(args) -> int:
    if args.seed < 0:
        raise ValueError("seed must be non-negative")
    os.makedirs(args.output_dir, exist_ok=True)
    base = os.path.join(args.output_dir, f"{args.kind}-seed{args.seed}")
    if args.kind == "traffic-graph":
        if args.n_nodes < 2 or args.t_steps < 2:
            raise ValueError("traffic-graph needs n-nodes >= 2, t-steps >= 2")
        data = make_traffic(args.n_nodes, args.t_steps, seed=args.seed,
                            noise=args.noise)
        header = [f"node{i}" for i in range(args.n_nodes)]
        _write_rows_csv(base + ".csv", header,
                        ([repr(float(v)) for v in row]
                         for row in data.series))
        sidecar = {"kind": args.kind, "n_nodes": args.n_nodes,
                   "t_steps": args.t_steps, "seed": args.seed,
                   "noise": args.noise,
                   "adjacency": data.adjacency.astype(int).tolist(),
                   "geodesic": data.geodesic.astype(int).tolist()}
    else:
        if args.n_samples < 2:
            raise ValueError("classification data needs n-samples >= 2")
        n_features = args.n_features if args.kind == "classify" else 4
        x, y = make_classify(args.n_samples, n_features, seed=args.seed)
        header = [f"x{i}" for i in range(n_features)] + ["label"]
        _write_rows_csv(base + ".csv", header,
                        ([repr(float(v)) for v in row] + [int(lab)]
                         for row, lab in zip(x, y)))
        sidecar = {"kind": args.kind, "n_samples": args.n_samples,
                   "n_features": n_features, "seed": args.seed}
    with open(base + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log(f"wrote {base}.csv and {base}.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsegrad",
        description="Sparsity-inducing training experiments and checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one experiment (or its sweep)")
    train.add_argument("--config", help="JSON config file")
    train.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="config override, applied after the file")
    train.add_argument("--output-dir", default=".")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", choices=("val", "test"), default="test")
    ev.add_argument("--output-dir", default=".")

    gc = sub.add_parser("grad-check",
                        help="finite-difference check of every op")
    gc.add_argument("--seed", type=int, default=0)

    pc = sub.add_parser("prox-check",
                        help="prox operators vs grid-search oracle")
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--instances", type=int, default=50)

    sc = sub.add_parser("sinkhorn-check",
                        help="doubly stochastic normalization properties")
    sc.add_argument("--seed", type=int, default=0)
    sc.add_argument("--instances", type=int, default=50)

    cmp_ = sub.add_parser("compare", help="aligned multi-method comparison")
    cmp_.add_argument("--config", required=True,
                      help="JSON: harness, methods, seeds, lam_by_method, "
                           "aggregate, plus shared config fields")
    cmp_.add_argument("--output-dir", default=".")

    gen = sub.add_parser("gen-data", help="write a synthetic dataset")
    gen.add_argument("--kind", required=True,
                     choices=("traffic-graph", "classify", "wiring"))
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--n-nodes", type=int, default=30)
    gen.add_argument("--t-steps", type=int, default=2000)
    gen.add_argument("--noise", type=float, default=2.0)
    gen.add_argument("--n-samples", type=int, default=600)
    gen.add_argument("--n-features", type=int, default=16)
    gen.add_argument("--output-dir", default=".")
    return parser


_HANDLERS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "grad-check": _cmd_grad_check,
    "prox-check": _cmd_prox_check,
    "sinkhorn-check": _cmd_sinkhorn_check,
    "compare": _cmd_compare,
    "gen-data": _cmd_gen_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID
    except NonConvergenceError as exc:
        _log(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except RuntimeError as exc:
        _log(f"numeric failure: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
