"""Command-line surface.

``hiervi run --config cfg.json [--jobs N]`` executes a grid of
(bound, seed) training runs and writes one trace CSV per run, one fitted
state JSON per run, and a single summary JSON.

``hiervi compare --dir out/ --out table.csv`` flattens the summaries into a
tidy CSV (method, scope, K, seed, final_bound, std_error, wall_seconds)
for external plotting of bound-vs-K curves.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
import time
from dataclasses import dataclass

from .bounds import GLOBAL, IW, UHA, VI, BoundSpec
from .data import (MovieLensConfig, SyntheticConfig, generate_oracle,
                   generate_synthetic, load_movielens)
from .family import save_state
from .train import TrainConfig, evaluate_final, train

MOVIELENS_ENV = "HIERVI_MOVIELENS_DIR"
SUMMARY_NAME = "summary.json"


class ConfigError(ValueError):
    pass


def _check_keys(doc: dict, allowed: set, where: str):
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return doc[key]


def build_model(doc: dict):
    _check_keys(doc, {"kind", "num_groups", "group_sizes", "d_z", "seed",
                      "num_users", "ratings_per_user", "ratings_path",
                      "items_path", "data_dir"}, "model")
    kind = _require(doc, "kind", "model")
    if kind in ("synthetic_linear", "conjugate_oracle"):
        cfg = SyntheticConfig(
            num_groups=int(_require(doc, "num_groups", "model")),
            group_sizes=_require(doc, "group_sizes", "model"),
            d_z=int(doc.get("d_z", 1)),
            seed=int(doc.get("seed", 0)))
        if kind == "synthetic_linear":
            mdl, _ = generate_synthetic(cfg)
        else:
            mdl, _ = generate_oracle(cfg)
        return mdl
    if kind == "movielens_logistic":
        root = doc.get("data_dir") or os.environ.get(MOVIELENS_ENV)
        ratings = doc.get("ratings_path")
        items = doc.get("items_path")
        if ratings is None or items is None:
            if root is None:
                raise ConfigError(
                    "model: set ratings_path/items_path, data_dir, or the "
                    f"{MOVIELENS_ENV} environment variable")
            ratings = ratings or os.path.join(root, "u.data")
            items = items or os.path.join(root, "u.item")
        for p in (ratings, items):
            if not os.path.exists(p):
                raise ConfigError(f"model: data file not found: {p}")
        return load_movielens(MovieLensConfig(
            ratings_path=ratings, items_path=items,
            num_users=int(_require(doc, "num_users", "model")),
            ratings_per_user=int(_require(doc, "ratings_per_user", "model")),
            seed=int(doc.get("seed", 0))))
    raise ConfigError(f"model: unknown kind {kind!r}")


def build_bound(doc: dict) -> BoundSpec:
    _check_keys(doc, {"operator", "scope", "K", "leapfrog_steps",
                      "init_step_size", "init_damping"}, "bounds[]")
    op = _require(doc, "operator", "bounds[]")
    if op not in (VI, IW, UHA):
        raise ConfigError(f"bounds[]: unknown operator {op!r}")
    try:
        return BoundSpec(
            operator=op,
            scope=doc.get("scope", "local"),
            num_samples=int(doc.get("K", 1)),
            leapfrog_steps=int(doc.get("leapfrog_steps", 1)),
            init_step_size=float(doc.get("init_step_size", 0.1)),
            init_damping=float(doc.get("init_damping", 0.8)))
    except ValueError as exc:
        raise ConfigError(f"bounds[]: {exc}") from exc


def build_train_config(doc: dict) -> TrainConfig:
    _check_keys(doc, {"steps", "minibatch", "pretrain_steps", "eval_samples",
                      "log_every", "step_size", "seeds"}, "train")
    minibatch = doc.get("minibatch", 10)
    try:
        return TrainConfig(
            steps=int(doc.get("steps", 50000)),
            minibatch=None if minibatch is None else int(minibatch),
            pretrain_steps=int(doc.get("pretrain_steps", 5000)),
            eval_samples=int(doc.get("eval_samples", 1000)),
            log_every=int(doc.get("log_every", 100)),
            step_size=float(doc.get("step_size", 0.001)),
            seeds=tuple(int(s) for s in doc.get("seeds", (0, 1, 2, 3, 4))))
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from exc


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    _check_keys(doc, {"model", "bounds", "train", "output_dir"}, "config")
    _require(doc, "model", "config")
    bounds = _require(doc, "bounds", "config")
    if not isinstance(bounds, list) or not bounds:
        raise ConfigError("config: bounds must be a nonempty list")
    _require(doc, "output_dir", "config")
    return doc


def _run_one(config_doc: dict, bound_doc: dict, seed: int, out_dir: str):
    """Train one (bound, seed) pair and write its artifacts."""
    model = build_model(config_doc["model"])
    spec = build_bound(bound_doc)
    tc = build_train_config(config_doc.get("train", {}))
    t0 = time.perf_counter()
    state, trace = train(model, spec, tc, seed)
    wall = time.perf_counter() - t0
    mean, se = evaluate_final(state, model, spec, tc.eval_samples, seed)
    label = spec.label()
    trace_name = f"trace_{label}_seed{seed}.csv"
    with open(os.path.join(out_dir, trace_name), "w", newline="\n") as fh:
        fh.write("step,estimate\n")
        for step, value in trace:
            fh.write(f"{step},{float(value)!r}\n")
    state_name = f"state_{label}_seed{seed}.json"
    save_state(state, os.path.join(out_dir, state_name))
    return {
        "method": label,
        "operator": spec.operator,
        "scope": spec.scope,
        "K": None if spec.operator == VI else spec.num_samples,
        "seed": seed,
        "final_bound": mean,
        "std_error": se,
        "wall_seconds": wall,
        "trace_file": trace_name,
        "state_file": state_name,
    }


def run(config_path: str, jobs: int = 1) -> int:
    doc = load_config(config_path)
    # validate everything up front so failures happen before any training
    build_model(doc["model"])
    specs = [build_bound(b) for b in doc["bounds"]]
    tc = build_train_config(doc.get("train", {}))
    out_dir = doc["output_dir"]
    os.makedirs(out_dir, exist_ok=True)

    tasks = [(bound_doc, seed) for bound_doc in doc["bounds"]
             for seed in tc.seeds]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_one, doc, b, s, out_dir)
                       for b, s in tasks]
            results = [f.result() for f in futures]
    else:
        results = [_run_one(doc, b, s, out_dir) for b, s in tasks]

    summary = {"config": doc, "runs": results}
    with open(os.path.join(out_dir, SUMMARY_NAME), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(results)} runs to {out_dir}")
    return 0


def compare(out_dir: str, out_path: str) -> int:
    summary_path = os.path.join(out_dir, SUMMARY_NAME)
    if not os.path.exists(summary_path):
        print(f"error: no {SUMMARY_NAME} in {out_dir}", file=sys.stderr)
        return 1
    with open(summary_path) as fh:
        summary = json.load(fh)
    runs = summary.get("runs", [])
    if not runs:
        print(f"error: {summary_path} holds no runs", file=sys.stderr)
        return 1
    with open(out_path, "w", newline="\n") as fh:
        fh.write("method,scope,K,seed,final_bound,std_error,wall_seconds\n")
        for r in runs:
            k = "" if r["K"] is None else str(r["K"])
            fh.write(f"{r['method']},{r['scope']},{k},{r['seed']},"
                     f"{r['final_bound']!r},{r['std_error']!r},"
                     f"{r['wall_seconds']!r}\n")
    print(f"wrote {len(runs)} rows to {out_path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hiervi",
        description="Variational inference with locally-enhanced bounds")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a configured experiment grid")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--jobs", type=int, default=1)
    p_cmp = sub.add_parser("compare", help="emit a plot-ready CSV table")
    p_cmp.add_argument("--dir", required=True)
    p_cmp.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return run(args.config, jobs=args.jobs)
        return compare(args.dir, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
