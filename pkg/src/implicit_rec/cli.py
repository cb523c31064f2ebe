"""``implicit-rec`` command line.

Exit codes: 0 ok, 2 usage or schema error, 3 training failure, 4 model/data dimension
mismatch, 5 tuning budget smaller than the initial design.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields
from pathlib import Path

from . import dataset, pipeline, tune
from .evaluation import evaluate, recommend_top_k

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_TRAIN = 3
EXIT_DIMENSION = 4
EXIT_BUDGET = 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_USAGE, f"cannot read {path}: {exc}") from exc


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1) + "\n")


def _load_matrix(path) -> dataset.InteractionMatrix:
    """A snapshot directory, or a split directory (its ``train/`` snapshot)."""
    p = Path(path)
    try:
        return dataset.load_snapshot(p / "train" if (p / "test.json").exists() else p)
    except dataset.DataError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc


def _run_config(args, model: str | None) -> pipeline.RunConfig:
    """Config file first, then flags on top."""
    raw = _read_json(args.config) if args.config else {}
    if model is None and not raw.get("model") and not any(m in raw for m in pipeline.MODELS):
        raise CliError(EXIT_USAGE, "no model given (use --model or a config with a model block)")
    rc = pipeline.RunConfig.from_dict(raw, model)
    rc.params.update(pipeline.parse_params(args.param))
    if args.seed is not None:
        rc.params["seed"] = args.seed
    if getattr(args, "pretrain", False):
        rc.pretrain = True
    rc.model_config()  # validate early
    return rc


# -- commands ---------------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    raw = _read_json(args.config) if args.config else {}
    schema = dataset.CsvSchema.from_config(raw.get("schema", raw))
    records, report = dataset.ingest_csv(args.input, schema)
    if not records:
        raise CliError(EXIT_USAGE, f"{args.input} holds no usable rows")
    m = dataset.build_matrix(records)
    out = Path(args.out)
    dataset.save_snapshot(m, out)
    _write_json(out / "ingest_report.json", {
        "rows_read": report.rows_read,
        "skipped": report.skipped,
        "skip_reasons": dict(sorted(report.reasons.items())),
        "n_users": m.n_users,
        "n_items": m.n_items,
        "nnz": m.nnz,
        "sparsity": m.sparsity,
    })
    print(f"{m.n_users} users x {m.n_items} items, nnz {m.nnz}, skipped {report.skipped} rows -> {out}")
    return EXIT_OK


def cmd_split(args) -> int:
    m = _load_matrix(args.snapshot)
    seed = 0 if args.seed is None else args.seed
    try:
        split = dataset.leave_one_out_split(m, args.n_neg, seed)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    dataset.save_split(split, args.out)
    print(f"{len(split.test_users)} tested users, {len(split.excluded_users)} excluded -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    rc = _run_config(args, args.model)
    train = _load_matrix(args.data)
    out = Path(args.out)
    try:
        tm = pipeline.train_model(rc.model, train, rc.model_config(), rc.pretrain)
    except pipeline.ConfigError:
        raise
    except (ArithmeticError, ValueError, RuntimeError, MemoryError) as exc:
        raise CliError(EXIT_TRAIN, f"training {rc.model} failed: {exc}") from exc
    pipeline.save_model(tm, out)
    _write_json(out / "train_log.json", tm.train_log())
    rc.paths = {"data": str(args.data), "model": str(out)}
    rc.write(out / "run_config.json")
    trace = tm.loss_trace()
    print(f"trained {rc.model}: final loss {trace[-1]:.6g} -> {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        tm = pipeline.load_model(args.model_dir)
        split = dataset.load_split(args.split)
    except dataset.DataError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    try:
        tm.check_dims(split.train)
    except pipeline.DimensionError as exc:
        raise CliError(EXIT_DIMENSION, str(exc)) from exc
    report = evaluate(tm.scorer(split.train), split, args.k)
    report.write(args.out, split.train.user_ids)
    print(f"NDCG@{args.k} {report.ndcg_mean:.4f} +/- {report.ndcg_std:.4f}, "
          f"hit ratio {report.one_product_hit_ratio:.4f} over {report.n_users} users")
    return EXIT_OK


def cmd_tune(args) -> int:
    rc = _run_config(args, args.model)
    train = _load_matrix(args.data)
    try:
        space = tune.SearchSpace.from_dict(_read_json(args.space))
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_USAGE, f"invalid search space: {exc}") from exc
    unknown = set(space.names) - {f.name for f in fields(pipeline.CONFIG_CLASSES[rc.model])}
    if unknown:
        raise CliError(EXIT_USAGE, f"{rc.model} has no parameter(s) {', '.join(sorted(unknown))}")
    if args.budget < tune.design_size(space):
        raise CliError(EXIT_BUDGET, f"budget {args.budget} is smaller than the initial design "
                                    f"({tune.design_size(space)} points)")
    seed = 0 if args.seed is None else args.seed
    try:
        objective = pipeline.validation_objective(rc.model, train, rc.params, args.folds, rc.n_neg, rc.k, seed)
        result = tune.tune(space, objective, args.budget, args.folds, seed)
    except tune.BudgetError as exc:
        raise CliError(EXIT_BUDGET, str(exc)) from exc
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    except RuntimeError as exc:
        raise CliError(EXIT_TRAIN, str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.write(out / "tune_history.json")
    best = pipeline.RunConfig(rc.model, {**rc.params, **result.best.point}, rc.split_seed, rc.n_neg, rc.k,
                              rc.pretrain)
    best.write(out / "best_config.json")
    print(f"best validation NDCG@{rc.k} {result.best.objective:.4f} at {result.best.point} -> {out}")
    return EXIT_OK


def _requested_users(args, m: dataset.InteractionMatrix) -> list[str]:
    keys = []
    if args.users:
        keys += [k for k in args.users.split(",") if k]
    if args.users_file:
        try:
            keys += [ln.strip() for ln in Path(args.users_file).read_text().splitlines() if ln.strip()]
        except OSError as exc:
            raise CliError(EXIT_USAGE, str(exc)) from exc
    return keys or list(m.user_ids)


def cmd_recommend(args) -> int:
    tm = pipeline.load_model(args.model_dir)
    m = _load_matrix(args.data)
    try:
        tm.check_dims(m)
    except pipeline.DimensionError as exc:
        raise CliError(EXIT_DIMENSION, str(exc)) from exc
    scorer = tm.scorer(m)
    index = m.user_index
    warnings = 0
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_key", "rank", "item_key", "score", "error"])
        for key in _requested_users(args, m):
            u = index.get(key)
            if u is None:
                w.writerow([key, "", "", "", "unknown user"])
                warnings += 1
                continue
            pool = m.n_items - (len(m.items_of(u)) if not args.include_seen else 0)
            k = min(args.k, pool)
            note = "" if k == args.k else f"only {pool} candidates"
            warnings += bool(note)
            items, scores = recommend_top_k(scorer, m, u, k, exclude_seen=not args.include_seen)
            for rank, (i, s) in enumerate(zip(items, scores), start=1):
                w.writerow([key, rank, m.item_ids[i], repr(float(s)), note])
    if warnings:
        print(f"warning: {warnings} user(s) flagged in the error column", file=sys.stderr)
    print(f"recommendations -> {out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="implicit-rec", description="Implicit-feedback recommenders.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=False):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="seed (overrides the config)")
        sp.add_argument("--out", required=True, help="output path")
        if model:
            sp.add_argument("--model", choices=pipeline.MODELS)
            sp.add_argument("--param", action="append", metavar="KEY=VALUE",
                            help="model parameter override, repeatable")

    sp = sub.add_parser("ingest", help="CSV -> matrix snapshot")
    sp.add_argument("input")
    common(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("split", help="leave-one-out split with sampled negatives")
    sp.add_argument("snapshot")
    sp.add_argument("--n-neg", type=int, default=100)
    common(sp)
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("train", help="train a model")
    sp.add_argument("data", help="snapshot or split directory")
    sp.add_argument("--pretrain", action="store_true", help="pre-train GMF and MLP before NeuMF")
    common(sp, model=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="leave-one-out metrics")
    sp.add_argument("model_dir")
    sp.add_argument("split")
    sp.add_argument("--k", type=int, default=12)
    common(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("tune", help="Bayesian optimisation over a search space")
    sp.add_argument("data", help="snapshot or split directory (its train part is used)")
    sp.add_argument("--space", required=True, help="search space JSON")
    sp.add_argument("--budget", type=int, default=25)
    sp.add_argument("--folds", type=int, default=3)
    common(sp, model=True)
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("recommend", help="top-k recommendations as CSV")
    sp.add_argument("model_dir")
    sp.add_argument("data", help="snapshot or split directory")
    sp.add_argument("--k", type=int, default=12)
    sp.add_argument("--users", help="comma-separated user keys (default: all)")
    sp.add_argument("--users-file", help="file with one user key per line")
    sp.add_argument("--include-seen", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_recommend)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (dataset.DataError, pipeline.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
