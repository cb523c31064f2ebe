"""Bayesian optimisation of NeuMF over learning rate and n_factors, 3 validation folds.

Prints every trial, then the trials that raised the running best in the
Iterations / NDCG@12 / Learning Rate / n_factors layout.
"""
import argparse

from implicit_rec import pipeline
from implicit_rec.tune import SearchSpace, tune

from _common import desk_configs, planted_split

SPACE = {
    "learning_rate": {"kind": "log", "low": 1e-4, "high": 1e-1},
    "n_factors": {"kind": "integer", "low": 4, "high": 32},
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--budget", type=int, default=12)
    ap.add_argument("--folds", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="optional tune_history.json path")
    args = ap.parse_args()

    split = planted_split(args.seed)
    base = vars(desk_configs(args.seed)["ncf"]).copy()
    base.pop("pretrain_epochs")
    objective = pipeline.validation_objective("ncf", split.train, base, n_folds=args.folds, seed=args.seed)
    result = tune(SearchSpace.from_dict(SPACE), objective, args.budget, args.folds, args.seed)

    best = -1.0
    improving = []
    for t in result.history:
        status = f"{t.objective:.4f}" if t.status == "ok" else t.error
        print(f"trial {t.index:2d} lr {t.point['learning_rate']:.4g} n_factors {t.point['n_factors']:2d} -> {status}")
        if t.status == "ok" and t.objective > best:
            best = t.objective
            improving.append(t)

    print(f"\n{'Iterations':>10s} {'NDCG@12':>8s} {'Learning Rate':>14s} {'n_factors':>9s}")
    for n, t in enumerate(improving, start=1):
        print(f"{n:10d} {t.objective:8.3f} {t.point['learning_rate']:14.3g} {t.point['n_factors']:9d}")
    if args.out:
        result.write(args.out)
        print(f"-> {args.out}")


if __name__ == "__main__":
    main()
