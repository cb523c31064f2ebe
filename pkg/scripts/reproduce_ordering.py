"""Model ordering on planted block data: NDCG@12 and hit ratio per model, averaged over seeds."""
import argparse

import numpy as np

from implicit_rec import pipeline
from implicit_rec.evaluation import evaluate

from _common import MODELS, desk_configs, dump, planted_split


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--out", help="optional JSON results path")
    args = ap.parse_args()

    rows = {m: [] for m in MODELS}
    for s in range(args.seeds):
        split = planted_split(s)
        for name, cfg in desk_configs(s).items():
            tm = pipeline.train_model(name, split.train, cfg, pretrain=name == "ncf")
            rep = evaluate(tm.scorer(split.train), split)
            rows[name].append((rep.ndcg_mean, rep.ndcg_std, rep.one_product_hit_ratio))
            print(f"seed {s} {name:4s} NDCG@12 {rep.ndcg_mean:.4f} +/- {rep.ndcg_std:.4f}  "
                  f"hit {rep.one_product_hit_ratio:.4f}")

    print(f"\n{'model':6s} {'NDCG@12':>8s} {'hit ratio':>10s}")
    summary = {}
    for name in sorted(MODELS, key=lambda n: -np.mean([r[0] for r in rows[n]])):
        nd = float(np.mean([r[0] for r in rows[name]]))
        hr = float(np.mean([r[2] for r in rows[name]]))
        summary[name] = {"ndcg_mean": nd, "hit_ratio": hr, "per_seed": rows[name]}
        print(f"{name:6s} {nd:8.4f} {hr:10.4f}")
    dump(summary, args.out)


if __name__ == "__main__":
    main()
