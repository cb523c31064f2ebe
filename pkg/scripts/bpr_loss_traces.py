"""BPR mean pairwise loss per epoch for two latent widths and two regularization values."""
import argparse
from dataclasses import replace

from implicit_rec import bpr

from _common import desk_configs, dump, planted_split


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--ks", type=int, nargs="+", default=[8, 64])
    ap.add_argument("--regs", type=float, nargs="+", default=[1e-4, 1e-3])
    ap.add_argument("--out", help="optional JSON path for the traces")
    args = ap.parse_args()

    train = planted_split(args.seed).train
    base = replace(desk_configs(args.seed)["bpr"], epochs=args.epochs)
    traces = {}
    for k in args.ks:
        for reg in args.regs:
            model = bpr.fit(train, replace(base, k=k, reg=reg))
            traces[f"k={k},reg={reg:g}"] = [float(v) for v in model.history]

    names = list(traces)
    print("epoch " + " ".join(f"{n:>16s}" for n in names))
    for e in range(args.epochs):
        print(f"{e:5d} " + " ".join(f"{traces[n][e]:16.4f}" for n in names))
    dump(traces, args.out)


if __name__ == "__main__":
    main()
