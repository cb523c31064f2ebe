"""NeuMF training loss per epoch with and without GMF/MLP pre-training."""
import argparse

from implicit_rec import pipeline

from _common import desk_configs, dump, planted_split


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--out", help="optional JSON path for both loss traces")
    args = ap.parse_args()

    split = planted_split(args.seed)
    cfg = desk_configs(args.seed)["ncf"]
    cfg.epochs = args.epochs
    plain = pipeline.train_model("ncf", split.train, cfg)
    warm = pipeline.train_model("ncf", split.train, cfg, pretrain=True)

    print(f"{'epoch':>5s} {'random init':>12s} {'pre-trained':>12s}")
    for e, (a, b) in enumerate(zip(plain.model.history, warm.model.history)):
        print(f"{e:5d} {a:12.4f} {b:12.4f}")
    dump({"random_init": plain.loss_trace(), "pretrained": warm.loss_trace(),
          "pretrain": warm.train_log()["pretrain"]}, args.out)


if __name__ == "__main__":
    main()
