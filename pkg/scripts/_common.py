"""Shared desk-scale setup for the experiment scripts."""
import json
from pathlib import Path

from implicit_rec.acf import AcfConfig
from implicit_rec.als import AlsConfig
from implicit_rec.bpr import BprConfig
from implicit_rec.dataset import build_matrix, leave_one_out_split
from implicit_rec.ncf import NcfConfig
from implicit_rec.synthetic import keys, planted_blocks

MODELS = ("als", "bpr", "ncf", "acf")


def planted_split(seed: int, n_users: int = 300, n_items: int = 500, n_neg: int = 100):
    """Planted 8-block dataset and its leave-one-out split."""
    m = build_matrix(planted_blocks(n_users, n_items, seed=seed, in_block=0.99), *keys(n_users, n_items))
    return leave_one_out_split(m, n_neg, seed=seed)


def desk_configs(seed: int) -> dict:
    """Small configs that train in seconds on the planted data (k=8 for every factor model)."""
    return {
        "als": AlsConfig(k=8, reg=1.0, alpha=15.0, epochs=15, seed=seed),
        "bpr": BprConfig(k=8, learning_rate=0.005, reg=0.1, epochs=150, batch_size=256, seed=seed),
        "ncf": NcfConfig(n_factors=8, layer_sizes=[32, 16, 8], epochs=10, learning_rate=0.001, batch_size=256,
                         seed=seed, pretrain_epochs=10),
        "acf": AcfConfig(hidden_layer=8, epochs=100, learning_rate=0.01, batch_size=32, seed=seed),
    }


def dump(obj, path) -> None:
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(obj, indent=1) + "\n")
        print(f"-> {path}")
