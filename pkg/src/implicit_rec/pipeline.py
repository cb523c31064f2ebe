"""Model registry shared by the CLI and the experiment scripts.

Maps a model name to its config class, trainer, scorer and on-disk format, and holds
the run config that ties a model block to split and evaluation settings.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from . import acf, als, bpr, ncf
from .dataset import InteractionMatrix, LeaveOneOutSplit, leave_one_out_split
from .evaluation import DEFAULT_K, Scorer, evaluate

CONFIG_CLASSES = {
    "als": als.AlsConfig,
    "bpr": bpr.BprConfig,
    "ncf": ncf.NcfConfig,
    "acf": acf.AcfConfig,
}
MODELS = tuple(CONFIG_CLASSES)
MANIFESTS = {"als": "als.json", "bpr": "bpr.json", "ncf": "ncf.json", "acf": "acf.json"}


class ConfigError(ValueError):
    pass


class DimensionError(ValueError):
    pass


def _check_model(name: str) -> None:
    if name not in CONFIG_CLASSES:
        raise ConfigError(f"unknown model {name!r}; expected one of {', '.join(MODELS)}")


def make_config(name: str, overrides: dict | None = None):
    """Config for ``name`` with table defaults, updated by ``overrides``."""
    _check_model(name)
    cls = CONFIG_CLASSES[name]
    known = {f.name for f in fields(cls)}
    overrides = dict(overrides or {})
    unknown = sorted(set(overrides) - known)
    if unknown:
        raise ConfigError(f"{name} has no parameter(s) {', '.join(unknown)}")
    try:
        return cls(**overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_value(text: str) -> Any:
    """``--param`` values: JSON when it parses (numbers, lists, booleans), else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_params(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"expected key=value, got {pair!r}")
        out[key.strip()] = parse_value(value.strip())
    return out


# -- run config -------------------------------------------------------------------------------


@dataclass
class RunConfig:
    model: str
    params: dict = field(default_factory=dict)
    split_seed: int = 0
    n_neg: int = 100
    k: int = DEFAULT_K
    pretrain: bool = False
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_model(self.model)
        if self.n_neg < 1 or self.k < 1:
            raise ConfigError(f"n_neg and k must be >= 1, got {self.n_neg} and {self.k}")

    def model_config(self):
        return make_config(self.model, self.params)

    @classmethod
    def from_dict(cls, d: dict, model: str | None = None) -> "RunConfig":
        """Accepts ``{"model": name, name: {...}, ...}``; exactly one model block may appear."""
        blocks = [m for m in MODELS if m in d]
        if len(blocks) > 1:
            raise ConfigError(f"run config holds several model blocks: {', '.join(blocks)}")
        name = model or d.get("model") or (blocks[0] if blocks else None)
        if name is None:
            raise ConfigError("run config names no model")
        if blocks and blocks[0] != name:
            raise ConfigError(f"run config block {blocks[0]!r} does not match model {name!r}")
        extra = set(d) - set(MODELS) - {"model", "split_seed", "n_neg", "k", "pretrain", "paths"}
        if extra:
            raise ConfigError(f"unknown run config keys: {', '.join(sorted(extra))}")
        return cls(name, dict(d.get(name, {})), int(d.get("split_seed", 0)), int(d.get("n_neg", 100)),
                   int(d.get("k", DEFAULT_K)), bool(d.get("pretrain", False)), dict(d.get("paths", {})))

    @classmethod
    def load(cls, path: str | Path, model: str | None = None) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d, model)

    def to_dict(self) -> dict:
        """Fully resolved: the model block lists every field, defaults included."""
        return {
            "model": self.model,
            self.model: asdict(self.model_config()),
            "split_seed": self.split_seed,
            "n_neg": self.n_neg,
            "k": self.k,
            "pretrain": self.pretrain,
            "paths": self.paths,
        }

    def write(self, path: str | Path) -> Path:
        p = Path(path)
        p.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        return p


# -- trained models ---------------------------------------------------------------------------


@dataclass
class TrainedModel:
    name: str
    model: Any
    config: Any
    # (gmf, mlp) halves when NeuMF was pre-trained
    pretrained: tuple | None = None

    @property
    def n_items(self) -> int:
        return self.model.n_items

    @property
    def n_users(self) -> int | None:
        # the autoencoder scores any user row, so it has no fixed user count
        return None if self.name == "acf" else self.model.n_users

    def scorer(self, inputs: InteractionMatrix | None = None) -> Scorer:
        m = self.model
        if self.name in ("als", "bpr"):
            return m.scores
        if self.name == "ncf":
            return lambda u, items: ncf.logits(m, u, items)
        return lambda u, items: acf.score_user(m, u, items, inputs)

    def check_dims(self, matrix: InteractionMatrix) -> None:
        if self.n_items != matrix.n_items:
            raise DimensionError(f"model has {self.n_items} items, data has {matrix.n_items}")
        if self.n_users is not None and self.n_users != matrix.n_users:
            raise DimensionError(f"model has {self.n_users} users, data has {matrix.n_users}")

    def loss_trace(self) -> list[float]:
        h = [float(v) for v in self.model.history]
        # one value per epoch; for ALS that is the objective after the item half-sweep
        return h[1::2] if self.name == "als" else h

    def train_log(self) -> dict:
        log = {"model": self.name, "epochs": self.config.epochs, "loss": self.loss_trace()}
        if self.name == "als":
            log["loss_kind"] = "objective"
            log["half_sweep_objective"] = [float(v) for v in self.model.history]
        elif self.name == "bpr":
            log["loss_kind"] = "mean_pairwise_loss"
        elif self.name == "ncf":
            log["loss_kind"] = "mean_bce"
            if self.pretrained:
                log["pretrain"] = {"gmf": [float(v) for v in self.pretrained[0].history],
                                   "mlp": [float(v) for v in self.pretrained[1].history]}
        else:
            log["loss_kind"] = "per_user_nll_plus_decay"
        return log


def train_model(name: str, train: InteractionMatrix, cfg=None, pretrain: bool = False) -> TrainedModel:
    _check_model(name)
    cfg = cfg if cfg is not None else make_config(name)
    if pretrain and name != "ncf":
        raise ConfigError("pre-training applies to the ncf model only")
    if name == "als":
        return TrainedModel(name, als.fit(train, cfg), cfg)
    if name == "bpr":
        return TrainedModel(name, bpr.fit(train, cfg), cfg)
    if name == "acf":
        return TrainedModel(name, acf.fit(train, cfg), cfg)
    halves = ncf.pretrain(train, cfg) if pretrain else None
    start = ncf.fuse(*halves) if halves else None
    return TrainedModel(name, ncf.fit(train, cfg, pretrained=start), cfg, halves)


def save_model(tm: TrainedModel, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if tm.name in ("als", "bpr"):
        als.save_factors(tm.model, d, tm.name, tm.config)
    elif tm.name == "ncf":
        ncf.save_ncf(tm.model, d, tm.config)
        for half in tm.pretrained or ():
            ncf.save_ncf(half, d / half.kind, tm.config)
    else:
        acf.save_acf(tm.model, d, tm.config)
    return d


def load_model(directory: str | Path) -> TrainedModel:
    d = Path(directory)
    found = [name for name, fn in MANIFESTS.items() if (d / fn).exists()]
    if len(found) != 1:
        raise ConfigError(f"{d} does not hold exactly one saved model")
    name = found[0]
    if name in ("als", "bpr"):
        model, manifest = als.load_factors(d, name)
    elif name == "ncf":
        model, manifest = ncf.load_ncf(d)
    else:
        model, manifest = acf.load_acf(d)
    return TrainedModel(name, model, make_config(name, manifest["config"]))


# -- tuning objective -------------------------------------------------------------------------


def validation_folds(train: InteractionMatrix, n_folds: int, n_neg: int, seed: int) -> list[LeaveOneOutSplit]:
    """Leave-one-out splits of the training matrix, one negative-sampling seed per fold."""
    return [leave_one_out_split(train, n_neg, seed=seed * 1009 + 7919 * (f + 1)) for f in range(n_folds)]


def validation_objective(name: str, train: InteractionMatrix, base: dict | None = None,
                         n_folds: int = 3, n_neg: int = 100, k: int = DEFAULT_K, seed: int = 0):
    """``objective(point, fold)`` -> validation NDCG@k of a model trained on the fold's train rows.

    The fold also offsets the model seed, so folds differ in initialization as well as in
    the sampled negatives.
    """
    folds = validation_folds(train, n_folds, n_neg, seed)
    base = dict(base or {})

    def objective(point: dict, fold: int) -> float:
        params = {**base, **point}
        params["seed"] = int(params.get("seed", 0)) + fold
        cfg = make_config(name, params)
        split = folds[fold]
        tm = train_model(name, split.train, cfg)
        return evaluate(tm.scorer(split.train), split, k).ndcg_mean

    return objective
