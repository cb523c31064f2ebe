"""Neural collaborative filtering: GMF, MLP and the fused NeuMF model.

One ``NeuMfModel`` class covers all three variants; ``kind`` says which feature
blocks feed the output head ``h``:

* ``gmf``   -> p_u * q_i                          (width n_factors)
* ``mlp``   -> ReLU tower over [p_u ; q_i]         (width layer_sizes[-1])
* ``neumf`` -> [gmf features ; mlp features]

All variants output ``sigmoid(h . features)`` and are trained with binary
cross-entropy over observed pairs plus sampled unobserved pairs.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import InteractionMatrix, check_negatives_available, sample_unobserved
from .neural import (AdamState, DenseLayer, adam_step, backward, bce_loss,
                     embedding_grad, forward, layers_from_arrays, layers_to_arrays,
                     load_weights, save_weights, sigmoid, xavier_init)

KINDS = ("gmf", "mlp", "neumf")
EMBEDDING_STD = 0.01
FUSION_WEIGHT = 0.5


@dataclass
class NcfConfig:
    n_factors: int = 16
    layer_sizes: list[int] = field(default_factory=lambda: [64, 32, 16])
    epochs: int = 50
    learning_rate: float = 0.001
    batch_size: int = 256
    neg_ratio: int = 4
    seed: int = 0
    # width of each MLP embedding; layer_sizes[0] must equal twice this
    mlp_embedding_dim: int | None = None
    pretrain_epochs: int | None = None

    def __post_init__(self):
        self.layer_sizes = [int(w) for w in self.layer_sizes]
        if self.n_factors < 1 or not self.layer_sizes or min(self.layer_sizes) < 1:
            raise ValueError(f"invalid NCF widths: n_factors={self.n_factors}, layer_sizes={self.layer_sizes}")
        if self.neg_ratio < 1 or self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError(f"invalid NCF training settings {self}")
        if self.mlp_embedding_dim is None:
            if self.layer_sizes[0] % 2:
                raise ValueError(f"layer_sizes[0]={self.layer_sizes[0]} must be even (user ; item concat)")
        elif 2 * self.mlp_embedding_dim != self.layer_sizes[0]:
            raise ValueError(
                f"MLP tower input {self.layer_sizes[0]} does not chain with two "
                f"{self.mlp_embedding_dim}-wide embeddings (concat = {2 * self.mlp_embedding_dim})")

    @property
    def mlp_dim(self) -> int:
        return self.mlp_embedding_dim or self.layer_sizes[0] // 2


@dataclass
class NeuMfModel:
    kind: str
    h: np.ndarray
    gmf_user: np.ndarray | None = None
    gmf_item: np.ndarray | None = None
    mlp_user: np.ndarray | None = None
    mlp_item: np.ndarray | None = None
    mlp_layers: list[DenseLayer] = field(default_factory=list)
    history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown NCF kind {self.kind!r}")
        width = 0
        if self.has_gmf:
            if self.gmf_user is None or self.gmf_item is None or self.gmf_user.shape[1] != self.gmf_item.shape[1]:
                raise ValueError("GMF embeddings missing or of unequal width")
            width += self.gmf_user.shape[1]
        if self.has_mlp:
            if self.mlp_user is None or self.mlp_item is None:
                raise ValueError("MLP embeddings missing")
            z = self.mlp_user.shape[1] + self.mlp_item.shape[1]
            for k, layer in enumerate(self.mlp_layers):
                if layer.n_in != z:
                    raise ValueError(f"MLP layer {k} expects width {layer.n_in}, got {z}")
                z = layer.n_out
            width += z
        self.h = np.asarray(self.h, dtype=np.float64).ravel()
        if self.h.shape != (width,):
            raise ValueError(f"output weights have length {self.h.size}, features have width {width}")

    @property
    def has_gmf(self) -> bool:
        return self.kind in ("gmf", "neumf")

    @property
    def has_mlp(self) -> bool:
        return self.kind in ("mlp", "neumf")

    @property
    def n_users(self) -> int:
        return (self.gmf_user if self.has_gmf else self.mlp_user).shape[0]

    @property
    def n_items(self) -> int:
        return (self.gmf_item if self.has_gmf else self.mlp_item).shape[0]

    @property
    def gmf_width(self) -> int:
        return self.gmf_user.shape[1] if self.has_gmf else 0

    def params(self) -> dict[str, np.ndarray]:
        out = {"h": self.h}
        if self.has_gmf:
            out.update(gmf_user=self.gmf_user, gmf_item=self.gmf_item)
        if self.has_mlp:
            out.update(mlp_user=self.mlp_user, mlp_item=self.mlp_item)
            for k, layer in enumerate(self.mlp_layers):
                out[f"mlp.{k}.weight"] = layer.weight
                out[f"mlp.{k}.bias"] = layer.bias
        return out

    def copy(self) -> "NeuMfModel":
        cp = lambda a: None if a is None else a.copy()
        return NeuMfModel(self.kind, self.h.copy(), cp(self.gmf_user), cp(self.gmf_item),
                          cp(self.mlp_user), cp(self.mlp_item), [l.copy() for l in self.mlp_layers],
                          list(self.history))


def init_model(kind: str, n_users: int, n_items: int, cfg: NcfConfig, seed=None) -> NeuMfModel:
    """Random init: N(0, 0.01) embeddings, Xavier-uniform tower and output head."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    parts = {}
    width = 0
    if kind in ("gmf", "neumf"):
        parts["gmf_user"] = rng.normal(0.0, EMBEDDING_STD, (n_users, cfg.n_factors))
        parts["gmf_item"] = rng.normal(0.0, EMBEDDING_STD, (n_items, cfg.n_factors))
        width += cfg.n_factors
    if kind in ("mlp", "neumf"):
        parts["mlp_user"] = rng.normal(0.0, EMBEDDING_STD, (n_users, cfg.mlp_dim))
        parts["mlp_item"] = rng.normal(0.0, EMBEDDING_STD, (n_items, cfg.mlp_dim))
        sizes = cfg.layer_sizes
        parts["mlp_layers"] = [DenseLayer.xavier(a, b, "relu", rng) for a, b in zip(sizes[:-1], sizes[1:])]
        width += sizes[-1]
    return NeuMfModel(kind, xavier_init(width, 1, rng).ravel(), **parts)


# -- forward ----------------------------------------------------------------------------------


def _features(model: NeuMfModel, users, items):
    feats, cache = [], {}
    if model.has_gmf:
        pu, qi = model.gmf_user[users], model.gmf_item[items]
        cache["gmf"] = (pu, qi)
        feats.append(pu * qi)
    if model.has_mlp:
        z1 = np.concatenate([model.mlp_user[users], model.mlp_item[items]], axis=1)
        phi, tape = forward(model.mlp_layers, z1)
        cache["tape"] = tape
        feats.append(phi)
    return np.concatenate(feats, axis=1), cache


def _check_indices(model: NeuMfModel, users, items):
    users = np.atleast_1d(np.asarray(users, dtype=np.int64))
    items = np.atleast_1d(np.asarray(items, dtype=np.int64))
    if users.size and (users.min() < 0 or users.max() >= model.n_users):
        raise IndexError(f"user index outside [0, {model.n_users})")
    if items.size and (items.min() < 0 or items.max() >= model.n_items):
        raise IndexError(f"item index outside [0, {model.n_items})")
    return np.broadcast_arrays(users, items)


def logits(model: NeuMfModel, users, items) -> np.ndarray:
    users, items = _check_indices(model, users, items)
    f, _ = _features(model, users, items)
    return f @ model.h


def predict(model: NeuMfModel, users, items) -> np.ndarray:
    return sigmoid(logits(model, users, items))


def _forward_kind(kind: str, model: NeuMfModel, u, i):
    if model.kind != kind:
        raise ValueError(f"{kind}_forward needs a {kind} model, got {model.kind}")
    out = predict(model, u, i)
    return float(out[0]) if np.ndim(u) == 0 and np.ndim(i) == 0 else out


def gmf_forward(model: NeuMfModel, u, i):
    return _forward_kind("gmf", model, u, i)


def mlp_forward(model: NeuMfModel, u, i):
    return _forward_kind("mlp", model, u, i)


def neumf_forward(model: NeuMfModel, u, i):
    return _forward_kind("neumf", model, u, i)


# -- training ---------------------------------------------------------------------------------


def loss_and_grads(model: NeuMfModel, users, items, labels):
    """Mean BCE over the batch and gradients for every parameter (embeddings as RowGrad)."""
    users, items = _check_indices(model, users, items)
    f, cache = _features(model, users, items)
    p = sigmoid(f @ model.h)
    loss, _ = bce_loss(p, labels)
    # mean BCE through the sigmoid: d loss / d logit = (p - y) / n
    dlogit = (p - np.asarray(labels, dtype=np.float64)) / len(p)
    grads = {"h": f.T @ dlogit}
    df = dlogit[:, None] * model.h[None, :]
    g = model.gmf_width
    if model.has_gmf:
        pu, qi = cache["gmf"]
        grads["gmf_user"] = embedding_grad(users, df[:, :g] * qi)
        grads["gmf_item"] = embedding_grad(items, df[:, :g] * pu)
    if model.has_mlp:
        layer_grads, dz1 = backward(cache["tape"], df[:, g:])
        d = model.mlp_user.shape[1]
        grads["mlp_user"] = embedding_grad(users, dz1[:, :d])
        grads["mlp_item"] = embedding_grad(items, dz1[:, d:])
        for k, lg in enumerate(layer_grads):
            grads[f"mlp.{k}.weight"] = lg.weight
            grads[f"mlp.{k}.bias"] = lg.bias
    return loss, grads


def make_training_set(train: InteractionMatrix, neg_ratio: int = 4, seed=0):
    """All observed pairs labelled 1 plus ``neg_ratio`` unobserved items per positive
    labelled 0, shuffled. Returns ``(users, items, labels)`` arrays."""
    if neg_ratio < 1:
        raise ValueError("neg_ratio must be >= 1")
    check_negatives_available(train)
    rng = np.random.default_rng(seed)
    pos_u = np.repeat(np.arange(train.n_users, dtype=np.int64), train.row_lengths)
    neg_u = np.repeat(pos_u, neg_ratio)
    neg_i = sample_unobserved(train, neg_u, rng)
    users = np.concatenate([pos_u, neg_u])
    items = np.concatenate([train.indices, neg_i])
    labels = np.concatenate([np.ones(len(pos_u)), np.zeros(len(neg_u))])
    perm = rng.permutation(len(users))
    return users[perm], items[perm], labels[perm]


def train_epochs(model: NeuMfModel, train: InteractionMatrix, cfg: NcfConfig, epochs: int,
                 data_tag: int) -> NeuMfModel:
    """Adam over freshly sampled training sets; appends each epoch's mean BCE to history."""
    state = AdamState(learning_rate=cfg.learning_rate)
    for epoch in range(epochs):
        users, items, labels = make_training_set(train, cfg.neg_ratio, seed=[cfg.seed, data_tag, epoch])
        total = 0.0
        for lo in range(0, len(users), cfg.batch_size):
            sl = slice(lo, lo + cfg.batch_size)
            loss, grads = loss_and_grads(model, users[sl], items[sl], labels[sl])
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite NCF loss in epoch {epoch}")
            adam_step(model.params(), grads, state)
            total += loss * len(labels[sl])
        model.history.append(total / len(users))
    return model


def pretrain(train: InteractionMatrix, cfg: NcfConfig) -> tuple[NeuMfModel, NeuMfModel]:
    """Train GMF and MLP separately, each with its own output head."""
    epochs = cfg.pretrain_epochs or cfg.epochs
    gmf = init_model("gmf", train.n_users, train.n_items, cfg, seed=[cfg.seed, 1])
    mlp = init_model("mlp", train.n_users, train.n_items, cfg, seed=[cfg.seed, 2])
    train_epochs(gmf, train, cfg, epochs, data_tag=1)
    train_epochs(mlp, train, cfg, epochs, data_tag=2)
    return gmf, mlp


def fuse(gmf: NeuMfModel, mlp: NeuMfModel, weight: float = FUSION_WEIGHT) -> NeuMfModel:
    """NeuMF initialised from trained halves; h = [w * h_gmf ; (1 - w) * h_mlp]."""
    if gmf.kind != "gmf" or mlp.kind != "mlp":
        raise ValueError("fuse needs a GMF and an MLP model")
    h = np.concatenate([weight * gmf.h, (1.0 - weight) * mlp.h])
    return NeuMfModel("neumf", h, gmf.gmf_user.copy(), gmf.gmf_item.copy(), mlp.mlp_user.copy(),
                      mlp.mlp_item.copy(), [l.copy() for l in mlp.mlp_layers])


def pretrain_and_fuse(train: InteractionMatrix, cfg: NcfConfig) -> NeuMfModel:
    return fuse(*pretrain(train, cfg))


def fit(train: InteractionMatrix, cfg: NcfConfig | None = None,
        pretrained: NeuMfModel | None = None) -> NeuMfModel:
    """Train NeuMF for ``cfg.epochs``, from ``pretrained`` (copied) or a random init."""
    cfg = cfg or NcfConfig()
    if pretrained is not None:
        model = pretrained.copy()
        model.history = []
    else:
        model = init_model("neumf", train.n_users, train.n_items, cfg, seed=[cfg.seed, 3])
    return train_epochs(model, train, cfg, cfg.epochs, data_tag=3)


# -- persistence ------------------------------------------------------------------------------


def save_ncf(model: NeuMfModel, directory: str | Path, cfg: NcfConfig) -> Path:
    """``ncf.json`` (config, kind, shapes) plus ``weights.json`` / ``weights.bin``."""
    d = Path(directory)
    arrays = [(name, arr) for name, arr in model.params().items() if not name.startswith("mlp.")]
    layer_arrays, acts = layers_to_arrays("mlp", model.mlp_layers)
    arrays += layer_arrays
    save_weights(d, arrays, {"mlp": acts})
    manifest = {
        "model": "ncf",
        "kind": model.kind,
        "n_users": model.n_users,
        "n_items": model.n_items,
        "config": asdict(cfg),
        "shapes": {name: list(arr.shape) for name, arr in arrays},
    }
    (d / "ncf.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return d


def load_ncf(directory: str | Path):
    d = Path(directory)
    manifest = json.loads((d / "ncf.json").read_text())
    arrays, wm = load_weights(d)
    layers = layers_from_arrays("mlp", arrays, wm["activations"].get("mlp", []))
    model = NeuMfModel(manifest["kind"], arrays["h"], arrays.get("gmf_user"), arrays.get("gmf_item"),
                       arrays.get("mlp_user"), arrays.get("mlp_item"), layers)
    return model, manifest

