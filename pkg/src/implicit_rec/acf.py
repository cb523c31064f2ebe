"""Denoising autoencoder over user interaction vectors.

Encoder: N -> hidden (ReLU). Decoder: hidden -> N (sigmoid), read as per-item purchase
probabilities. Training drops input coordinates with ``noise_prob`` and bottleneck
units with ``dropout_prob`` (both inverted dropout), minimizes the per-user logistic
negative log-likelihood summed over items, and adds L2 decay on all weights and biases.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import InteractionMatrix
from .neural import (AdamState, DenseLayer, DropoutSpec, adam_step, backward, bce_loss,
                     forward, layers_from_arrays, layers_to_arrays, load_weights, save_weights)


@dataclass
class AcfConfig:
    hidden_layer: int = 7
    noise_prob: float = 0.3
    dropout_prob: float = 0.2
    learning_rate: float = 0.001
    weight_decay: float = 2e-5
    batch_size: int = 256
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.hidden_layer < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError(f"invalid ACF config {self}")
        for p in (self.noise_prob, self.dropout_prob):
            if not 0.0 <= p < 1.0:
                raise ValueError(f"dropout probabilities must be in [0, 1), got {p}")


@dataclass
class AcfModel:
    encoder: list[DenseLayer]
    decoder: list[DenseLayer]
    noise_prob: float = 0.0
    dropout_prob: float = 0.0
    history: list[float] = field(default_factory=list)
    # rows fed to the encoder at scoring time
    inputs: InteractionMatrix | None = field(default=None, repr=False)

    def __post_init__(self):
        widths = [l.n_in for l in self.encoder] + [self.encoder[-1].n_out]
        back = [l.n_out for l in reversed(self.decoder)] + [self.decoder[0].n_in]
        if widths != back:
            raise ValueError(f"decoder widths {back[::-1]} do not mirror encoder {widths}")

    @property
    def n_items(self) -> int:
        return self.encoder[0].n_in

    @property
    def layers(self) -> list[DenseLayer]:
        return self.encoder + self.decoder

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for k, layer in enumerate(self.layers):
            out[f"{k}.weight"] = layer.weight
            out[f"{k}.bias"] = layer.bias
        return out


def init_model(n_items: int, cfg: AcfConfig) -> AcfModel:
    rng = np.random.default_rng(cfg.seed)
    enc = [DenseLayer.xavier(n_items, cfg.hidden_layer, "relu", rng)]
    dec = [DenseLayer.xavier(cfg.hidden_layer, n_items, "sigmoid", rng)]
    return AcfModel(enc, dec, cfg.noise_prob, cfg.dropout_prob)


def _dropout_specs(model: AcfModel, mode: str):
    specs = [None] * len(model.layers)
    specs[0] = DropoutSpec(model.noise_prob, mode)
    specs[len(model.encoder)] = DropoutSpec(model.dropout_prob, mode)
    return specs


def _run(model: AcfModel, x, mode: str, seed):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.n_items:
        raise ValueError(f"input has {x.shape[-1]} items, model expects {model.n_items}")
    return forward(model.layers, np.atleast_2d(x), _dropout_specs(model, mode), seed)


def forward_user(model: AcfModel, x_u, mode: str = "inference", seed=None) -> np.ndarray:
    """Reconstruction probabilities for one user vector (or a batch of rows)."""
    out, _ = _run(model, x_u, mode, seed)
    return out[0] if np.ndim(x_u) == 1 else out


def decay_term(model: AcfModel, weight_decay: float) -> float:
    return weight_decay * sum(float(np.sum(p * p)) for p in model.params().values())


def acf_loss(x_u, reconstruction, model: AcfModel, weight_decay: float) -> float:
    """Logistic NLL summed over items (averaged over users for a batch) plus L2 decay."""
    x = np.atleast_2d(x_u)
    nll, _ = bce_loss(np.atleast_2d(reconstruction), x, reduction="sum")
    return nll / x.shape[0] + decay_term(model, weight_decay)


def loss_and_grads(model: AcfModel, x, weight_decay: float, mode: str = "train", seed=None):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    recon, tape = _run(model, x, mode, seed)
    nll, grad = bce_loss(recon, x, reduction="sum")
    n = x.shape[0]
    layer_grads, _ = backward(tape, grad / n)
    params = model.params()
    loss = nll / n + decay_term(model, weight_decay)
    grads = {}
    for k, lg in enumerate(layer_grads):
        grads[f"{k}.weight"] = lg.weight + 2.0 * weight_decay * params[f"{k}.weight"]
        grads[f"{k}.bias"] = lg.bias + 2.0 * weight_decay * params[f"{k}.bias"]
    return loss, grads


def fit(train: InteractionMatrix, cfg: AcfConfig | None = None) -> AcfModel:
    """Adam over shuffled batches of user rows; ``history`` holds each epoch's mean loss."""
    cfg = cfg or AcfConfig()
    if train.n_items < cfg.hidden_layer:
        raise ValueError(f"{train.n_items} items cannot feed a {cfg.hidden_layer}-wide bottleneck")
    model = init_model(train.n_items, cfg)
    X = train.binary()
    rng = np.random.default_rng([cfg.seed, 1])
    state = AdamState(learning_rate=cfg.learning_rate)
    for epoch in range(cfg.epochs):
        order = rng.permutation(train.n_users)
        total = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            rows = order[lo:lo + cfg.batch_size]
            loss, grads = loss_and_grads(model, X[rows], cfg.weight_decay, "train", rng)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite ACF loss in epoch {epoch}")
            adam_step(model.params(), grads, state)
            total += loss * len(rows)
        model.history.append(total / train.n_users)
    model.inputs = train
    return model


def user_vector(m: InteractionMatrix, u: int) -> np.ndarray:
    x = np.zeros(m.n_items)
    x[m.items_of(u)] = 1.0
    return x


def score_user(model: AcfModel, u: int, candidate_items, inputs: InteractionMatrix | None = None):
    """Inference-mode reconstruction of user ``u`` at ``candidate_items``."""
    inputs = inputs if inputs is not None else model.inputs
    if inputs is None:
        raise ValueError("no input rows attached to the model")
    if inputs.n_items != model.n_items:
        raise ValueError(f"input matrix has {inputs.n_items} items, model expects {model.n_items}")
    items = np.asarray(candidate_items, dtype=np.int64)
    if items.size and (items.min() < 0 or items.max() >= model.n_items):
        raise IndexError(f"candidate item outside [0, {model.n_items})")
    return forward_user(model, user_vector(inputs, u))[items]


# -- persistence ------------------------------------------------------------------------------


def save_acf(model: AcfModel, directory: str | Path, cfg: AcfConfig) -> Path:
    d = Path(directory)
    enc, enc_acts = layers_to_arrays("encoder", model.encoder)
    dec, dec_acts = layers_to_arrays("decoder", model.decoder)
    save_weights(d, enc + dec, {"encoder": enc_acts, "decoder": dec_acts})
    manifest = {"model": "acf", "n_items": model.n_items, "config": asdict(cfg)}
    (d / "acf.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return d


def load_acf(directory: str | Path):
    d = Path(directory)
    manifest = json.loads((d / "acf.json").read_text())
    arrays, wm = load_weights(d)
    acts = wm["activations"]
    model = AcfModel(layers_from_arrays("encoder", arrays, acts["encoder"]),
                     layers_from_arrays("decoder", arrays, acts["decoder"]),
                     manifest["config"]["noise_prob"], manifest["config"]["dropout_prob"])
    return model, manifest
