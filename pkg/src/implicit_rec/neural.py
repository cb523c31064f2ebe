"""Dense layers with a hand-written backward pass, BCE, dropout, Xavier init and Adam.

Everything is float64 numpy; a "Matrix2D" is a plain 2-d ``np.ndarray``. The topology
is a fixed chain of affine + activation layers, which is all the NCF tower and the
autoencoder need.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit

ACTIVATIONS = ("relu", "sigmoid", "identity")
BCE_CLAMP = 1e-12

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sigmoid(z):
    return expit(z)


def xavier_init(rows: int, cols: int, seed=None) -> np.ndarray:
    """Glorot-uniform ``rows x cols`` matrix on +-sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise ValueError(f"xavier_init needs positive shape, got ({rows}, {cols})")
    bound = np.sqrt(6.0 / (rows + cols))
    return as_rng(seed).uniform(-bound, bound, size=(rows, cols))


@dataclass
class DenseLayer:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    activation: str = "relu"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ValueError(f"bias shape {self.bias.shape} does not match weight {self.weight.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def xavier(cls, n_in: int, n_out: int, activation: str = "relu", seed=None) -> "DenseLayer":
        return cls(xavier_init(n_in, n_out, seed), np.zeros(n_out), activation)

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weight.copy(), self.bias.copy(), self.activation)


@dataclass(frozen=True)
class DropoutSpec:
    p: float
    mode: str = "train"

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {self.p}")
        if self.mode not in ("train", "inference"):
            raise ValueError(f"unknown dropout mode {self.mode!r}")

    @property
    def active(self) -> bool:
        return self.mode == "train" and self.p > 0.0


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return sigmoid(z)
    return z


def _activation_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: kept units carry 1/(1-p), dropped units 0."""
    return (rng.random(shape) >= p) / (1.0 - p)


@dataclass
class Tape:
    layers: list[DenseLayer]
    inputs: list[np.ndarray] = field(default_factory=list)  # post-dropout layer inputs
    masks: list[np.ndarray | None] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)


class LayerGrad(NamedTuple):
    weight: np.ndarray
    bias: np.ndarray


def check_chain(layers: Sequence[DenseLayer], n_in: int) -> None:
    width = n_in
    for k, layer in enumerate(layers):
        if layer.n_in != width:
            raise ValueError(f"layer {k} expects input width {layer.n_in}, got {width}")
        width = layer.n_out


def forward(layers: Sequence[DenseLayer], x: np.ndarray,
            dropout: Sequence[DropoutSpec | None] | None = None, seed=None):
    """Run ``x`` (batch x features) through the layer chain.

    ``dropout[l]`` applies to the *input* of layer ``l``. Returns ``(output, tape)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    check_chain(layers, x.shape[1])
    if dropout is not None and len(dropout) != len(layers):
        raise ValueError("need one dropout spec (or None) per layer")
    rng = None
    tape = Tape(list(layers))
    h = x
    for k, layer in enumerate(layers):
        spec = dropout[k] if dropout is not None else None
        mask = None
        if spec is not None and spec.active:
            rng = rng or as_rng(seed)
            mask = dropout_mask(h.shape, spec.p, rng)
            h = h * mask
        z = h @ layer.weight + layer.bias
        a = _activate(z, layer.activation)
        tape.inputs.append(h)
        tape.masks.append(mask)
        tape.pre.append(z)
        tape.post.append(a)
        h = a
    return h, tape


def backward(tape: Tape, upstream: np.ndarray):
    """Reverse pass. Returns ``(layer_grads, input_grad)``; ``input_grad`` is w.r.t. the
    pre-dropout input of the first layer."""
    g = np.asarray(upstream, dtype=np.float64)
    if tape.post and g.shape != tape.post[-1].shape:
        raise ValueError(f"upstream gradient shape {g.shape} != output shape {tape.post[-1].shape}")
    grads: list[LayerGrad] = []
    for k in range(len(tape.layers) - 1, -1, -1):
        layer = tape.layers[k]
        dz = g * _activation_grad(tape.pre[k], tape.post[k], layer.activation)
        grads.append(LayerGrad(tape.inputs[k].T @ dz, dz.sum(axis=0)))
        g = dz @ layer.weight.T
        if tape.masks[k] is not None:
            g = g * tape.masks[k]
    grads.reverse()
    return grads, g


def bce_loss(predicted, labels, reduction: str = "mean"):
    """Binary cross-entropy and its gradient w.r.t. the predictions.

    Predictions are clamped to [1e-12, 1 - 1e-12]. ``reduction`` is ``"mean"`` or ``"sum"``.
    """
    y = np.asarray(labels, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    p = np.clip(np.asarray(predicted, dtype=np.float64), BCE_CLAMP, 1.0 - BCE_CLAMP)
    losses = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    grad = (p - y) / (p * (1.0 - p))
    if reduction == "sum":
        return float(losses.sum()), grad
    if reduction == "mean":
        n = max(losses.size, 1)
        return float(losses.sum() / n), grad / n
    raise ValueError(f"unknown reduction {reduction!r}")


# -- embeddings & optimizer -------------------------------------------------------------------


class RowGrad(NamedTuple):
    """Sparse gradient for an embedding table: unique row ids and their summed gradients."""

    rows: np.ndarray
    values: np.ndarray


def embedding_grad(index: np.ndarray, grad_rows: np.ndarray) -> RowGrad:
    """Accumulate per-example gradients of looked-up rows into unique rows (fixed order)."""
    rows, inverse = np.unique(index, return_inverse=True)
    acc = np.zeros((len(rows),) + grad_rows.shape[1:])
    np.add.at(acc, inverse.ravel(), grad_rows)
    return RowGrad(rows, acc)


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray | RowGrad],
              state: AdamState):
    """One bias-corrected Adam update, in place.

    A ``RowGrad`` updates only its rows (moments of other rows are left alone), so
    embedding rows not in the batch do not move.
    """
    for name, g in grads.items():
        vals = g.values if isinstance(g, RowGrad) else g
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError(f"non-finite gradient for {name!r}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    lr, eps = state.learning_rate, state.epsilon
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if isinstance(g, RowGrad):
            r = g.rows
            m[r] = b1 * m[r] + (1.0 - b1) * g.values
            v[r] = b2 * v[r] + (1.0 - b2) * g.values ** 2
            p[r] -= lr * (m[r] / c1) / (np.sqrt(v[r] / c2) + eps)
        else:
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


# -- serialization ----------------------------------------------------------------------------


def save_weights(directory: str | Path, arrays: Sequence[tuple[str, np.ndarray]],
                 layers: dict[str, list[str]] | None = None) -> Path:
    """Write ``weights.json`` (names, shapes, activations) and ``weights.bin`` (f64le, manifest order)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"dtype": "<f8", "arrays": [], "activations": layers or {}}
    offset = 0
    with (d / "weights.bin").open("wb") as fh:
        for name, arr in arrays:
            arr = np.ascontiguousarray(arr, dtype="<f8")
            manifest["arrays"].append({"name": name, "shape": list(arr.shape), "offset": offset})
            fh.write(arr.tobytes())
            offset += arr.size
    (d / "weights.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return d


def load_weights(directory: str | Path):
    d = Path(directory)
    manifest = json.loads((d / "weights.json").read_text())
    flat = np.frombuffer((d / "weights.bin").read_bytes(), dtype="<f8")
    out = {}
    for entry in manifest["arrays"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        out[entry["name"]] = flat[entry["offset"]:entry["offset"] + size].reshape(entry["shape"]).copy()
    return out, manifest


def layers_to_arrays(prefix: str, layers: Sequence[DenseLayer]):
    arrays = []
    for k, layer in enumerate(layers):
        arrays.append((f"{prefix}.{k}.weight", layer.weight))
        arrays.append((f"{prefix}.{k}.bias", layer.bias))
    return arrays, [layer.activation for layer in layers]


def layers_from_arrays(prefix: str, arrays: dict[str, np.ndarray], activations: list[str]):
    return [DenseLayer(arrays[f"{prefix}.{k}.weight"], arrays[f"{prefix}.{k}.bias"], act)
            for k, act in enumerate(activations)]
