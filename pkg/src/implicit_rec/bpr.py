"""Matrix factorization trained on the BPR pairwise criterion.

For a triplet (u, i, j) with x = s(u, i) - s(u, j) the loss is
``-ln sigmoid(x) + reg * (|p_u|^2 + |q_i|^2 + |q_j|^2)``. Updates use Adam restricted to
the factor rows that appear in the batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .als import FactorModel, init_factors
from .dataset import InteractionMatrix, Triplet, Triplets, sample_triplets
from .neural import AdamState, adam_step, embedding_grad, sigmoid


@dataclass
class BprConfig:
    k: int = 200
    learning_rate: float = 0.01
    reg: float = 1e-4
    epochs: int = 200
    batch_size: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.learning_rate <= 0 or self.reg < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError(f"invalid BPR config {self}")


def _as_triplets(batch) -> Triplets:
    if isinstance(batch, Triplets):
        return batch
    if isinstance(batch, Triplet):
        batch = [batch]
    arr = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    return Triplets(arr[:, 0], arr[:, 1], arr[:, 2])


def margins(model: FactorModel, batch) -> np.ndarray:
    """x_uij = s(u, i) - s(u, j) for every triplet."""
    t = _as_triplets(batch)
    return np.einsum("bk,bk->b", model.P[t.u], model.Q[t.i] - model.Q[t.j])


def pairwise_loss(model: FactorModel, t: Triplet, reg: float) -> float:
    p, qi, qj = model.P[t[0]], model.Q[t[1]], model.Q[t[2]]
    x = float(p @ (qi - qj))
    return float(np.logaddexp(0.0, -x)) + reg * float(p @ p + qi @ qi + qj @ qj)


def batch_loss_and_grads(model: FactorModel, batch, reg: float):
    """Summed pairwise loss over the batch and its sparse gradients for ``P`` and ``Q``."""
    t = _as_triplets(batch)
    p, qi, qj = model.P[t.u], model.Q[t.i], model.Q[t.j]
    x = np.einsum("bk,bk->b", p, qi - qj)
    loss = float(np.sum(np.logaddexp(0.0, -x))
                 + reg * (np.sum(p * p) + np.sum(qi * qi) + np.sum(qj * qj)))
    # d/dx of -ln sigmoid(x)
    gx = -sigmoid(-x)[:, None]
    dp = gx * (qi - qj) + 2.0 * reg * p
    dqi = gx * p + 2.0 * reg * qi
    dqj = -gx * p + 2.0 * reg * qj
    grads = {
        "P": embedding_grad(t.u, dp),
        "Q": embedding_grad(np.concatenate([t.i, t.j]), np.concatenate([dqi, dqj])),
    }
    return loss, grads


def sgd_step(model: FactorModel, batch, cfg: BprConfig, state: AdamState | None = None):
    """One Adam step on the summed batch loss; only rows u, i, j of the batch move.

    Returns ``(model, state, loss)`` with the loss measured before the update.
    """
    t = _as_triplets(batch)
    if len(t) == 0:
        raise ValueError("empty batch")
    state = state or AdamState(learning_rate=cfg.learning_rate)
    loss, grads = batch_loss_and_grads(model, t, cfg.reg)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite BPR loss")
    adam_step({"P": model.P, "Q": model.Q}, grads, state)
    return model, state, loss


def fit(train: InteractionMatrix, cfg: BprConfig | None = None) -> FactorModel:
    """Per epoch: draw nnz fresh triplets, step through them in batches.

    ``model.history`` holds the mean per-triplet loss of each epoch.
    """
    cfg = cfg or BprConfig()
    model = init_factors(train.n_users, train.n_items, cfg.k, cfg.seed)
    state = AdamState(learning_rate=cfg.learning_rate)
    n = train.nnz
    for epoch in range(cfg.epochs):
        trip = sample_triplets(train, n, seed=[cfg.seed, epoch])
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            sl = slice(lo, lo + cfg.batch_size)
            batch = Triplets(trip.u[sl], trip.i[sl], trip.j[sl])
            _, state, loss = sgd_step(model, batch, cfg, state)
            total += loss
        model.history.append(total / n)
    return model


