"""Implicit-feedback matrix factorization by alternating least squares.

Each observed cell carries confidence ``1 + alpha * count`` and target preference 1;
every unobserved cell has confidence 1 and target 0. Each half-sweep solves one side
exactly via the k x k normal equations using the ``Y^T Y + Y^T (C_u - I) Y`` split, so
only the observed entries of a row are touched.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .dataset import InteractionMatrix


class AlsError(RuntimeError):
    pass


@dataclass
class AlsConfig:
    k: int = 200
    reg: float = 1e-4
    alpha: float = 15.0
    epochs: int = 30
    # accepted for parity with gradient-trained configs; the exact solves ignore them
    learning_rate: float = 0.01
    batch_size: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.reg < 0 or self.alpha < 0 or self.epochs < 1:
            raise ValueError(f"invalid ALS config {self}")


@dataclass
class FactorModel:
    """User factors ``P`` (M x k) and item factors ``Q`` (N x k); score is ``P[u] . Q[i]``."""

    P: np.ndarray
    Q: np.ndarray
    history: list[float] = field(default_factory=list)

    @property
    def n_users(self) -> int:
        return self.P.shape[0]

    @property
    def n_items(self) -> int:
        return self.Q.shape[0]

    @property
    def k(self) -> int:
        return self.P.shape[1]

    def scores(self, u: int, items: np.ndarray | None = None) -> np.ndarray:
        q = self.Q if items is None else self.Q[items]
        return q @ self.P[u]


def score(model: FactorModel, u: int, i: int) -> float:
    if not (0 <= u < model.n_users and 0 <= i < model.n_items):
        raise IndexError(f"(u={u}, i={i}) outside {model.n_users} x {model.n_items}")
    return float(model.P[u] @ model.Q[i])


def confidence(r, alpha: float = 15.0):
    c = 1.0 + alpha * np.asarray(r, dtype=np.float64)
    return float(c) if c.ndim == 0 else c


def als_objective(model: FactorModel, train: InteractionMatrix, cfg: AlsConfig) -> float:
    """Confidence-weighted squared error over all M x N cells plus L2 on both sides."""
    P, Q = model.P, model.Q
    # sum of s^2 over every cell, then correct the observed ones
    total = float(np.sum((P.T @ P) * (Q.T @ Q)))
    rows = np.repeat(np.arange(train.n_users), train.row_lengths)
    s = np.einsum("ij,ij->i", P[rows], Q[train.indices])
    c = confidence(train.counts, cfg.alpha)
    total += float(np.sum(c * (1.0 - s) ** 2 - s ** 2))
    return total + cfg.reg * float(np.sum(P * P) + np.sum(Q * Q))


def item_side(train: InteractionMatrix):
    """CSR arrays of the transposed (item x user) count matrix."""
    t = train.to_csr().T.tocsr()
    t.sort_indices()
    return t.indptr, t.indices, t.data


def _solve_rows(rows, fixed, gram, indptr, indices, counts, cfg, out):
    k = fixed.shape[1]
    eye = cfg.reg * np.eye(k)
    for r in rows:
        lo, hi = indptr[r], indptr[r + 1]
        if lo == hi:
            out[r] = 0.0
            continue
        Y = fixed[indices[lo:hi]]
        c = 1.0 + cfg.alpha * counts[lo:hi]
        A = gram + (Y.T * (c - 1.0)) @ Y + eye
        b = Y.T @ c
        try:
            out[r] = cho_solve(cho_factor(A), b)
        except LinAlgError as exc:
            raise AlsError(f"normal equations for row {r} are singular (reg={cfg.reg})") from exc


def solve_side(fixed: np.ndarray, indptr, indices, counts, cfg: AlsConfig,
               workers: int = 1) -> np.ndarray:
    """Exact least-squares update of every row on one side given the other side."""
    n_rows = len(indptr) - 1
    out = np.empty((n_rows, fixed.shape[1]))
    gram = fixed.T @ fixed
    if workers <= 1 or n_rows < 2 * workers:
        _solve_rows(range(n_rows), fixed, gram, indptr, indices, counts, cfg, out)
        return out
    chunks = np.array_split(np.arange(n_rows), workers)
    with ThreadPoolExecutor(workers) as pool:
        futures = [pool.submit(_solve_rows, ch, fixed, gram, indptr, indices, counts, cfg, out)
                   for ch in chunks]
        for f in futures:
            f.result()
    return out


def default_workers() -> int:
    n = int(os.environ.get("IMPLICIT_REC_THREADS", "1") or 1)
    return n if n > 0 else (os.cpu_count() or 1)


def init_factors(n_users: int, n_items: int, k: int, seed: int) -> FactorModel:
    rng = np.random.default_rng(seed)
    P = rng.uniform(-0.01, 0.01, size=(n_users, k))
    Q = rng.uniform(-0.01, 0.01, size=(n_items, k))
    return FactorModel(P, Q)


def fit(train: InteractionMatrix, cfg: AlsConfig | None = None, workers: int | None = None,
        model: FactorModel | None = None) -> FactorModel:
    """Alternate user and item solves for ``cfg.epochs`` sweeps.

    ``model.history`` gets the objective after every half-sweep (2 * epochs values).
    """
    cfg = cfg or AlsConfig()
    if train.nnz == 0:
        raise AlsError("training matrix is empty")
    workers = default_workers() if workers is None else workers
    model = model or init_factors(train.n_users, train.n_items, cfg.k, cfg.seed)
    items = item_side(train)
    for _ in range(cfg.epochs):
        model.P = solve_side(model.Q, train.indptr, train.indices, train.counts, cfg, workers)
        model.history.append(als_objective(model, train, cfg))
        model.Q = solve_side(model.P, *items, cfg, workers)
        model.history.append(als_objective(model, train, cfg))
    return model


# -- persistence ------------------------------------------------------------------------------


def save_factors(model: FactorModel, directory: str | Path, name: str, config) -> Path:
    """``<name>.json`` manifest plus ``P.bin`` / ``Q.bin`` as row-major f64le."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"model": name, "n_users": model.n_users, "n_items": model.n_items,
                "k": model.k, "config": asdict(config)}
    (d / f"{name}.json").write_text(json.dumps(manifest, indent=1) + "\n")
    (d / "P.bin").write_bytes(np.ascontiguousarray(model.P, dtype="<f8").tobytes())
    (d / "Q.bin").write_bytes(np.ascontiguousarray(model.Q, dtype="<f8").tobytes())
    return d


def load_factors(directory: str | Path, name: str):
    d = Path(directory)
    manifest = json.loads((d / f"{name}.json").read_text())
    k = manifest["k"]
    P = np.frombuffer((d / "P.bin").read_bytes(), dtype="<f8").reshape(manifest["n_users"], k).copy()
    Q = np.frombuffer((d / "Q.bin").read_bytes(), dtype="<f8").reshape(manifest["n_items"], k).copy()
    return FactorModel(P, Q), manifest
