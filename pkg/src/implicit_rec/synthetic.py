"""Synthetic purchase logs with planted latent structure, for tests and experiment scripts."""
from __future__ import annotations

import numpy as np

from .dataset import InteractionRecord


def _records(pairs, counts, times) -> list[InteractionRecord]:
    order = np.argsort(times, kind="stable")
    return [InteractionRecord(f"u{u}", f"i{i}", int(c), int(t))
            for (u, i), c, t in zip(np.asarray(pairs)[order], np.asarray(counts)[order], np.asarray(times)[order])]


def _gumbel_topk(logits: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` distinct indices sampled without replacement with probability ~ exp(logits)."""
    g = logits + rng.gumbel(size=logits.shape)
    return np.argsort(-g, kind="stable")[:k]


def planted_blocks(n_users: int = 300, n_items: int = 500, n_blocks: int = 8,
                   min_items: int = 10, max_items: int = 30, in_block: float = 0.97,
                   popularity: float = 1.0, seed: int = 0) -> list[InteractionRecord]:
    """Users and items split into ``n_blocks`` groups.

    Each user buys ``min_items..max_items`` distinct items; each purchase comes from the
    user's own block with probability ``in_block``, otherwise from anywhere. Inside a
    block items are chosen with Zipf weights ``1 / rank**popularity``. Timestamps are a
    random global purchase order; counts are 1 + Poisson(1).
    """
    rng = np.random.default_rng(seed)
    user_block = rng.integers(0, n_blocks, n_users)
    item_block = rng.permutation(np.arange(n_items) % n_blocks)
    item_rank = np.empty(n_items)
    for b in range(n_blocks):
        members = np.flatnonzero(item_block == b)
        item_rank[members] = rng.permutation(len(members))
    weight = 1.0 / (item_rank + 1.0) ** popularity

    pairs = []
    for u in range(n_users):
        n = int(rng.integers(min_items, max_items + 1))
        n_in = int(rng.binomial(n, in_block))
        own = np.flatnonzero(item_block == user_block[u])
        n_in = min(n_in, len(own))
        chosen = own[_gumbel_topk(np.log(weight[own]), n_in, rng)]
        rest = np.setdiff1d(np.arange(n_items), chosen)
        noise = rest[_gumbel_topk(np.log(weight[rest]), n - n_in, rng)]
        items = np.concatenate([chosen, noise])
        pairs.extend((u, i) for i in items)
    counts = 1 + rng.poisson(1.0, len(pairs))
    return _records(pairs, counts, rng.permutation(len(pairs)))


def planted_low_rank(n_users: int = 50, n_items: int = 80, rank: int = 4, density: float = 0.05,
                     popularity: float = 3.0, concentration: float = 0.05,
                     seed: int = 0) -> list[InteractionRecord]:
    """Purchases drawn from a planted rank-``rank`` preference matrix ``S = U V^T``.

    ``U`` holds Dirichlet(``concentration``) group memberships per user; ``V`` puts each
    item in one group with Zipf weight ``1 / rank_in_group**popularity``. Every user buys
    ``round(density * n_items)`` distinct items with probability proportional to ``S[u]``.
    """
    rng = np.random.default_rng(seed)
    U = rng.dirichlet(np.full(rank, concentration), n_users)
    group = rng.permutation(np.arange(n_items) % rank)
    V = np.zeros((n_items, rank))
    for g in range(rank):
        members = np.flatnonzero(group == g)
        V[members, g] = 1.0 / (rng.permutation(len(members)) + 1.0) ** popularity
    S = U @ V.T
    n = max(2, int(round(density * n_items)))
    pairs = []
    with np.errstate(divide="ignore"):
        logS = np.log(S)
    for u in range(n_users):
        items = _gumbel_topk(logS[u], n, rng)
        pairs.extend((u, i) for i in items)
    counts = 1 + rng.poisson(1.0, len(pairs))
    return _records(pairs, counts, rng.permutation(len(pairs)))


def keys(n_users: int, n_items: int) -> tuple[list[str], list[str]]:
    """User and item key universes matching the generators' naming."""
    return [f"u{u}" for u in range(n_users)], [f"i{i}" for i in range(n_items)]
