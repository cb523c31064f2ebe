"""Leave-one-out ranking evaluation with sampled negatives.

A scorer is any callable ``scorer(user, items) -> scores`` (higher is better). For
each tested user the held-out positive is ranked among its sampled negatives;
ties go to the lower item index.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import InteractionMatrix, LeaveOneOutSplit

Scorer = Callable[[int, np.ndarray], np.ndarray]

DEFAULT_K = 12


class EvalError(RuntimeError):
    pass


def ndcg_at_k(rank: int, k: int = DEFAULT_K) -> float:
    """NDCG with one relevant item at 1-based ``rank`` (IDCG = 1)."""
    if rank < 1 or k < 1:
        raise ValueError("rank and k must be >= 1")
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def one_product_hit(rank: int, k: int = DEFAULT_K) -> int:
    if rank < 1:
        raise ValueError("rank must be >= 1")
    return int(rank <= k)


def ranking_order(items: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Indices sorting by descending score, then ascending item index."""
    return np.lexsort((items, -scores))


@dataclass(frozen=True)
class RankedList:
    user: int
    items: np.ndarray
    position_of_positive: int


def rank_candidates(user: int, positive: int, candidates: np.ndarray, scores: np.ndarray) -> RankedList:
    ranked = candidates[ranking_order(candidates, scores)]
    pos = int(np.flatnonzero(ranked == positive)[0]) + 1
    return RankedList(user, ranked, pos)


@dataclass
class EvalReport:
    k: int
    ndcg_mean: float
    ndcg_std: float
    one_product_hit_ratio: float
    per_user: list[tuple[int, int, float]] = field(default_factory=list)

    @property
    def n_users(self) -> int:
        return len(self.per_user)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "n_users": self.n_users,
            "ndcg_mean": self.ndcg_mean,
            "ndcg_std": self.ndcg_std,
            "std_kind": "population",
            "one_product_hit_ratio": self.one_product_hit_ratio,
        }

    def write(self, directory: str | Path, user_ids: Sequence[str] | None = None) -> Path:
        """``metrics.json`` plus ``per_user.csv`` of ranks."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "metrics.json").write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        with (d / "per_user.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user_index", "user_key", "rank", "ndcg", "hit"])
            for u, rank, nd in self.per_user:
                key = user_ids[u] if user_ids is not None else ""
                w.writerow([u, key, rank, repr(nd), one_product_hit(rank, self.k)])
        return d


def _checked_scores(scorer: Scorer, u: int, items: np.ndarray) -> np.ndarray:
    s = np.asarray(scorer(u, items), dtype=np.float64)
    if s.shape != items.shape:
        raise EvalError(f"scorer returned shape {s.shape} for {items.shape} candidates (user {u})")
    bad = np.flatnonzero(~np.isfinite(s))
    if len(bad):
        raise EvalError(f"non-finite score for user {u}, item {items[bad[0]]}")
    return s


def evaluate(scorer: Scorer, split: LeaveOneOutSplit, k: int = DEFAULT_K, workers: int = 1) -> EvalReport:
    """Rank positive + negatives for every tested user; population std for the band."""
    n = len(split.test_users)

    def one(t: int) -> tuple[int, int, float]:
        u = int(split.test_users[t])
        cand = split.candidates(t)
        rl = rank_candidates(u, int(split.test_items[t]), cand, _checked_scores(scorer, u, cand))
        return u, rl.position_of_positive, ndcg_at_k(rl.position_of_positive, k)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            per_user = list(pool.map(one, range(n)))
    else:
        per_user = [one(t) for t in range(n)]
    if not per_user:
        raise EvalError("split has no tested users")
    nd = np.array([p[2] for p in per_user])
    hits = np.array([one_product_hit(p[1], k) for p in per_user])
    return EvalReport(k, float(nd.mean()), float(nd.std()), float(hits.mean()), per_user)


def sampled_auc(scorer: Scorer, split: LeaveOneOutSplit) -> float:
    """Mean over users of P(score(positive) > score(negative)); ties count half."""
    aucs = []
    for t, u in enumerate(split.test_users):
        cand = split.candidates(t)
        s = _checked_scores(scorer, int(u), cand)
        aucs.append(np.mean((s[0] > s[1:]) + 0.5 * (s[0] == s[1:])))
    return float(np.mean(aucs))


def recommend_top_k(scorer: Scorer, train: InteractionMatrix, user: int, k: int = DEFAULT_K,
                    exclude_seen: bool = True):
    """Top-``k`` items for ``user`` by descending score. Returns ``(items, scores)``."""
    if not 0 <= user < train.n_users:
        raise IndexError(f"user {user} outside [0, {train.n_users})")
    items = np.arange(train.n_items)
    if exclude_seen:
        items = np.setdiff1d(items, train.items_of(user), assume_unique=True)
    if k > len(items):
        raise ValueError(f"k={k} exceeds the {len(items)} available candidates")
    s = _checked_scores(scorer, user, items)
    top = ranking_order(items, s)[:k]
    return items[top], s[top]
