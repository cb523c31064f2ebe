"""Finite-difference oracles and small fixtures shared by the tests."""
import numpy as np

from implicit_rec import acf, ncf
from implicit_rec.dataset import InteractionRecord, build_matrix
from implicit_rec.neural import RowGrad

FD_STEP = 1e-6
# gradients smaller than this are compared absolutely, not relatively
REL_FLOOR = 1e-6


def central_diff(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Numerical gradient of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def dense(g, shape) -> np.ndarray:
    if isinstance(g, RowGrad):
        out = np.zeros(shape)
        out[g.rows] = g.values
        return out
    return np.asarray(g)


def rel_error(analytic, numeric, floor: float = REL_FLOOR) -> float:
    a, n = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor), initial=0.0))


def check_grads(loss_fn, params: dict, grads: dict) -> float:
    """Worst relative error over all parameters in ``grads``."""
    worst = 0.0
    for name, g in grads.items():
        p = params[name]
        worst = max(worst, rel_error(dense(g, p.shape), central_diff(loss_fn, p)))
    return worst


def matrix_from_cells(cells, n_users=None, n_items=None):
    """Matrix from ``(u, i, count, time)`` tuples with keys u0.. and i0.."""
    recs = [InteractionRecord(f"u{u}", f"i{i}", c, t) for u, i, c, t in cells]
    users = [f"u{u}" for u in range(n_users)] if n_users else ()
    items = [f"i{i}" for i in range(n_items)] if n_items else ()
    return build_matrix(recs, users, items)


def random_matrix(rng: np.random.Generator, n_users: int, n_items: int, density: float = 0.2,
                  timestamps: bool = True):
    cells = []
    for u in range(n_users):
        k = max(1, rng.binomial(n_items, density))
        for i in rng.choice(n_items, size=min(k, n_items - 1), replace=False):
            cells.append((u, int(i), int(rng.integers(1, 5)), int(rng.integers(0, 50)) if timestamps else None))
    return matrix_from_cells(cells, n_users, n_items)


def cell_set(m) -> set:
    rows = np.repeat(np.arange(m.n_users), m.row_lengths)
    return set(zip(rows.tolist(), m.indices.tolist()))


def latest_item(m, u):
    """Brute force: the cell with the greatest (timestamp, input position)."""
    lo, hi = m.indptr[u], m.indptr[u + 1]
    best = None
    for k in range(lo, hi):
        t = m.timestamps[k] if m.timestamps is not None else np.iinfo(np.int64).min
        key = (int(t), int(m.order[k]))
        if best is None or key > best[0]:
            best = (key, int(m.indices[k]))
    return best[1]


def check_split_invariants(m, split) -> None:
    """Every documented invariant of a leave-one-out split, checked exhaustively."""
    full = cell_set(m)
    train = cell_set(split.train)
    lengths = m.row_lengths
    assert split.train.n_users == m.n_users and split.train.n_items == m.n_items
    assert list(split.test_users) == [u for u in range(m.n_users) if lengths[u] >= 2]
    assert list(split.excluded_users) == [u for u in range(m.n_users) if lengths[u] < 2]
    assert split.test_negatives.shape == (len(split.test_users), split.n_neg)
    tested = set()
    for t, (u, i) in enumerate(split.test_positives):
        assert u not in tested
        tested.add(u)
        assert (u, i) in full and (u, i) not in train
        assert i == latest_item(m, u)
        neg = split.test_negatives[t]
        assert len(set(neg.tolist())) == split.n_neg
        assert all((u, int(j)) not in full for j in neg)
        assert np.all((neg >= 0) & (neg < m.n_items))
    # nothing lost or invented
    assert train | set(split.test_positives) == full
    assert not (train & set(split.test_positives))
    for u in split.excluded_users:
        assert {c for c in full if c[0] == u} <= train


# -- randomized small models for gradient checks -----------------------------------------------


def ncf_instance(kind, seed=0, n_users=4, n_items=5, factors=4, layers=(8, 4, 2)):
    cfg = ncf.NcfConfig(n_factors=factors, layer_sizes=list(layers))
    model = ncf.init_model(kind, n_users, n_items, cfg, seed=seed)
    # larger embeddings than the N(0, 0.01) init so the check is not dominated by round-off
    rng = np.random.default_rng(seed + 100)
    for name in ("gmf_user", "gmf_item", "mlp_user", "mlp_item"):
        arr = getattr(model, name)
        if arr is not None:
            arr[:] = rng.normal(size=arr.shape)
    # zero biases put dead-ReLU rows exactly on the kink at 0
    for layer in model.mlp_layers:
        layer.bias[:] = rng.normal(scale=0.1, size=layer.bias.shape)
    return model


def acf_instance(seed=0, n=6, hidden=2, noise=0.3, drop=0.2):
    model = acf.init_model(n, acf.AcfConfig(hidden_layer=hidden, noise_prob=noise, dropout_prob=drop, seed=seed))
    rng = np.random.default_rng(seed + 50)
    for layer in model.layers:
        layer.bias[:] = rng.normal(scale=0.1, size=layer.bias.shape)
    return model
