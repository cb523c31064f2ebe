import numpy as np
import pytest

from implicit_rec import als, synthetic
from implicit_rec.als import AlsConfig, FactorModel, als_objective, confidence, solve_side
from implicit_rec.dataset import InteractionMatrix, build_matrix

from helpers import matrix_from_cells, random_matrix


def dense_counts(m):
    return m.to_csr().toarray()


def naive_objective(model, m, cfg):
    R = dense_counts(m)
    total = 0.0
    for u in range(m.n_users):
        for i in range(m.n_items):
            c = 1 + cfg.alpha * R[u, i]
            p = 1.0 if R[u, i] > 0 else 0.0
            total += c * (p - model.Q[i] @ model.P[u]) ** 2
    return total + cfg.reg * (np.sum(model.P ** 2) + np.sum(model.Q ** 2))


def naive_solve(fixed, R, cfg):
    """Row-by-row dense normal equations with the full confidence diagonal."""
    out = np.zeros((R.shape[0], fixed.shape[1]))
    for r in range(R.shape[0]):
        C = np.diag(1 + cfg.alpha * R[r])
        p = (R[r] > 0).astype(float)
        A = fixed.T @ C @ fixed + cfg.reg * np.eye(fixed.shape[1])
        out[r] = np.linalg.solve(A, fixed.T @ C @ p)
    return out


def test_confidence():
    assert confidence(0) == 1.0
    assert confidence(1, 15) == 16.0
    assert confidence(3, 15) == 46.0
    assert np.array_equal(confidence(np.array([0, 2]), 1.0), [1.0, 3.0])


def test_score():
    m = FactorModel(np.array([[1.0, 2.0]]), np.array([[3.0, 4.0], [0.0, 0.0]]))
    assert als.score(m, 0, 0) == 11.0
    assert als.score(m, 0, 1) == 0.0
    with pytest.raises(IndexError):
        als.score(m, 1, 0)


def test_scores_match_dense_product():
    rng = np.random.default_rng(0)
    m = FactorModel(rng.normal(size=(4, 3)), rng.normal(size=(5, 3)))
    full = m.P @ m.Q.T
    for u in range(4):
        assert np.allclose(m.scores(u), full[u])
        assert all(als.score(m, u, i) == pytest.approx(full[u, i]) for i in range(5))


def test_objective_at_zero_factors():
    m = random_matrix(np.random.default_rng(1), 6, 7)
    cfg = AlsConfig(k=2, alpha=3.0)
    zero = FactorModel(np.zeros((6, 2)), np.zeros((7, 2)))
    assert als_objective(zero, m, cfg) == pytest.approx(np.sum(1 + 3.0 * m.counts))


def test_objective_empty_matrix():
    empty = InteractionMatrix(0, 0, np.zeros(1, np.int64), np.zeros(0, np.int64), np.zeros(0),
                              (), (), np.zeros(0, np.int64))
    assert als_objective(FactorModel(np.zeros((0, 2)), np.zeros((0, 2))), empty, AlsConfig(k=2, reg=0.0)) == 0.0


def test_objective_matches_double_loop():
    rng = np.random.default_rng(2)
    m = matrix_from_cells([(0, 0, 2, None), (1, 2, 1, None), (2, 1, 4, None), (2, 2, 1, None)], 3, 3)
    cfg = AlsConfig(k=2, reg=0.3, alpha=2.0)
    model = FactorModel(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)))
    assert abs(als_objective(model, m, cfg) - naive_objective(model, m, cfg)) < 1e-10


def test_scalar_closed_form():
    m = matrix_from_cells([(0, 0, 2, None)], 1, 1)
    cfg = AlsConfig(k=1, reg=0.5, alpha=15.0)
    q = np.array([[0.7]])
    x = solve_side(q, m.indptr, m.indices, m.counts, cfg)
    c = 1 + 15.0 * 2
    assert x[0, 0] == pytest.approx(c * 0.7 / (c * 0.49 + 0.5))


def test_heavy_regularization_shrinks_to_zero():
    m = random_matrix(np.random.default_rng(3), 5, 6)
    q = np.random.default_rng(4).normal(size=(6, 3))
    x = solve_side(q, m.indptr, m.indices, m.counts, AlsConfig(k=3, reg=1e12))
    assert np.max(np.abs(x)) < 1e-9


def test_solve_lowers_objective():
    rng = np.random.default_rng(5)
    m = random_matrix(rng, 20, 30)
    cfg = AlsConfig(k=5, reg=0.1, alpha=2.0)
    model = FactorModel(rng.normal(size=(20, 5)), rng.normal(size=(30, 5)))
    before = als_objective(model, m, cfg)
    model.P = solve_side(model.Q, m.indptr, m.indices, m.counts, cfg)
    assert als_objective(model, m, cfg) <= before


def test_one_sweep_matches_naive_reference():
    rng = np.random.default_rng(6)
    m = random_matrix(rng, 8, 10, 0.3)
    cfg = AlsConfig(k=3, reg=0.2, alpha=4.0, epochs=1, seed=9)
    fitted = als.fit(m, cfg, workers=1)
    start = als.init_factors(8, 10, 3, 9)
    R = dense_counts(m)
    P = naive_solve(start.Q, R, cfg)
    Q = naive_solve(P, R.T, cfg)
    assert np.max(np.abs(fitted.P - P)) < 1e-8
    assert np.max(np.abs(fitted.Q - Q)) < 1e-8


def test_row_permutation_equivariance():
    rng = np.random.default_rng(7)
    m = random_matrix(rng, 12, 9)
    cfg = AlsConfig(k=3, reg=0.1)
    q = rng.normal(size=(9, 3))
    perm = rng.permutation(12)
    recs = m.to_records()
    pm = build_matrix(recs, [m.user_ids[p] for p in perm], m.item_ids)
    a = solve_side(q, m.indptr, m.indices, m.counts, cfg)
    b = solve_side(q, pm.indptr, pm.indices, pm.counts, cfg)
    assert np.allclose(b, a[perm], atol=1e-12)


def test_threaded_solve_is_identical():
    rng = np.random.default_rng(8)
    m = random_matrix(rng, 40, 25)
    cfg = AlsConfig(k=4, reg=0.1)
    q = rng.normal(size=(25, 4))
    a = solve_side(q, m.indptr, m.indices, m.counts, cfg, workers=1)
    b = solve_side(q, m.indptr, m.indices, m.counts, cfg, workers=4)
    assert np.array_equal(a, b)


def test_env_var_workers(monkeypatch):
    monkeypatch.setenv("IMPLICIT_REC_THREADS", "3")
    assert als.default_workers() == 3
    monkeypatch.setenv("IMPLICIT_REC_THREADS", "0")
    assert als.default_workers() >= 1


def test_singular_system_reported():
    m = matrix_from_cells([(0, 0, 1, None)], 1, 2)
    with pytest.raises(als.AlsError, match="singular"):
        solve_side(np.zeros((2, 2)), m.indptr, m.indices, m.counts, AlsConfig(k=2, reg=0.0))


def test_fit_descends_and_records_half_sweeps():
    m = random_matrix(np.random.default_rng(9), 20, 30)
    model = als.fit(m, AlsConfig(k=4, reg=0.5, alpha=5.0, epochs=10))
    h = np.array(model.history)
    assert len(h) == 20
    assert np.all(h[1:] <= h[:-1] * (1 + 1e-8))
    short = als.fit(m, AlsConfig(k=4, reg=0.5, alpha=5.0, epochs=1))
    assert h[-1] <= short.history[-1]


def test_init_range():
    f = als.init_factors(10, 12, 5, 0)
    assert np.all(np.abs(f.P) <= 0.01) and np.all(np.abs(f.Q) <= 0.01)


def test_rank_one_planted_auc():
    # observed exactly where the planted rank-1 score (u + 1)(i + 1) clears a threshold
    cells = [(u, i, 1, None) for u in range(10) for i in range(10) if (u + 1) * (i + 1) > 30]
    m = matrix_from_cells(cells, 10, 10)
    model = als.fit(m, AlsConfig(k=1, reg=0.1, alpha=5.0, epochs=20))
    S = model.P @ model.Q.T
    obs = m.to_csr().toarray() > 0
    pos, neg = S[obs], S[~obs]
    auc = np.mean((pos[:, None] > neg[None, :]) + 0.5 * (pos[:, None] == neg[None, :]))
    assert auc > 0.95


def test_table_defaults_run():
    m = synthetic.planted_low_rank(seed=1)
    model = als.fit(build_matrix(m), AlsConfig())
    assert model.k == 200
    assert np.all(np.isfinite(model.P)) and np.all(np.isfinite(model.Q))


def test_defaults():
    cfg = AlsConfig()
    assert (cfg.k, cfg.reg, cfg.alpha, cfg.epochs) == (200, 1e-4, 15.0, 30)
    with pytest.raises(ValueError):
        AlsConfig(k=0)


def test_save_load(tmp_path):
    m = random_matrix(np.random.default_rng(11), 6, 8)
    model = als.fit(m, AlsConfig(k=2, epochs=2))
    als.save_factors(model, tmp_path, "als", AlsConfig(k=2, epochs=2))
    back, manifest = als.load_factors(tmp_path, "als")
    assert np.array_equal(back.P, model.P) and np.array_equal(back.Q, model.Q)
    assert manifest["config"]["alpha"] == 15.0
    assert (tmp_path / "P.bin").stat().st_size == 6 * 2 * 8
