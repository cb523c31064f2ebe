"""Bayesian optimisation of hyperparameters: GP (Matern 5/2) surrogate + expected improvement.

Points are dicts ``{name: value}``. The surrogate works on the unit-cube encoding
(log / linear scaling, one-hot categoricals) with standardised objectives. Kernel
length-scale and noise are picked by marginal likelihood over a small log-grid.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.stats import norm, qmc

KINDS = {
    "log": "log", "continuous-log": "log",
    "linear": "linear", "continuous-linear": "linear",
    "integer": "integer", "int": "integer",
    "categorical": "categorical",
}

LENGTH_SCALES = np.geomspace(0.03, 3.0, 15)
NOISE_LEVELS = (1e-6, 1e-4, 1e-3, 1e-2, 1e-1)
N_CANDIDATES = 1024


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class Param:
    name: str
    kind: str
    low: float | None = None
    high: float | None = None
    choices: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        object.__setattr__(self, "kind", KINDS[self.kind])
        if self.kind == "categorical":
            if not self.choices:
                raise ValueError(f"categorical {self.name!r} needs a nonempty choice list")
            object.__setattr__(self, "choices", tuple(self.choices))
            return
        if self.low is None or self.high is None or not (math.isfinite(self.low) and math.isfinite(self.high)):
            raise ValueError(f"{self.name!r} needs finite bounds")
        if not self.low < self.high:
            raise ValueError(f"{self.name!r}: low must be < high")
        if self.kind == "log" and self.low <= 0:
            raise ValueError(f"log-scaled {self.name!r} needs positive bounds")

    @property
    def width(self) -> int:
        return len(self.choices) if self.kind == "categorical" else 1

    def encode(self, value) -> list[float]:
        if self.kind == "categorical":
            if value not in self.choices:
                raise ValueError(f"{value!r} is not a choice of {self.name!r}")
            return [float(value == c) for c in self.choices]
        if not self.low <= value <= self.high:
            raise ValueError(f"{self.name}={value} outside [{self.low}, {self.high}]")
        if self.kind == "log":
            return [(math.log10(value) - math.log10(self.low)) / (math.log10(self.high) - math.log10(self.low))]
        return [(value - self.low) / (self.high - self.low)]

    def from_unit(self, x: float):
        """Map one coordinate of [0, 1] to a value."""
        x = min(max(float(x), 0.0), 1.0)
        if self.kind == "categorical":
            return self.choices[min(int(x * len(self.choices)), len(self.choices) - 1)]
        if self.kind == "log":
            lo, hi = math.log10(self.low), math.log10(self.high)
            return float(10 ** (lo + x * (hi - lo)))
        v = self.low + x * (self.high - self.low)
        return int(round(v)) if self.kind == "integer" else float(v)

    def decode(self, code: Sequence[float]):
        if self.kind == "categorical":
            return self.choices[int(np.argmax(code))]
        return self.from_unit(code[0])

    def to_dict(self) -> dict:
        if self.kind == "categorical":
            return {"kind": self.kind, "choices": list(self.choices)}
        return {"kind": self.kind, "low": self.low, "high": self.high}


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[Param, ...]

    @classmethod
    def from_dict(cls, spec: dict) -> "SearchSpace":
        """``{"learning_rate": {"kind": "log", "low": 1e-4, "high": 1e-1}, ...}``"""
        return cls(tuple(Param(name, d["kind"], d.get("low"), d.get("high"), d.get("choices"))
                         for name, d in spec.items()))

    def to_dict(self) -> dict:
        return {p.name: p.to_dict() for p in self.params}

    @property
    def dim(self) -> int:
        return len(self.params)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def encode(self, point: dict) -> np.ndarray:
        out = []
        for p in self.params:
            if p.name not in point:
                raise ValueError(f"point lacks {p.name!r}")
            out.extend(p.encode(point[p.name]))
        return np.array(out)

    def decode(self, vec: Sequence[float]) -> dict:
        point, at = {}, 0
        for p in self.params:
            point[p.name] = p.decode(vec[at:at + p.width])
            at += p.width
        return point

    def from_unit(self, u: Sequence[float]) -> dict:
        return {p.name: p.from_unit(x) for p, x in zip(self.params, u)}


# -- Gaussian process -------------------------------------------------------------------------


def matern52(A: np.ndarray, B: np.ndarray, length_scale: float) -> np.ndarray:
    d = np.sqrt(np.maximum(((A[:, None, :] - B[None, :, :]) ** 2).sum(-1), 0.0)) / length_scale
    s = math.sqrt(5.0) * d
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def _cholesky(K: np.ndarray, noise: float):
    n = len(K)
    jitter = noise
    for _ in range(8):
        try:
            return cho_factor(K + jitter * np.eye(n), lower=True), jitter
        except LinAlgError:
            jitter = max(jitter * 10.0, 1e-10)
    raise LinAlgError("GP Gram matrix is not positive definite after jitter escalation")


class GaussianProcess:
    """Zero-mean GP on standardised targets (so the prior mean is the sample mean)."""

    def __init__(self, length_scale: float | None = None, noise: float | None = None):
        self.length_scale = length_scale
        self.noise = noise

    def fit(self, X, y) -> "GaussianProcess":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64).ravel()
        self.y_mean = float(y.mean())
        sd = float(y.std())
        self.y_scale = sd if sd > 0 else 1.0
        z = (y - self.y_mean) / self.y_scale
        self.X = X
        ls_grid = [self.length_scale] if self.length_scale else LENGTH_SCALES
        nz_grid = [self.noise] if self.noise else NOISE_LEVELS
        best = None
        for ls in ls_grid:
            K = matern52(X, X, ls)
            for nz in nz_grid:
                try:
                    chol, jit = _cholesky(K, nz)
                except LinAlgError:
                    continue
                alpha = cho_solve(chol, z)
                lml = -0.5 * z @ alpha - np.log(np.diag(chol[0])).sum()
                if best is None or lml > best[0] + 1e-12:
                    best = (lml, ls, jit, chol, alpha)
        if best is None:
            raise LinAlgError("GP Gram matrix is not positive definite after jitter escalation")
        _, self.length_scale_, self.noise_, self._chol, self._alpha = best
        return self

    def predict(self, Q):
        """Posterior mean and variance of the latent function, in original units."""
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        Ks = matern52(Q, self.X, self.length_scale_)
        mean = Ks @ self._alpha
        v = cho_solve(self._chol, Ks.T)
        var = np.maximum(1.0 - np.einsum("ij,ji->i", Ks, v), 0.0)
        return self.y_mean + self.y_scale * mean, self.y_scale ** 2 * var


def gp_posterior(observations: Sequence[tuple[Sequence[float], float]], query,
                 length_scale: float | None = None, noise: float | None = None):
    """Posterior (mean, variance) at ``query`` given ``[(vector, objective), ...]``."""
    if not observations:
        raise ValueError("need at least one observation")
    X = np.array([np.asarray(x, dtype=np.float64) for x, _ in observations])
    y = np.array([v for _, v in observations], dtype=np.float64)
    gp = GaussianProcess(length_scale, noise).fit(X, y)
    q = np.asarray(query, dtype=np.float64)
    mean, var = gp.predict(q.reshape(1, -1) if q.ndim == 1 else q)
    return (float(mean[0]), float(var[0])) if q.ndim == 1 else (mean, var)


def expected_improvement(mean, variance, best_so_far):
    """EI for maximisation; zero-variance points get max(mean - best, 0)."""
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=np.float64), 0.0))
    diff = mean - best_so_far
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        z = np.where(sigma > 0, diff / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = np.where(sigma > 0, diff * norm.cdf(z) + sigma * norm.pdf(z), np.maximum(diff, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


# -- optimisation loop ------------------------------------------------------------------------


@dataclass
class Trial:
    index: int
    point: dict
    fold_values: list[float] = field(default_factory=list)
    objective: float | None = None
    status: str = "ok"
    error: str | None = None
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {"index": self.index, "point": _jsonable(self.point), "fold_values": self.fold_values,
                "objective": self.objective, "status": self.status, "error": self.error,
                "wall_time": self.wall_time}


@dataclass
class TuneResult:
    best: Trial
    history: list[Trial]
    space: SearchSpace

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        doc = {"space": self.space.to_dict(), "best_index": self.best.index,
               "trials": [t.to_dict() for t in self.history]}
        path.write_text(json.dumps(doc, indent=1) + "\n")
        return path


def _jsonable(point: dict) -> dict:
    return {k: (v.item() if isinstance(v, np.generic) else v) for k, v in point.items()}


def design_size(space: SearchSpace) -> int:
    return max(5, 2 * space.dim)


def _run_trial(index: int, point: dict, objective_fn, n_folds: int) -> Trial:
    t0 = time.perf_counter()
    trial = Trial(index, point)
    try:
        vals = [float(objective_fn(point, fold)) for fold in range(n_folds)]
        if not all(math.isfinite(v) for v in vals):
            raise FloatingPointError(f"non-finite fold objective {vals}")
        trial.fold_values = vals
        trial.objective = float(np.mean(vals))
    except Exception as exc:  # a failed trial consumes budget but must not stop the search
        trial.status = "failed"
        trial.error = f"{type(exc).__name__}: {exc}"
    trial.wall_time = time.perf_counter() - t0
    return trial


def _suggest(space: SearchSpace, history: list[Trial], rng: np.random.Generator) -> dict:
    ok = [t.objective for t in history if t.status == "ok"]
    worst = min(ok) if ok else 0.0
    X = np.array([space.encode(t.point) for t in history])
    y = np.array([t.objective if t.status == "ok" else worst for t in history])
    gp = GaussianProcess().fit(X, y)
    best = float(y.max())

    units = [rng.random((N_CANDIDATES, space.dim))]
    # local restarts around the three best trials, in the per-parameter unit cube
    top = np.argsort(-y, kind="stable")[:3]
    for t in top:
        centre = np.array([_unit_of(p, history[t].point[p.name]) for p in space.params])
        units.append(np.clip(centre + 0.05 * rng.standard_normal((128, space.dim)), 0.0, 1.0))
    cands = [space.from_unit(u) for u in np.concatenate(units)]
    mean, var = gp.predict(np.array([space.encode(c) for c in cands]))
    ei = expected_improvement(mean, var, best)
    return cands[int(np.argmax(ei))]


def _unit_of(p: Param, value) -> float:
    if p.kind == "categorical":
        return (p.choices.index(value) + 0.5) / len(p.choices)
    return p.encode(value)[0]


def tune(space: SearchSpace, objective_fn: Callable[[dict, int], float], budget: int,
         n_folds: int = 3, seed: int = 0) -> TuneResult:
    """Maximise the fold-averaged ``objective_fn(point, fold)`` within ``budget`` trials.

    A Latin-hypercube design of ``max(5, 2 * dim)`` points comes first, then one
    EI-maximising suggestion per remaining trial.
    """
    n_init = design_size(space)
    if budget < n_init:
        raise BudgetError(f"budget {budget} is smaller than the initial design ({n_init} points)")
    rng = np.random.default_rng(seed)
    design = qmc.LatinHypercube(d=space.dim, seed=rng).random(n_init)
    history: list[Trial] = []
    for u in design:
        history.append(_run_trial(len(history), space.from_unit(u), objective_fn, n_folds))
    while len(history) < budget:
        point = _suggest(space, history, rng)
        history.append(_run_trial(len(history), point, objective_fn, n_folds))
    ok = [t for t in history if t.status == "ok"]
    if not ok:
        raise RuntimeError("every trial failed")
    best = max(ok, key=lambda t: t.objective)
    return TuneResult(best, history, space)


def random_search(space: SearchSpace, objective_fn, budget: int, n_folds: int = 1, seed: int = 0) -> TuneResult:
    """Uniform random baseline with the same trial bookkeeping."""
    rng = np.random.default_rng(seed)
    history = [_run_trial(n, space.from_unit(rng.random(space.dim)), objective_fn, n_folds)
               for n in range(budget)]
    ok = [t for t in history if t.status == "ok"]
    return TuneResult(max(ok, key=lambda t: t.objective), history, space)


def running_best(history: Sequence[Trial]) -> list[float]:
    out, best = [], -math.inf
    for t in history:
        if t.status == "ok":
            best = max(best, t.objective)
        out.append(best)
    return out

