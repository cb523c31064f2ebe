"""Interaction data: CSV ingest, sparse user x item matrix, leave-one-out split, samplers.

Counts are purchase counts (implicit ratings). Users and items get dense indices in
first-seen order. All samplers are pure functions of their inputs and seed.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

# sentinel for "no timestamp" inside the int64 timestamp array
MISSING_TIME = np.iinfo(np.int64).min

SNAPSHOT_FORMAT = "implicit-rec-matrix/1"


class DataError(ValueError):
    """Malformed input data or an impossible sampling request."""


class SchemaError(DataError):
    """CSV header does not contain a configured column."""

    def __init__(self, column: str, header: Sequence[str]):
        super().__init__(f"missing required column {column!r} (header: {', '.join(header)})")
        self.column = column


@dataclass(frozen=True)
class InteractionRecord:
    user_key: str
    item_key: str
    count: int = 1
    timestamp: int | None = None

    def __post_init__(self):
        if not self.user_key or not self.item_key:
            raise DataError("user_key and item_key must be nonempty")
        if self.count < 1:
            raise DataError(f"count must be >= 1, got {self.count}")


@dataclass(frozen=True)
class CsvSchema:
    user_col: str = "user"
    item_col: str = "item"
    count_col: str | None = "count"
    time_col: str | None = None

    @classmethod
    def from_config(cls, cfg: dict | None) -> "CsvSchema":
        cfg = cfg or {}
        known = {k: cfg[k] for k in ("user_col", "item_col", "count_col", "time_col") if k in cfg}
        return cls(**known)


@dataclass
class IngestReport:
    rows_read: int = 0
    skipped: int = 0
    reasons: dict[str, int] = field(default_factory=dict)

    def skip(self, reason: str) -> None:
        self.skipped += 1
        self.reasons[reason] = self.reasons.get(reason, 0) + 1


class Ingested(NamedTuple):
    records: list[InteractionRecord]
    report: IngestReport


def _parse_positive_int(text: str) -> int | None:
    try:
        value = float(text)
    except ValueError:
        return None
    if not math.isfinite(value) or value <= 0 or value != int(value):
        return None
    return int(value)


def ingest_csv(path: str | Path, schema: CsvSchema | None = None) -> Ingested:
    """Read a transaction CSV into records.

    Rows with an empty key, a non-positive or non-integer count, or an unparseable
    timestamp are dropped and tallied in the report. If the count column is absent
    from the header every row counts once; same for timestamps.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    records: list[InteractionRecord] = []
    report = IngestReport()
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(schema.user_col, [])
        header = [h.strip() for h in header]
        for col in (schema.user_col, schema.item_col):
            if col not in header:
                raise SchemaError(col, header)
        ui = header.index(schema.user_col)
        ii = header.index(schema.item_col)
        ci = header.index(schema.count_col) if schema.count_col in header else None
        ti = header.index(schema.time_col) if schema.time_col in header else None

        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            report.rows_read += 1
            get = lambda j: row[j].strip() if j is not None and j < len(row) else ""
            user, item = get(ui), get(ii)
            if not user or not item:
                report.skip("empty_key")
                continue
            count = 1
            if ci is not None:
                count = _parse_positive_int(get(ci))
                if count is None:
                    report.skip("bad_count")
                    continue
            ts = None
            if ti is not None and get(ti):
                try:
                    ts = int(float(get(ti)))
                except ValueError:
                    report.skip("bad_timestamp")
                    continue
            records.append(InteractionRecord(user, item, count, ts))
    return Ingested(records, report)


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    """Immutable CSR user x item count matrix with key <-> index maps.

    ``order`` holds, per stored cell, the input position of the last record that
    contributed to it; it breaks timestamp ties when choosing a held-out item.
    """

    n_users: int
    n_items: int
    indptr: np.ndarray
    indices: np.ndarray
    counts: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    order: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        if len(self.indptr) != self.n_users + 1 or self.indptr[-1] != len(self.indices):
            raise DataError("inconsistent CSR structure")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= self.n_items):
            raise DataError("item index out of range")
        if len(self.counts) and self.counts.min() < 1:
            raise DataError("all stored counts must be >= 1")
        for arr in (self.indptr, self.indices, self.counts, self.order):
            arr.setflags(write=False)
        if self.timestamps is not None:
            self.timestamps.setflags(write=False)

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @property
    def sparsity(self) -> float:
        return 1.0 - self.nnz / (self.n_users * self.n_items)

    @property
    def row_lengths(self) -> np.ndarray:
        return np.diff(self.indptr)

    def items_of(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def counts_of(self, u: int) -> np.ndarray:
        return self.counts[self.indptr[u]:self.indptr[u + 1]]

    @property
    def user_index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.user_ids)}

    @property
    def item_index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.item_ids)}

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (np.asarray(self.counts), np.asarray(self.indices), np.asarray(self.indptr)),
            shape=(self.n_users, self.n_items),
        )

    def binary(self) -> np.ndarray:
        """Dense 0/1 interaction matrix."""
        x = np.zeros((self.n_users, self.n_items))
        rows = np.repeat(np.arange(self.n_users), self.row_lengths)
        x[rows, self.indices] = 1.0
        return x

    def cell_codes(self) -> np.ndarray:
        """Sorted ``u * n_items + i`` codes of all stored cells."""
        rows = np.repeat(np.arange(self.n_users, dtype=np.int64), self.row_lengths)
        return rows * self.n_items + self.indices

    def to_records(self) -> list[InteractionRecord]:
        rows = np.repeat(np.arange(self.n_users), self.row_lengths)
        out = []
        for k in np.argsort(self.order, kind="stable"):
            ts = None
            if self.timestamps is not None and self.timestamps[k] != MISSING_TIME:
                ts = int(self.timestamps[k])
            out.append(InteractionRecord(self.user_ids[rows[k]], self.item_ids[self.indices[k]],
                                         int(self.counts[k]), ts))
        return out

    def drop_cells(self, mask: np.ndarray) -> "InteractionMatrix":
        """Copy without the cells where ``mask`` is true; ids and shape unchanged."""
        keep = ~mask
        rows = np.repeat(np.arange(self.n_users), self.row_lengths)[keep]
        indptr = np.zeros(self.n_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=self.n_users), out=indptr[1:])
        return InteractionMatrix(
            self.n_users, self.n_items, indptr, self.indices[keep].copy(), self.counts[keep].copy(),
            self.user_ids, self.item_ids, self.order[keep].copy(),
            None if self.timestamps is None else self.timestamps[keep].copy(),
        )


def build_matrix(records: Iterable[InteractionRecord], user_keys: Iterable[str] = (),
                 item_keys: Iterable[str] = ()) -> InteractionMatrix:
    """Aggregate records into a matrix; duplicate (user, item) pairs are summed.

    ``user_keys`` / ``item_keys`` pre-seed the index maps (e.g. a full item catalog);
    keys first seen in ``records`` are appended after them.
    """
    users: dict[str, int] = {k: n for n, k in enumerate(dict.fromkeys(user_keys))}
    items: dict[str, int] = {k: n for n, k in enumerate(dict.fromkeys(item_keys))}
    cells: dict[tuple[int, int], list] = {}
    any_ts = False
    n = 0
    for pos, rec in enumerate(records):
        n += 1
        u = users.setdefault(rec.user_key, len(users))
        i = items.setdefault(rec.item_key, len(items))
        cell = cells.get((u, i))
        ts = MISSING_TIME if rec.timestamp is None else int(rec.timestamp)
        any_ts |= rec.timestamp is not None
        if cell is None:
            cells[(u, i)] = [rec.count, ts, pos]
        else:
            cell[0] += rec.count
            cell[1] = max(cell[1], ts)
            cell[2] = pos
    if n == 0:
        raise DataError("cannot build a matrix from an empty record list")

    keys = sorted(cells)
    rows = np.fromiter((k[0] for k in keys), dtype=np.int64, count=len(keys))
    indices = np.fromiter((k[1] for k in keys), dtype=np.int64, count=len(keys))
    vals = np.array([cells[k] for k in keys], dtype=np.int64)
    indptr = np.zeros(len(users) + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=len(users)), out=indptr[1:])
    return InteractionMatrix(
        n_users=len(users),
        n_items=len(items),
        indptr=indptr,
        indices=indices,
        counts=vals[:, 0].astype(np.float64),
        user_ids=tuple(users),
        item_ids=tuple(items),
        order=vals[:, 2].copy(),
        timestamps=vals[:, 1].copy() if any_ts else None,
    )


def write_csv(m: InteractionMatrix, path: str | Path, schema: CsvSchema | None = None) -> None:
    schema = schema or CsvSchema(count_col="count", time_col="time" if m.timestamps is not None else None)
    cols = [schema.user_col, schema.item_col, schema.count_col or "count"]
    if schema.time_col:
        cols.append(schema.time_col)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in m.to_records():
            row = [r.user_key, r.item_key, r.count]
            if schema.time_col:
                row.append("" if r.timestamp is None else r.timestamp)
            w.writerow(row)


# -- leave-one-out ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LeaveOneOutSplit:
    """Per-user held-out positive plus ``n_neg`` sampled negatives.

    Row ``t`` of ``test_negatives`` belongs to ``test_users[t]``.
    """

    train: InteractionMatrix
    test_users: np.ndarray
    test_items: np.ndarray
    test_negatives: np.ndarray
    excluded_users: np.ndarray
    n_neg: int
    seed: int

    @property
    def test_positives(self) -> list[tuple[int, int]]:
        return list(zip(self.test_users.tolist(), self.test_items.tolist()))

    def candidates(self, t: int) -> np.ndarray:
        """Positive first, then the negatives, for test row ``t``."""
        return np.concatenate(([self.test_items[t]], self.test_negatives[t]))


def _user_rng(seed: int, u: int) -> np.random.Generator:
    return np.random.default_rng([seed, u])


def sample_negatives(m: InteractionMatrix, u: int, n_neg: int, seed: int,
                     extra_seen: Iterable[int] = ()) -> np.ndarray:
    seen = np.union1d(m.items_of(u), np.fromiter(extra_seen, dtype=np.int64))
    pool = np.setdiff1d(np.arange(m.n_items), seen, assume_unique=True)
    if len(pool) < n_neg:
        raise DataError(
            f"user {m.user_ids[u]!r} has only {len(pool)} non-interacted items, need {n_neg}")
    return np.sort(_user_rng(seed, u).choice(pool, size=n_neg, replace=False))


def leave_one_out_split(m: InteractionMatrix, n_neg: int = 100, seed: int = 0) -> LeaveOneOutSplit:
    """Hold out each eligible user's latest interaction.

    Latest means greatest timestamp; ties and missing timestamps fall back to input
    order (last seen wins). Users with fewer than two interactions are excluded and
    kept wholly in train.
    """
    if n_neg < 1:
        raise DataError("n_neg must be >= 1")
    lengths = m.row_lengths
    ts = m.timestamps if m.timestamps is not None else np.full(m.nnz, MISSING_TIME)
    drop = np.zeros(m.nnz, dtype=bool)
    test_users, test_items, negatives = [], [], []
    for u in range(m.n_users):
        if lengths[u] < 2:
            continue
        lo, hi = m.indptr[u], m.indptr[u + 1]
        k = lo + np.lexsort((m.order[lo:hi], ts[lo:hi]))[-1]
        drop[k] = True
        test_users.append(u)
        test_items.append(int(m.indices[k]))
        negatives.append(sample_negatives(m, u, n_neg, seed))
    return LeaveOneOutSplit(
        train=m.drop_cells(drop),
        test_users=np.array(test_users, dtype=np.int64),
        test_items=np.array(test_items, dtype=np.int64),
        test_negatives=np.array(negatives, dtype=np.int64).reshape(len(test_users), n_neg),
        excluded_users=np.flatnonzero(lengths < 2),
        n_neg=n_neg,
        seed=seed,
    )


# -- triplets ---------------------------------------------------------------------------------


class Triplet(NamedTuple):
    u: int
    i: int
    j: int


class Triplets(NamedTuple):
    """Column-wise batch of (u, i, j) triplets."""

    u: np.ndarray
    i: np.ndarray
    j: np.ndarray

    def __len__(self):
        return len(self.u)

    def rows(self) -> list[Triplet]:
        return [Triplet(*t) for t in zip(self.u.tolist(), self.i.tolist(), self.j.tolist())]


def check_negatives_available(m: InteractionMatrix) -> None:
    full = np.flatnonzero(m.row_lengths >= m.n_items)
    if len(full):
        raise DataError(f"user {m.user_ids[full[0]]!r} interacted with every item; "
                        "no negative can be sampled")


def sample_unobserved(m: InteractionMatrix, users: np.ndarray, rng: np.random.Generator,
                      codes: np.ndarray | None = None) -> np.ndarray:
    """Uniform non-interacted item per entry of ``users`` by rejection."""
    codes = m.cell_codes() if codes is None else codes
    j = rng.integers(0, m.n_items, size=len(users))
    bad = np.flatnonzero(_is_member(codes, users * m.n_items + j))
    while len(bad):
        j[bad] = rng.integers(0, m.n_items, size=len(bad))
        bad = bad[_is_member(codes, users[bad] * m.n_items + j[bad])]
    return j


def _is_member(sorted_codes: np.ndarray, query: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(sorted_codes, query)
    pos[pos == len(sorted_codes)] = 0
    return sorted_codes[pos] == query if len(sorted_codes) else np.zeros(len(query), bool)


def sample_triplets(train: InteractionMatrix, n: int, seed: int) -> Triplets:
    """Draw ``n`` (u, i, j) triplets: u uniform over active users, i uniform in I_u+,
    j uniform outside I_u+."""
    if train.nnz == 0:
        raise DataError("training matrix has no interactions")
    check_negatives_available(train)
    rng = np.random.default_rng(seed)
    lengths = train.row_lengths
    active = np.flatnonzero(lengths > 0)
    u = rng.choice(active, size=n)
    offs = (rng.random(n) * lengths[u]).astype(np.int64)
    i = train.indices[train.indptr[u] + offs]
    j = sample_unobserved(train, u, rng)
    return Triplets(u.astype(np.int64), i.astype(np.int64), j.astype(np.int64))


# -- persistence ------------------------------------------------------------------------------


def save_snapshot(m: InteractionMatrix, directory: str | Path) -> Path:
    """Write ``meta.json`` and ``rows.bin`` (u32 item indices, then f64 counts, CSR order)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": SNAPSHOT_FORMAT,
        "n_users": m.n_users,
        "n_items": m.n_items,
        "nnz": m.nnz,
        "user_ids": list(m.user_ids),
        "item_ids": list(m.item_ids),
        "indptr": m.indptr.tolist(),
        "rows_layout": "u32le[nnz] item indices, then f64le[nnz] counts",
        "has_timestamps": m.timestamps is not None,
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    with (d / "rows.bin").open("wb") as fh:
        fh.write(m.indices.astype("<u4").tobytes())
        fh.write(m.counts.astype("<f8").tobytes())
    (d / "order.bin").write_bytes(m.order.astype("<i8").tobytes())
    if m.timestamps is not None:
        (d / "timestamps.bin").write_bytes(m.timestamps.astype("<i8").tobytes())
    elif (d / "timestamps.bin").exists():
        (d / "timestamps.bin").unlink()
    return d


def load_snapshot(directory: str | Path) -> InteractionMatrix:
    d = Path(directory)
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise DataError(f"no matrix snapshot at {d}")
    meta = json.loads(meta_path.read_text())
    nnz = meta["nnz"]
    raw = (d / "rows.bin").read_bytes()
    if len(raw) != nnz * 12:
        raise DataError(f"rows.bin has {len(raw)} bytes, expected {nnz * 12}")
    indices = np.frombuffer(raw[:nnz * 4], dtype="<u4").astype(np.int64)
    counts = np.frombuffer(raw[nnz * 4:], dtype="<f8").astype(np.float64)
    order_path = d / "order.bin"
    order = (np.frombuffer(order_path.read_bytes(), dtype="<i8").astype(np.int64)
             if order_path.exists() else np.arange(nnz, dtype=np.int64))
    ts = None
    if meta.get("has_timestamps"):
        ts = np.frombuffer((d / "timestamps.bin").read_bytes(), dtype="<i8").astype(np.int64)
    return InteractionMatrix(
        meta["n_users"], meta["n_items"], np.array(meta["indptr"], dtype=np.int64), indices,
        counts, tuple(meta["user_ids"]), tuple(meta["item_ids"]), order, ts,
    )


def save_split(split: LeaveOneOutSplit, directory: str | Path) -> Path:
    """Split directory: ``train/`` snapshot plus ``test.json`` with positives and negatives."""
    d = Path(directory)
    save_snapshot(split.train, d / "train")
    test = {
        "n_neg": split.n_neg,
        "seed": split.seed,
        "test_users": split.test_users.tolist(),
        "test_items": split.test_items.tolist(),
        "test_negatives": split.test_negatives.tolist(),
        "excluded_users": split.excluded_users.tolist(),
    }
    (d / "test.json").write_text(json.dumps(test) + "\n")
    return d


def load_split(directory: str | Path) -> LeaveOneOutSplit:
    d = Path(directory)
    if not (d / "test.json").exists():
        raise DataError(f"no split at {d}")
    test = json.loads((d / "test.json").read_text())
    n_neg = test["n_neg"]
    return LeaveOneOutSplit(
        train=load_snapshot(d / "train"),
        test_users=np.array(test["test_users"], dtype=np.int64),
        test_items=np.array(test["test_items"], dtype=np.int64),
        test_negatives=np.array(test["test_negatives"], dtype=np.int64).reshape(-1, n_neg),
        excluded_users=np.array(test["excluded_users"], dtype=np.int64),
        n_neg=n_neg,
        seed=test["seed"],
    )
