"""Datasets, splits, seeded randomness and CSV I/O.

A :class:`Dataset` is the unit every other module consumes. Labels use the
convention 1 = bad (default), 0 = good, and -1 = unobserved (only allowed on
rejected rows). Ground truth for rejects, when it exists (synthetic data),
lives in a sealed side channel that can only be opened with
:data:`ORACLE_ACCESS`.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

UNKNOWN = -1


class DataError(ValueError):
    """Invalid input data or schema."""


class _OracleCapability:
    __slots__ = ()

    def __repr__(self):
        return "<oracle access>"


# Capability token for reading sealed reject labels. Only the simulator,
# oracle models and report-layer audits hold a reference to it.
ORACLE_ACCESS = _OracleCapability()


@dataclass(frozen=True)
class RngSeed:
    """Root seed plus a substream path.

    ``RngSeed(s, i).generator()`` always yields the same stream; ``child(j)``
    derives an independent substream so that stochastic steps can be
    reproduced in isolation.
    """

    seed: int
    stream_id: int = 0
    parent: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.stream_id < 0:
            raise ValueError("stream_id must be non-negative")

    @property
    def spawn_key(self) -> tuple[int, ...]:
        return self.parent + (int(self.stream_id),)

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.spawn_key)
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream_id: int) -> "RngSeed":
        return RngSeed(self.seed, stream_id, self.spawn_key)


def as_seed(seed: "RngSeed | int") -> RngSeed:
    return seed if isinstance(seed, RngSeed) else RngSeed(int(seed))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with optional labels and acceptance flags.

    Arrays are copied and made read-only on construction.
    """

    features: np.ndarray
    labels: np.ndarray | None = None
    accepted: np.ndarray | None = None
    ids: np.ndarray | None = None
    feature_names: tuple[str, ...] | None = None
    holdout: bool = False
    _sealed: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain missing or non-finite entries")
        n, k = X.shape
        object.__setattr__(self, "features", _frozen(X))

        ids = np.arange(n) if self.ids is None else np.asarray(self.ids)
        if ids.shape != (n,):
            raise DataError("ids length does not match row count")
        if len(np.unique(ids)) != n:
            raise DataError("duplicate ids")
        object.__setattr__(self, "ids", _frozen(ids))

        if self.accepted is not None:
            a = np.asarray(self.accepted).astype(np.int8)
            if a.shape != (n,) or not np.isin(a, (0, 1)).all():
                raise DataError("accepted must be a 0/1 vector of length n")
            object.__setattr__(self, "accepted", _frozen(a))

        if self.labels is not None:
            y = np.asarray(self.labels).astype(np.int8)
            if y.shape != (n,) or not np.isin(y, (UNKNOWN, 0, 1)).all():
                raise DataError("labels must be a 0/1 (or -1 unknown) vector of length n")
            if not self.holdout:
                if self.accepted is None:
                    pass
                elif np.any((y != UNKNOWN) & (self.accepted == 0)):
                    raise DataError("labeled rows must be accepted unless the dataset is a holdout")
            object.__setattr__(self, "labels", _frozen(y))

        if self._sealed is not None:
            s = np.asarray(self._sealed).astype(np.int8)
            if s.shape != (n,) or not np.isin(s, (0, 1)).all():
                raise DataError("sealed labels must be a 0/1 vector of length n")
            object.__setattr__(self, "_sealed", _frozen(s))

        if self.feature_names is None:
            object.__setattr__(self, "feature_names", tuple(f"x{j + 1}" for j in range(k)))
        elif len(self.feature_names) != k:
            raise DataError("feature_names length does not match column count")
        else:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def k(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return self.n

    @property
    def has_labels(self) -> bool:
        return self.labels is not None and bool(np.all(self.labels != UNKNOWN))

    @property
    def has_sealed_labels(self) -> bool:
        return self._sealed is not None

    def sealed_labels(self, token) -> np.ndarray:
        """Ground-truth labels of every row. Requires :data:`ORACLE_ACCESS`."""
        if token is not ORACLE_ACCESS:
            raise PermissionError("sealed labels require the oracle capability token")
        if self._sealed is None:
            raise DataError("dataset carries no sealed ground truth")
        return self._sealed

    def require_labels(self) -> np.ndarray:
        if not self.has_labels:
            raise DataError("dataset is not fully labeled")
        return self.labels

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        if idx.size == 0:
            idx = idx.astype(int)
        elif idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Dataset(
            self.features[idx],
            None if self.labels is None else self.labels[idx],
            None if self.accepted is None else self.accepted[idx],
            self.ids[idx],
            self.feature_names,
            self.holdout,
            None if self._sealed is None else self._sealed[idx],
        )

    def accepts(self) -> "Dataset":
        if self.accepted is None:
            raise DataError("dataset has no acceptance flags")
        return self.take(self.accepted == 1)

    def rejects(self) -> "Dataset":
        """Rejected rows with labels hidden (sealed truth is carried along)."""
        if self.accepted is None:
            raise DataError("dataset has no acceptance flags")
        sub = self.take(self.accepted == 0)
        return sub.with_labels(None)

    def with_labels(self, labels, *, holdout: bool | None = None) -> "Dataset":
        return Dataset(self.features, labels, self.accepted, self.ids, self.feature_names,
                       self.holdout if holdout is None else holdout, self._sealed)

    def with_accepted(self, accepted) -> "Dataset":
        return Dataset(self.features, self.labels, accepted, self.ids, self.feature_names,
                       self.holdout, self._sealed)

    def with_features(self, features, feature_names=None) -> "Dataset":
        return Dataset(features, self.labels, self.accepted, self.ids, feature_names,
                       self.holdout, self._sealed)


def concat(parts: Sequence[Dataset], *, holdout: bool = False) -> Dataset:
    """Row-wise concatenation. Optional arrays survive only if every part has them."""
    parts = [p for p in parts if p is not None]
    if not parts:
        raise DataError("nothing to concatenate")
    k = parts[0].k
    if any(p.k != k for p in parts):
        raise DataError("feature arity mismatch")

    def cat(attr, fill=None):
        vals = [getattr(p, attr) for p in parts]
        if all(v is None for v in vals):
            return None
        if fill is None and any(v is None for v in vals):
            return None
        return np.concatenate([np.full(p.n, fill) if v is None else v for p, v in zip(parts, vals)])

    return Dataset(
        np.vstack([p.features for p in parts]),
        cat("labels", UNKNOWN),
        cat("accepted"),
        np.concatenate([p.ids for p in parts]),
        parts[0].feature_names,
        holdout,
        cat("_sealed"),
    )


@dataclass(frozen=True, eq=False)
class Split:
    """Row-disjoint partition of a biased sample plus an unbiased holdout.

    ``rejects`` and the rejected part of ``validation`` never expose labels;
    their ground truth (if any) stays sealed.
    """

    train_accepts: Dataset
    rejects: Dataset
    validation: Dataset
    holdout: Dataset

    def __post_init__(self):
        seen = set()
        for part in (self.train_accepts, self.rejects, self.validation, self.holdout):
            ids = set(part.ids.tolist())
            if seen & ids:
                raise DataError("split parts are not row-disjoint")
            seen |= ids
        if self.rejects.labels is not None and np.any(self.rejects.labels != UNKNOWN):
            raise DataError("rejects must not carry visible labels")


def _part_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    raw = [f * n for f in fractions]
    sizes = [int(math.floor(r + 1e-9)) for r in raw]
    # largest-remainder rounding so sizes add up to n
    order = np.argsort([-(r - s) for r, s in zip(raw, sizes)], kind="stable")
    for j in order[: n - sum(sizes)]:
        sizes[j] += 1
    return sizes


def _stratified_assign(y: np.ndarray, fractions, rng) -> np.ndarray:
    part = np.empty(len(y), dtype=int)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        sizes = _part_sizes(len(idx), fractions)
        start = 0
        for p, s in enumerate(sizes):
            part[idx[start:start + s]] = p
            start += s
    return part


def partition(d: Dataset, fractions: Sequence[float], seed: "RngSeed | int",
              holdout: Dataset | None = None) -> Split:
    """Split a labeled sample with acceptance flags into train / validation / holdout.

    With three fractions, accepts are split by label-stratified sampling and
    rejects by simple random sampling in the same proportions; the holdout
    then holds accepts and rejects in population proportion with all labels
    visible. With two fractions an external unbiased ``holdout`` must be given.
    """
    fractions = [float(f) for f in fractions]
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"fractions must sum to 1, got {sum(fractions):.6g}")
    if len(fractions) == 2 and holdout is None:
        raise DataError("two fractions require an external holdout")
    if len(fractions) not in (2, 3):
        raise DataError("fractions must have 2 or 3 entries")
    if d.accepted is None:
        raise DataError("partition needs acceptance flags")
    rng = as_seed(seed).generator()

    acc = np.flatnonzero(d.accepted == 1)
    rej = np.flatnonzero(d.accepted == 0)
    y_acc = d.labels[acc] if d.labels is not None else None
    if y_acc is None or np.any(y_acc == UNKNOWN):
        raise DataError("accepted rows must be labeled")

    acc_part = _stratified_assign(y_acc, fractions, rng)
    rej_part = np.empty(len(rej), dtype=int)
    if len(rej):
        rej_part[:] = _stratified_assign(np.zeros(len(rej), dtype=int), fractions, rng)

    for p in range(len(fractions)):
        if not np.any(acc_part == p):
            raise DataError(f"part {p} is empty after rounding")

    def rows(p, which):
        return acc[acc_part == p] if which == "a" else rej[rej_part == p]

    train = d.take(rows(0, "a"))
    rejects = d.take(rows(0, "r")).with_labels(None)
    val_idx = np.concatenate([rows(1, "a"), rows(1, "r")])
    val = d.take(np.sort(val_idx))
    val_labels = np.where(val.accepted == 1, val.labels, UNKNOWN)
    val = val.with_labels(val_labels)

    if len(fractions) == 3:
        h_idx = np.sort(np.concatenate([rows(2, "a"), rows(2, "r")]))
        h = d.take(h_idx)
        truth = h.sealed_labels(ORACLE_ACCESS) if h.has_sealed_labels else h.labels
        if truth is None or np.any(truth == UNKNOWN):
            raise DataError("holdout rows need ground truth")
        holdout = h.with_labels(truth, holdout=True)
    return Split(train, rejects, val, holdout)


def bootstrap(d: Dataset, seed: "RngSeed | int") -> Dataset:
    """Resample rows with replacement; ids become ``"<id>#<draw>"`` strings."""
    if d.n < 1:
        raise DataError("cannot bootstrap an empty dataset")
    rng = as_seed(seed).generator()
    idx = rng.integers(0, d.n, size=d.n)
    ids = np.array([f"{i}#{j}" for j, i in enumerate(d.ids[idx])])

    def pick(a):
        return None if a is None else a[idx]

    return Dataset(d.features[idx], pick(d.labels), pick(d.accepted), ids, d.feature_names,
                   d.holdout, pick(d._sealed))


# ---------------------------------------------------------------------------
# CSV


@dataclass(frozen=True)
class CsvSchema:
    """Column roles for CSV ingestion. Unlisted columns are features."""

    label: str | None = None
    accepted: str | None = None
    id: str | None = None
    features: tuple[str, ...] | None = None
    holdout: bool = False

    @classmethod
    def from_mapping(cls, m: Mapping) -> "CsvSchema":
        feats = m.get("features")
        return cls(m.get("label"), m.get("accepted"), m.get("id"),
                   tuple(feats) if feats is not None else None, bool(m.get("holdout", False)))


def _parse_flag(cell: str, what: str, row: int) -> int:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"{what} outside {{0,1}} at row {row}") from None
    if v not in (0.0, 1.0):
        raise DataError(f"{what} outside {{0,1}} at row {row}")
    return int(v)


def load_csv(path, schema: CsvSchema | Mapping | None = None) -> Dataset:
    """Read a comma-separated, UTF-8 file with one header row.

    Row numbers in error messages are 1-based data rows (header excluded).
    """
    if schema is None:
        schema = CsvSchema()
    elif not isinstance(schema, CsvSchema):
        schema = CsvSchema.from_mapping(schema)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty CSV file") from None
        rows = [r for r in reader if r]

    col = {name: j for j, name in enumerate(header)}
    for role in (schema.label, schema.accepted, schema.id):
        if role is not None and role not in col:
            raise DataError(f"column {role!r} not found")
    reserved = {schema.label, schema.accepted, schema.id} - {None}
    feats = list(schema.features) if schema.features is not None else [h for h in header if h not in reserved]
    missing = [f for f in feats if f not in col]
    if missing:
        raise DataError(f"feature columns not found: {missing}")

    X = np.empty((len(rows), len(feats)))
    y = np.empty(len(rows), dtype=np.int8) if schema.label else None
    a = np.empty(len(rows), dtype=np.int8) if schema.accepted else None
    ids = []
    for i, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise DataError(f"row {i} has {len(r)} cells, expected {len(header)}")
        for j, f in enumerate(feats):
            cell = r[col[f]].strip()
            try:
                X[i - 1, j] = float(cell)
            except ValueError:
                raise DataError(f"non-numeric feature {f!r} at row {i}: {cell!r}") from None
            if not math.isfinite(X[i - 1, j]):
                raise DataError(f"missing feature {f!r} at row {i}")
        if y is not None:
            cell = r[col[schema.label]].strip()
            y[i - 1] = UNKNOWN if cell == "" else _parse_flag(cell, "label", i)
        if a is not None:
            a[i - 1] = _parse_flag(r[col[schema.accepted]].strip(), "accepted", i)
        ids.append(r[col[schema.id]].strip() if schema.id else i - 1)

    ids = np.asarray(ids)
    if len(set(ids.tolist())) != len(ids):
        raise DataError("duplicate ids")
    return Dataset(X, y, a, ids, tuple(feats), schema.holdout)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(d: Dataset, path, *, include_ids: bool = True) -> None:
    """Write a dataset in the format :func:`load_csv` reads. Sealed labels are never written."""
    header = (["id"] if include_ids else []) + list(d.feature_names)
    clash = {"id", "y", "a"} & set(d.feature_names)
    if clash:
        raise DataError(f"feature names clash with reserved columns: {sorted(clash)}")
    if d.labels is not None:
        header.append("y")
    if d.accepted is not None:
        header.append("a")
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(d.n):
            row = ([str(d.ids[i])] if include_ids else []) + [_fmt(v) for v in d.features[i]]
            if d.labels is not None:
                row.append("" if d.labels[i] == UNKNOWN else str(int(d.labels[i])))
            if d.accepted is not None:
                row.append(str(int(d.accepted[i])))
            w.writerow(row)
    os.replace(tmp, path)
