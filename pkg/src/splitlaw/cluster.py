"""Balanced K-means over document embeddings, nearest-centroid routing and prefix retrieval.

Embedding files are a small binary matrix format::

    b"EMB1" | u32 n | u32 d | n*d float32, row-major, little-endian

with an optional sidecar text file holding one id per line.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateError, DimensionMismatchError, EmbeddingFormatError, EmptyInputError, UnpairedIdsError

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    vectors: np.ndarray
    ids: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.array(self.vectors, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise EmptyInputError(f"need a nonempty n x d matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise EmbeddingFormatError("embedding vectors must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        ids = tuple(str(i) for i in self.ids) if len(self.ids) else tuple(str(i) for i in range(len(v)))
        if len(ids) != len(v):
            raise UnpairedIdsError(f"{len(ids)} ids for {len(v)} vectors")
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True, eq=False)
class ClusterModel:
    """Fitted router: centroid ``c`` is row ``c`` of ``centroids``."""

    centroids: np.ndarray
    sizes: tuple[int, ...]
    inertia: float
    seed: int
    labels: np.ndarray | None = field(default=None, repr=False)
    inertia_history: tuple[float, ...] = ()

    @property
    def K(self) -> int:
        return self.centroids.shape[0]

    def metadata(self) -> dict:
        return {"K": self.K, "sizes": list(self.sizes), "inertia": self.inertia, "seed": self.seed}


# ---------------------------------------------------------------------------
# clustering


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)


def _kmeans_pp(X, K, rng):
    n = len(X)
    idx = [int(rng.integers(n))]
    d2 = ((X - X[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining points coincide with a chosen center
            rest = np.setdiff1d(np.arange(n), idx)
            nxt = int(rng.choice(rest))
        idx.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[idx].copy()


def _balanced_assign(X, C):
    """Greedy capacity-constrained assignment ordered by regret.

    Points whose nearest centroid beats their second choice by the widest
    margin pick first. ``n mod K`` clusters may hold ``ceil(n/K)`` points and
    the rest ``floor(n/K)``, so sizes differ by at most one.
    """
    n, K = len(X), len(C)
    if K == 1:
        return np.zeros(n, dtype=int)
    dist = np.sqrt(_sq_dists(X, C))
    pref = np.argsort(dist, axis=1, kind="stable")
    ranked = np.take_along_axis(dist, pref[:, :2], axis=1)
    order = np.argsort(ranked[:, 0] - ranked[:, 1], kind="stable")
    floor, n_big = divmod(n, K)
    sizes = [0] * K
    big_used = 0
    labels = np.empty(n, dtype=int)
    for i in order:
        for c in pref[i]:
            s = sizes[c]
            if s < floor or (s == floor and big_used < n_big):
                if s == floor:
                    big_used += 1
                sizes[c] = s + 1
                labels[i] = c
                break
    return labels


def _means(X, labels, K):
    C = np.zeros((K, X.shape[1]))
    np.add.at(C, labels, X)
    return C / np.bincount(labels, minlength=K)[:, None]


def _cost(X, C, labels):
    return float(((X - C[labels]) ** 2).sum())


def balanced_kmeans(emb: EmbeddingSet, K: int, seed: int = 0, max_iter: int = 100) -> ClusterModel:
    """Flat balanced K-means with k-means++ seeding.

    A reassignment is kept only if it lowers the inertia under the current
    centroids, which makes the inertia sequence nonincreasing and rules out cycles.
    """
    X = emb.vectors
    n = len(X)
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > n:
        raise DegenerateError(f"cannot form {K} clusters from {n} points")
    rng = np.random.default_rng(seed)
    C = _kmeans_pp(X, K, rng)
    labels = _balanced_assign(X, C)
    history = []
    for _ in range(max_iter):
        C = _means(X, labels, K)
        current = _cost(X, C, labels)
        history.append(current)
        new = _balanced_assign(X, C)
        if np.array_equal(new, labels) or _cost(X, C, new) >= current:
            break
        labels = new
    else:
        C = _means(X, labels, K)
        history.append(_cost(X, C, labels))
    sizes = tuple(int(s) for s in np.bincount(labels, minlength=K))
    return ClusterModel(C, sizes, history[-1], seed, labels, tuple(history))


# ---------------------------------------------------------------------------
# routing


def _query(model: ClusterModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != model.centroids.shape[1]:
        raise DimensionMismatchError(f"query has shape {x.shape}, centroids have dimension {model.centroids.shape[1]}")
    return ((model.centroids - x) ** 2).sum(axis=1)


def assign(model: ClusterModel, x) -> int:
    """Index of the nearest centroid; ties go to the lowest index."""
    return int(np.argmin(_query(model, x)))


def route_topk(model: ClusterModel, x, k: int) -> list[int]:
    if not 1 <= k <= model.K:
        raise ValueError(f"k must lie in [1, {model.K}]")
    return [int(i) for i in np.argsort(_query(model, x), kind="stable")[:k]]


def assign_many(model: ClusterModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.centroids.shape[1]:
        raise DimensionMismatchError(f"queries have shape {X.shape}, centroids have dimension {model.centroids.shape[1]}")
    return np.argmin(_sq_dists(X, model.centroids), axis=1)


# ---------------------------------------------------------------------------
# prefix retrieval


def retrieval_ranks(prefixes: EmbeddingSet, docs: EmbeddingSet, chunk_bytes: int = 1 << 26) -> np.ndarray:
    """For each prefix, the number of documents strictly closer than its own document."""
    if prefixes.d != docs.d:
        raise DimensionMismatchError(f"prefix dimension {prefixes.d} != document dimension {docs.d}")
    if prefixes.n != docs.n or set(prefixes.ids) != set(docs.ids) or len(set(docs.ids)) != docs.n:
        raise UnpairedIdsError("prefix and document ids must be the same set of unique ids")
    where = {doc_id: j for j, doc_id in enumerate(docs.ids)}
    own = np.array([where[i] for i in prefixes.ids])
    P, Dm = prefixes.vectors, docs.vectors
    step = max(1, chunk_bytes // (8 * Dm.size))
    ranks = np.empty(prefixes.n, dtype=int)
    for start in range(0, prefixes.n, step):
        stop = min(start + step, prefixes.n)
        d2 = _sq_dists(P[start:stop], Dm)
        mine = d2[np.arange(stop - start), own[start:stop]]
        ranks[start:stop] = (d2 < mine[:, None]).sum(axis=1)
    return ranks


def recall_at_k(prefixes: EmbeddingSet, docs: EmbeddingSet, k: int) -> float:
    """Fraction of prefixes whose own document is among the ``k`` nearest documents."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return float(np.mean(retrieval_ranks(prefixes, docs) < k))


# ---------------------------------------------------------------------------
# file formats


def write_matrix(path, M) -> None:
    M = np.ascontiguousarray(M, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, M.shape[0], M.shape[1]))
        fh.write(M.tobytes())


def read_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise EmbeddingFormatError(f"{path}: too short for an EMB1 header")
    magic, n, d = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    expected = _HEADER.size + 4 * n * d
    if len(data) != expected:
        raise EmbeddingFormatError(f"{path}: header says {n}x{d} ({expected} bytes) but file has {len(data)} bytes")
    return np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(n, d).astype(float)


def write_embeddings(emb: EmbeddingSet, path, ids_path=None) -> None:
    write_matrix(path, emb.vectors)
    if ids_path is not None:
        Path(ids_path).write_text("".join(f"{i}\n" for i in emb.ids))


def read_embeddings(path, ids_path=None) -> EmbeddingSet:
    M = read_matrix(path)
    ids: Sequence[str] = ()
    if ids_path is not None:
        ids = Path(ids_path).read_text().splitlines()
        if len(ids) != len(M):
            raise UnpairedIdsError(f"{ids_path}: {len(ids)} ids for {len(M)} vectors")
    return EmbeddingSet(M, tuple(ids))


def save_model(model: ClusterModel, path) -> None:
    """Centroids go to ``path`` in the matrix format, metadata to ``path + '.json'``."""
    write_matrix(path, model.centroids)
    Path(str(path) + ".json").write_text(json.dumps(model.metadata(), indent=2) + "\n")


def load_model(path) -> ClusterModel:
    C = read_matrix(path)
    try:
        meta = json.loads(Path(str(path) + ".json").read_text())
        sizes = tuple(int(s) for s in meta["sizes"])
        inertia, seed = float(meta["inertia"]), int(meta["seed"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise EmbeddingFormatError(f"{path}.json: unreadable model metadata ({exc})") from exc
    if int(meta.get("K", len(C))) != len(C) or len(sizes) != len(C):
        raise EmbeddingFormatError(f"{path}: metadata K does not match {len(C)} centroids")
    return ClusterModel(C, sizes, inertia, seed)
