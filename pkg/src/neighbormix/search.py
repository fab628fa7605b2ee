"""Exact top-k nearest-neighbor retrieval with deterministic ordering.

Results are exact and bitwise reproducible: independent of batch size,
internal chunking, and worker count.  Retrieval runs in two passes:

1. A candidate pass computes all query-to-memory distances chunk-by-chunk
   with a BLAS matrix product (fast, but its low-order bits depend on chunk
   shape) and keeps every row whose distance lies within a rigorous
   floating-point error margin of the k-th smallest.
2. An exact pass recomputes candidate distances per query with a fixed,
   position-independent reduction (numpy einsum, no BLAS) and orders them by
   (distance, memory_row).

The margin in pass 1 is a worst-case bound on |chunked - exact| distance, so
the candidate set always contains the true top k regardless of how pass 1's
arithmetic was chunked; pass 2 then makes the final ordering independent of
everything but (query, memory).

Ranking always uses squared Euclidean distance; the `l2` kind only changes
the reported magnitudes (monotone transform), so both kinds select identical
neighbor sets and orders.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, NamedTuple

import numpy as np

from .data_model import EmbeddingSet
from .errors import ValidationError
from .memory import MemoryStore

_EPS64 = 2.0**-53
# Fixed chunk budget for the candidate pass; must never depend on worker
# count or callers' batching, or bitwise reproducibility is lost.
_CHUNK_TARGET_BYTES = 64 * 1024 * 1024


class DistanceKind(str, Enum):
    """Distance reported to callers; ranking is shared (see module docs)."""

    L2 = "l2"
    SQ_L2 = "sq_l2"


class Neighbor(NamedTuple):
    memory_row: int
    record_id: str
    distance: float
    label_id: int


@dataclass(frozen=True, eq=False)
class NeighborList:
    """Neighbors of one query, ascending by (distance, memory_row)."""

    memory_rows: np.ndarray  # (m,) int64
    record_ids: tuple[str, ...]
    distances: np.ndarray  # (m,) float64, nonnegative
    label_ids: np.ndarray  # (m,) int64
    kind: DistanceKind = DistanceKind.SQ_L2

    def __post_init__(self) -> None:
        self.memory_rows.setflags(write=False)
        self.distances.setflags(write=False)
        self.label_ids.setflags(write=False)

    def __len__(self) -> int:
        return len(self.memory_rows)

    def __iter__(self) -> Iterator[Neighbor]:
        for i in range(len(self.memory_rows)):
            yield self[i]

    def __getitem__(self, i: int) -> Neighbor:
        return Neighbor(
            memory_row=int(self.memory_rows[i]),
            record_id=self.record_ids[i],
            distance=float(self.distances[i]),
            label_id=int(self.label_ids[i]),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NeighborList):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.record_ids == other.record_ids
            and np.array_equal(self.memory_rows, other.memory_rows)
            and np.array_equal(self.distances, other.distances)
            and np.array_equal(self.label_ids, other.label_ids)
        )

    def prefix(self, k: int) -> "NeighborList":
        """First min(k, len) entries; exactly the k-nearest list."""
        if k >= len(self.memory_rows):
            return self
        return NeighborList(
            memory_rows=self.memory_rows[:k],
            record_ids=self.record_ids[:k],
            distances=self.distances[:k],
            label_ids=self.label_ids[:k],
            kind=self.kind,
        )


def _candidate_margin(memory: MemoryStore, q_sq_norm: float, max_key_sq: float) -> float:
    """Two-sided bound on |chunked distance - exact distance| for any row."""
    dot_bound = float(np.sqrt(q_sq_norm) * np.sqrt(max_key_sq))
    per_dot = memory.dim * _EPS64 * dot_bound
    combine = _EPS64 * (q_sq_norm + max_key_sq + 2.0 * dot_bound)
    return 2.0 * 8.0 * (per_dot + combine)


def _exact_topk(
    memory: MemoryStore,
    query: np.ndarray,
    candidates: np.ndarray,
    k_eff: int,
    kind: DistanceKind,
) -> NeighborList:
    """Recompute candidate distances position-independently and take top k."""
    block = np.ascontiguousarray(memory.keys[candidates])
    dots = np.einsum("ij,j->i", block, query)
    q_sq = np.einsum("i,i->", query, query)
    d = q_sq - 2.0 * dots + memory.key_sq_norms[candidates]
    np.maximum(d, 0.0, out=d)
    order = np.lexsort((candidates, d))[:k_eff]
    rows = candidates[order]
    dist = d[order]
    if kind is DistanceKind.L2:
        dist = np.sqrt(dist)
    return NeighborList(
        memory_rows=rows,
        record_ids=tuple(memory.ids[r] for r in rows),
        distances=dist,
        label_ids=memory.values[rows].astype(np.int64),
        kind=kind,
    )


def _search_block(
    memory: MemoryStore,
    queries: np.ndarray,
    k: int,
    kind: DistanceKind,
    excluded_rows: list[np.ndarray] | None,
) -> list[NeighborList]:
    """Resolve one candidate-pass chunk of queries."""
    n_rows = len(memory)
    approx = (
        np.einsum("ij,ij->i", queries, queries)[:, None]
        - 2.0 * (queries @ memory.keys.T)
        + memory.key_sq_norms[None, :]
    )
    max_key_sq = float(memory.key_sq_norms.max())
    out: list[NeighborList] = []
    for i in range(queries.shape[0]):
        row = approx[i]
        excl = excluded_rows[i] if excluded_rows is not None else None
        usable = n_rows
        if excl is not None and excl.size:
            row[excl] = np.inf
            usable = n_rows - excl.size
        if usable <= 0:
            raise ValidationError("memory empty after exclusion")
        k_eff = min(k, usable)
        kth = np.partition(row, k_eff - 1)[k_eff - 1]
        q_sq = float(np.einsum("ij,ij->i", queries[i : i + 1], queries[i : i + 1])[0])
        margin = _candidate_margin(memory, q_sq, max_key_sq)
        candidates = np.flatnonzero(row <= kth + margin)
        out.append(_exact_topk(memory, queries[i], candidates, k_eff, kind))
    return out


def _check_query_matrix(memory: MemoryStore, queries: np.ndarray) -> None:
    if queries.ndim != 2 or queries.shape[1] != memory.dim:
        raise ValidationError(
            f"query dim {queries.shape[-1] if queries.ndim else '?'} does not "
            f"match memory dim {memory.dim}"
        )


def search(
    memory: MemoryStore,
    query: np.ndarray,
    k: int,
    distance: DistanceKind = DistanceKind.SQ_L2,
    exclude: set[str] | frozenset[str] | None = None,
) -> NeighborList:
    """Exact k nearest memory rows for one query vector.

    `exclude` removes rows by record id before selection.  Returned length is
    min(k, usable rows); ties are broken by lower memory row.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != memory.dim:
        raise ValidationError(
            f"query dim {q.shape[0] if q.ndim == 1 else q.shape} does not match "
            f"memory dim {memory.dim}"
        )
    excluded = None
    if exclude:
        row_of = {rid: r for r, rid in enumerate(memory.ids)}
        rows = sorted(row_of[rid] for rid in exclude if rid in row_of)
        excluded = [np.asarray(rows, dtype=np.int64)]
    return _search_block(memory, q[None, :], k, distance, excluded)[0]


def batch_search(
    memory: MemoryStore,
    queries: EmbeddingSet,
    k: int,
    distance: DistanceKind = DistanceKind.SQ_L2,
    exclude_self: bool = False,
    workers: int = 1,
) -> list[NeighborList]:
    """Search every query in an embedding set; order matches input order.

    With `exclude_self`, each query skips the memory row sharing its record
    id (a query must not retrieve itself).  Worker count only distributes
    fixed chunks across threads; outputs are bitwise identical for any value.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    _check_query_matrix(memory, queries.vectors)
    n_queries = len(queries)
    if n_queries == 0:
        return []
    excluded: list[np.ndarray] | None = None
    if exclude_self:
        row_of = {rid: r for r, rid in enumerate(memory.ids)}
        empty = np.empty(0, dtype=np.int64)
        excluded = [
            np.asarray([row_of[rid]], dtype=np.int64) if rid in row_of else empty
            for rid in queries.ids
        ]
    chunk = max(1, _CHUNK_TARGET_BYTES // (8 * max(len(memory), 1)))
    spans = [(s, min(s + chunk, n_queries)) for s in range(0, n_queries, chunk)]

    def run_span(span: tuple[int, int]) -> list[NeighborList]:
        s, e = span
        excl = excluded[s:e] if excluded is not None else None
        return _search_block(memory, queries.vectors[s:e], k, distance, excl)

    # More threads than cores only adds BLAS contention; capping the pool
    # cannot change results (chunking is fixed and the exact pass is
    # position-independent), so worker count stays a pure throughput knob.
    pool_size = min(workers, os.cpu_count() or 1, len(spans))
    if pool_size <= 1:
        parts = [run_span(span) for span in spans]
    else:
        with ThreadPoolExecutor(max_workers=pool_size) as pool:
            parts = list(pool.map(run_span, spans))
    return [nl for part in parts for nl in part]
