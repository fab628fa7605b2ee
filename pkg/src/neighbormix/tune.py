"""Greedy hyperparameter search on a dev split.

Stage 1 scores every (k, temperature) pair with the neighbor vote alone
(mix weight 1) and keeps the best; stage 2 sweeps the mix weight with that
pair fixed.  Neighbor lists are retrieved once per query at the largest k in
the grid and reused for all grid points: a prefix of the list at k_max is
exactly the k-nearest list, so the reuse is bit-for-bit equivalent to
re-searching per k.  Ties between grid points resolve to the earlier point.

Dev queries are searched with self-exclusion, so a record that also lives
in the memory can never retrieve its own label.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .aggregate import HyperParams, knn_distribution
from .data_model import BaseProbSet, LabeledSet
from .errors import ValidationError
from .memory import MemoryStore
from .metrics import micro_f1_from_arrays
from .search import DistanceKind, NeighborList, batch_search

DEFAULT_K_GRID = (2, 4, 8, 16, 32, 64, 128, 256)
# Step 0.1 from 0; an exact 0 is undefined in exp(-d/T), so it becomes 0.05.
DEFAULT_T_GRID = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
DEFAULT_LAMBDA_GRID = tuple(i / 10 for i in range(11))
DEFAULT_ALPHA_GRID = tuple(i / 10 for i in range(11))


@dataclass(frozen=True)
class SearchSpace:
    k_grid: tuple[int, ...] = DEFAULT_K_GRID
    t_grid: tuple[float, ...] = DEFAULT_T_GRID
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID

    def __post_init__(self) -> None:
        for name, grid in (
            ("k_grid", self.k_grid),
            ("t_grid", self.t_grid),
            ("lambda_grid", self.lambda_grid),
            ("alpha_grid", self.alpha_grid),
        ):
            if not grid:
                raise ValidationError(f"{name} is empty")
            if list(grid) != sorted(grid):
                raise ValidationError(f"{name} must be sorted ascending")
        if self.k_grid[0] < 1:
            raise ValidationError("k values must be >= 1")
        if not (0 < self.t_grid[0] and self.t_grid[-1] <= 1):
            raise ValidationError("temperature values must lie in (0, 1]")
        for name, grid in (("lambda_grid", self.lambda_grid), ("alpha_grid", self.alpha_grid)):
            if not (0 <= grid[0] and grid[-1] <= 1):
                raise ValidationError(f"{name} values must lie in [0, 1]")


@dataclass(frozen=True)
class TracePoint:
    hp: HyperParams
    dev_f1: float


@dataclass(frozen=True)
class TuneResult:
    best: HyperParams
    dev_f1: float
    trace: tuple[TracePoint, ...]


def _aligned_base_rows(dev: LabeledSet, probs: BaseProbSet) -> np.ndarray:
    missing = [rid for rid in dev.embeddings.ids if rid not in probs]
    if missing:
        raise ValidationError(
            f"dev records without base probabilities: {missing[:5]}"
        )
    return np.stack([probs.row(rid) for rid in dev.embeddings.ids])


def greedy_search(
    memory: MemoryStore,
    dev: LabeledSet,
    dev_probs: BaseProbSet,
    space: SearchSpace | None = None,
    distance: DistanceKind = DistanceKind.SQ_L2,
    workers: int = 1,
    neighbor_cache: Sequence[NeighborList] | None = None,
) -> TuneResult:
    """Two-stage grid search; trace holds every evaluated point in order."""
    space = space or SearchSpace()
    if len(dev) == 0:
        raise ValidationError("dev split is empty")
    base_rows = _aligned_base_rows(dev, dev_probs)
    gold = dev.labels
    vocab = dev.vocab
    exclude_negative = vocab.negative_label is not None
    k_max = space.k_grid[-1]
    if neighbor_cache is None:
        neighbor_cache = batch_search(
            memory, dev.embeddings, k_max, distance, exclude_self=True, workers=workers
        )
    elif len(neighbor_cache) != len(dev):
        raise ValidationError("neighbor cache length does not match dev split")

    def score(pred: np.ndarray) -> float:
        return micro_f1_from_arrays(
            gold, pred, len(vocab), vocab.negative_label, exclude_negative
        )

    trace: list[TracePoint] = []
    best_stage1: tuple[int, float] | None = None
    best_stage1_f1 = -1.0
    for k in space.k_grid:
        for t in space.t_grid:
            votes = np.stack(
                [knn_distribution(nl.prefix(k), vocab, t) for nl in neighbor_cache]
            )
            f1 = score(np.argmax(votes, axis=1))
            trace.append(
                TracePoint(HyperParams(k=k, temperature=t, lam=1.0, distance=distance), f1)
            )
            if f1 > best_stage1_f1:
                best_stage1_f1 = f1
                best_stage1 = (k, t)
    k_best, t_best = best_stage1
    votes = np.stack(
        [knn_distribution(nl.prefix(k_best), vocab, t_best) for nl in neighbor_cache]
    )
    best_hp: HyperParams | None = None
    best_f1 = -1.0
    for lam in space.lambda_grid:
        final = lam * votes + (1.0 - lam) * base_rows
        f1 = score(np.argmax(final, axis=1))
        hp = HyperParams(k=k_best, temperature=t_best, lam=lam, distance=distance)
        trace.append(TracePoint(hp, f1))
        if f1 > best_f1:
            best_f1 = f1
            best_hp = hp
    return TuneResult(best=best_hp, dev_f1=best_f1, trace=tuple(trace))


def interpolated_distributions(
    memory: MemoryStore,
    data: LabeledSet,
    probs: BaseProbSet,
    hp: HyperParams,
    workers: int = 1,
    exclude_self: bool = True,
) -> dict[str, np.ndarray]:
    """Per-record final distributions for one memory under fixed settings."""
    base_rows = _aligned_base_rows(data, probs)
    neighbors = batch_search(
        memory, data.embeddings, hp.k, hp.distance, exclude_self=exclude_self,
        workers=workers,
    )
    out: dict[str, np.ndarray] = {}
    for i, rid in enumerate(data.embeddings.ids):
        vote = knn_distribution(neighbors[i], memory.vocab, hp.temperature)
        out[rid] = hp.lam * vote + (1.0 - hp.lam) * base_rows[i]
    return out


def tune_alpha(
    first_dists: Mapping[str, np.ndarray],
    second_dists: Mapping[str, np.ndarray],
    gold: Mapping[str, int],
    alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID,
    num_labels: int | None = None,
    negative_label: int | None = None,
) -> tuple[float, tuple[tuple[float, float], ...]]:
    """Pick the mixing weight between two memories' dev distributions."""
    if set(first_dists) != set(second_dists) or set(first_dists) != set(gold):
        raise ValidationError("record sets differ between the two sides and gold")
    if not alpha_grid:
        raise ValidationError("alpha_grid is empty")
    ids = list(gold)
    first = np.stack([first_dists[r] for r in ids])
    second = np.stack([second_dists[r] for r in ids])
    gold_arr = np.fromiter((gold[r] for r in ids), dtype=np.int64, count=len(ids))
    if num_labels is None:
        num_labels = first.shape[1]
    trace = []
    best_alpha = None
    best_f1 = -1.0
    for alpha in alpha_grid:
        mixed = alpha * first + (1.0 - alpha) * second
        f1 = micro_f1_from_arrays(
            gold_arr,
            np.argmax(mixed, axis=1),
            num_labels,
            negative_label,
            negative_label is not None,
        )
        trace.append((float(alpha), f1))
        if f1 > best_f1:
            best_f1 = f1
            best_alpha = float(alpha)
    return best_alpha, tuple(trace)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def hyperparams_to_dict(hp: HyperParams) -> dict:
    return {
        "k": hp.k,
        "temperature": hp.temperature,
        "lam": hp.lam,
        "alpha": hp.alpha,
        "distance": hp.distance.value,
    }


def hyperparams_from_dict(doc: dict) -> HyperParams:
    return HyperParams(
        k=int(doc["k"]),
        temperature=float(doc["temperature"]),
        lam=float(doc["lam"]),
        alpha=None if doc.get("alpha") is None else float(doc["alpha"]),
        distance=DistanceKind(doc.get("distance", "sq_l2")),
    )


def tune_result_to_dict(result: TuneResult) -> dict:
    return {
        "best": hyperparams_to_dict(result.best),
        "dev_f1": result.dev_f1,
        "trace": [
            {"hp": hyperparams_to_dict(p.hp), "dev_f1": p.dev_f1} for p in result.trace
        ],
    }


def format_best(result: TuneResult) -> str:
    """Best point in compact `(k, lam)` notation."""
    k = result.best.k
    lam = result.best.lam
    return f"({k}, {lam:g})"


def tune_result_to_json(result: TuneResult) -> str:
    return json.dumps(tune_result_to_dict(result), indent=2) + "\n"
