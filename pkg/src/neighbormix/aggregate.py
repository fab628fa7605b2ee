"""Label distributions from neighbors, and mixing with a base classifier.

Neighbor votes are weighted by a softmax over negative retrieval distance
with a scaling temperature: p(y) = sum_{i: label_i = y} exp(-d_i / T),
normalized over the neighbor set.  Weights are computed with the minimum
distance subtracted before exponentiation, which leaves the normalized
result unchanged (shift invariance) but keeps it finite at any distance
scale.  The final distribution linearly interpolates the neighbor vote with
the base classifier's row; two memories' final distributions can be mixed
with a second coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import BaseProbSet, LabelVocab
from .errors import ValidationError
from .memory import MemoryStore
from .search import DistanceKind, NeighborList, search


@dataclass(frozen=True)
class HyperParams:
    """Retrieval and mixing settings: neighbor count, temperature, weights."""

    k: int
    temperature: float
    lam: float  # weight of the neighbor distribution in the final mix
    alpha: float | None = None  # first-memory weight, combined setups only
    distance: DistanceKind = DistanceKind.SQ_L2

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if not self.temperature > 0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError(f"lam must be in [0, 1], got {self.lam}")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must be in [0, 1], got {self.alpha}")


def knn_distribution(
    neighbors: NeighborList, vocab: LabelVocab, temperature: float
) -> np.ndarray:
    """Softmax-weighted neighbor label vote; sums to 1 over the vocabulary."""
    if len(neighbors) == 0:
        raise ValidationError("cannot aggregate an empty neighbor list")
    if not temperature > 0:
        raise ValidationError(f"temperature must be > 0, got {temperature}")
    d = neighbors.distances
    weights = np.exp(-(d - d.min()) / temperature)
    probs = np.bincount(
        neighbors.label_ids, weights=weights, minlength=len(vocab)
    )
    return probs / probs.sum()


def interpolate(p_knn: np.ndarray, p_base: np.ndarray, lam: float) -> np.ndarray:
    """lam * p_knn + (1 - lam) * p_base, elementwise."""
    if p_knn.shape != p_base.shape:
        raise ValidationError(
            f"distribution length mismatch: {p_knn.shape} vs {p_base.shape}"
        )
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lam must be in [0, 1], got {lam}")
    return lam * p_knn + (1.0 - lam) * p_base


def combine(p_first: np.ndarray, p_second: np.ndarray, alpha: float) -> np.ndarray:
    """Mix two memories' final distributions: alpha-weighted toward the first."""
    if p_first.shape != p_second.shape:
        raise ValidationError(
            f"distribution length mismatch: {p_first.shape} vs {p_second.shape}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * p_first + (1.0 - alpha) * p_second


def argmax_label(distribution: np.ndarray) -> int:
    """Predicted label id; ties resolve to the lowest id."""
    return int(np.argmax(distribution))


@dataclass(frozen=True)
class Prediction:
    """Final distribution with the predicted label and retrieval audit trail."""

    distribution: np.ndarray
    label_id: int
    neighbors: tuple[NeighborList, ...]


def predict(
    query_id: str,
    query: np.ndarray,
    memory: MemoryStore,
    base: BaseProbSet,
    hp: HyperParams,
    exclude_self: bool = False,
) -> Prediction:
    """Retrieve, vote, and interpolate with the query's base row.

    A query with no base-probability row is an error: silently falling back
    to the neighbor vote would corrupt interpolation sweeps.
    """
    p_base = base.row(query_id)
    neighbors = search(
        memory,
        query,
        hp.k,
        distance=hp.distance,
        exclude={query_id} if exclude_self else None,
    )
    p_knn = knn_distribution(neighbors, memory.vocab, hp.temperature)
    final = interpolate(p_knn, p_base, hp.lam)
    return Prediction(
        distribution=final, label_id=argmax_label(final), neighbors=(neighbors,)
    )


def predict_combined(
    query_id: str,
    query: np.ndarray,
    first: tuple[MemoryStore, HyperParams],
    second: tuple[MemoryStore, HyperParams],
    alpha: float,
    base: BaseProbSet,
    exclude_self: bool = False,
) -> Prediction:
    """Mix the two memories' independently parameterized final distributions."""
    first_pred = predict(query_id, query, first[0], base, first[1], exclude_self)
    second_pred = predict(query_id, query, second[0], base, second[1], exclude_self)
    final = combine(first_pred.distribution, second_pred.distribution, alpha)
    return Prediction(
        distribution=final,
        label_id=argmax_label(final),
        neighbors=first_pred.neighbors + second_pred.neighbors,
    )
