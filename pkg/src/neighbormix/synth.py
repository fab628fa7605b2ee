"""Deterministic synthetic benchmark data for desk-scale validation.

Class vectors are drawn from per-class isotropic Gaussians.  The base
classifier is a deliberately miscalibrated softmax over distances to
class centroids estimated from the train split, optionally corrupted by a
fixed bias added to the majority class's logit and by per-example logit
shuffling at a configured noise rate.  Optional extra-supervision rows
("ds" split) can carry uniformly flipped labels.

All randomness comes from a counter-based splitmix64 stream so that a spec
plus seed reproduces byte-identical artifacts; the stream contract (draw
order, uniform mapping, Box-Muller pairing) is documented in the README and
must not change.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import (
    BaseProbSet,
    EmbeddingSet,
    LabeledSet,
    LabelVocab,
    write_base_probs,
    write_embeddings,
    write_labels,
    write_manifest,
)
from .errors import ValidationError

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> np.uint64(30))) * _MIX1
    x = (x ^ (x >> np.uint64(27))) * _MIX2
    return x ^ (x >> np.uint64(31))


class SplitMix64Stream:
    """Counter-based splitmix64: draw j is mix64(seed + (j+1) * golden gamma).

    Uniforms take the top 53 bits into [0, 1).  Normals use Box-Muller on
    consecutive uniform pairs (u_a, u_b): r = sqrt(-2 ln(1 - u_a)),
    theta = 2 pi u_b, yielding r cos(theta) then r sin(theta); odd requests
    drop the final sine value.  Bounded integers are floor(u * bound).
    """

    def __init__(self, seed: int) -> None:
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._drawn = 0

    def uint64(self, n: int) -> np.ndarray:
        idx = np.arange(self._drawn + 1, self._drawn + n + 1, dtype=np.uint64)
        self._drawn += n
        return _mix64(self._seed + idx * _GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        return (self.uint64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]

    def integers(self, n: int, bound: int) -> np.ndarray:
        if bound <= 0:
            raise ValidationError(f"integer bound must be positive, got {bound}")
        return np.minimum((self.uniform(n) * bound).astype(np.int64), bound - 1)


@dataclass(frozen=True)
class SynthSpec:
    """Generation settings; equal specs with equal seeds yield equal data."""

    num_classes: int
    dim: int
    train_counts: tuple[int, ...]
    dev_counts: tuple[int, ...]
    test_counts: tuple[int, ...]
    ds_counts: tuple[int, ...] | None = None
    class_means: tuple[tuple[float, ...], ...] | None = None
    mean_scale: float = 1.0
    spread: float | tuple[float, ...] = 1.0
    base_temperature: float = 1.0
    bias_strength: float = 0.0
    label_noise: float = 0.0
    ds_label_noise: float = 0.0
    negative_class: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_classes < 1 or self.dim < 1:
            raise ValidationError("num_classes and dim must be >= 1")
        for name, counts in (
            ("train_counts", self.train_counts),
            ("dev_counts", self.dev_counts),
            ("test_counts", self.test_counts),
            ("ds_counts", self.ds_counts),
        ):
            if counts is None:
                continue
            if len(counts) != self.num_classes:
                raise ValidationError(f"{name} must have {self.num_classes} entries")
            if any(c < 0 for c in counts):
                raise ValidationError(f"{name} entries must be >= 0")
        total = sum(self.train_counts) + sum(self.dev_counts) + sum(self.test_counts)
        total += sum(self.ds_counts) if self.ds_counts else 0
        if total == 0:
            raise ValidationError("degenerate spec: all counts are zero")
        for s in self.spread_per_class():
            if not s > 0:
                raise ValidationError("spread must be positive")
        for name, rate in (
            ("label_noise", self.label_noise),
            ("ds_label_noise", self.ds_label_noise),
        ):
            if not 0.0 <= rate <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if not self.base_temperature > 0:
            raise ValidationError("base_temperature must be positive")
        if self.class_means is not None:
            if len(self.class_means) != self.num_classes or any(
                len(m) != self.dim for m in self.class_means
            ):
                raise ValidationError("class_means shape must be num_classes x dim")
        if self.negative_class is not None and not (
            0 <= self.negative_class < self.num_classes
        ):
            raise ValidationError("negative_class outside label range")

    def spread_per_class(self) -> tuple[float, ...]:
        if isinstance(self.spread, (int, float)):
            return (float(self.spread),) * self.num_classes
        if len(self.spread) != self.num_classes:
            raise ValidationError("per-class spread must have num_classes entries")
        return tuple(float(s) for s in self.spread)

    def vocab(self) -> LabelVocab:
        names = tuple(f"class_{c:02d}" for c in range(self.num_classes))
        return LabelVocab(names=names, negative_label=self.negative_class)


@dataclass(frozen=True)
class SynthData:
    spec: SynthSpec
    vocab: LabelVocab
    means: np.ndarray  # (num_classes, dim)
    train: LabeledSet
    dev: LabeledSet
    test: LabeledSet
    dev_probs: BaseProbSet
    test_probs: BaseProbSet
    ds: LabeledSet | None = None


def _draw_split(
    stream: SplitMix64Stream,
    spec: SynthSpec,
    means: np.ndarray,
    split: str,
    counts: tuple[int, ...],
    vocab: LabelVocab,
) -> LabeledSet:
    spreads = spec.spread_per_class()
    ids: list[str] = []
    blocks: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    for c in range(spec.num_classes):
        n = counts[c]
        if n == 0:
            continue
        z = stream.normal(n * spec.dim).reshape(n, spec.dim)
        # Quantize to the f32 grid so files round-trip bit-exactly.
        vectors = (means[c] + spreads[c] * z).astype(np.float32).astype(np.float64)
        blocks.append(vectors)
        labels.append(np.full(n, c, dtype=np.int64))
        ids.extend(f"{split}_{c}_{i}" for i in range(n))
    if not blocks:
        blocks.append(np.empty((0, spec.dim), dtype=np.float64))
        labels.append(np.empty(0, dtype=np.int64))
    embeddings = EmbeddingSet(
        dim=spec.dim, ids=tuple(ids), vectors=np.concatenate(blocks, axis=0)
    )
    return LabeledSet(
        embeddings=embeddings, labels=np.concatenate(labels), vocab=vocab
    )


def _class_centroids(train: LabeledSet, num_classes: int) -> np.ndarray:
    """Per-class train means; classes with no examples get NaN rows."""
    dim = train.embeddings.dim
    centroids = np.full((num_classes, dim), np.nan)
    for c in range(num_classes):
        mask = train.labels == c
        if mask.any():
            centroids[c] = train.embeddings.vectors[mask].mean(axis=0)
    return centroids


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _centroid_probs(
    train: LabeledSet,
    queries: EmbeddingSet,
    vocab: LabelVocab,
    base_temperature: float,
    bias_strength: float,
    label_noise: float,
    stream: SplitMix64Stream,
) -> BaseProbSet:
    if not base_temperature > 0:
        raise ValidationError("base_temperature must be positive")
    num_classes = len(vocab)
    centroids = _class_centroids(train, num_classes)
    present = ~np.isnan(centroids[:, 0])
    counts = np.bincount(train.labels, minlength=num_classes)
    majority = int(np.argmax(counts))
    n = len(queries)
    safe_centroids = np.where(present[:, None], centroids, 0.0)
    logits = np.empty((n, num_classes), dtype=np.float64)
    for start in range(0, n, 4096):
        block = queries.vectors[start : start + 4096]
        diff = block[:, None, :] - safe_centroids[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        logits[start : start + len(block)] = -dist / base_temperature
    logits[:, ~present] = -np.inf
    logits[:, majority] += bias_strength
    if label_noise > 0.0 and num_classes > 1:
        flips = stream.uniform(n) < label_noise
        n_flips = int(flips.sum())
        if n_flips:
            shifts = 1 + stream.integers(n_flips, num_classes - 1)
            rows = np.flatnonzero(flips)
            for r, s in zip(rows, shifts):
                logits[r] = np.roll(logits[r], int(s))
    return BaseProbSet(vocab=vocab, ids=queries.ids, rows=_softmax_rows(logits))


def centroid_base_probs(
    train: LabeledSet,
    queries: EmbeddingSet,
    vocab: LabelVocab,
    base_temperature: float = 1.0,
    bias_strength: float = 0.0,
    label_noise: float = 0.0,
    seed: int = 0,
) -> BaseProbSet:
    """Distance-to-centroid softmax classifier fit on `train`, then corrupted.

    Logits are -||x - centroid_c|| / base_temperature; classes absent from
    `train` get probability zero.  `bias_strength` is added to the majority
    class's logit; with probability `label_noise` an example's logit vector
    is cyclically shifted by a random offset before the softmax.
    """
    return _centroid_probs(
        train, queries, vocab, base_temperature, bias_strength, label_noise,
        SplitMix64Stream(seed),
    )


def generate(spec: SynthSpec) -> SynthData:
    """Draw all splits and base probabilities from the spec's single stream.

    Stream order: class means (when not given), then train/dev/test/ds
    vectors class by class, then ds label flips, then base-classifier noise
    for dev and for test.
    """
    vocab = spec.vocab()
    stream = SplitMix64Stream(spec.seed)
    if spec.class_means is not None:
        means = np.asarray(spec.class_means, dtype=np.float64)
    else:
        means = (
            stream.normal(spec.num_classes * spec.dim).reshape(
                spec.num_classes, spec.dim
            )
            * spec.mean_scale
        )
    train = _draw_split(stream, spec, means, "train", spec.train_counts, vocab)
    dev = _draw_split(stream, spec, means, "dev", spec.dev_counts, vocab)
    test = _draw_split(stream, spec, means, "test", spec.test_counts, vocab)
    ds = None
    if spec.ds_counts is not None and sum(spec.ds_counts) > 0:
        ds = _draw_split(stream, spec, means, "ds", spec.ds_counts, vocab)
        if spec.ds_label_noise > 0.0 and spec.num_classes > 1:
            flips = stream.uniform(len(ds)) < spec.ds_label_noise
            n_flips = int(flips.sum())
            if n_flips:
                offsets = 1 + stream.integers(n_flips, spec.num_classes - 1)
                labels = ds.labels.copy()
                rows = np.flatnonzero(flips)
                labels[rows] = (labels[rows] + offsets) % spec.num_classes
                ds = LabeledSet(embeddings=ds.embeddings, labels=labels, vocab=vocab)
    if len(train) == 0:
        raise ValidationError("train split is empty; base probabilities need centroids")
    dev_probs = _corrupted_probs(spec, train, dev.embeddings, vocab, stream)
    test_probs = _corrupted_probs(spec, train, test.embeddings, vocab, stream)
    return SynthData(
        spec=spec,
        vocab=vocab,
        means=means,
        train=train,
        dev=dev,
        test=test,
        dev_probs=dev_probs,
        test_probs=test_probs,
        ds=ds,
    )


def _corrupted_probs(
    spec: SynthSpec,
    train: LabeledSet,
    queries: EmbeddingSet,
    vocab: LabelVocab,
    stream: SplitMix64Stream,
) -> BaseProbSet:
    """Like `centroid_base_probs` but drawing noise from the shared stream."""
    return _centroid_probs(
        train, queries, vocab, spec.base_temperature, spec.bias_strength,
        spec.label_noise, stream,
    )


def subsample(train: LabeledSet, fraction: float, seed: int) -> LabeledSet:
    """Stratified, order-preserving subsample; >= 1 example per present class.

    Per-class targets are round(count * fraction) with a floor of one, so
    proportions deviate from exact stratification by at most one example per
    class.  Selection uses a partial Fisher-Yates shuffle on the stream.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return train
    stream = SplitMix64Stream(seed)
    keep: list[np.ndarray] = []
    for c in range(len(train.vocab)):
        idx = np.flatnonzero(train.labels == c)
        n_c = len(idx)
        if n_c == 0:
            continue
        target = min(n_c, max(1, int(np.floor(n_c * fraction + 0.5))))
        pool = idx.copy()
        draws = stream.uniform(target)
        for t in range(target):
            j = t + int(draws[t] * (n_c - t))
            pool[t], pool[j] = pool[j], pool[t]
        keep.append(np.sort(pool[:target]))
    selected = np.sort(np.concatenate(keep))
    embeddings = EmbeddingSet(
        dim=train.embeddings.dim,
        ids=tuple(train.embeddings.ids[i] for i in selected),
        vectors=np.ascontiguousarray(train.embeddings.vectors[selected]),
    )
    return LabeledSet(
        embeddings=embeddings, labels=train.labels[selected].copy(), vocab=train.vocab
    )


# ---------------------------------------------------------------------------
# Spec and dataset serialization
# ---------------------------------------------------------------------------


def spec_to_dict(spec: SynthSpec) -> dict:
    return {
        "num_classes": spec.num_classes,
        "dim": spec.dim,
        "train_counts": list(spec.train_counts),
        "dev_counts": list(spec.dev_counts),
        "test_counts": list(spec.test_counts),
        "ds_counts": None if spec.ds_counts is None else list(spec.ds_counts),
        "class_means": None
        if spec.class_means is None
        else [list(m) for m in spec.class_means],
        "mean_scale": spec.mean_scale,
        "spread": list(spec.spread)
        if isinstance(spec.spread, tuple)
        else spec.spread,
        "base_temperature": spec.base_temperature,
        "bias_strength": spec.bias_strength,
        "label_noise": spec.label_noise,
        "ds_label_noise": spec.ds_label_noise,
        "negative_class": spec.negative_class,
        "seed": spec.seed,
    }


def spec_from_dict(doc: dict) -> SynthSpec:
    def tup(value):
        return None if value is None else tuple(value)

    spread = doc.get("spread", 1.0)
    return SynthSpec(
        num_classes=int(doc["num_classes"]),
        dim=int(doc["dim"]),
        train_counts=tup(doc["train_counts"]),
        dev_counts=tup(doc["dev_counts"]),
        test_counts=tup(doc["test_counts"]),
        ds_counts=tup(doc.get("ds_counts")),
        class_means=None
        if doc.get("class_means") is None
        else tuple(tuple(m) for m in doc["class_means"]),
        mean_scale=float(doc.get("mean_scale", 1.0)),
        spread=tuple(spread) if isinstance(spread, list) else float(spread),
        base_temperature=float(doc.get("base_temperature", 1.0)),
        bias_strength=float(doc.get("bias_strength", 0.0)),
        label_noise=float(doc.get("label_noise", 0.0)),
        ds_label_noise=float(doc.get("ds_label_noise", 0.0)),
        negative_class=doc.get("negative_class"),
        seed=int(doc.get("seed", 0)),
    )


def load_spec(path: str | Path) -> SynthSpec:
    return spec_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_dataset(data: SynthData, out_dir: str | Path) -> Path:
    """Write all splits plus a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc: dict = {
        "dim": data.spec.dim,
        "labels": list(data.vocab.names),
        "splits": {},
    }
    if data.vocab.negative_label is not None:
        doc["negative_label"] = data.vocab.name_of(data.vocab.negative_label)
    probs = {"dev": data.dev_probs, "test": data.test_probs}
    splits: list[tuple[str, LabeledSet]] = [
        ("train", data.train),
        ("dev", data.dev),
        ("test", data.test),
    ]
    if data.ds is not None:
        splits.append(("ds", data.ds))
    for name, labeled in splits:
        write_embeddings(labeled.embeddings, out / f"{name}.emb")
        write_labels(
            out / f"{name}.tsv",
            labeled.embeddings.ids,
            [data.vocab.name_of(int(l)) for l in labeled.labels],
        )
        entry = {
            "embeddings": f"{name}.emb",
            "labels": f"{name}.tsv",
            "count": len(labeled),
        }
        if name in probs:
            write_base_probs(probs[name].ids, probs[name].rows, out / f"{name}.prb")
            entry["base_probs"] = f"{name}.prb"
        doc["splits"][name] = entry
    manifest_path = out / "manifest.json"
    write_manifest(manifest_path, doc)
    return manifest_path


__all__ = [
    "SplitMix64Stream",
    "SynthSpec",
    "SynthData",
    "generate",
    "subsample",
    "centroid_base_probs",
    "spec_to_dict",
    "spec_from_dict",
    "load_spec",
    "write_dataset",
]
