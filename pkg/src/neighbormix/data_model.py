"""Dataset types, binary file formats, and validated ingestion.

Vectors are stored on disk as little-endian 32-bit floats (compact, matches
encoder export precision) and widened to 64-bit on load; all engine math runs
in float64.  Label distributions are plain ``float64`` numpy arrays over the
label vocabulary.

Binary matrix layout (shared by embedding and base-probability files)::

    magic   4 bytes            "EMB1" (embeddings) or "PRB1" (probabilities)
    rows    u32 little-endian
    dim     u32 little-endian
    record  repeated `rows` times:
                id_len  u16 little-endian
                id      `id_len` bytes, UTF-8
                values  `dim` x f32 little-endian

Labels files are UTF-8 TSV with one ``record_id<TAB>label_name`` line per
record.  Manifests are JSON documents tying the per-split files together;
paths are resolved relative to the manifest's directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

EMBEDDING_MAGIC = b"EMB1"
PROB_MAGIC = b"PRB1"

# Row sums farther than this from 1.0 are rejected; smaller deviations are
# silently divided out (absorbs f32 export rounding without hiding bugs).
PROB_SUM_TOLERANCE = 1e-4

SPLIT_NAMES = ("train", "dev", "test", "ds")


@dataclass(frozen=True)
class LabelVocab:
    """Ordered label vocabulary; ids are positions in `names`."""

    names: tuple[str, ...]
    negative_label: int | None = None

    def __post_init__(self) -> None:
        if not self.names:
            raise ValidationError("label vocabulary is empty")
        if any(not n for n in self.names):
            raise ValidationError("label names must be non-empty")
        if len(set(self.names)) != len(self.names):
            dupes = sorted({n for n in self.names if self.names.count(n) > 1})
            raise ValidationError(f"duplicate label names: {dupes}")
        if self.negative_label is not None and not (
            0 <= self.negative_label < len(self.names)
        ):
            raise ValidationError(
                f"negative_label {self.negative_label} outside 0..{len(self.names) - 1}"
            )

    def __len__(self) -> int:
        return len(self.names)

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown label name: {name!r}") from None

    def name_of(self, label_id: int) -> str:
        if not 0 <= label_id < len(self.names):
            raise ValidationError(f"label id {label_id} outside 0..{len(self.names) - 1}")
        return self.names[label_id]

    @classmethod
    def from_names(
        cls, names: list[str] | tuple[str, ...], negative_name: str | None = None
    ) -> "LabelVocab":
        names = tuple(names)
        negative = None
        if negative_name is not None:
            if negative_name not in names:
                raise ValidationError(
                    f"negative label {negative_name!r} not in vocabulary"
                )
            negative = names.index(negative_name)
        return cls(names=names, negative_label=negative)


def _frozen_array(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EmbeddingSet:
    """Dense matrix of record vectors with stable, unique record ids."""

    dim: int
    ids: tuple[str, ...]
    vectors: np.ndarray  # (len(ids), dim) float64, read-only
    _row_of: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        if self.dim <= 0:
            raise ValidationError(f"dim must be positive, got {self.dim}")
        if self.vectors.shape != (len(self.ids), self.dim):
            raise ValidationError(
                f"vector matrix shape {self.vectors.shape} does not match "
                f"{len(self.ids)} records of dim {self.dim}"
            )
        if self.vectors.dtype != np.float64:
            raise ValidationError("vectors must be float64")
        if self.vectors.size and not np.isfinite(self.vectors).all():
            row = int(np.argwhere(~np.isfinite(self.vectors).all(axis=1))[0, 0])
            raise ValidationError(
                f"non-finite value in vector for record {self.ids[row]!r} (row {row})"
            )
        if len(set(self.ids)) != len(self.ids):
            seen: set[str] = set()
            for i, rid in enumerate(self.ids):
                if rid in seen:
                    raise ValidationError(f"duplicate record_id {rid!r} at row {i}")
                seen.add(rid)
        _frozen_array(self.vectors)
        self._row_of.update({rid: i for i, rid in enumerate(self.ids)})

    def __len__(self) -> int:
        return len(self.ids)

    def row_of(self, record_id: str) -> int:
        try:
            return self._row_of[record_id]
        except KeyError:
            raise ValidationError(f"unknown record_id {record_id!r}") from None


@dataclass(frozen=True)
class LabeledSet:
    """Embeddings joined with one label per record."""

    embeddings: EmbeddingSet
    labels: np.ndarray  # (len(embeddings),) int64, aligned with embedding rows
    vocab: LabelVocab

    def __post_init__(self) -> None:
        if self.labels.shape != (len(self.embeddings),):
            raise ValidationError(
                f"labels shape {self.labels.shape} does not match "
                f"{len(self.embeddings)} records"
            )
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= len(self.vocab)
        ):
            raise ValidationError("label id outside vocabulary range")
        _frozen_array(self.labels)

    def __len__(self) -> int:
        return len(self.embeddings)

    def label_of(self, record_id: str) -> int:
        return int(self.labels[self.embeddings.row_of(record_id)])


@dataclass(frozen=True)
class BaseProbSet:
    """Base-classifier probability rows keyed by record id."""

    vocab: LabelVocab
    ids: tuple[str, ...]
    rows: np.ndarray  # (len(ids), len(vocab)) float64, each row sums to 1
    _row_of: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        if self.rows.shape != (len(self.ids), len(self.vocab)):
            raise ValidationError(
                f"probability matrix shape {self.rows.shape} does not match "
                f"{len(self.ids)} records x {len(self.vocab)} labels"
            )
        if self.rows.size:
            if self.rows.min() < 0:
                raise ValidationError("negative probability entry")
            sums = self.rows.sum(axis=1)
            bad = np.argwhere(np.abs(sums - 1.0) > 1e-6)
            if bad.size:
                r = int(bad[0, 0])
                raise ValidationError(
                    f"probability row for {self.ids[r]!r} sums to {sums[r]!r}"
                )
        _frozen_array(self.rows)
        self._row_of.update({rid: i for i, rid in enumerate(self.ids)})

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._row_of

    def row(self, record_id: str) -> np.ndarray:
        try:
            return self.rows[self._row_of[record_id]]
        except KeyError:
            raise ValidationError(
                f"no base probabilities for record {record_id!r}"
            ) from None


@dataclass(frozen=True)
class SplitFiles:
    """Per-split artifact paths (resolved) plus the declared record count."""

    embeddings: Path
    labels: Path
    count: int
    base_probs: Path | None = None


@dataclass(frozen=True)
class DatasetManifest:
    """Validated description of a dataset's on-disk artifacts."""

    dim: int
    vocab: LabelVocab
    splits: dict[str, SplitFiles]

    def split(self, name: str) -> SplitFiles:
        if name not in self.splits:
            raise ValidationError(
                f"split {name!r} not in manifest (have: {sorted(self.splits)})"
            )
        return self.splits[name]


# ---------------------------------------------------------------------------
# Binary matrix files
# ---------------------------------------------------------------------------


def _read_matrix(path: Path, magic: bytes) -> tuple[tuple[str, ...], np.ndarray, int]:
    """Parse a binary matrix file; returns (ids, float64 matrix, dim)."""
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if len(data) < 4 or data[:4] != magic:
        found = data[:4] if len(data) >= 4 else data
        raise FormatError(
            f"{path}: bad magic {found!r} at offset 0, expected {magic!r}"
        )
    if len(data) < 12:
        raise FormatError(
            f"{path}: truncated header, expected 12 bytes, found {len(data)}"
        )
    rows, dim = struct.unpack_from("<II", data, 4)
    if dim == 0:
        raise FormatError(f"{path}: dim must be positive")
    ids: list[str] = []
    vectors = np.empty((rows, dim), dtype=np.float64)
    vec_bytes = 4 * dim
    off = 12
    total = len(data)
    for r in range(rows):
        if off + 2 > total:
            raise FormatError(
                f"{path}: truncated at row {r}, expected at least "
                f"{off + 2} bytes, found {total}"
            )
        (id_len,) = struct.unpack_from("<H", data, off)
        off += 2
        if off + id_len + vec_bytes > total:
            raise FormatError(
                f"{path}: truncated payload at row {r} (offset {off}), expected "
                f"{off + id_len + vec_bytes} bytes, found {total}"
            )
        try:
            rid = data[off : off + id_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(
                f"{path}: invalid UTF-8 record id at row {r} (offset {off})"
            ) from exc
        off += id_len
        vectors[r] = np.frombuffer(data, dtype="<f4", count=dim, offset=off)
        off += vec_bytes
        ids.append(rid)
    if off != total:
        raise FormatError(
            f"{path}: {total - off} trailing bytes after row {rows} (offset {off})"
        )
    if rows and not np.isfinite(vectors).all():
        row = int(np.argwhere(~np.isfinite(vectors).all(axis=1))[0, 0])
        raise FormatError(f"{path}: non-finite value at row {row} ({ids[row]!r})")
    if len(set(ids)) != len(ids):
        seen: set[str] = set()
        for i, rid in enumerate(ids):
            if rid in seen:
                raise FormatError(f"{path}: duplicate record_id {rid!r} at row {i}")
            seen.add(rid)
    return tuple(ids), vectors, dim


def _write_matrix(path: Path, magic: bytes, ids, vectors: np.ndarray) -> None:
    rows = len(ids)
    dim = vectors.shape[1] if vectors.ndim == 2 else 0
    parts = [magic, struct.pack("<II", rows, dim)]
    narrowed = np.ascontiguousarray(vectors, dtype="<f4")
    for r in range(rows):
        rid = ids[r].encode("utf-8")
        if len(rid) > 0xFFFF:
            raise ValidationError(f"record id too long to encode: {ids[r][:32]!r}...")
        parts.append(struct.pack("<H", len(rid)))
        parts.append(rid)
        parts.append(narrowed[r].tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))


def load_embeddings(path: str | Path) -> EmbeddingSet:
    """Read an EMB1 file, widening stored f32 values to float64."""
    path = Path(path)
    ids, vectors, dim = _read_matrix(path, EMBEDDING_MAGIC)
    return EmbeddingSet(dim=dim, ids=ids, vectors=vectors)


def write_embeddings(embeddings: EmbeddingSet, path: str | Path) -> None:
    """Write an EMB1 file; inverse of `load_embeddings` byte-for-byte."""
    _write_matrix(Path(path), EMBEDDING_MAGIC, embeddings.ids, embeddings.vectors)


def read_labels(path: str | Path) -> dict[str, str]:
    """Read a labels TSV into an ordered record_id -> label_name mapping."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    labels: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line:
            continue
        if "\t" not in line:
            raise FormatError(f"{path}:{lineno}: expected record_id<TAB>label_name")
        rid, _, name = line.partition("\t")
        if rid in labels:
            raise FormatError(f"{path}:{lineno}: duplicate record_id {rid!r}")
        labels[rid] = name
    return labels


def write_labels(path: str | Path, ids, label_names) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{rid}\t{name}\n" for rid, name in zip(ids, label_names)]
    path.write_text("".join(lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and structurally validate a manifest JSON document."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    for key in ("dim", "labels", "splits"):
        if key not in doc:
            raise FormatError(f"{path}: manifest missing field {key!r}")
    dim = doc["dim"]
    if not isinstance(dim, int) or dim <= 0:
        raise FormatError(f"{path}: dim must be a positive integer, got {dim!r}")
    vocab = LabelVocab.from_names(doc["labels"], doc.get("negative_label"))
    base = path.parent
    splits: dict[str, SplitFiles] = {}
    for name, entry in doc["splits"].items():
        for key in ("embeddings", "labels", "count"):
            if key not in entry:
                raise FormatError(f"{path}: split {name!r} missing field {key!r}")
        probs = entry.get("base_probs")
        splits[name] = SplitFiles(
            embeddings=base / entry["embeddings"],
            labels=base / entry["labels"],
            count=int(entry["count"]),
            base_probs=base / probs if probs else None,
        )
    return DatasetManifest(dim=dim, vocab=vocab, splits=splits)


def write_manifest(path: str | Path, manifest_doc: dict) -> None:
    """Write a manifest document as stable, human-diffable JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest_doc, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Split loading
# ---------------------------------------------------------------------------


def load_labeled_set(manifest: DatasetManifest, split: str) -> LabeledSet:
    """Join a split's embeddings with its labels by record id."""
    files = manifest.split(split)
    embeddings = load_embeddings(files.embeddings)
    if embeddings.dim != manifest.dim:
        raise ValidationError(
            f"{files.embeddings}: dim {embeddings.dim} does not match "
            f"manifest dim {manifest.dim}"
        )
    if len(embeddings) != files.count:
        raise ValidationError(
            f"{files.embeddings}: {len(embeddings)} records, manifest declares "
            f"{files.count} for split {split!r}"
        )
    name_by_id = read_labels(files.labels)
    emb_ids = set(embeddings.ids)
    label_ids = set(name_by_id)
    if emb_ids != label_ids:
        missing = sorted(emb_ids - label_ids)[:5]
        orphans = sorted(label_ids - emb_ids)[:5]
        detail = []
        if missing:
            detail.append(f"embeddings without labels: {missing}")
        if orphans:
            detail.append(f"labels without embeddings: {orphans}")
        raise ValidationError(
            f"split {split!r}: record ids do not join ({'; '.join(detail)})"
        )
    id_of_name = {name: i for i, name in enumerate(manifest.vocab.names)}
    labels = np.empty(len(embeddings), dtype=np.int64)
    for i, rid in enumerate(embeddings.ids):
        name = name_by_id[rid]
        try:
            labels[i] = id_of_name[name]
        except KeyError:
            raise ValidationError(
                f"{files.labels}: unknown label name: {name!r}"
            ) from None
    return LabeledSet(embeddings=embeddings, labels=labels, vocab=manifest.vocab)


def load_base_probs(manifest: DatasetManifest, split: str) -> BaseProbSet:
    """Read a split's PRB1 file, renormalizing rows within tolerance."""
    files = manifest.split(split)
    if files.base_probs is None:
        raise ValidationError(f"split {split!r} declares no base-probability file")
    ids, rows, dim = _read_matrix(files.base_probs, PROB_MAGIC)
    if dim != len(manifest.vocab):
        raise ValidationError(
            f"{files.base_probs}: width {dim} does not match vocabulary size "
            f"{len(manifest.vocab)}"
        )
    if len(ids) != files.count:
        raise ValidationError(
            f"{files.base_probs}: {len(ids)} rows, manifest declares "
            f"{files.count} for split {split!r}"
        )
    expected_ids = set(read_labels(files.labels))
    if set(ids) != expected_ids:
        raise ValidationError(
            f"{files.base_probs}: record ids do not align with split {split!r}"
        )
    if rows.size and rows.min() < 0:
        r, c = np.argwhere(rows < 0)[0]
        raise ValidationError(
            f"{files.base_probs}: negative entry {rows[r, c]!r} at row {r} ({ids[r]!r})"
        )
    if rows.size:
        sums = rows.sum(axis=1)
        bad = np.argwhere(np.abs(sums - 1.0) > PROB_SUM_TOLERANCE)
        if bad.size:
            r = int(bad[0, 0])
            raise ValidationError(
                f"{files.base_probs}: row {r} ({ids[r]!r}) sums to {sums[r]:.6g}, "
                f"outside 1 +/- {PROB_SUM_TOLERANCE}"
            )
        off = sums != 1.0
        if off.any():
            rows = rows.copy()
            rows[off] /= sums[off, None]
    return BaseProbSet(vocab=manifest.vocab, ids=ids, rows=rows)


def write_base_probs(ids, rows: np.ndarray, path: str | Path) -> None:
    """Write a PRB1 file (f32 storage, same record layout as embeddings)."""
    _write_matrix(Path(path), PROB_MAGIC, ids, rows)
