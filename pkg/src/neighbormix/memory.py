"""Key-value memories: frozen (vector, label) stores built from labeled sets.

A memory holds one row per labeled example, in input order, and never mutates
after construction.  Duplicate vectors are kept on purpose: repeated patterns
legitimately increase a label's retrieval weight.

Memory file layout (KVM1, little-endian)::

    magic    "KVM1"
    version  u32            (currently 1)
    tag      u16 len + UTF-8 bytes
    vocab    u32 label count; per label u16 len + UTF-8 bytes;
             i32 negative label id (-1 when unset)
    rows     u32
    dim      u32
    keys     rows x dim x f32
    values   rows x u32
    ids      per row u16 len + UTF-8 bytes
    crc      u32 CRC32 over every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import LabelVocab, LabeledSet
from .errors import FormatError, ValidationError

MEMORY_MAGIC = b"KVM1"
MEMORY_VERSION = 1


@dataclass(frozen=True)
class MemoryStore:
    """Immutable set of key vectors with their label ids and record ids."""

    keys: np.ndarray  # (rows, dim) float64, read-only
    values: np.ndarray  # (rows,) int64, read-only
    ids: tuple[str, ...]
    source_tag: str
    vocab: LabelVocab
    key_sq_norms: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self) -> None:
        rows = self.keys.shape[0] if self.keys.ndim == 2 else -1
        if self.keys.ndim != 2:
            raise ValidationError("keys must be a rows x dim matrix")
        if len(self.values) != rows or len(self.ids) != rows:
            raise ValidationError(
                f"row mismatch: {rows} keys, {len(self.values)} values, "
                f"{len(self.ids)} ids"
            )
        if rows == 0:
            raise ValidationError("empty memory")
        if self.values.min() < 0 or self.values.max() >= len(self.vocab):
            raise ValidationError("memory value outside label vocabulary")
        if not self.source_tag:
            raise ValidationError("source_tag must be non-empty")
        self.keys.setflags(write=False)
        self.values.setflags(write=False)
        # Squared norms back the dot-product distance expansion in search.
        norms = np.einsum("ij,ij->i", self.keys, self.keys)
        norms.setflags(write=False)
        object.__setattr__(self, "key_sq_norms", norms)

    def __len__(self) -> int:
        return self.keys.shape[0]

    @property
    def dim(self) -> int:
        return self.keys.shape[1]


def build_memory(data: LabeledSet, tag: str) -> MemoryStore:
    """Build a memory with one row per labeled example, in input order."""
    if len(data) == 0:
        raise ValidationError("empty memory: labeled set has no records")
    return MemoryStore(
        keys=data.embeddings.vectors,
        values=data.labels,
        ids=data.embeddings.ids,
        source_tag=tag,
        vocab=data.vocab,
    )


def save_memory(memory: MemoryStore, path: str | Path) -> None:
    """Serialize a memory; keys are narrowed to f32 storage precision."""
    parts = [MEMORY_MAGIC, struct.pack("<I", MEMORY_VERSION)]
    tag = memory.source_tag.encode("utf-8")
    parts.append(struct.pack("<H", len(tag)))
    parts.append(tag)
    parts.append(struct.pack("<I", len(memory.vocab)))
    for name in memory.vocab.names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    negative = memory.vocab.negative_label
    parts.append(struct.pack("<i", -1 if negative is None else negative))
    rows, dim = memory.keys.shape
    parts.append(struct.pack("<II", rows, dim))
    parts.append(np.ascontiguousarray(memory.keys, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(memory.values, dtype="<u4").tobytes())
    for rid in memory.ids:
        raw = rid.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    payload = b"".join(parts)
    payload += struct.pack("<I", zlib.crc32(payload))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)


def load_memory(path: str | Path) -> MemoryStore:
    """Read a KVM1 file, verifying magic, version, and checksum."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    if len(data) < 8 or data[:4] != MEMORY_MAGIC:
        raise FormatError(f"{path}: bad magic, expected {MEMORY_MAGIC!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != MEMORY_VERSION:
        raise FormatError(
            f"{path}: version mismatch, file is v{version}, reader is v{MEMORY_VERSION}"
        )
    if len(data) < 12:
        raise FormatError(f"{path}: truncated before checksum")
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    actual_crc = zlib.crc32(data[:-4])
    if stored_crc != actual_crc:
        raise FormatError(
            f"{path}: checksum failure (stored {stored_crc:#010x}, "
            f"computed {actual_crc:#010x})"
        )
    off = 8

    def take(fmt: str) -> tuple:
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(data) - 4:
            raise FormatError(f"{path}: truncated at offset {off}")
        out = struct.unpack_from(fmt, data, off)
        off += size
        return out

    def take_str() -> str:
        nonlocal off
        (length,) = take("<H")
        raw = data[off : off + length]
        if len(raw) != length:
            raise FormatError(f"{path}: truncated string at offset {off}")
        off += length
        return raw.decode("utf-8")

    tag = take_str()
    (label_count,) = take("<I")
    names = tuple(take_str() for _ in range(label_count))
    (negative,) = take("<i")
    vocab = LabelVocab(names=names, negative_label=None if negative < 0 else negative)
    rows, dim = take("<II")
    key_bytes = 4 * rows * dim
    if off + key_bytes + 4 * rows > len(data) - 4:
        raise FormatError(f"{path}: truncated key/value payload at offset {off}")
    keys = (
        np.frombuffer(data, dtype="<f4", count=rows * dim, offset=off)
        .astype(np.float64)
        .reshape(rows, dim)
    )
    off += key_bytes
    values = np.frombuffer(data, dtype="<u4", count=rows, offset=off).astype(np.int64)
    off += 4 * rows
    ids = tuple(take_str() for _ in range(rows))
    if off != len(data) - 4:
        raise FormatError(f"{path}: {len(data) - 4 - off} unexpected bytes before checksum")
    return MemoryStore(keys=keys, values=values, ids=ids, source_tag=tag, vocab=vocab)
