"""Writers (and a reader for self-checks) for the engine's wire formats.

The engine consumes exported artifacts purely through these file schemas,
so the bridge carries its own codec rather than importing the engine:

* EMB1/PRB1: magic, u32 LE rows, u32 LE dim, then per record a u16 LE id
  length, the UTF-8 id bytes, and dim little-endian f32 values.
* Labels: UTF-8 TSV lines `record_id<TAB>label_name`.
* Manifest: JSON with `dim`, ordered `labels`, optional `negative_label`,
  and per-split file entries with declared counts.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np


def write_matrix(path: Path, magic: bytes, ids, values: np.ndarray) -> None:
    rows = len(ids)
    dim = values.shape[1]
    parts = [magic, struct.pack("<II", rows, dim)]
    narrowed = np.ascontiguousarray(values, dtype="<f4")
    for i in range(rows):
        raw = ids[i].encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(narrowed[i].tobytes())
    path.write_bytes(b"".join(parts))


def read_matrix(path: Path) -> tuple[bytes, list[str], np.ndarray]:
    data = path.read_bytes()
    magic = data[:4]
    rows, dim = struct.unpack_from("<II", data, 4)
    off = 12
    ids = []
    values = np.empty((rows, dim), dtype=np.float32)
    for r in range(rows):
        (id_len,) = struct.unpack_from("<H", data, off)
        off += 2
        ids.append(data[off : off + id_len].decode("utf-8"))
        off += id_len
        values[r] = np.frombuffer(data, dtype="<f4", count=dim, offset=off)
        off += 4 * dim
    return magic, ids, values


def write_labels(path: Path, ids, labels) -> None:
    path.write_text(
        "".join(f"{rid}\t{name}\n" for rid, name in zip(ids, labels)),
        encoding="utf-8",
    )


def write_manifest(
    path: Path,
    dim: int,
    label_names,
    split: str,
    count: int,
    failures: list[dict],
    negative_label: str | None = None,
) -> None:
    doc = {
        "dim": dim,
        "labels": list(label_names),
        "splits": {
            split: {
                "embeddings": f"{split}.emb",
                "labels": f"{split}.tsv",
                "base_probs": f"{split}.prb",
                "count": count,
            }
        },
        "export_failures": failures,
    }
    if negative_label is not None:
        doc["negative_label"] = negative_label
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
