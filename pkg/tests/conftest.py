from __future__ import annotations

import struct
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


def pack_matrix(magic: bytes, records: list[tuple[str, list[float]]], dim: int,
                rows: int | None = None) -> bytes:
    """Build a binary matrix file by hand (independent of the library writer)."""
    out = [magic, struct.pack("<II", len(records) if rows is None else rows, dim)]
    for rid, values in records:
        raw = rid.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack(f"<{len(values)}f", *values))
    return b"".join(out)


@pytest.fixture
def tiny_dataset(tmp_path: Path):
    """Three-record train/dev/test dataset with 2 labels, written by hand."""
    emb = pack_matrix(
        b"EMB1",
        [("r0", [0.0, 0.0]), ("r1", [1.0, 0.0]), ("r2", [3.0, 0.0])],
        dim=2,
    )
    prb = pack_matrix(
        b"PRB1",
        [("r0", [0.9, 0.1]), ("r1", [0.2, 0.8]), ("r2", [0.5, 0.5])],
        dim=2,
    )
    tsv = "r0\talpha\nr1\tbeta\nr2\tbeta\n"
    for split in ("train", "dev", "test"):
        (tmp_path / f"{split}.emb").write_bytes(emb)
        (tmp_path / f"{split}.prb").write_bytes(prb)
        (tmp_path / f"{split}.tsv").write_text(tsv, encoding="utf-8")
    manifest = {
        "dim": 2,
        "labels": ["alpha", "beta"],
        "splits": {
            split: {
                "embeddings": f"{split}.emb",
                "labels": f"{split}.tsv",
                "base_probs": f"{split}.prb",
                "count": 3,
            }
            for split in ("train", "dev", "test")
        },
    }
    import json

    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest), encoding="utf-8")
    return path


def random_embedding_set(rng: np.random.Generator, n: int, dim: int, prefix="q"):
    from neighbormix.data_model import EmbeddingSet

    vectors = rng.uniform(0.0, 1.0, size=(n, dim)).astype(np.float32).astype(np.float64)
    return EmbeddingSet(
        dim=dim, ids=tuple(f"{prefix}{i}" for i in range(n)), vectors=vectors
    )


def random_memory(rng: np.random.Generator, n: int, dim: int, num_labels: int,
                  tag="train", prefix="m"):
    from neighbormix.data_model import LabeledSet, LabelVocab
    from neighbormix.memory import build_memory

    vocab = LabelVocab(names=tuple(f"L{i}" for i in range(num_labels)))
    embeddings = random_embedding_set(rng, n, dim, prefix=prefix)
    labels = rng.integers(0, num_labels, size=n)
    labeled = LabeledSet(embeddings=embeddings, labels=labels, vocab=vocab)
    return build_memory(labeled, tag)
