"""Forward-pass export: marked examples -> engine-format artifacts.

For each example the encoder produces per-token hidden states; the states
at the two opening entity markers are concatenated into the relation
representation, and the head's softmax over that representation becomes the
example's base probability row.  Records that fail (lost markers, missing
gold label) are skipped and listed in the manifest so downstream counts
stay consistent: exported embedding rows == probability rows == N - failures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import MarkerLostError, RelationEncoder
from .markers import MarkedExample, MarkerError, insert_markers


@dataclass(frozen=True)
class ExportResult:
    manifest_path: Path
    exported: int
    failures: tuple[dict, ...]


class ExportSkip(RuntimeError):
    """A record cannot be exported; the run continues without it."""


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def representation(encoder: RelationEncoder, example: MarkedExample) -> np.ndarray:
    """Concatenated hidden states at the two opening-marker positions."""
    states = encoder.token_states(example.tokens)
    if states.shape[0] != len(example.tokens):
        raise MarkerLostError(
            f"{example.record_id}: encoder returned {states.shape[0]} states "
            f"for {len(example.tokens)} tokens"
        )
    return np.concatenate([states[example.head_marker], states[example.tail_marker]])


def encode_and_export(
    examples: list[MarkedExample],
    encoder: RelationEncoder,
    out_dir: str | Path,
    split: str = "test",
    negative_label: str | None = None,
    prior_failures: list[dict] | None = None,
) -> ExportResult:
    """Run the encoder over all examples and write EMB1/PRB1/TSV/manifest.

    Export is order-preserving; a per-record failure does not stop the run.
    `prior_failures` (e.g. from input parsing) are carried into the manifest.
    """
    from . import formats

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    label_names = tuple(encoder.label_names)
    ids: list[str] = []
    reps: list[np.ndarray] = []
    probs: list[np.ndarray] = []
    gold: list[str] = []
    failures: list[dict] = list(prior_failures or [])
    for example in examples:
        try:
            if example.label is None:
                raise ExportSkip(f"{example.record_id}: no gold label")
            if example.label not in label_names:
                raise ExportSkip(
                    f"{example.record_id}: label {example.label!r} not in head vocabulary"
                )
            rep = representation(encoder, example)
            row = _softmax(np.asarray(encoder.head_logits(rep), dtype=np.float64))
        except (ExportSkip, MarkerError, MarkerLostError) as exc:
            failures.append({"record_id": example.record_id, "reason": str(exc)})
            continue
        ids.append(example.record_id)
        reps.append(rep)
        probs.append(row)
        gold.append(example.label)
    rep_matrix = (
        np.stack(reps) if reps else np.empty((0, 2 * encoder.hidden_size))
    )
    prob_matrix = np.stack(probs) if probs else np.empty((0, len(label_names)))
    formats.write_matrix(out / f"{split}.emb", b"EMB1", ids, rep_matrix)
    formats.write_matrix(out / f"{split}.prb", b"PRB1", ids, prob_matrix)
    formats.write_labels(out / f"{split}.tsv", ids, gold)
    manifest_path = out / "manifest.json"
    formats.write_manifest(
        manifest_path,
        dim=2 * encoder.hidden_size,
        label_names=label_names,
        split=split,
        count=len(ids),
        failures=failures,
        negative_label=negative_label,
    )
    return ExportResult(
        manifest_path=manifest_path, exported=len(ids), failures=tuple(failures)
    )


def load_examples_jsonl(path: str | Path) -> tuple[list[MarkedExample], list[dict]]:
    """Parse input examples; malformed records become failure entries.

    Each line: {"id", "tokens", "head": [start, end], "tail": [start, end],
    "head_type"?, "tail_type"?, "label"?}.
    """
    examples: list[MarkedExample] = []
    failures: list[dict] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                examples.append(
                    insert_markers(
                        record_id=str(doc["id"]),
                        tokens=list(doc["tokens"]),
                        head_span=tuple(doc["head"]),
                        tail_span=tuple(doc["tail"]),
                        head_type=doc.get("head_type"),
                        tail_type=doc.get("tail_type"),
                        label=doc.get("label"),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                failures.append({"record_id": f"line {lineno}", "reason": str(exc)})
    return examples, failures
