"""Encoder interface plus two implementations.

An encoder turns a marked token sequence into per-token hidden states and
scores relation representations with a linear head.  `HashedTokenEncoder`
is a fully deterministic, dependency-free stand-in used by the test
fixtures; `TorchEncoder` adapts a fine-tuned transformers checkpoint (kept
behind a lazy import so the bridge itself stays light).
"""

from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np


class MarkerLostError(RuntimeError):
    """A marker token has no position in the encoder's tokenization."""


class RelationEncoder(Protocol):
    hidden_size: int
    label_names: tuple[str, ...]

    def token_states(self, tokens: Sequence[str]) -> np.ndarray:
        """Per-token hidden states, aligned with `tokens` (shape T x H)."""
        ...

    def head_logits(self, representation: np.ndarray) -> np.ndarray:
        """Classification-head logits for a 2H relation representation."""
        ...


def _mix64_scalar(x: int) -> int:
    mask = (1 << 64) - 1
    x &= mask
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & mask
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & mask
    return x ^ (x >> 31)


class HashedTokenEncoder:
    """Deterministic toy encoder: hashed token embeddings with a local
    averaging pass as the contextualizer and a seeded linear head."""

    def __init__(self, label_names: Sequence[str], hidden_size: int = 16, seed: int = 0):
        self.hidden_size = hidden_size
        self.label_names = tuple(label_names)
        self._seed = seed
        rng = np.random.default_rng(seed)
        self._head = rng.standard_normal((len(self.label_names), 2 * hidden_size))
        self._head_bias = rng.standard_normal(len(self.label_names))

    def _embed(self, token: str) -> np.ndarray:
        state = _mix64_scalar(self._seed ^ hash_bytes(token.encode("utf-8")))
        values = np.empty(self.hidden_size)
        for i in range(self.hidden_size):
            state = _mix64_scalar(state + 0x9E3779B97F4A7C15)
            values[i] = (state >> 11) * 2.0**-53 - 0.5
        return values

    def token_states(self, tokens: Sequence[str]) -> np.ndarray:
        states = np.stack([self._embed(t) for t in tokens])
        left = np.roll(states, 1, axis=0)
        right = np.roll(states, -1, axis=0)
        left[0] = 0.0
        right[-1] = 0.0
        return states + 0.5 * left + 0.5 * right

    def head_logits(self, representation: np.ndarray) -> np.ndarray:
        return self._head @ representation + self._head_bias


def hash_bytes(raw: bytes) -> int:
    """FNV-1a, 64-bit; stable across processes (unlike builtin hash)."""
    state = 0xCBF29CE484222325
    for b in raw:
        state = ((state ^ b) * 0x100000001B3) & ((1 << 64) - 1)
    return state


class TorchEncoder:
    """Adapter for a transformers encoder plus a linear relation head.

    The tokenizer must know the marker tokens (added as special tokens on a
    fine-tuned checkpoint).  Subword tokenization runs per whitespace token
    and hidden states are read at each token's first subword, so marker
    positions stay aligned; a marker missing from the tokenizer's vocabulary
    raises `MarkerLostError` for that record.
    """

    def __init__(self, model, tokenizer, head_weight, head_bias, label_names):
        import torch  # local import keeps torch optional

        self._torch = torch
        self._model = model.eval()
        self._tokenizer = tokenizer
        self._weight = np.asarray(head_weight, dtype=np.float64)
        self._bias = np.asarray(head_bias, dtype=np.float64)
        self.label_names = tuple(label_names)
        self.hidden_size = int(model.config.hidden_size)

    def token_states(self, tokens: Sequence[str]) -> np.ndarray:
        torch = self._torch
        unk = self._tokenizer.unk_token_id
        ids: list[int] = []
        firsts: list[int] = []
        for token in tokens:
            pieces = self._tokenizer.tokenize(token) or [self._tokenizer.unk_token]
            piece_ids = self._tokenizer.convert_tokens_to_ids(pieces)
            if token.startswith("[") and token.endswith("]"):
                if len(piece_ids) != 1 or piece_ids[0] == unk:
                    raise MarkerLostError(f"marker {token} absent from tokenizer")
            firsts.append(len(ids))
            ids.extend(piece_ids)
        with torch.no_grad():
            out = self._model(torch.tensor([ids]))
        hidden = out.last_hidden_state[0].numpy().astype(np.float64)
        return hidden[firsts]

    def head_logits(self, representation: np.ndarray) -> np.ndarray:
        return self._weight @ representation + self._bias
