"""Entity-marker insertion for relation encoding.

Examples arrive as token sequences with head/tail spans; marker tokens are
inserted around each span, typed (e.g. ``[H_PER]``) when entity types are
available, plus leading/trailing sequence tokens.  The relation
representation downstream is read at the positions of the two *opening*
markers.
"""

from __future__ import annotations

from dataclasses import dataclass


class MarkerError(ValueError):
    """A span is malformed or the marked sequence cannot be built."""


@dataclass(frozen=True)
class MarkedExample:
    """One example ready for encoding.

    `tokens` already contains the marker tokens; `head_marker` and
    `tail_marker` are the indices of the two opening markers.
    """

    record_id: str
    tokens: tuple[str, ...]
    head_marker: int
    tail_marker: int
    label: str | None = None

    def __post_init__(self) -> None:
        for idx in (self.head_marker, self.tail_marker):
            if not 0 <= idx < len(self.tokens):
                raise MarkerError(f"{self.record_id}: marker index {idx} out of range")
        if self.head_marker == self.tail_marker:
            raise MarkerError(f"{self.record_id}: head and tail markers collide")


def head_markers(entity_type: str | None) -> tuple[str, str]:
    if entity_type:
        return f"[H_{entity_type.upper()}]", f"[/H_{entity_type.upper()}]"
    return "[H]", "[/H]"


def tail_markers(entity_type: str | None) -> tuple[str, str]:
    if entity_type:
        return f"[T_{entity_type.upper()}]", f"[/T_{entity_type.upper()}]"
    return "[T]", "[/T]"


def insert_markers(
    record_id: str,
    tokens: list[str] | tuple[str, ...],
    head_span: tuple[int, int],
    tail_span: tuple[int, int],
    head_type: str | None = None,
    tail_type: str | None = None,
    label: str | None = None,
    sequence_start: str = "[CLS]",
    sequence_end: str = "[SEP]",
) -> MarkedExample:
    """Wrap the two entity spans in marker tokens.

    Spans are half-open token ranges over `tokens` and must not overlap;
    exactly one pair of head markers and one pair of tail markers is
    inserted.
    """
    n = len(tokens)
    for name, (start, end) in (("head", head_span), ("tail", tail_span)):
        if not (0 <= start < end <= n):
            raise MarkerError(
                f"{record_id}: {name} span ({start}, {end}) invalid for {n} tokens"
            )
    h0, h1 = head_span
    t0, t1 = tail_span
    if not (h1 <= t0 or t1 <= h0):
        raise MarkerError(
            f"{record_id}: head span {head_span} overlaps tail span {tail_span}"
        )
    h_open, h_close = head_markers(head_type)
    t_open, t_close = tail_markers(tail_type)
    # At a shared boundary the earlier span's closing marker must land
    # before the later span's opening marker.
    inserts = sorted(
        [(h0, h_open, "ho"), (h1, h_close, "hc"), (t0, t_open, "to"), (t1, t_close, "tc")],
        key=lambda item: (item[0], 0 if item[2] in ("hc", "tc") else 1),
    )
    out: list[str] = [sequence_start]
    positions: dict[str, int] = {}
    cursor = 0
    for pos, marker, kind in inserts:
        out.extend(tokens[cursor:pos])
        positions[kind] = len(out)
        out.append(marker)
        cursor = pos
    out.extend(tokens[cursor:])
    out.append(sequence_end)
    return MarkedExample(
        record_id=record_id,
        tokens=tuple(out),
        head_marker=positions["ho"],
        tail_marker=positions["to"],
        label=label,
    )
