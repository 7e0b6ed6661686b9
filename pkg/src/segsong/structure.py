"""Song structure: a tiling of bars into labeled segments.

Bars are 1-indexed and segment bounds are inclusive, matching the JSON
document exchanged with the CLI, service, and UI:

    {"segments": [{"start": 1, "end": 8, "label": "A"}, ...]}
"""
from __future__ import annotations

import json
import string
from dataclasses import dataclass
from typing import Iterable, Sequence


class StructureError(ValueError):
    """Structure fails the tiling/labeling invariants."""

    def __init__(self, message: str, segment_index: int | None = None):
        if segment_index is not None:
            message = f"segment {segment_index}: {message}"
        super().__init__(message)
        self.segment_index = segment_index


@dataclass(frozen=True)
class Segment:
    start: int  # first bar, 1-indexed inclusive
    end: int  # last bar, 1-indexed inclusive
    label: str

    def __post_init__(self):
        if self.start < 1 or self.end < self.start:
            raise StructureError(f"bad bounds [{self.start}, {self.end}]")
        if not self.label or not all(c in string.ascii_uppercase for c in self.label):
            raise StructureError(f"label must be uppercase letters, got {self.label!r}")

    @property
    def n_bars(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class Structure:
    segments: tuple[Segment, ...]

    def __post_init__(self):
        if not self.segments:
            raise StructureError("structure needs at least one segment")
        expected_start = 1
        for i, seg in enumerate(self.segments):
            if seg.start != expected_start:
                raise StructureError(
                    f"starts at bar {seg.start}, expected {expected_start} (gap or overlap)", i
                )
            expected_start = seg.end + 1
        for i in range(1, len(self.segments)):
            if self.segments[i].label == self.segments[i - 1].label:
                raise StructureError("adjacent segments share a label", i)
        seen: list[str] = []
        for i, seg in enumerate(self.segments):
            if seg.label not in seen:
                expected = string.ascii_uppercase[len(seen)]
                if seg.label != expected:
                    raise StructureError(
                        f"labels must appear in alphabetical order of first use; "
                        f"got {seg.label!r}, expected {expected!r}",
                        i,
                    )
                seen.append(seg.label)

    @property
    def n_bars(self) -> int:
        return self.segments[-1].end

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    def segment_at_bar(self, bar: int) -> int:
        """Index (0-based) of the segment containing 1-indexed ``bar``."""
        for i, seg in enumerate(self.segments):
            if seg.start <= bar <= seg.end:
                return i
        raise StructureError(f"bar {bar} outside structure of {self.n_bars} bars")


def from_labels(labels: Sequence[str]) -> Structure:
    """Build a structure from per-bar labels, splitting at label changes."""
    if not labels:
        raise StructureError("no bar labels")
    segments = []
    start = 1
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[i - 1]:
            segments.append((start, i, labels[start - 1]))
            start = i + 1
    return Structure(tuple(Segment(s, e, lab) for s, e, lab in _relabel(segments)))


def _relabel(segments: Iterable[tuple[int, int, str]]) -> list[tuple[int, int, str]]:
    mapping: dict[str, str] = {}
    out = []
    for s, e, lab in segments:
        if lab not in mapping:
            mapping[lab] = string.ascii_uppercase[len(mapping)]
        out.append((s, e, mapping[lab]))
    return out


def single_segment(n_bars: int) -> Structure:
    return Structure((Segment(1, n_bars, "A"),))


def to_dict(structure: Structure) -> dict:
    return {
        "segments": [
            {"start": seg.start, "end": seg.end, "label": seg.label} for seg in structure.segments
        ]
    }


def from_dict(doc: dict) -> Structure:
    try:
        raw = doc["segments"]
        segments = tuple(Segment(int(s["start"]), int(s["end"]), str(s["label"])) for s in raw)
    except (KeyError, TypeError) as exc:
        raise StructureError(f"malformed structure document: {exc}") from exc
    return Structure(segments)


def to_json(structure: Structure) -> str:
    return json.dumps(to_dict(structure), indent=2)


def from_json(text: str) -> Structure:
    return from_dict(json.loads(text))
