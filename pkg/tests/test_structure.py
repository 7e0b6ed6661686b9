from __future__ import annotations

import pytest

from segsong.structure import (
    Segment,
    Structure,
    StructureError,
    from_dict,
    from_json,
    from_labels,
    single_segment,
    to_json,
)


def abab() -> Structure:
    return Structure(
        (Segment(1, 2, "A"), Segment(3, 4, "B"), Segment(5, 5, "A"), Segment(6, 7, "B"))
    )


class TestInvariants:
    def test_valid_structure(self):
        s = abab()
        assert s.n_bars == 7
        assert s.n_segments == 4

    def test_gap_rejected(self):
        with pytest.raises(StructureError):
            Structure((Segment(1, 2, "A"), Segment(4, 5, "B")))

    def test_overlap_rejected(self):
        with pytest.raises(StructureError):
            Structure((Segment(1, 3, "A"), Segment(3, 5, "B")))

    def test_adjacent_same_label_rejected(self):
        with pytest.raises(StructureError):
            Structure((Segment(1, 2, "A"), Segment(3, 4, "A")))

    def test_labels_must_follow_first_appearance_order(self):
        with pytest.raises(StructureError):
            Structure((Segment(1, 2, "B"), Segment(3, 4, "A")))

    def test_segment_at_bar(self):
        s = abab()
        assert s.segment_at_bar(1) == 0
        assert s.segment_at_bar(5) == 2
        with pytest.raises(StructureError):
            s.segment_at_bar(8)


class TestConstruction:
    def test_from_labels_splits_on_change(self):
        s = from_labels(["x", "x", "y", "y", "x"])
        assert [seg.label for seg in s.segments] == ["A", "B", "A"]
        assert [(seg.start, seg.end) for seg in s.segments] == [(1, 2), (3, 4), (5, 5)]

    def test_single_segment(self):
        s = single_segment(7)
        assert s.segments == (Segment(1, 7, "A"),)

    def test_json_roundtrip(self):
        s = abab()
        assert from_json(to_json(s)) == s

    def test_malformed_document(self):
        with pytest.raises(StructureError):
            from_dict({"wrong": []})
