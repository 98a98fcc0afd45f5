import pytest
from hypothesis import given, strategies as st

from conftest import nested_mentions, tags_of, well_formed_tags
from nestseq.tagging import (
    CrossingEntitiesError, MalformedTagsError, Mention, OverlapError, SpanBoundsError, Tag, TAGS,
    assign_levels, check_well_formed, is_legal_transition, is_well_formed, levelize, mentions_from_tags,
    parent_tagging, tags_from_mentions,
)


class TestLegality:
    @pytest.mark.parametrize("prev,nxt,expected", [
        (Tag.B, Tag.I, True),
        (Tag.O, Tag.I, False),
        (Tag.START, Tag.I, False),
        (Tag.START, Tag.B, True),
        (Tag.E, Tag.END, True),
        (Tag.I, Tag.END, False),
        (Tag.S, Tag.S, True),
        (Tag.B, Tag.O, False),
    ])
    def test_pairs(self, prev, nxt, expected):
        assert is_legal_transition(prev, nxt) is expected

    def test_full_table(self):
        begin_side = {Tag.START, Tag.O, Tag.E, Tag.S}
        for prev in [*TAGS, Tag.START]:
            for nxt in [*TAGS, Tag.END]:
                want = nxt in {Tag.B, Tag.S, Tag.O, Tag.END} if prev in begin_side else nxt in {Tag.I, Tag.E}
                assert is_legal_transition(prev, nxt) == want

    def test_boundary_misuse(self):
        with pytest.raises(ValueError):
            is_legal_transition(Tag.END, Tag.O)
        with pytest.raises(ValueError):
            is_legal_transition(Tag.O, Tag.START)


class TestWellFormed:
    def test_first_offending_position(self):
        with pytest.raises(MalformedTagsError) as info:
            check_well_formed(tags_of("O O I E"))
        assert info.value.position == 2

    def test_dangling_open_mention(self):
        with pytest.raises(MalformedTagsError) as info:
            check_well_formed(tags_of("O B I"))
        assert info.value.position == 3

    def test_unknown_tag(self):
        assert not is_well_formed((int(Tag.START),))


class TestConversions:
    def test_mentions_from_tags(self):
        assert mentions_from_tags(tags_of("O B I E O"), 0, "k") == [Mention(1, 4, "k")]
        assert mentions_from_tags(tags_of("S"), 7, "k") == [Mention(7, 8, "k")]
        assert mentions_from_tags(tags_of("B E O S"), 2, "k") == [Mention(2, 4, "k"), Mention(5, 6, "k")]

    def test_mentions_from_malformed(self):
        with pytest.raises(MalformedTagsError):
            mentions_from_tags(tags_of("I E"), 0, "k")

    def test_tags_from_mentions(self):
        assert tags_from_mentions([], (0, 3)) == tags_of("O O O")
        assert tags_from_mentions([Mention(1, 4, "k")], (0, 5)) == tags_of("O B I E O")
        assert tags_from_mentions([Mention(2, 4, "k"), Mention(5, 6, "k")], (2, 6)) == tags_of("B E O S")

    def test_overlap_and_bounds(self):
        with pytest.raises(OverlapError):
            tags_from_mentions([Mention(0, 2, "k"), Mention(1, 3, "k")], (0, 4))
        with pytest.raises(SpanBoundsError):
            tags_from_mentions([Mention(0, 5, "k")], (1, 4))

    def test_parent_tagging(self):
        assert parent_tagging(1) == tags_of("S")
        assert parent_tagging(4) == tags_of("B I I E")

    @given(well_formed_tags())
    def test_round_trip(self, tags):
        span = (3, 3 + len(tags))
        assert tags_from_mentions(mentions_from_tags(tags, 3, "k"), span) == tags


class TestLevelize:
    def test_worked_structure(self):
        gold = levelize([Mention(0, 4, "P"), Mention(2, 4, "P"), Mention(2, 3, "P")], 6, ["P"])
        levels = gold.levels["P"]
        assert [(r.span, r.tags) for r in levels[0]] == [((0, 6), tags_of("B I I E O O"))]
        assert [(r.span, r.tags) for r in levels[1]] == [((0, 4), tags_of("O O B E"))]
        assert [(r.span, r.tags) for r in levels[2]] == [((2, 4), tags_of("S O"))]
        assert len(levels) == 3

    def test_no_mentions(self):
        gold = levelize([], 3, ["P"])
        assert [(r.span, r.tags) for _, r in gold.records("P")] == [((0, 3), tags_of("O O O"))]

    def test_crossing(self):
        with pytest.raises(CrossingEntitiesError) as info:
            levelize([Mention(0, 2, "P"), Mention(1, 3, "P")], 3, ["P"])
        assert {info.value.first, info.value.second} == {Mention(0, 2, "P"), Mention(1, 3, "P")}

    def test_cross_type_overlap_is_fine(self):
        gold = levelize([Mention(0, 2, "P"), Mention(1, 3, "Q")], 3, ["P", "Q"])
        assert gold.depth("P") == 2 and gold.depth("Q") == 2

    def test_leaf_spans_optional(self):
        ms = [Mention(0, 3, "P")]
        assert levelize(ms, 4, ["P"]).depth("P") == 2
        assert levelize(ms, 4, ["P"], include_leaf_spans=False).depth("P") == 1
        leaf = list(levelize(ms, 4, ["P"]).records("P"))[1][1]
        assert leaf.span == (0, 3) and leaf.tags == tags_of("O O O") and leaf.parent == ms[0]

    def test_out_of_bounds(self):
        with pytest.raises(SpanBoundsError):
            levelize([Mention(2, 5, "P")], 4, ["P"])

    def test_same_span_two_types(self):
        gold = levelize([Mention(1, 3, "P"), Mention(1, 3, "Q")], 4, ["P", "Q"])
        assert set(gold.mentions()) == {Mention(1, 3, "P"), Mention(1, 3, "Q")}

    @given(nested_mentions(), st.booleans())
    def test_invariants(self, case, leaves):
        n, mentions = case
        types = ["P", "Q"]
        gold = levelize(mentions, n, types, include_leaf_spans=leaves)
        # Every mention comes back exactly once.
        assert gold.mentions() == sorted(mentions, key=lambda m: (str(m.entity_type), m.start, m.end))
        levels = assign_levels(mentions)
        for k in types:
            recs = list(gold.records(k))
            assert recs[0][0] == 1 and recs[0][1].span == (0, n)
            assert gold.depth(k) <= max([levels[m] for m in mentions if m.entity_type == k], default=0) + 1 <= n + 1
            for level, rec in recs:
                assert is_well_formed(rec.tags)
                assert len(rec.tags) == rec.span[1] - rec.span[0]
                if level > 1:
                    parent = rec.parent
                    assert parent.width > 1 and (parent.start, parent.end) == rec.span
                    assert levels[parent] == level - 1
                    for m in mentions_from_tags(rec.tags, rec.span[0], k):
                        assert levels[m] == level and parent.contains(m) and m != parent
