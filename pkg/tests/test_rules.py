"""Tests for rule parsing, range expansion and spine pruning."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vmtsim.core import NOT_FOUND
from vmtsim.utils.rules import (
    Exact,
    FieldSpec,
    Prefix,
    PrefixRule,
    Range,
    Rule,
    RuleError,
    expand_rules,
    format_ruleset,
    lpm_lookup,
    match_rule,
    parse_field_spec,
    parse_ruleset,
    parse_value,
    range_to_prefixes,
    spine_prune,
    split_key,
)


class TestRangeToPrefixes:
    """Tests for range_to_prefixes."""

    def test_small_range(self):
        """Test [1, 6] on 8 bits."""
        assert range_to_prefixes(1, 6, 8) == [(1, 8), (2, 7), (4, 7), (6, 8)]

    def test_full_range_is_wildcard(self):
        """Test the whole field collapses to one zero-length prefix."""
        assert range_to_prefixes(0, 255, 8) == [(0, 0)]

    def test_single_value(self):
        """Test a one-value range is an exact prefix."""
        assert range_to_prefixes(9, 9, 8) == [(9, 8)]

    def test_empty_range_rejected(self):
        """Test lo > hi raises."""
        with pytest.raises(RuleError):
            range_to_prefixes(5, 4, 8)

    def test_out_of_field_rejected(self):
        """Test a bound past the field width raises."""
        with pytest.raises(RuleError):
            range_to_prefixes(0, 256, 8)

    def test_exhaustive_8_bit(self):
        """Test every 8-bit range is covered exactly by at most 2w-2 disjoint prefixes."""
        width = 8
        for lo in range(256):
            for hi in range(lo, 256):
                prefixes = range_to_prefixes(lo, hi, width)
                assert len(prefixes) <= max(1, 2 * width - 2)
                cursor = lo
                for value, length in prefixes:
                    size = 1 << (width - length)
                    assert value == cursor
                    assert value % size == 0
                    cursor += size
                assert cursor == hi + 1

    @given(st.integers(0, (1 << 16) - 1), st.integers(0, (1 << 16) - 1))
    def test_16_bit_cover(self, a, b):
        """Test 16-bit ranges are tiled without gaps."""
        lo, hi = min(a, b), max(a, b)
        prefixes = range_to_prefixes(lo, hi, 16)
        assert len(prefixes) <= 30
        assert sum(1 << (16 - length) for _, length in prefixes) == hi - lo + 1


class TestExpandRules:
    """Tests for expand_rules."""

    def test_two_field_exact_then_range(self):
        """Test an exact leading field concatenates with the trailing prefixes."""
        fields = [FieldSpec("a", 8), FieldSpec("b", 8)]
        out = expand_rules([Rule((Exact(1), Range(0, 255)), 4)], fields)
        assert out == [PrefixRule(1 << 8, 8, 16, 4, 0)]

    def test_leading_prefix_is_enumerated(self):
        """Test a short non-exact leading field expands to full values."""
        fields = [FieldSpec("a", 8), FieldSpec("b", 8)]
        out = expand_rules([Rule((Prefix(0, 7), Exact(3)), 1)], fields)
        assert sorted(r.value for r in out) == [3, (1 << 8) | 3]
        assert all(r.length == 16 for r in out)

    def test_infeasible_leading_field(self):
        """Test a wide wildcard leading field is rejected."""
        fields = [FieldSpec("a", 16), FieldSpec("b", 8)]
        with pytest.raises(RuleError):
            expand_rules([Rule((Prefix(0, 0), Exact(3)), 1)], fields)

    def test_field_count_mismatch(self):
        """Test a rule with the wrong number of fields is rejected."""
        with pytest.raises(RuleError):
            expand_rules([Rule((Exact(1),), 1)], [FieldSpec("a", 8), FieldSpec("b", 8)])

    def test_duplicate_keeps_lowest_priority(self):
        """Test identical prefixes keep the lowest priority value."""
        fields = [FieldSpec("a", 8)]
        out = expand_rules([Rule((Exact(1),), 5, priority=3), Rule((Exact(1),), 6, priority=1)], fields)
        assert [r.action for r in out] == [6]

    def test_match_rule_agrees_with_prefixes(self):
        """Test every key matched by the rule is matched by one of its prefixes."""
        fields = [FieldSpec("a", 4), FieldSpec("b", 4)]
        rule = Rule((Range(2, 5), Range(3, 12)), 1)
        prefixes = expand_rules([rule], fields)
        for key in range(256):
            expected = match_rule(rule, split_key(key, fields), fields)
            assert any(p.matches(key) for p in prefixes) == expected


def prefix_rules(width: int):
    def build(items):
        rules = []
        for prio, (bits, length, action) in enumerate(items):
            shift = width - length
            rules.append(PrefixRule((bits >> shift) << shift, length, width, action, prio))
        return rules

    return st.lists(
        st.tuples(st.integers(0, (1 << width) - 1), st.integers(0, width), st.integers(0, 50)),
        max_size=30,
    ).map(build)


class TestSpinePrune:
    """Tests for spine_prune."""

    def test_empty(self):
        """Test no rules prune to no rules."""
        assert spine_prune([]) == []

    def test_nested_prefixes_become_disjoint(self):
        """Test a /1 under a /0 leaf-pushes the /0 action to the sibling."""
        rules = [PrefixRule(0, 0, 4, 1), PrefixRule(0b1000, 1, 4, 2)]
        out = spine_prune(rules)
        assert {(r.value, r.length, r.action) for r in out} == {(0, 1, 1), (0b1000, 1, 2)}

    @settings(max_examples=100)
    @given(prefix_rules(8))
    def test_preserves_lpm_and_is_prefix_free(self, rules):
        """Test pruning keeps the LPM answer and leaves at most one match per key."""
        pruned = spine_prune(rules)
        for key in range(256):
            assert lpm_lookup(pruned, key) == lpm_lookup(rules, key)
            assert sum(1 for r in pruned if r.matches(key)) <= 1


class TestLpmLookup:
    """Tests for lpm_lookup."""

    def test_longest_wins(self):
        """Test the longer prefix wins."""
        rules = [PrefixRule(0, 0, 8, 1), PrefixRule(0x80, 1, 8, 2)]
        assert lpm_lookup(rules, 0xFF) == 2
        assert lpm_lookup(rules, 0x01) == 1

    def test_default(self):
        """Test no match returns the default."""
        assert lpm_lookup([PrefixRule(0x80, 1, 8, 2)], 0x01) == NOT_FOUND
        assert lpm_lookup([], 3, default=9) == 9


class TestParsing:
    """Tests for the ruleset file format."""

    def test_parse_value_forms(self):
        """Test decimal, hex and dotted-quad values."""
        assert parse_value("10", 8) == 10
        assert parse_value("0x1f", 8) == 31
        assert parse_value("10.0.0.1", 32) == 0x0A000001

    def test_dotted_needs_32_bits(self):
        """Test a dotted value on a 16-bit field is rejected."""
        with pytest.raises(RuleError):
            parse_value("10.0.0.1", 16)

    def test_parse_field_spec(self):
        """Test prefix, range and exact specs."""
        assert parse_field_spec("10.0.0.0/8", 32) == Prefix(0x0A000000, 8)
        assert parse_field_spec("10.1.2.3/8", 32) == Prefix(0x0A000000, 8)
        assert parse_field_spec("80-90", 16) == Range(80, 90)
        assert parse_field_spec("443", 16) == Exact(443)

    def test_parse_ruleset(self):
        """Test the fields header, omitted fields and default priorities."""
        text = (
            "# fields: src=32,dport=16\n"
            "\n"
            "src=10.0.0.0/8,dport=80 -> 3\n"
            "src=10.1.2.3 -> 4  # host\n"
            "dport=1000-2000 -> 5 prio=9\n"
        )
        fields, rules = parse_ruleset(text)
        assert fields == [FieldSpec("src", 32), FieldSpec("dport", 16)]
        assert rules[0] == Rule((Prefix(0x0A000000, 8), Exact(80)), 3, 0)
        assert rules[1] == Rule((Exact(0x0A010203), Prefix(0, 0)), 4, 1)
        assert rules[2].priority == 9

    @pytest.mark.parametrize(
        "line",
        [
            "src=1 -> x",
            "src=1",
            "nope=1 -> 2",
            "src=5-4 -> 2",
            "src=1/40 -> 2",
        ],
    )
    def test_malformed_lines(self, line):
        """Test malformed rule lines raise with the line number."""
        with pytest.raises(RuleError, match="Line 2"):
            parse_ruleset(f"# fields: src=32\n{line}\n")

    def test_rules_before_fields_rejected(self):
        """Test a rule without any field declarations is rejected."""
        with pytest.raises(RuleError):
            parse_ruleset("a=1 -> 2\n")

    def test_format_parses_back(self):
        """Test formatted rules parse to the same rules."""
        fields = [FieldSpec("src", 32), FieldSpec("dport", 16)]
        rules = [
            Rule((Prefix(0x0A000000, 8), Range(80, 90)), 3, 0),
            Rule((Exact(7), Prefix(0, 0)), 4, 2),
        ]
        parsed_fields, parsed = parse_ruleset(format_ruleset(fields, rules))
        assert parsed_fields == fields
        assert parsed == rules
