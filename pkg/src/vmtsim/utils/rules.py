"""Rule model, ruleset file parsing and control-plane preprocessing.

Rules are expanded into prefix-only form (ranges become minimal prefix
covers, exact values become full-width prefixes) and then spine-pruned so
no prefix is a proper prefix of another.
"""

from __future__ import annotations

import ipaddress
import itertools
import logging
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

from vmtsim.core import NOT_FOUND, ActionRef

logger = logging.getLogger(__name__)

MAX_FIELD_EXPANSION = 4096

# Pattern for "<fields> -> <action> [prio=<k>]"
RULE_LINE_PATTERN = re.compile(
    r"^\s*(?P<fields>.+?)\s*->\s*(?P<action>\d+)(?:\s+prio\s*=\s*(?P<prio>-?\d+))?\s*$"
)
FIELDS_HEADER_PATTERN = re.compile(r"^#\s*fields\s*:\s*(?P<fields>.+)$", re.IGNORECASE)


class RuleError(ValueError):
    """Malformed rule, empty range or infeasible expansion."""


@dataclass(frozen=True, slots=True)
class Exact:
    value: int


@dataclass(frozen=True, slots=True)
class Prefix:
    value: int
    length: int


@dataclass(frozen=True, slots=True)
class Range:
    lo: int
    hi: int


FieldMatch = Exact | Prefix | Range


@dataclass(frozen=True, slots=True)
class FieldSpec:
    """A declared match field."""

    name: str
    width: int


@dataclass(frozen=True, slots=True)
class Rule:
    """A classifier rule over one or more fields."""

    matches: tuple[FieldMatch, ...]
    action: ActionRef
    priority: int = 0


@dataclass(frozen=True, slots=True)
class PrefixRule:
    """A prefix over the concatenated key bits.

    ``value`` holds the prefix bits left-aligned in a ``width``-bit word with
    the low ``width - length`` bits zero.
    """

    value: int
    length: int
    width: int
    action: ActionRef
    priority: int = 0

    def matches(self, key: int) -> bool:
        shift = self.width - self.length
        return (key >> shift) == (self.value >> shift)

    def __str__(self) -> str:
        bits = format(self.value >> (self.width - self.length), f"0{self.length}b") if self.length else ""
        return f"{bits}{'*' * (self.width - self.length)}/{self.length}->{self.action}"


# -- range and field conversion ------------------------------------------------


def range_to_prefixes(lo: int, hi: int, width: int) -> list[tuple[int, int]]:
    """Minimal set of prefixes covering exactly [lo, hi].

    Returns:
        (value, length) pairs with ``value`` left-aligned in ``width`` bits
    """
    if lo > hi:
        raise RuleError(f"Empty range [{lo}, {hi}]")
    if lo < 0 or hi >= 1 << width:
        raise RuleError(f"Range [{lo}, {hi}] outside a {width}-bit field")

    out: list[tuple[int, int]] = []
    cur = lo
    while cur <= hi:
        # largest aligned block starting at cur that fits in [cur, hi]
        size = cur & -cur if cur else 1 << width
        while size > hi - cur + 1:
            size >>= 1
        length = width - (size.bit_length() - 1)
        out.append((cur, length))
        cur += size
    return out


def _field_prefixes(match: FieldMatch, width: int) -> list[tuple[int, int]]:
    if isinstance(match, Exact):
        if not 0 <= match.value < 1 << width:
            raise RuleError(f"Value {match.value} outside a {width}-bit field")
        return [(match.value, width)]
    if isinstance(match, Prefix):
        if not 0 <= match.length <= width:
            raise RuleError(f"Prefix length {match.length} outside [0, {width}]")
        shift = width - match.length
        return [((match.value >> shift) << shift, match.length)]
    return range_to_prefixes(match.lo, match.hi, width)


def _full_values(prefixes: list[tuple[int, int]], width: int) -> list[int]:
    count = sum(1 << (width - length) for _, length in prefixes)
    if count > MAX_FIELD_EXPANSION:
        raise RuleError(
            f"Non-exact leading field expands to {count} values (limit {MAX_FIELD_EXPANSION})"
        )
    values: list[int] = []
    for value, length in prefixes:
        values.extend(range(value, value + (1 << (width - length))))
    return values


def expand_rules(rules: Iterable[Rule], fields: Sequence[FieldSpec]) -> list[PrefixRule]:
    """Convert rules to prefix-only rules over the concatenated fields.

    Earlier fields must resolve to full-width values; small non-exact leading
    fields are enumerated. Identical prefixes keep the lowest priority value.

    Raises:
        RuleError: On field-count mismatch, empty ranges or infeasible expansion
    """
    total = sum(f.width for f in fields)
    best: dict[tuple[int, int], PrefixRule] = {}

    for rule in rules:
        if len(rule.matches) != len(fields):
            raise RuleError(f"Rule has {len(rule.matches)} fields, expected {len(fields)}")
        per_field = [_field_prefixes(m, f.width) for m, f in zip(rule.matches, fields)]

        leading: list[list[int]] = [
            _full_values(p, f.width) for p, f in zip(per_field[:-1], fields[:-1])
        ]
        combos = 1
        for values in leading:
            combos *= len(values)
        if combos > MAX_FIELD_EXPANSION:
            raise RuleError(f"Leading fields expand to {combos} combinations")

        last = fields[-1]
        consumed = total - last.width
        for head in itertools.product(*leading):
            base = 0
            for value, f in zip(head, fields[:-1]):
                base = (base << f.width) | value
            for value, length in per_field[-1]:
                pr = PrefixRule(
                    value=(base << last.width) | value,
                    length=consumed + length,
                    width=total,
                    action=rule.action,
                    priority=rule.priority,
                )
                slot = (pr.value, pr.length)
                current = best.get(slot)
                if current is None or pr.priority < current.priority:
                    best[slot] = pr

    return sorted(best.values(), key=lambda r: (r.length, r.value))


# -- spine pruning -------------------------------------------------------------


class _BitNode:
    __slots__ = ("children", "rule")

    def __init__(self) -> None:
        self.children: list[_BitNode | None] = [None, None]
        self.rule: PrefixRule | None = None


def spine_prune(rules: Sequence[PrefixRule]) -> list[PrefixRule]:
    """Leaf-push shorter-prefix actions so the result is prefix-free.

    Every key matches at most one output rule, and that rule carries the
    action of the key's longest matching input prefix.
    """
    if not rules:
        return []
    width = rules[0].width
    root = _BitNode()
    for rule in rules:
        node = root
        for depth in range(rule.length):
            bit = (rule.value >> (width - 1 - depth)) & 1
            child = node.children[bit]
            if child is None:
                child = node.children[bit] = _BitNode()
            node = child
        if node.rule is None or rule.priority < node.rule.priority:
            node.rule = rule

    out: list[PrefixRule] = []
    # explicit stack of (node, value, depth, inherited rule)
    stack: list[tuple[_BitNode, int, int, PrefixRule | None]] = [(root, 0, 0, None)]
    while stack:
        node, value, depth, inherited = stack.pop()
        current = node.rule or inherited
        if node.children == [None, None]:
            if current is not None:
                out.append(_retarget(current, value, depth))
            continue
        for bit in (1, 0):
            child = node.children[bit]
            child_value = value | (bit << (width - 1 - depth))
            if child is None:
                if current is not None:
                    out.append(_retarget(current, child_value, depth + 1))
            else:
                stack.append((child, child_value, depth + 1, current))

    out.sort(key=lambda r: (r.value, r.length))
    return out


def _retarget(rule: PrefixRule, value: int, length: int) -> PrefixRule:
    if rule.value == value and rule.length == length:
        return rule
    return PrefixRule(value, length, rule.width, rule.action, rule.priority)


def lpm_lookup(rules: Iterable[PrefixRule], key: int, default: ActionRef = NOT_FOUND) -> ActionRef:
    """Linear longest-prefix-match scan (ties go to the lowest priority value)."""
    best: PrefixRule | None = None
    for rule in rules:
        if not rule.matches(key):
            continue
        if (
            best is None
            or rule.length > best.length
            or (rule.length == best.length and rule.priority < best.priority)
        ):
            best = rule
    return best.action if best is not None else default


def match_rule(rule: Rule, values: Sequence[int], fields: Sequence[FieldSpec]) -> bool:
    """Whether a multi-field rule matches per-field key values."""
    for m, v, f in zip(rule.matches, values, fields):
        if isinstance(m, Exact):
            if v != m.value:
                return False
        elif isinstance(m, Range):
            if not m.lo <= v <= m.hi:
                return False
        else:
            shift = f.width - m.length
            if v >> shift != m.value >> shift:
                return False
    return True


def split_key(key: int, fields: Sequence[FieldSpec]) -> list[int]:
    """Split a concatenated key into per-field values."""
    values: list[int] = []
    for f in reversed(fields):
        values.append(key & ((1 << f.width) - 1))
        key >>= f.width
    return values[::-1]


# -- ruleset file parsing ------------------------------------------------------


def parse_value(text: str, width: int) -> int:
    """Parse a decimal, hex (0x...) or dotted-quad (32-bit fields) value."""
    text = text.strip()
    try:
        if "." in text:
            if width != 32:
                raise RuleError(f"Dotted value {text!r} requires a 32-bit field")
            return int(ipaddress.IPv4Address(text))
        return int(text, 0)
    except ValueError as e:
        if isinstance(e, RuleError):
            raise
        raise RuleError(f"Invalid value {text!r}") from e


def parse_field_spec(text: str, width: int) -> FieldMatch:
    """Parse ``v/len``, ``v`` or ``lo-hi``."""
    text = text.strip()
    if "/" in text:
        value_text, length_text = text.split("/", 1)
        try:
            length = int(length_text)
        except ValueError as e:
            raise RuleError(f"Invalid prefix length in {text!r}") from e
        if not 0 <= length <= width:
            raise RuleError(f"Prefix length {length} outside [0, {width}]")
        value = parse_value(value_text, width)
        shift = width - length
        return Prefix((value >> shift) << shift, length)
    if "-" in text:
        lo_text, hi_text = text.split("-", 1)
        lo, hi = parse_value(lo_text, width), parse_value(hi_text, width)
        if lo > hi:
            raise RuleError(f"Empty range {text!r}")
        return Range(lo, hi)
    return Exact(parse_value(text, width))


def parse_fields_header(text: str) -> list[FieldSpec]:
    """Parse ``name=width,name=width`` field declarations."""
    fields: list[FieldSpec] = []
    for part in text.split(","):
        if not part.strip():
            continue
        name, _, width = part.partition("=")
        try:
            fields.append(FieldSpec(name.strip(), int(width)))
        except ValueError as e:
            raise RuleError(f"Invalid field declaration {part!r}") from e
    return fields


def parse_rule_line(line: str, fields: Sequence[FieldSpec], default_priority: int) -> Rule:
    """Parse ``<field>=<spec>[,...] -> <action_id> [prio=<k>]``.

    Fields omitted from the line match anything.
    """
    m = RULE_LINE_PATTERN.match(line)
    if not m:
        raise RuleError(f"Malformed rule line: {line!r}")
    by_name = {f.name: f for f in fields}
    given: dict[str, FieldMatch] = {}
    for part in m.group("fields").split(","):
        name, sep, spec = part.partition("=")
        name = name.strip()
        if not sep:
            raise RuleError(f"Missing '=' in {part!r}")
        if name not in by_name:
            raise RuleError(f"Unknown field {name!r}")
        given[name] = parse_field_spec(spec, by_name[name].width)
    matches = tuple(given.get(f.name, Prefix(0, 0)) for f in fields)
    prio = m.group("prio")
    return Rule(matches, int(m.group("action")), int(prio) if prio is not None else default_priority)


def parse_ruleset(text: str, fields: Sequence[FieldSpec] | None = None) -> tuple[list[FieldSpec], list[Rule]]:
    """Parse ruleset text.

    Field widths come from ``fields`` or from a ``# fields: name=width,...``
    header. Rules without ``prio=`` get their line order as priority.
    """
    declared = list(fields) if fields else []
    rules: list[Rule] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            header = FIELDS_HEADER_PATTERN.match(line)
            if header and not fields:
                declared = parse_fields_header(header.group("fields"))
            continue
        if not declared:
            raise RuleError(f"Line {lineno}: no field declarations before first rule")
        try:
            rules.append(parse_rule_line(line.split("#", 1)[0], declared, default_priority=len(rules)))
        except RuleError as e:
            raise RuleError(f"Line {lineno}: {e}") from e
    return declared, rules


def load_ruleset(path: Path, fields: Sequence[FieldSpec] | None = None) -> tuple[list[FieldSpec], list[Rule]]:
    """Load a ruleset file."""
    declared, rules = parse_ruleset(path.read_text(encoding="utf-8"), fields)
    logger.debug("Loaded %d rules from %s", len(rules), path)
    return declared, rules


def format_match(match: FieldMatch) -> str:
    if isinstance(match, Exact):
        return str(match.value)
    if isinstance(match, Prefix):
        return f"{match.value}/{match.length}"
    return f"{match.lo}-{match.hi}"


def format_ruleset(fields: Sequence[FieldSpec], rules: Iterable[Rule]) -> str:
    """Render rules in the ruleset file format."""
    lines = ["# fields: " + ",".join(f"{f.name}={f.width}" for f in fields)]
    for rule in rules:
        parts = ",".join(f"{f.name}={format_match(m)}" for f, m in zip(fields, rule.matches))
        lines.append(f"{parts} -> {rule.action} prio={rule.priority}")
    return "\n".join(lines) + "\n"
