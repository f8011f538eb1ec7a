"""Multi-bit trie with per-level bank placement.

Prefixes are inserted shortest first with controlled prefix expansion; when a
child node is created under a slot that already carries an action, the action
is pushed into every slot of the child, so a lookup never backtracks.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

from vmtsim.core import NOT_FOUND, ActionRef, Key
from vmtsim.utils.rules import PrefixRule

MAX_STRIDE = 16
_NO_CHILD = -1


class TrieError(ValueError):
    """Invalid trie geometry."""


@dataclass(slots=True)
class TrieNode:
    """One node: 2^stride slots, each an action and/or a child index."""

    actions: list[ActionRef]
    children: list[int]


@dataclass
class Trie:
    """A banked multi-bit trie for one lookup policy."""

    width: int
    stride: int
    n_banks: int
    bank_offset: int = 0
    default_action: ActionRef = NOT_FOUND
    levels: list[list[TrieNode]] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return math.ceil(self.width / self.stride)

    @property
    def padded_width(self) -> int:
        return self.depth * self.stride

    def bank_of(self, level: int) -> int:
        return (level + self.bank_offset) % self.n_banks

    @property
    def node_count(self) -> int:
        return sum(len(level) for level in self.levels)

    def footprint(self, node_bytes: int) -> int:
        """Bytes of external memory occupied by the node arrays."""
        return self.node_count * node_bytes

    def _new_node(self, level: int, fill: ActionRef) -> int:
        slots = 1 << self.stride
        self.levels[level].append(TrieNode([fill] * slots, [_NO_CHILD] * slots))
        return len(self.levels[level]) - 1

    def _chunk(self, key: int, level: int) -> int:
        shift = self.padded_width - (level + 1) * self.stride
        return (key >> shift) & ((1 << self.stride) - 1)

    def insert(self, rule: PrefixRule) -> None:
        """Insert one prefix; callers insert in non-decreasing length order."""
        pad = self.padded_width - self.width
        value = rule.value << pad
        length = rule.length
        # level holding the prefix's last bits
        target = max(0, math.ceil(length / self.stride) - 1)
        node = 0
        for level in range(target):
            node_obj = self.levels[level][node]
            chunk = self._chunk(value, level)
            child = node_obj.children[chunk]
            if child == _NO_CHILD:
                child = self._new_node(level + 1, node_obj.actions[chunk])
                node_obj.children[chunk] = child
            node = child
        node_obj = self.levels[target][node]
        free_bits = (target + 1) * self.stride - length
        first = self._chunk(value, target)
        for slot in range(first, first + (1 << free_bits)):
            node_obj.actions[slot] = rule.action

    def lookup(self, key: Key | int) -> tuple[ActionRef, list[tuple[int, int]]]:
        """Walk the trie from the root.

        Returns:
            The matched action (or the default) and the ordered
            (bank, level) access trace
        """
        word = key.to_int() if isinstance(key, Key) else key
        word <<= self.padded_width - self.width
        trace: list[tuple[int, int]] = []
        node = 0
        action = self.default_action
        for level in range(self.depth):
            trace.append((self.bank_of(level), level))
            node_obj = self.levels[level][node]
            chunk = self._chunk(word, level)
            if node_obj.actions[chunk] != NOT_FOUND:
                action = node_obj.actions[chunk]
            child = node_obj.children[chunk]
            if child == _NO_CHILD:
                break
            node = child
        return action, trace


def build_trie(
    rules: Sequence[PrefixRule],
    width: int,
    stride: int = 4,
    n_banks: int = 8,
    default_action: ActionRef = NOT_FOUND,
    bank_offset: int = 0,
) -> Trie:
    """Build a trie of ``ceil(width / stride)`` levels, level l in bank (l + offset) mod n_banks.

    Raises:
        TrieError: If the geometry yields no levels or a rule width mismatches
    """
    if width < 1 or stride < 1 or stride > MAX_STRIDE or n_banks < 1:
        raise TrieError(f"Invalid trie geometry width={width} stride={stride} banks={n_banks}")
    trie = Trie(width, stride, n_banks, bank_offset, default_action)
    trie.levels = [[] for _ in range(trie.depth)]
    trie._new_node(0, NOT_FOUND)
    for rule in sorted(rules, key=lambda r: (r.length, -r.priority)):
        if rule.width != width:
            raise TrieError(f"Rule width {rule.width} does not match trie width {width}")
        trie.insert(rule)
    return trie


def trie_lookup(trie: Trie, key: Key | int) -> tuple[ActionRef, list[tuple[int, int]]]:
    """Module-level alias for :meth:`Trie.lookup`."""
    return trie.lookup(key)
