"""
Classification Engine Module
Functional classification over a memory image or an in-memory tree.

Traversal uses bit extraction only: the child index is a concatenation of
header bit slices and the child-entry word offset is a multiply-and-shift.
Every rule list met on the way (pushed lists and the final leaf) is scanned
up to its first match; the lowest rule id among those matches wins.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .exceptions import InvalidEncodingError, StructuralError
from .memory_layout import (
    ADDRESS_BITS,
    ENTRY_EMPTY,
    ENTRY_INTERNAL,
    ENTRY_LEAF,
    HEADER_CHILD_BASE,
    RULES_PER_WORD,
    MemoryImage,
    child_entry_position,
    decode_child,
    decode_header,
    decode_rule,
    read_child_entry,
    unpack_rule_pair,
    validate_image,
)
from .ruleset import PacketHeader, Rule, matches
from .tree_builder import CutSpec, DecisionTree, InternalNode, LeafNode

logger = logging.getLogger(__name__)


@dataclass
class MatchResult:
    """
    Outcome of one lookup.

    traverser_accesses covers node headers, child-entry words and pushed
    lists; searcher_accesses covers leaf rule words.
    """

    matched: Optional[int] = None
    nodes_visited: int = 0
    rules_compared: int = 0
    traverser_accesses: int = 0
    searcher_accesses: int = 0

    @property
    def memory_accesses(self) -> int:
        return self.traverser_accesses + self.searcher_accesses

    def offer(self, rule_id: Optional[int]) -> None:
        if rule_id is not None and (self.matched is None or rule_id < self.matched):
            self.matched = rule_id

    def to_dict(self) -> Dict[str, Optional[int]]:
        data = asdict(self)
        data['memory_accesses'] = self.memory_accesses
        return data


def extract_child_index(header: PacketHeader, cuts: CutSpec) -> int:
    """
    Child index selected by a header under a node's cuts.

    For each dimension the ncuts bits ending at bitpos are taken from the
    header field and concatenated, sip slice most significant.
    """
    index = 0
    for value, pos, n in zip(header.point, cuts.bitpos, cuts.ncuts):
        index = (index << n) | ((value >> (pos - n + 1)) & ((1 << n) - 1))
    return index


class ImageReader:
    """Bounds-checked word access with decoded rule words memoized per address."""

    def __init__(self, image: MemoryImage):
        self.image = image
        self._rule_pairs: Dict[int, Tuple[Tuple[Rule, bool], ...]] = {}

    def word(self, address: int) -> int:
        if not 0 <= address < len(self.image.words):
            raise StructuralError(f"dangling address {address}")
        return self.image.words[address]

    def rule_pair(self, address: int) -> Tuple[Tuple[Rule, bool], ...]:
        pair = self._rule_pairs.get(address)
        if pair is None:
            decoded = []
            for half in unpack_rule_pair(self.word(address)):
                try:
                    rule, last = decode_rule(half)
                except InvalidEncodingError as e:
                    raise StructuralError(f"word {address}: {e}")
                decoded.append((rule, last))
                if last:
                    break
            pair = tuple(decoded)
            self._rule_pairs[address] = pair
        return pair

    def scan(self, start: int, header: PacketHeader) -> Tuple[Optional[int], int]:
        """
        Scan a rule list up to its first match or last flag.

        Returns:
            (first matching rule id or None, words read)
        """
        address = start
        previous = -1
        limit = max(self.image.ruleset_size, 1)
        while True:
            done = False
            found = None
            for rule, last in self.rule_pair(address):
                if rule.rule_id <= previous or rule.rule_id >= limit:
                    raise StructuralError(
                        f"word {address}: rule id {rule.rule_id} out of order or out of range"
                    )
                previous = rule.rule_id
                if found is None and matches(rule, header):
                    found = rule.rule_id
                if last:
                    done = True
                    break
            if found is not None or done:
                return found, address - start + 1
            address += 1


def _walk_image(reader: ImageReader, header: PacketHeader) -> MatchResult:
    image = reader.image
    result = MatchResult()
    kind = image.root_kind
    if kind == ENTRY_EMPTY:
        return result
    if kind == ENTRY_LEAF:
        leaf = (image.root >> HEADER_CHILD_BASE) & ((1 << ADDRESS_BITS) - 1)
        found, words = reader.scan(leaf, header)
        result.nodes_visited = 1
        result.searcher_accesses = words
        result.rules_compared = words * RULES_PER_WORD
        result.offer(found)
        return result
    if kind != ENTRY_INTERNAL:
        raise StructuralError(f"unknown root kind {kind}")

    header_word = image.root
    visited = set()
    while True:
        try:
            node = decode_header(header_word)
        except InvalidEncodingError as e:
            raise StructuralError(str(e))
        result.nodes_visited += 1
        if node.has_pushed:
            found, words = reader.scan(node.pushed_base, header)
            result.traverser_accesses += words
            result.rules_compared += words * RULES_PER_WORD
            result.offer(found)

        offset, slot = child_entry_position(extract_child_index(header, node.cuts))
        entry = read_child_entry(reader.word(node.child_base + offset), slot)
        result.traverser_accesses += 1
        child_kind, target = decode_child(entry)

        if child_kind == ENTRY_INTERNAL:
            if target in visited:
                raise StructuralError(f"header {target} reached twice in one lookup")
            visited.add(target)
            header_word = reader.word(target)
            result.traverser_accesses += 1
        elif child_kind == ENTRY_LEAF:
            found, words = reader.scan(target, header)
            result.nodes_visited += 1
            result.searcher_accesses += words
            result.rules_compared += words * RULES_PER_WORD
            result.offer(found)
            return result
        elif child_kind == ENTRY_EMPTY:
            return result
        else:
            raise StructuralError(f"unknown child entry type {child_kind}")


def classify(image: MemoryImage, header: PacketHeader) -> MatchResult:
    """
    Classify one header against a memory image.

    The root header is held in registers and costs no access. Each further
    level costs one child-entry word, plus a header word when the child is
    internal; pushed and leaf lists cost one access per word scanned. The
    header reads go beyond the plain count of levels plus pushed and leaf
    words: a lookup descending through k non-root internal nodes pays k more
    accesses than that count.

    Raises:
        StructuralError: Dangling address, list without a last flag, rule ids
            out of order or out of range, or a header reached twice in one
            lookup
    """
    return _walk_image(ImageReader(image), header)


def _scan_rules(rules: Sequence[Rule], header: PacketHeader) -> Tuple[Optional[int], int]:
    for position, rule in enumerate(rules):
        if matches(rule, header):
            return rule.rule_id, position // RULES_PER_WORD + 1
    return None, -(-len(rules) // RULES_PER_WORD)


def classify_tree(tree: DecisionTree, header: PacketHeader) -> MatchResult:
    """Classify against the in-memory tree with the same access accounting as classify."""
    result = MatchResult()
    node = tree.root
    while isinstance(node, InternalNode):
        result.nodes_visited += 1
        if node.pushed:
            found, words = _scan_rules(node.pushed, header)
            result.traverser_accesses += words
            result.rules_compared += words * RULES_PER_WORD
            result.offer(found)
        node = node.children[extract_child_index(header, node.cuts)]
        result.traverser_accesses += 1
        if isinstance(node, InternalNode):
            result.traverser_accesses += 1

    if isinstance(node, LeafNode):
        found, words = _scan_rules(node.rules, header)
        result.nodes_visited += 1
        result.searcher_accesses += words
        result.rules_compared += words * RULES_PER_WORD
        result.offer(found)
    return result


class ClassificationEngine:
    """
    Classifier over a validated memory image.

    The image is checked once on construction; decoded rule words are
    reused across lookups.
    """

    def __init__(self, image: MemoryImage):
        validate_image(image)
        self.image = image
        self._reader = ImageReader(image)
        logger.info(f"Classification engine ready ({len(image.words)} words)")

    def classify(self, header: PacketHeader) -> MatchResult:
        return _walk_image(self._reader, header)

    def batch_classify(self, headers: Sequence[PacketHeader]) -> List[MatchResult]:
        return [self.classify(header) for header in headers]
