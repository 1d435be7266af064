"""
Memory Layout Module
Bit-exact encodings and serialization of a decision tree into a
word-addressed memory image.

Word width is 320 bits: one internal-node header, ten 32-bit child entries,
or two 160-bit rule words. The root node lives in a separate root block
(the engine's registers) and costs no memory word for its header.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from .exceptions import (
    ImageFormatError,
    ImageTooLargeError,
    InvalidEncodingError,
    StructuralError,
)
from .ruleset import PortRange, Prefix, ProtoSpec, Rule
from .tree_builder import (
    NDIMS,
    CutSpec,
    DecisionTree,
    InternalNode,
    LeafNode,
    Node,
)

logger = logging.getLogger(__name__)

WORD_BITS = 320
WORD_BYTES = WORD_BITS // 8
RULE_BITS = 160
RULES_PER_WORD = 2
CHILD_ENTRY_BITS = 32
CHILD_ENTRIES_PER_WORD = 10
ADDRESS_BITS = 24
MAX_WORDS = 1 << ADDRESS_BITS
IP_BITS = 35

ENTRY_EMPTY = 0b00
ENTRY_INTERNAL = 0b01
ENTRY_LEAF = 0b10

MAGIC = b"PCUTIMG\0"
FORMAT_VERSION = 1
_FILE_HEADER = struct.Struct('<8sII')
_WORD_COUNT = struct.Struct('<Q')

_RULE_MASK = (1 << RULE_BITS) - 1


def _get(word: int, offset: int, width: int) -> int:
    return (word >> offset) & ((1 << width) - 1)


def _put(value: int, offset: int, width: int) -> int:
    if value >> width:
        raise ValueError(f"value {value} does not fit in {width} bits")
    return value << offset


# ---------------------------------------------------------------------------
# 35-bit IP prefix encoding
# ---------------------------------------------------------------------------

def encode_ip(prefix: Prefix) -> int:
    """
    Encode a canonical prefix into 35 bits.

    Bit 0 is the long-prefix flag. Prefixes of length <= 28 store the length
    in bits 1-6 and the top 28 address bits in bits 7-34; longer prefixes
    store length-29 in bits 1-2 and the full address in bits 3-34.
    """
    if prefix.length <= 28:
        return _put(prefix.length, 1, 6) | _put(prefix.addr >> 4, 7, 28)
    return 1 | _put(prefix.length - 29, 1, 2) | _put(prefix.addr, 3, 32)


def decode_ip(encoded: int) -> Prefix:
    """
    Inverse of encode_ip.

    Raises:
        InvalidEncodingError: Value wider than 35 bits, short form with a
            length above 28, or address bits set below the prefix length
    """
    if not 0 <= encoded < 1 << IP_BITS:
        raise InvalidEncodingError(f"encoded prefix wider than {IP_BITS} bits")
    if encoded & 1:
        length = 29 + _get(encoded, 1, 2)
        addr = _get(encoded, 3, 32)
    else:
        length = _get(encoded, 1, 6)
        if length > 28:
            raise InvalidEncodingError(f"short-form prefix with length {length}")
        addr = _get(encoded, 7, 28) << 4
    try:
        return Prefix(addr, length)
    except ValueError as e:
        raise InvalidEncodingError(f"non-canonical prefix encoding: {e}")


# ---------------------------------------------------------------------------
# 160-bit rule words
# ---------------------------------------------------------------------------

# (offset, width) of each rule word field, LSB first.
RULE_LAYOUT: Dict[str, Tuple[int, int]] = {
    'last': (0, 1),
    'rule_id': (1, 16),
    'proto': (17, 8),
    'proto_mask': (25, 1),
    'sport_lo': (26, 16),
    'sport_hi': (42, 16),
    'dport_lo': (58, 16),
    'dport_hi': (74, 16),
    'src': (90, IP_BITS),
    'dst': (125, IP_BITS),
}


def encode_rule(rule: Rule, last: bool) -> int:
    """Pack a rule into a 160-bit word."""
    values = {
        'last': int(last),
        'rule_id': rule.rule_id,
        'proto': rule.proto.value,
        'proto_mask': int(not rule.proto.wildcard),
        'sport_lo': rule.sport.lo,
        'sport_hi': rule.sport.hi,
        'dport_lo': rule.dport.lo,
        'dport_hi': rule.dport.hi,
        'src': encode_ip(rule.src),
        'dst': encode_ip(rule.dst),
    }
    word = 0
    for name, (offset, width) in RULE_LAYOUT.items():
        word |= _put(values[name], offset, width)
    return word


def decode_rule(word: int) -> Tuple[Rule, bool]:
    """
    Unpack a 160-bit rule word.

    Returns:
        (rule with priority equal to its id, last-rule flag)
    """
    if not 0 <= word <= _RULE_MASK:
        raise InvalidEncodingError("rule word wider than 160 bits")
    f = {name: _get(word, offset, width) for name, (offset, width) in RULE_LAYOUT.items()}
    if not f['proto_mask'] and f['proto']:
        raise InvalidEncodingError("wildcard protocol with a nonzero value")
    try:
        rule = Rule(
            priority=f['rule_id'],
            rule_id=f['rule_id'],
            src=decode_ip(f['src']),
            dst=decode_ip(f['dst']),
            sport=PortRange(f['sport_lo'], f['sport_hi']),
            dport=PortRange(f['dport_lo'], f['dport_hi']),
            proto=ProtoSpec(f['proto'], not f['proto_mask']),
        )
    except ValueError as e:
        raise InvalidEncodingError(f"invalid rule word: {e}")
    return rule, bool(f['last'])


def pack_rule_pair(first: int, second: int = 0) -> int:
    return first | (second << RULE_BITS)


def unpack_rule_pair(word: int) -> Tuple[int, int]:
    return word & _RULE_MASK, word >> RULE_BITS


# ---------------------------------------------------------------------------
# Node headers and child entries
# ---------------------------------------------------------------------------

HEADER_BITPOS_BITS = 6
HEADER_NCUTS_BITS = 4
HEADER_DIM_BITS = HEADER_BITPOS_BITS + HEADER_NCUTS_BITS
HEADER_CHILD_BASE = NDIMS * HEADER_DIM_BITS
HEADER_PUSHED_BASE = HEADER_CHILD_BASE + ADDRESS_BITS
HEADER_PUSHED_FLAG = HEADER_PUSHED_BASE + ADDRESS_BITS
ROOT_KIND = WORD_BITS - 2


@dataclass(frozen=True)
class NodeHeader:
    cuts: CutSpec
    child_base: int
    pushed_base: int = 0
    has_pushed: bool = False


def encode_header(header: NodeHeader) -> int:
    """Pack per-dimension (bitpos, ncuts), child base, pushed base and pushed flag."""
    word = 0
    for d in range(NDIMS):
        base = d * HEADER_DIM_BITS
        word |= _put(header.cuts.bitpos[d], base, HEADER_BITPOS_BITS)
        word |= _put(header.cuts.ncuts[d], base + HEADER_BITPOS_BITS, HEADER_NCUTS_BITS)
    word |= _put(header.child_base, HEADER_CHILD_BASE, ADDRESS_BITS)
    word |= _put(header.pushed_base, HEADER_PUSHED_BASE, ADDRESS_BITS)
    word |= _put(int(header.has_pushed), HEADER_PUSHED_FLAG, 1)
    return word


def decode_header(word: int) -> NodeHeader:
    bitpos = []
    ncuts = []
    for d in range(NDIMS):
        base = d * HEADER_DIM_BITS
        bitpos.append(_get(word, base, HEADER_BITPOS_BITS))
        ncuts.append(_get(word, base + HEADER_BITPOS_BITS, HEADER_NCUTS_BITS))
    try:
        cuts = CutSpec(tuple(bitpos), tuple(ncuts))
    except ValueError as e:
        raise InvalidEncodingError(f"invalid node header: {e}")
    return NodeHeader(
        cuts=cuts,
        child_base=_get(word, HEADER_CHILD_BASE, ADDRESS_BITS),
        pushed_base=_get(word, HEADER_PUSHED_BASE, ADDRESS_BITS),
        has_pushed=bool(_get(word, HEADER_PUSHED_FLAG, 1)),
    )


def encode_child(kind: int, address: int) -> int:
    return _put(kind, 0, 2) | _put(address, 2, ADDRESS_BITS)


def decode_child(entry: int) -> Tuple[int, int]:
    return entry & 0b11, _get(entry, 2, ADDRESS_BITS)


def child_entry_position(index: int) -> Tuple[int, int]:
    """
    Word offset and slot of a child entry, without division.

    (index * 52429) >> 19 equals index // 10 for every index below 2**15,
    which covers the 15-bit child index cap.
    """
    word = (index * 52429) >> 19
    return word, index - word * CHILD_ENTRIES_PER_WORD


def read_child_entry(word: int, slot: int) -> int:
    return _get(word, slot * CHILD_ENTRY_BITS, CHILD_ENTRY_BITS)


# ---------------------------------------------------------------------------
# Memory image
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MemoryImage:
    """
    Serialized tree.

    root holds the root node's header content with the root kind (child-entry
    type code) in the top two bits; a leaf root keeps its leaf address in the
    child-base field.
    """

    words: Tuple[int, ...]
    root: int
    ruleset_size: int
    version: int = FORMAT_VERSION

    @property
    def root_kind(self) -> int:
        return _get(self.root, ROOT_KIND, 2)

    @property
    def size_bytes(self) -> int:
        return len(self.words) * WORD_BYTES


def _rule_words(count: int) -> int:
    return -(-count // RULES_PER_WORD)


def _child_words(count: int) -> int:
    return -(-count // CHILD_ENTRIES_PER_WORD)


def count_image_words(tree: DecisionTree) -> Dict[str, int]:
    """Words the image of this tree occupies, by kind."""
    counts = {'header': 0, 'child_entry': 0, 'leaf_rule': 0, 'pushed_rule': 0}
    for node in tree.unique_nodes():
        if isinstance(node, LeafNode):
            counts['leaf_rule'] += _rule_words(len(node.rules))
        elif isinstance(node, InternalNode):
            if node is not tree.root:
                counts['header'] += 1
            counts['child_entry'] += _child_words(len(node.children))
            counts['pushed_rule'] += _rule_words(len(node.pushed))
    return counts


def _entry_kind(node: Node) -> int:
    if isinstance(node, InternalNode):
        return ENTRY_INTERNAL
    if isinstance(node, LeafNode):
        return ENTRY_LEAF
    return ENTRY_EMPTY


def _encode_rule_list(rules: List[Rule]) -> List[int]:
    encoded = [encode_rule(rule, i == len(rules) - 1) for i, rule in enumerate(rules)]
    if len(encoded) % RULES_PER_WORD:
        encoded.append(0)
    return [pack_rule_pair(encoded[i], encoded[i + 1]) for i in range(0, len(encoded), 2)]


class ImageLayout:
    """Two-pass depth-first placement of a tree into memory words."""

    def __init__(self, tree: DecisionTree):
        self.tree = tree
        self.address: Dict[int, int] = {}
        self.child_base: Dict[int, int] = {}
        self.pushed_base: Dict[int, int] = {}
        self.next_free = 0

    def _place(self, node: Node) -> None:
        if isinstance(node, LeafNode):
            if id(node) not in self.address:
                self.address[id(node)] = self.next_free
                self.next_free += _rule_words(len(node.rules))
            return
        if not isinstance(node, InternalNode):
            return
        if node is not self.tree.root:
            self.address[id(node)] = self.next_free
            self.next_free += 1
        self.child_base[id(node)] = self.next_free
        self.next_free += _child_words(len(node.children))
        self.pushed_base[id(node)] = self.next_free if node.pushed else 0
        self.next_free += _rule_words(len(node.pushed))
        for child in node.children:
            self._place(child)

    def _header(self, node: InternalNode) -> int:
        return encode_header(NodeHeader(
            cuts=node.cuts,
            child_base=self.child_base[id(node)],
            pushed_base=self.pushed_base[id(node)],
            has_pushed=bool(node.pushed),
        ))

    def _write_internal(self, words: List[int], node: InternalNode) -> None:
        if node is not self.tree.root:
            words[self.address[id(node)]] = self._header(node)
        base = self.child_base[id(node)]
        for i, child in enumerate(node.children):
            target = self.address.get(id(child), 0)
            offset, slot = divmod(i, CHILD_ENTRIES_PER_WORD)
            words[base + offset] |= encode_child(_entry_kind(child), target) << (slot * CHILD_ENTRY_BITS)
        if node.pushed:
            start = self.pushed_base[id(node)]
            for i, word in enumerate(_encode_rule_list(node.pushed)):
                words[start + i] = word

    def run(self) -> MemoryImage:
        root = self.tree.root
        self._place(root)
        if self.next_free > MAX_WORDS:
            raise ImageTooLargeError(
                f"image needs {self.next_free} words, limit is {MAX_WORDS}"
            )

        words = [0] * self.next_free
        written = set()
        for node in self.tree.unique_nodes():
            if isinstance(node, InternalNode):
                self._write_internal(words, node)
            elif id(node) not in written:
                written.add(id(node))
                start = self.address[id(node)]
                for i, word in enumerate(_encode_rule_list(node.rules)):
                    words[start + i] = word

        if isinstance(root, InternalNode):
            root_block = self._header(root) | (ENTRY_INTERNAL << ROOT_KIND)
        elif isinstance(root, LeafNode):
            root_block = (_put(self.address[id(root)], HEADER_CHILD_BASE, ADDRESS_BITS)
                          | (ENTRY_LEAF << ROOT_KIND))
        else:
            root_block = ENTRY_EMPTY << ROOT_KIND

        logger.info(f"Laid out image: {len(words)} words ({len(words) * WORD_BYTES} bytes)")
        return MemoryImage(tuple(words), root_block, len(self.tree.ruleset))


def layout(tree: DecisionTree) -> MemoryImage:
    """
    Serialize a tree into a memory image.

    Raises:
        ImageTooLargeError: If the image needs more than 2**24 words
    """
    return ImageLayout(tree).run()


# ---------------------------------------------------------------------------
# Structural validation and reporting
# ---------------------------------------------------------------------------

class _ImageWalker:
    """Claims every word reachable from the root block for one structure."""

    def __init__(self, image: MemoryImage):
        self.image = image
        self.owner: List[Optional[Tuple[str, int]]] = [None] * len(image.words)
        self.counts = {'header': 0, 'child_entry': 0, 'leaf_rule': 0, 'pushed_rule': 0}
        self.lists: Dict[int, str] = {}
        self.internals = set()

    def _claim(self, address: int, label: Tuple[str, int], kind: str) -> None:
        if not 0 <= address < len(self.owner):
            raise StructuralError(f"address {address} outside image of {len(self.owner)} words")
        current = self.owner[address]
        if current is not None and current != label:
            raise StructuralError(
                f"word {address} claimed by {current[0]}@{current[1]} and {label[0]}@{label[1]}"
            )
        if current is None:
            self.owner[address] = label
            self.counts[kind] += 1

    def _rule_list(self, start: int, kind: str) -> None:
        if start in self.lists:
            return
        self.lists[start] = kind
        label = ('rules', start)
        previous = -1
        address = start
        while True:
            self._claim(address, label, kind)
            for half in unpack_rule_pair(self.image.words[address]):
                try:
                    rule, last = decode_rule(half)
                except InvalidEncodingError as e:
                    raise StructuralError(f"word {address}: {e}")
                if rule.rule_id <= previous or rule.rule_id >= max(self.image.ruleset_size, 1):
                    raise StructuralError(
                        f"word {address}: rule id {rule.rule_id} out of order or out of range"
                    )
                previous = rule.rule_id
                if last:
                    return
            address += 1

    def _internal(self, header_word: int, address: Optional[int]) -> None:
        if address is not None:
            if address in self.internals:
                raise StructuralError(f"internal node at {address} referenced twice")
            self.internals.add(address)
            self._claim(address, ('node', address), 'header')
        try:
            header = decode_header(header_word)
        except InvalidEncodingError as e:
            raise StructuralError(str(e))
        label = ('node', -1 if address is None else address)
        count = header.cuts.child_count
        for offset in range(_child_words(count)):
            self._claim(header.child_base + offset, label, 'child_entry')
        if header.has_pushed:
            self._rule_list(header.pushed_base, 'pushed_rule')
        for i in range(count):
            word, slot = child_entry_position(i)
            kind, target = decode_child(read_child_entry(self.image.words[header.child_base + word], slot))
            self._entry(kind, target)

    def _entry(self, kind: int, target: int) -> None:
        if kind == ENTRY_INTERNAL:
            if not 0 <= target < len(self.image.words):
                raise StructuralError(f"dangling internal node address {target}")
            self._internal(self.image.words[target], target)
        elif kind == ENTRY_LEAF:
            self._rule_list(target, 'leaf_rule')
        elif kind != ENTRY_EMPTY:
            raise StructuralError(f"unknown child entry type {kind}")

    def run(self) -> Dict[str, int]:
        kind = self.image.root_kind
        if kind == ENTRY_INTERNAL:
            self._internal(self.image.root, None)
        elif kind == ENTRY_LEAF:
            self._rule_list(_get(self.image.root, HEADER_CHILD_BASE, ADDRESS_BITS), 'leaf_rule')
        elif kind != ENTRY_EMPTY:
            raise StructuralError(f"unknown root kind {kind}")
        unowned = sum(1 for label in self.owner if label is None)
        if unowned:
            raise StructuralError(f"{unowned} words are not reachable from the root")
        return self.counts


def validate_image(image: MemoryImage) -> None:
    """
    Check that every word belongs to exactly one structure.

    Raises:
        StructuralError: Dangling addresses, overlapping structures, rule
            lists running off the image or into another structure, rule ids
            out of order, or unreachable words
    """
    _ImageWalker(image).run()


def memory_report(image: MemoryImage) -> Dict[str, Union[int, Dict[str, int]]]:
    """Word and byte totals with a per-kind breakdown."""
    breakdown = _ImageWalker(image).run()
    return {
        'words': len(image.words),
        'bytes': len(image.words) * WORD_BYTES,
        'breakdown': breakdown,
    }


# ---------------------------------------------------------------------------
# Image files
# ---------------------------------------------------------------------------

def image_to_bytes(image: MemoryImage) -> bytes:
    parts = [
        _FILE_HEADER.pack(MAGIC, image.version, image.ruleset_size),
        image.root.to_bytes(WORD_BYTES, 'little'),
        _WORD_COUNT.pack(len(image.words)),
    ]
    parts.extend(word.to_bytes(WORD_BYTES, 'little') for word in image.words)
    return b''.join(parts)


def image_from_bytes(data: bytes) -> MemoryImage:
    """
    Raises:
        ImageFormatError: Bad magic, unsupported version, or wrong length
    """
    prefix_len = _FILE_HEADER.size + WORD_BYTES + _WORD_COUNT.size
    if len(data) < prefix_len:
        raise ImageFormatError(f"image truncated: {len(data)} bytes")
    magic, version, ruleset_size = _FILE_HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ImageFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ImageFormatError(f"unsupported image version {version}")
    offset = _FILE_HEADER.size
    root = int.from_bytes(data[offset:offset + WORD_BYTES], 'little')
    offset += WORD_BYTES
    (count,) = _WORD_COUNT.unpack_from(data, offset)
    offset += _WORD_COUNT.size
    if len(data) != offset + count * WORD_BYTES:
        raise ImageFormatError(
            f"image holds {len(data) - offset} word bytes, header announces {count} words"
        )
    words = tuple(
        int.from_bytes(data[offset + i * WORD_BYTES:offset + (i + 1) * WORD_BYTES], 'little')
        for i in range(count)
    )
    return MemoryImage(words, root, ruleset_size, version)


def store_image(image: MemoryImage, path: Union[str, Path]) -> Path:
    """
    Write an image file, creating parent directories.

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(image_to_bytes(image))
    logger.info(f"Wrote image to {path}")
    return path


def load_image(path: Union[str, Path]) -> MemoryImage:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Image file not found: {path}")
    return image_from_bytes(path.read_bytes())
