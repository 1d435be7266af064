import dataclasses

import numpy as np
import pytest

from src import memory_layout
from src.exceptions import ImageFormatError, ImageTooLargeError, InvalidEncodingError, StructuralError
from src.memory_layout import (
    ENTRY_EMPTY,
    ENTRY_INTERNAL,
    ENTRY_LEAF,
    NodeHeader,
    MemoryImage,
    child_entry_position,
    count_image_words,
    decode_child,
    decode_header,
    decode_ip,
    decode_rule,
    encode_header,
    encode_ip,
    encode_rule,
    image_from_bytes,
    image_to_bytes,
    layout,
    load_image,
    memory_report,
    read_child_entry,
    store_image,
    unpack_rule_pair,
    validate_image,
)
from src.ruleset import Prefix, Ruleset, gen_synthetic
from src.tree_builder import (
    BuildConfig,
    CutSpec,
    DecisionTree,
    InternalNode,
    LeafNode,
    Region,
    build,
    tree_stats,
)

from tests.helpers import make_rule, ruleset_of


def test_encode_wildcard_prefix_is_zero():
    assert encode_ip(Prefix(0, 0)) == 0
    assert decode_ip(0) == Prefix(0, 0)


def test_encode_host_prefix():
    encoded = encode_ip(Prefix.from_string('10.0.0.1/32'))
    assert encoded & 1 == 1
    assert (encoded >> 1) & 0b11 == 3
    assert encoded >> 3 == 0x0A000001


def test_encode_short_prefix():
    encoded = encode_ip(Prefix.from_string('192.168.0.0/16'))
    assert encoded & 1 == 0
    assert (encoded >> 1) & 0x3F == 16
    assert encoded >> 7 == 0x0C0A800


def test_prefix_encoding_every_length():
    rng = np.random.default_rng(5)
    for length in range(33):
        for addr in rng.integers(0, 1 << 32, size=1000):
            prefix = Prefix.canonical(int(addr), length)
            encoded = encode_ip(prefix)
            assert encoded < 1 << 35
            assert decode_ip(encoded) == prefix


def test_decode_rejects_long_short_form():
    with pytest.raises(InvalidEncodingError):
        decode_ip(30 << 1)


def test_decode_rejects_host_bits():
    # /8 with a low address bit set in the 28-bit field
    with pytest.raises(InvalidEncodingError):
        decode_ip((8 << 1) | (1 << 7))


def test_wildcard_rule_word(wildcard_rule):
    word = encode_rule(wildcard_rule, last=True)
    assert word & ((1 << 26) - 1) == 1
    assert (word >> 42) & 0xFFFF == 0xFFFF
    assert (word >> 74) & 0xFFFF == 0xFFFF
    assert word < 1 << 160


def test_rule_word_max_id():
    rule = dataclasses.replace(make_rule(0, src='10.0.0.0/8', proto=6), rule_id=0xFFFF,
                               priority=0xFFFF)
    decoded, last = decode_rule(encode_rule(rule, last=False))
    assert decoded == rule
    assert last is False


@pytest.mark.parametrize("profile", ["acl-like", "fw-like", "ipc-like"])
def test_generated_rules_survive_encoding(profile):
    for rule in gen_synthetic(4, 10_000, profile):
        decoded, last = decode_rule(encode_rule(rule, last=True))
        assert decoded == rule and last


def test_decode_rule_rejects_bad_ports():
    word = encode_rule(make_rule(0, sport=(10, 20)), last=True)
    word &= ~(0xFFFF << 42)
    with pytest.raises(InvalidEncodingError):
        decode_rule(word)


def test_header_word_fields():
    header = NodeHeader(CutSpec((31, 12, 15, 0, 7), (2, 3, 0, 0, 1)), 1234, 99, True)
    assert decode_header(encode_header(header)) == header


def test_child_entry_position_matches_divmod():
    for index in range(1 << 15):
        assert child_entry_position(index) == divmod(index, 10)


def test_empty_root_layout():
    image = layout(build(Ruleset()))
    assert image.words == ()
    assert image.root_kind == ENTRY_EMPTY
    validate_image(image)


def test_single_leaf_of_three_rules():
    ruleset = ruleset_of(dict(src='10.0.0.0/8'), dict(src='11.0.0.0/8'), dict(src='12.0.0.0/8'))
    image = layout(build(ruleset))
    assert image.root_kind == ENTRY_LEAF
    assert len(image.words) == 2
    low, high = unpack_rule_pair(image.words[1])
    rule, last = decode_rule(low)
    assert rule.rule_id == 2 and last
    assert high == 0
    assert not decode_rule(unpack_rule_pair(image.words[0])[1])[1]


def _twin_leaf_tree():
    ruleset = ruleset_of(dict(dport=(80, 80)))
    cuts = CutSpec((31, 31, 15, 15, 7), (1, 0, 0, 0, 0))
    root = InternalNode(cuts, Region.universe(), [])
    leaf = LeafNode([ruleset[0]], Region.universe())
    root.children = [leaf, leaf]
    return DecisionTree(root, ruleset, BuildConfig())


def test_merged_leaves_share_address():
    image = layout(_twin_leaf_tree())
    assert len(image.words) == 2
    first = decode_child(read_child_entry(image.words[0], 0))
    second = decode_child(read_child_entry(image.words[0], 1))
    assert first == second == (ENTRY_LEAF, 1)


def test_quadrant_layout(quadrant_ruleset):
    image = layout(build(quadrant_ruleset, BuildConfig(binth=1)))
    assert image.root_kind == ENTRY_INTERNAL
    assert decode_header(image.root).child_base == 0
    assert [decode_child(read_child_entry(image.words[0], i)) for i in range(4)] == [
        (ENTRY_LEAF, 1), (ENTRY_LEAF, 2), (ENTRY_LEAF, 3), (ENTRY_LEAF, 4)
    ]


def test_word_count_matches_tree_stats(acl_image):
    _, _, tree, image = acl_image
    assert sum(count_image_words(tree).values()) == len(image.words)
    assert tree_stats(tree)['bytes'] == image.size_bytes


def test_memory_report(acl_image):
    _, _, tree, image = acl_image
    report = memory_report(image)
    assert report['bytes'] == 40 * report['words']
    assert report['breakdown'] == count_image_words(tree)


def test_layout_deterministic():
    ruleset = gen_synthetic(8, 200, 'ipc-like')
    assert layout(build(ruleset)) == layout(build(ruleset))


def test_image_too_large(monkeypatch, quadrant_ruleset):
    monkeypatch.setattr(memory_layout, 'MAX_WORDS', 3)
    with pytest.raises(ImageTooLargeError) as excinfo:
        layout(build(quadrant_ruleset, BuildConfig(binth=1)))
    assert excinfo.value.exit_code == 3


def test_store_and_load_empty_image(tmp_path):
    image = layout(build(Ruleset()))
    path = store_image(image, tmp_path / 'empty.img')
    assert load_image(path) == image


def test_store_and_load(tmp_path, acl_image):
    image = acl_image[3]
    path = store_image(image, tmp_path / 'acl.img')
    assert path.stat().st_size == 8 + 4 + 4 + 40 + 8 + 40 * len(image.words)
    assert load_image(path) == image


def test_load_rejects_bad_magic(quadrant_ruleset):
    data = bytearray(image_to_bytes(layout(build(quadrant_ruleset))))
    data[0:8] = b"NOTANIMG"
    with pytest.raises(ImageFormatError):
        image_from_bytes(bytes(data))


def test_load_rejects_truncation(quadrant_ruleset):
    data = image_to_bytes(layout(build(quadrant_ruleset, BuildConfig(binth=1))))
    with pytest.raises(ImageFormatError):
        image_from_bytes(data[:-1])
    with pytest.raises(ImageFormatError):
        image_from_bytes(data[:10])


def test_load_rejects_unknown_version(quadrant_ruleset):
    data = bytearray(image_to_bytes(layout(build(quadrant_ruleset))))
    data[8] = 99
    with pytest.raises(ImageFormatError):
        image_from_bytes(bytes(data))


def test_validate_generated_image(acl_image):
    validate_image(acl_image[3])


def _tamper(image: MemoryImage, address: int, word: int) -> MemoryImage:
    words = list(image.words)
    words[address] = word
    return dataclasses.replace(image, words=tuple(words))


def test_cleared_last_flag_is_structural(quadrant_ruleset):
    image = layout(build(quadrant_ruleset, BuildConfig(binth=1)))
    tampered = _tamper(image, 1, image.words[1] & ~1)
    with pytest.raises(StructuralError) as excinfo:
        validate_image(tampered)
    assert excinfo.value.exit_code == 4


def test_dangling_child_address(quadrant_ruleset):
    image = layout(build(quadrant_ruleset, BuildConfig(binth=1)))
    entries = image.words[0] & ~(((1 << 24) - 1) << 2)
    entries |= ((ENTRY_LEAF | (99 << 2)) & 0xFFFFFFFF)
    with pytest.raises(StructuralError):
        validate_image(_tamper(image, 0, entries))


def test_unreachable_words(quadrant_ruleset):
    image = layout(build(quadrant_ruleset, BuildConfig(binth=1)))
    padded = dataclasses.replace(image, words=image.words + (0,))
    with pytest.raises(StructuralError, match="not reachable"):
        validate_image(padded)
