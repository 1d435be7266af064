import time

import pytest

from src.classification_engine import classify_tree
from src.exceptions import NoCuttableDimensionError
from src.ruleset import Ruleset, classify_linear, gen_synthetic, gen_trace
from src.tree_builder import (
    BuildConfig,
    CutSpec,
    DecisionTree,
    EmptyNode,
    InternalNode,
    LeafNode,
    Region,
    apply_node_merging,
    build,
    precut,
    precut_steps,
    prune_overlapped,
    push_common,
    select_cuts,
    tree_stats,
)

from tests.helpers import make_rule, ruleset_of

FULL_CUTS = (31, 31, 15, 15, 7)


def internal_nodes(tree):
    return [node for node in tree.unique_nodes() if isinstance(node, InternalNode)]


def leaves(tree):
    return [node for node in tree.unique_nodes() if isinstance(node, LeafNode)]


def test_universe_region():
    region = Region.universe()
    assert [region.width(d) for d in range(5)] == [1 << 32, 1 << 32, 1 << 16, 1 << 16, 1 << 8]
    assert region.is_aligned()
    assert region.halve(0, upper=True).intervals[0] == (1 << 31, (1 << 32) - 1)


def test_cut_spec_slices_sip_most_significant():
    cuts = CutSpec(FULL_CUTS, (1, 0, 0, 0, 1))
    assert cuts.child_count == 4
    assert cuts.slices(2) == (1, 0, 0, 0, 0)
    assert cuts.slices(1) == (0, 0, 0, 0, 1)


def test_cut_spec_rejects_bits_below_zero():
    with pytest.raises(ValueError):
        CutSpec((1, 31, 15, 15, 7), (3, 0, 0, 0, 0))


@pytest.mark.parametrize("kwargs", [dict(binth=0), dict(spfac=0.5), dict(index_bit_cap=0),
                                    dict(index_bit_cap=16),
                                    dict(max_replication=0.5)])
def test_build_config_validation(kwargs):
    with pytest.raises(ValueError):
        BuildConfig(**kwargs)


def test_precut_twice_on_source():
    rules = ruleset_of(dict(src='0.0.0.0/2'), dict(src='32.0.0.0/3')).rules
    region, counts = precut(Region.universe(), rules)
    assert counts == (2, 0, 0, 0, 0)
    assert region.intervals[0] == (0, (1 << 30) - 1)


def test_precut_wildcard_rule_makes_no_cut(wildcard_rule):
    region, counts = precut(Region.universe(), [wildcard_rule])
    assert counts == (0, 0, 0, 0, 0)
    assert region == Region.universe()


def test_precut_passes_reduce_area():
    rules = ruleset_of(dict(src='0.0.0.0/2', dst='0.0.0.0/1')).rules
    universe = Region.universe()
    steps = list(precut_steps(universe, rules))
    assert [d for d, _ in steps] == [0, 1, 0]
    assert steps[1][1].area * 4 == universe.area
    assert steps[2][1].area * 2 == steps[1][1].area


def test_select_cuts_two_dimensions():
    rules = ruleset_of(
        dict(src='0.0.0.0/1', dst='0.0.0.0/1'),
        dict(src='0.0.0.0/1', dst='128.0.0.0/1'),
        dict(src='128.0.0.0/1', dst='0.0.0.0/1'),
        dict(src='128.0.0.0/1', dst='128.0.0.0/1'),
    ).rules
    cuts = select_cuts(rules, Region.universe(), BuildConfig(binth=1, spfac=100.0))
    assert cuts.ncuts[0] >= 1 and cuts.ncuts[1] >= 1
    assert cuts.ncuts[2:] == (0, 0, 0)


def test_select_cuts_identical_rules():
    rules = ruleset_of(dict(src='10.0.0.0/8'), dict(src='10.0.0.0/8')).rules
    with pytest.raises(NoCuttableDimensionError):
        select_cuts(rules, Region.universe(), BuildConfig())


def test_select_cuts_point_region():
    region = Region(((5, 5), (5, 5), (1, 1), (1, 1), (6, 6)))
    with pytest.raises(NoCuttableDimensionError):
        select_cuts([make_rule(0)], region, BuildConfig())


def test_select_cuts_protocol_parity():
    rules = ruleset_of(dict(proto=6), dict(proto=7)).rules
    region, _ = precut(Region.universe(), rules)
    assert region.intervals[4] == (6, 7)
    cuts = select_cuts(rules, region, BuildConfig(binth=1))
    assert cuts.ncuts == (0, 0, 0, 0, 1)
    assert cuts.bitpos[4] == 0


def test_select_cuts_respects_index_cap(quadrant_ruleset):
    cuts = select_cuts(quadrant_ruleset.rules, Region.universe(),
                       BuildConfig(binth=1, spfac=100.0, index_bit_cap=1))
    assert cuts.total_bits == 1


def test_build_empty_ruleset():
    tree = build(Ruleset())
    assert isinstance(tree.root, EmptyNode)
    stats = tree_stats(tree)
    assert stats['nodes'] == 1
    assert stats['depth'] == 0
    assert stats['rules'] == 0
    assert stats['words'] == 0


def test_build_small_ruleset_is_single_leaf(small_ruleset):
    tree = build(small_ruleset)
    assert isinstance(tree.root, LeafNode)
    assert [r.rule_id for r in tree.root.rules] == [0, 1, 2]


def test_build_quadrants(quadrant_ruleset):
    tree = build(quadrant_ruleset, BuildConfig(binth=1))
    root = tree.root
    assert isinstance(root, InternalNode)
    assert root.cuts.ncuts[0] == 2
    assert all(isinstance(child, LeafNode) for child in root.children)
    assert [[r.rule_id for r in child.rules] for child in root.children] == [[0], [1], [2], [3]]


def test_leaf_sizes_bounded(generated_ruleset):
    config = BuildConfig(binth=4)
    tree = build(generated_ruleset, config)
    for leaf in leaves(tree):
        assert leaf.oversized or len(leaf.rules) <= config.binth
        assert [r.rule_id for r in leaf.rules] == sorted(r.rule_id for r in leaf.rules)


def test_index_cap_holds_in_every_node(generated_ruleset):
    tree = build(generated_ruleset, BuildConfig(binth=2, index_bit_cap=3))
    assert all(node.cuts.total_bits <= 3 for node in internal_nodes(tree))


def test_child_regions_are_aligned(generated_ruleset):
    tree = build(generated_ruleset)
    for node in internal_nodes(tree):
        assert node.region.is_aligned()
        for i in range(node.cuts.child_count):
            assert node.child_region(i).is_aligned()


def test_prune_wildcard_covers_everything(wildcard_rule):
    other = make_rule(1, src='10.0.0.0/8', dport=(80, 80))
    assert prune_overlapped([wildcard_rule, other], Region.universe()) == [wildcard_rule]


def test_prune_keeps_disjoint_halves():
    rules = ruleset_of(dict(src='0.0.0.0/1'), dict(src='128.0.0.0/1')).rules
    assert prune_overlapped(list(rules), Region.universe()) == list(rules)


def test_prune_within_region():
    rules = ruleset_of(dict(src='10.0.0.0/8'), dict(src='10.1.0.0/16')).rules
    intervals = list(Region.universe().intervals)
    intervals[0] = (0x0A000000, 0x0AFFFFFF)
    assert prune_overlapped(list(rules), Region(tuple(intervals))) == [rules[0]]


def test_prune_keeps_lower_priority_cover():
    rules = ruleset_of(dict(src='10.1.0.0/16'), dict(src='10.0.0.0/8')).rules
    assert prune_overlapped(list(rules), Region.universe()) == list(rules)


def _wildcard_over_hosts():
    specs = [dict()]
    specs += [dict(dst=f'10.0.0.{i}/32') for i in range(1, 10)]
    specs += [dict(dst=f'200.0.0.{i}/32') for i in range(1, 10)]
    return ruleset_of(*specs)


def test_push_moves_common_rule_to_root():
    tree = build(_wildcard_over_hosts(), BuildConfig(push=True))
    assert isinstance(tree.root, InternalNode)
    assert [r.rule_id for r in tree.root.pushed] == [0]
    assert all(0 not in [r.rule_id for r in leaf.rules] for leaf in leaves(tree))


def test_no_push_keeps_rules_in_leaves():
    tree = build(_wildcard_over_hosts(), BuildConfig(push=False))
    assert all(not node.pushed for node in internal_nodes(tree))
    assert any(0 in [r.rule_id for r in leaf.rules] for leaf in leaves(tree))


def test_merging_shares_identical_leaves():
    ruleset = ruleset_of(dict(dport=(80, 80)))
    cuts = CutSpec(FULL_CUTS, (1, 0, 0, 0, 0))
    universe = Region.universe()
    root = InternalNode(cuts, universe, [])
    root.children = [LeafNode([ruleset[0]], root.child_region(i)) for i in range(2)]
    tree = apply_node_merging(DecisionTree(root, ruleset, BuildConfig()))
    assert tree.root.children[0] is tree.root.children[1]
    assert len(tree.unique_nodes()) == 2


def test_merging_leaves_distinct_children_alone(quadrant_ruleset):
    merged = build(quadrant_ruleset, BuildConfig(binth=1, merge=True))
    plain = build(quadrant_ruleset, BuildConfig(binth=1, merge=False))
    assert len(merged.unique_nodes()) == len(plain.unique_nodes()) == 5


def test_merging_never_grows_tree(generated_ruleset):
    merged = build(generated_ruleset, BuildConfig(merge=True))
    plain = build(generated_ruleset, BuildConfig(merge=False))
    assert tree_stats(merged)['words'] <= tree_stats(plain)['words']


def test_single_leaf_stats(small_ruleset):
    stats = tree_stats(build(small_ruleset))
    assert stats['rules'] == 3
    assert stats['leaves'] == 1
    assert stats['replication'] == 1.0


def test_overlap_pruning_never_adds_entries():
    ruleset = gen_synthetic(7, 300, 'fw-like')
    on = tree_stats(build(ruleset, BuildConfig(overlap=True)))
    off = tree_stats(build(ruleset, BuildConfig(overlap=False)))
    assert on['rules'] <= off['rules']


def test_build_is_deterministic():
    ruleset = gen_synthetic(2, 200, 'ipc-like')
    assert tree_stats(build(ruleset)) == tree_stats(build(ruleset))


def _hosts(prefix, count):
    return [dict(dst=f'{prefix}.{i}/32') for i in range(1, count + 1)]


def test_push_happens_before_children_are_cut():
    # 8 hosts per side fit in a leaf only once the wildcard is pushed
    ruleset = ruleset_of(dict(), *_hosts('10.0.0', 8), *_hosts('200.0.0', 8))
    tree = build(ruleset, BuildConfig(binth=8, push=True, merge=False))
    assert [r.rule_id for r in tree.root.pushed] == [0]
    assert all(isinstance(child, LeafNode) and not child.oversized for child in tree.root.children)
    assert [len(child.rules) for child in tree.root.children] == [8, 8]


def test_push_common_keeps_partial_rule_in_its_children():
    ruleset = ruleset_of(dict(), dict(dport=(0, 40000)))
    wildcard, partial = ruleset.rules
    root = InternalNode(CutSpec(FULL_CUTS, (0, 0, 0, 2, 0)), Region.universe(), [])
    root.children = [LeafNode([wildcard, partial], root.child_region(i)) for i in range(3)]
    root.children.append(LeafNode([wildcard], root.child_region(3)))

    push_common(root)
    assert root.pushed == [wildcard]
    assert [[r.rule_id for r in child.rules] for child in root.children[:3]] == [[1], [1], [1]]
    assert isinstance(root.children[3], EmptyNode)


def test_push_common_does_not_recut_shrunk_leaf():
    ruleset = ruleset_of(dict(), *_hosts('10.0.0', 8), dict(dst='200.0.0.1/32'))
    rules = ruleset.rules
    root = InternalNode(CutSpec(FULL_CUTS, (0, 1, 0, 0, 0)), Region.universe(), [])
    lower = LeafNode(list(rules[:9]), root.child_region(0))
    root.children = [lower, LeafNode([rules[0], rules[9]], root.child_region(1))]

    push_common(root)
    assert root.pushed == [rules[0]]
    assert root.children[0] is lower
    assert [r.rule_id for r in lower.rules] == list(range(1, 9))


def test_cut_separating_nothing_becomes_oversized_leaf():
    tree = build(_wildcard_over_hosts(), BuildConfig(push=False, merge=False, overlap=False))
    stuck = [leaf for leaf in leaves(tree) if leaf.oversized]
    assert stuck
    assert all(leaf.rules[0].rule_id == 0 and len(leaf.rules) == 10 for leaf in stuck)


@pytest.mark.parametrize("max_replication", [1.0, 2.0])
@pytest.mark.parametrize("push", [True, False])
def test_stored_entries_within_replication_budget(max_replication, push):
    ruleset = gen_synthetic(5, 400, 'fw-like')
    config = BuildConfig(push=push, merge=False, overlap=False, max_replication=max_replication)
    assert tree_stats(build(ruleset, config))['rules'] <= max_replication * len(ruleset)


@pytest.mark.parametrize("push", [True, False])
def test_fw_like_thousand_rules_builds_quickly(push):
    ruleset = gen_synthetic(1, 1000, 'fw-like')
    start = time.perf_counter()
    tree = build(ruleset, BuildConfig(push=push))
    assert time.perf_counter() - start < 60

    config = tree.config
    for leaf in leaves(tree):
        assert leaf.oversized or len(leaf.rules) <= config.binth
    for entry in gen_trace(ruleset, 3, 300):
        assert classify_tree(tree, entry.header).matched == classify_linear(ruleset, entry.header)
