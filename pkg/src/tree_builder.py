"""
Tree Builder Module
Builds the modified-HyperCuts decision tree.

Each node is first compacted by pre-cutting (bit-aligned halving while every
rule sits in one half), then cut into a power-of-two number of children
selected by bit position, so lookup needs only bit extraction. Three memory
heuristics run on top: pushing common rules upward, rule-overlap pruning in
leaves, and node merging.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import NoCuttableDimensionError
from .ruleset import DIMENSIONS, FIELD_BITS, Box, Interval, Rule, Ruleset

logger = logging.getLogger(__name__)

NDIMS = len(DIMENSIONS)
MAX_INDEX_BITS = 15


@dataclass(frozen=True)
class Region:
    """Per-dimension closed intervals, dimensions in DIMENSIONS order."""

    intervals: Tuple[Interval, ...]

    @classmethod
    def universe(cls) -> 'Region':
        return cls(tuple((0, (1 << bits) - 1) for bits in FIELD_BITS))

    def width(self, d: int) -> int:
        lo, hi = self.intervals[d]
        return hi - lo + 1

    def log_width(self, d: int) -> int:
        """log2 of the width; widths are powers of two for aligned regions."""
        return self.width(d).bit_length() - 1

    @property
    def area(self) -> int:
        return math.prod(self.width(d) for d in range(NDIMS))

    def is_aligned(self) -> bool:
        for lo, hi in self.intervals:
            width = hi - lo + 1
            if width & (width - 1) or lo % width:
                return False
        return True

    def halve(self, d: int, upper: bool) -> 'Region':
        lo, hi = self.intervals[d]
        mid = lo + (self.width(d) >> 1)
        intervals = list(self.intervals)
        intervals[d] = (mid, hi) if upper else (lo, mid - 1)
        return Region(tuple(intervals))

    def intersects(self, box: Box) -> bool:
        return all(blo <= hi and bhi >= lo
                   for (lo, hi), (blo, bhi) in zip(self.intervals, box))

    def clip(self, box: Box) -> Optional[Box]:
        """Intersection of a rule hypercube with the region, or None."""
        if not self.intersects(box):
            return None
        return tuple((max(lo, blo), min(hi, bhi))
                     for (lo, hi), (blo, bhi) in zip(self.intervals, box))

    def contains_point(self, point: Sequence[int]) -> bool:
        return all(lo <= v <= hi for (lo, hi), v in zip(self.intervals, point))

    def child(self, cuts: 'CutSpec', index: int) -> 'Region':
        """Subregion selected by a child index under the given cuts."""
        intervals = []
        for d, j in enumerate(cuts.slices(index)):
            lo, _ = self.intervals[d]
            child_width = self.width(d) >> cuts.ncuts[d]
            start = lo + j * child_width
            intervals.append((start, start + child_width - 1))
        return Region(tuple(intervals))


@dataclass(frozen=True)
class CutSpec:
    """
    Per-dimension cut description of an internal node.

    bitpos[d] is the most significant extracted bit of field d (0 = LSB) and
    ncuts[d] the number of bits taken from it.
    """

    bitpos: Tuple[int, ...]
    ncuts: Tuple[int, ...]

    def __post_init__(self):
        if len(self.bitpos) != NDIMS or len(self.ncuts) != NDIMS:
            raise ValueError("cut spec needs one entry per dimension")
        for d, (pos, n) in enumerate(zip(self.bitpos, self.ncuts)):
            if n < 0 or n > 15 or not 0 <= pos < FIELD_BITS[d] or pos - n + 1 < 0:
                raise ValueError(f"invalid cut on {DIMENSIONS[d]}: bitpos={pos} ncuts={n}")

    @property
    def total_bits(self) -> int:
        return sum(self.ncuts)

    @property
    def child_count(self) -> int:
        return 1 << self.total_bits

    def slices(self, index: int) -> Tuple[int, ...]:
        """Split a child index into per-dimension slice numbers (sip most significant)."""
        out = [0] * NDIMS
        for d in reversed(range(NDIMS)):
            n = self.ncuts[d]
            out[d] = index & ((1 << n) - 1)
            index >>= n
        return tuple(out)


@dataclass
class BuildConfig:
    """Tree construction knobs."""

    binth: int = 8
    spfac: float = 4.0
    index_bit_cap: int = 8
    merge: bool = True
    overlap: bool = True
    push: bool = True
    # stored rule entries may not exceed max_replication * rule count
    max_replication: float = 4.0

    def __post_init__(self):
        if not self.validate():
            raise ValueError(
                f"invalid build config: binth={self.binth} spfac={self.spfac} "
                f"index_bit_cap={self.index_bit_cap} max_replication={self.max_replication} "
                f"(need binth>=1, spfac>=1, 1<=index_bit_cap<={MAX_INDEX_BITS}, "
                f"max_replication>=1)"
            )

    def validate(self) -> bool:
        return (self.binth >= 1 and self.spfac >= 1
                and 1 <= self.index_bit_cap <= MAX_INDEX_BITS
                and self.max_replication >= 1)


@dataclass(eq=False)
class EmptyNode:
    kind = 'empty'


@dataclass(eq=False)
class LeafNode:
    rules: List[Rule]
    region: Region
    oversized: bool = False
    kind = 'leaf'


@dataclass(eq=False)
class InternalNode:
    cuts: CutSpec
    region: Region
    children: List['Node']
    pushed: List[Rule] = field(default_factory=list)
    kind = 'internal'

    def child_region(self, index: int) -> Region:
        return self.region.child(self.cuts, index)


Node = Union[EmptyNode, LeafNode, InternalNode]


def walk(root: Node, depth: int = 0) -> Iterator[Tuple[Node, int]]:
    stack = [(root, depth)]
    while stack:
        node, level = stack.pop()
        yield node, level
        if isinstance(node, InternalNode):
            for child in reversed(node.children):
                stack.append((child, level + 1))


def stored_rules(node: Node) -> List[Rule]:
    """Rules kept at the node itself: leaf rules or an internal node's pushed list."""
    if isinstance(node, LeafNode):
        return node.rules
    if isinstance(node, InternalNode):
        return node.pushed
    return []


@dataclass(eq=False)
class DecisionTree:
    root: Node
    ruleset: Ruleset
    config: BuildConfig

    def iter_nodes(self) -> Iterator[Tuple[Node, int]]:
        """Depth-first (node, depth) over every reference, shared nodes repeated."""
        return walk(self.root)

    def unique_nodes(self) -> List[Node]:
        """Stored nodes in depth-first order; merged leaves appear once."""
        seen = set()
        nodes = []
        for node, _ in self.iter_nodes():
            if isinstance(node, EmptyNode) or id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
        return nodes


# ---------------------------------------------------------------------------
# Pre-cutting
# ---------------------------------------------------------------------------

def _as_bounds(rules: Sequence[Rule]) -> np.ndarray:
    if not rules:
        return np.zeros((0, NDIMS, 2), dtype=np.int64)
    return np.array([rule.box for rule in rules], dtype=np.int64)


def _precut_steps(region: Region, bounds: np.ndarray) -> Iterator[Tuple[int, Region]]:
    if len(bounds) == 0:
        return
    current = region
    progressed = True
    while progressed:
        progressed = False
        for d in range(NDIMS):
            lo, hi = current.intervals[d]
            if lo == hi:
                continue
            mid = lo + (current.width(d) >> 1)
            if (bounds[:, d, 1] < mid).all():
                current = current.halve(d, upper=False)
            elif (bounds[:, d, 0] >= mid).all():
                current = current.halve(d, upper=True)
            else:
                continue
            progressed = True
            yield d, current


def precut_steps(region: Region, rules: Sequence[Rule]) -> Iterator[Tuple[int, Region]]:
    """
    Yield each pre-cut as (dimension, region after halving).

    Passes walk the dimensions in fixed order and halve each at most once per
    pass, repeating until a whole pass makes no cut.
    """
    return _precut_steps(region, _as_bounds(rules))


def _precut(region: Region, bounds: np.ndarray) -> Tuple[Region, Tuple[int, ...]]:
    counts = [0] * NDIMS
    current = region
    for d, current in _precut_steps(region, bounds):
        counts[d] += 1
    return current, tuple(counts)


def precut(region: Region, rules: Sequence[Rule]) -> Tuple[Region, Tuple[int, ...]]:
    """
    Compact a region by bit-aligned halving.

    A dimension is halved at its most significant free bit when every rule's
    projection lies in the same half; that half is kept.

    Returns:
        (compacted region, number of pre-cuts per dimension)
    """
    return _precut(region, _as_bounds(rules))


# ---------------------------------------------------------------------------
# Cut selection
# ---------------------------------------------------------------------------

def _clip_bounds(region: Region, bounds: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    lo_edge = np.array([lo for lo, _ in region.intervals], dtype=np.int64)
    hi_edge = np.array([hi for _, hi in region.intervals], dtype=np.int64)
    return np.maximum(bounds[:, :, 0], lo_edge), np.minimum(bounds[:, :, 1], hi_edge)


def _slice_ranges(region: Region, clo: np.ndarray, chi: np.ndarray,
                  ncuts: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """First and last child slice each rule touches, per dimension."""
    first = np.zeros_like(clo)
    last = np.zeros_like(chi)
    for d in range(NDIMS):
        if ncuts[d] == 0:
            continue
        lo, _ = region.intervals[d]
        shift = region.log_width(d) - ncuts[d]
        first[:, d] = (clo[:, d] - lo) >> shift
        last[:, d] = (chi[:, d] - lo) >> shift
    return first, last


def _space_estimate(region: Region, clo: np.ndarray, chi: np.ndarray,
                    ncuts: Sequence[int]) -> int:
    first, last = _slice_ranges(region, clo, chi, ncuts)
    replicas = np.prod(last - first + 1, axis=1)
    return int(replicas.sum()) + (1 << sum(ncuts))


def _select_cuts(bounds: np.ndarray, region: Region, config: BuildConfig) -> CutSpec:
    cuttable = [d for d in range(NDIMS) if region.width(d) > 1]
    if not cuttable:
        raise NoCuttableDimensionError("every region dimension has width 1")
    clo, chi = _clip_bounds(region, bounds)
    if len(np.unique(np.concatenate([clo, chi], axis=1), axis=0)) == 1:
        raise NoCuttableDimensionError("all rules are identical within the region")

    distinct = {
        d: len(np.unique(np.stack([clo[:, d], chi[:, d]], axis=1), axis=0))
        for d in cuttable
    }
    mean = sum(distinct.values()) / len(distinct)
    chosen = [d for d in cuttable if distinct[d] >= mean]

    budget = config.spfac * math.sqrt(len(bounds))
    ncuts = [0] * NDIMS
    active = list(chosen)
    while active:
        for d in list(active):
            if sum(ncuts) >= config.index_bit_cap or ncuts[d] >= region.log_width(d):
                active.remove(d)
                continue
            trial = list(ncuts)
            trial[d] += 1
            # The first cut bit is always taken.
            if sum(ncuts) and _space_estimate(region, clo, chi, trial) > budget:
                active.remove(d)
                continue
            ncuts = trial

    bitpos = tuple(max(region.log_width(d) - 1, 0) for d in range(NDIMS))
    return CutSpec(bitpos, tuple(ncuts))


def select_cuts(rules: Sequence[Rule], region: Region, config: BuildConfig) -> CutSpec:
    """
    Choose the cut bits for a node.

    Dimensions whose count of distinct rule projections is at least the mean
    are cut round-robin, one bit at a time, while the space estimate
    (replicated rule entries plus child count) stays within
    spfac * sqrt(len(rules)) and the index stays within index_bit_cap bits.

    Raises:
        NoCuttableDimensionError: If no cut can separate the rules
    """
    return _select_cuts(_as_bounds(rules), region, config)


# ---------------------------------------------------------------------------
# Heuristics
# ---------------------------------------------------------------------------

def _box_covers(outer: Box, inner: Box) -> bool:
    return all(olo <= ilo and ihi <= ohi
               for (olo, ohi), (ilo, ihi) in zip(outer, inner))


def prune_overlapped(rules: Sequence[Rule], region: Region) -> List[Rule]:
    """
    Drop rules that can never match inside the region.

    A rule goes when a single higher-priority rule covers its whole
    intersection with the region.
    """
    kept: List[Rule] = []
    kept_clipped: List[Box] = []
    for rule in rules:
        clipped = region.clip(rule.box)
        if clipped is None:
            continue
        if any(_box_covers(outer, clipped) for outer in kept_clipped):
            continue
        kept.append(rule)
        kept_clipped.append(clipped)
    return kept


def _subtree_rules(node: Node) -> Dict[int, Rule]:
    return {rule.rule_id: rule for sub, _ in walk(node) for rule in stored_rules(sub)}


def _strip(node: Node, ids: set) -> Node:
    if isinstance(node, LeafNode):
        rules = [r for r in node.rules if r.rule_id not in ids]
        if not rules:
            return EmptyNode()
        node.rules = rules
        return node
    if isinstance(node, InternalNode):
        node.pushed = [r for r in node.pushed if r.rule_id not in ids]
        node.children = [_strip(child, ids) for child in node.children]
        if not node.pushed and all(isinstance(c, EmptyNode) for c in node.children):
            return EmptyNode()
    return node


def push_common(node: InternalNode) -> InternalNode:
    """
    Move rules present under every child up into the node's pushed list.

    A rule qualifies when its hypercube intersects all child subregions; it is
    then stored once at the node and removed from the whole child subtrees.
    """
    per_child = [_subtree_rules(child) for child in node.children]
    common = set(per_child[0]).intersection(*per_child[1:])
    moved = [
        per_child[0][rule_id] for rule_id in sorted(common)
        if all(node.child_region(i).intersects(per_child[0][rule_id].box)
               for i in range(len(node.children)))
    ]
    if not moved:
        return node

    moved_ids = {r.rule_id for r in moved}
    node.children = [_strip(child, moved_ids) for child in node.children]
    node.pushed = sorted(node.pushed + moved, key=lambda r: r.priority)
    return node


def _prune_leaves(node: Node, done: set) -> None:
    if isinstance(node, LeafNode):
        if id(node) not in done:
            done.add(id(node))
            node.rules = prune_overlapped(node.rules, node.region)
    elif isinstance(node, InternalNode):
        for child in node.children:
            _prune_leaves(child, done)


def apply_node_merging(tree: DecisionTree) -> DecisionTree:
    """Share one stored leaf among all leaves with the same rule-id sequence."""
    canonical: Dict[Tuple[Tuple[int, ...], bool], LeafNode] = {}

    def merge(node: Node) -> Node:
        if isinstance(node, LeafNode):
            key = (tuple(r.rule_id for r in node.rules), node.oversized)
            return canonical.setdefault(key, node)
        if isinstance(node, InternalNode):
            node.children = [merge(child) for child in node.children]
        return node

    tree.root = merge(tree.root)
    return tree


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

class TreeBuilder:
    """Recursive modified-HyperCuts construction over one ruleset."""

    def __init__(self, ruleset: Ruleset, config: Optional[BuildConfig] = None):
        self.ruleset = ruleset
        self.config = config or BuildConfig()
        self.oversized_leaves = 0

    def build(self) -> DecisionTree:
        start = time.perf_counter()
        indices = np.arange(len(self.ruleset), dtype=np.int64)
        budget = math.ceil(self.config.max_replication * len(self.ruleset))
        root = self._build_node(indices, Region.universe(), budget)
        tree = DecisionTree(root, self.ruleset, self.config)

        if self.config.overlap:
            _prune_leaves(tree.root, set())
        if self.config.merge:
            apply_node_merging(tree)

        if self.oversized_leaves:
            logger.warning(f"{self.oversized_leaves} oversized leaves (no cut made progress or replication budget spent)")
        logger.info(
            f"Built tree for {len(self.ruleset)} rules in "
            f"{time.perf_counter() - start:.2f}s: {len(tree.unique_nodes())} stored nodes"
        )
        return tree

    def _leaf(self, indices: np.ndarray, region: Region, oversized: bool = False) -> LeafNode:
        if oversized:
            self.oversized_leaves += 1
            logger.debug(f"Oversized leaf with {len(indices)} rules")
        return LeafNode([self.ruleset[int(i)] for i in indices], region, oversized)

    def _build_node(self, indices: np.ndarray, region: Region, budget: int) -> Node:
        """
        Build the subtree for the rules at `indices` (ascending priority).

        `budget` caps the stored rule entries of the subtree. A cut is refused,
        and the node becomes an oversized leaf, when it separates nothing (some
        child would keep every rule, or push would empty all children) or when
        the entries it produces exceed the budget. Children receive the budget
        left after pushing, split in proportion to their rule counts.
        """
        if len(indices) == 0:
            return EmptyNode()

        bounds = self.ruleset.bounds[indices]
        region, precuts = _precut(region, bounds)
        if len(indices) <= self.config.binth:
            return self._leaf(indices, region)

        try:
            cuts = _select_cuts(bounds, region, self.config)
        except NoCuttableDimensionError as e:
            logger.debug(f"No cut possible: {e}")
            return self._leaf(indices, region, oversized=True)
        logger.debug(f"{len(indices)} rules, precuts {precuts}, ncuts {cuts.ncuts}")

        clo, chi = _clip_bounds(region, bounds)
        first, last = _slice_ranges(region, clo, chi, cuts.ncuts)
        spanning = np.zeros(len(indices), dtype=bool)
        if self.config.push:
            # a rule spanning every slice of every cut dimension meets all children
            full = np.array([(1 << n) - 1 for n in cuts.ncuts], dtype=np.int64)
            spanning = ((first == 0) & (last == full)).all(axis=1)

        kept, first, last = indices[~spanning], first[~spanning], last[~spanning]
        partitions = []
        for index in range(cuts.child_count):
            slices = np.array(cuts.slices(index), dtype=np.int64)
            inside = ((first <= slices) & (slices <= last)).all(axis=1)
            partitions.append(kept[inside])

        sizes = [len(part) for part in partitions]
        pushed = int(spanning.sum())
        if max(sizes) in (0, len(indices)):
            logger.debug(f"Cut {cuts.ncuts} separates none of {len(indices)} rules")
            return self._leaf(indices, region, oversized=True)
        if sum(sizes) + pushed > budget:
            logger.debug(f"Cut {cuts.ncuts} needs {sum(sizes) + pushed} entries, budget {budget}")
            return self._leaf(indices, region, oversized=True)

        node = InternalNode(cuts, region, [], [self.ruleset[int(i)] for i in indices[spanning]])
        spare, total = budget - pushed, sum(sizes)
        for index, part in enumerate(partitions):
            node.children.append(
                self._build_node(part, node.child_region(index), spare * len(part) // total)
            )
        return node


def build(ruleset: Ruleset, config: Optional[BuildConfig] = None) -> DecisionTree:
    """Build the decision tree for a ruleset."""
    return TreeBuilder(ruleset, config).build()


def tree_stats(tree: DecisionTree) -> Dict[str, Union[int, float]]:
    """
    Summarize a tree.

    Returns:
        Node counts by kind, max/mean depth (mean over leaf and empty
        references), stored rule entries, replication factor and the exact
        memory image size
    """
    from .memory_layout import WORD_BYTES, count_image_words

    internal = leaves = oversized = pushed = leaf_rules = 0
    for node in tree.unique_nodes():
        if isinstance(node, InternalNode):
            internal += 1
            pushed += len(node.pushed)
        else:
            leaves += 1
            oversized += node.oversized
            leaf_rules += len(node.rules)

    empty = 0
    depths = []
    for node, depth in tree.iter_nodes():
        if isinstance(node, EmptyNode):
            empty += 1
        if not isinstance(node, InternalNode):
            depths.append(depth)

    words = sum(count_image_words(tree).values())
    total_rules = len(tree.ruleset)
    return {
        'nodes': internal + leaves + empty,
        'internal': internal,
        'leaves': leaves,
        'empty': empty,
        'oversized': oversized,
        'depth': max(depths) if depths else 0,
        'mean_depth': round(float(np.mean(depths)), 3) if depths else 0.0,
        'rules': leaf_rules + pushed,
        'pushed': pushed,
        'replication': round(leaf_rules / total_rules, 3) if total_rules else 0.0,
        'words': words,
        'bytes': words * WORD_BYTES,
    }
