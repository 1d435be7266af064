"""
Ruleset Module
Five-tuple filter rules, ClassBench parsing and formatting, synthetic ruleset
and trace generation, and the linear-search classification oracle.
"""

import ipaddress
import logging
import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import ClassBenchParseError, TraceParseError

logger = logging.getLogger(__name__)

# Classification dimensions, in the fixed order used everywhere.
DIMENSIONS: Tuple[str, ...] = ('sip', 'dip', 'sport', 'dport', 'proto')
FIELD_BITS: Tuple[int, ...] = (32, 32, 16, 16, 8)

MAX_RULES = 65536
NO_MATCH = -1

Interval = Tuple[int, int]
Box = Tuple[Interval, Interval, Interval, Interval, Interval]


@dataclass(frozen=True)
class Prefix:
    """IPv4 prefix in canonical form (host bits cleared)."""

    addr: int
    length: int

    def __post_init__(self):
        if not 0 <= self.length <= 32:
            raise ValueError(f"prefix length out of range: {self.length}")
        if not 0 <= self.addr < 1 << 32:
            raise ValueError(f"address out of range: {self.addr}")
        if self.addr & self.host_mask:
            raise ValueError(f"prefix {self} has host bits set")

    @classmethod
    def canonical(cls, addr: int, length: int) -> 'Prefix':
        """Build a prefix, clearing the address bits below the prefix length."""
        host_mask = (1 << (32 - length)) - 1 if 0 <= length <= 32 else 0
        return cls(addr & ~host_mask & 0xFFFFFFFF, length)

    @classmethod
    def from_string(cls, text: str) -> 'Prefix':
        """Parse dotted-quad prefix notation, e.g. '10.0.0.1/8' -> 10.0.0.0/8."""
        network = ipaddress.IPv4Network(text, strict=False)
        return cls(int(network.network_address), network.prefixlen)

    @property
    def host_mask(self) -> int:
        return (1 << (32 - self.length)) - 1

    @property
    def interval(self) -> Interval:
        return self.addr, self.addr | self.host_mask

    def contains(self, addr: int) -> bool:
        return (addr & ~self.host_mask & 0xFFFFFFFF) == self.addr

    def __str__(self) -> str:
        return f"{ipaddress.IPv4Address(self.addr)}/{self.length}"


@dataclass(frozen=True)
class PortRange:
    """Inclusive 16-bit port range."""

    lo: int = 0
    hi: int = 0xFFFF

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi <= 0xFFFF:
            raise ValueError(f"invalid port range [{self.lo}, {self.hi}]")

    @property
    def interval(self) -> Interval:
        return self.lo, self.hi

    @property
    def is_wildcard(self) -> bool:
        return self.lo == 0 and self.hi == 0xFFFF

    def contains(self, port: int) -> bool:
        return self.lo <= port <= self.hi


@dataclass(frozen=True)
class ProtoSpec:
    """Protocol number with a one-bit wildcard mask."""

    value: int = 0
    wildcard: bool = True

    def __post_init__(self):
        if not 0 <= self.value <= 0xFF:
            raise ValueError(f"protocol out of range: {self.value}")
        if self.wildcard and self.value:
            # Wildcards are stored with value 0.
            object.__setattr__(self, 'value', 0)

    @property
    def interval(self) -> Interval:
        return (0, 0xFF) if self.wildcard else (self.value, self.value)

    def contains(self, proto: int) -> bool:
        return self.wildcard or proto == self.value


@dataclass(frozen=True)
class PacketHeader:
    """The five header fields a packet is classified on."""

    sip: int
    dip: int
    sport: int
    dport: int
    proto: int

    def __post_init__(self):
        for name, bits, value in zip(DIMENSIONS, FIELD_BITS, self.point):
            if not 0 <= value < 1 << bits:
                raise ValueError(f"header field {name} out of range: {value}")

    @property
    def point(self) -> Tuple[int, int, int, int, int]:
        return self.sip, self.dip, self.sport, self.dport, self.proto

    def __str__(self) -> str:
        return (f"{ipaddress.IPv4Address(self.sip)} {ipaddress.IPv4Address(self.dip)} "
                f"{self.sport} {self.dport} {self.proto}")


@dataclass(frozen=True)
class Rule:
    """A five-tuple filter. Lower priority ordinal wins."""

    priority: int
    rule_id: int
    src: Prefix = Prefix(0, 0)
    dst: Prefix = Prefix(0, 0)
    sport: PortRange = PortRange()
    dport: PortRange = PortRange()
    proto: ProtoSpec = ProtoSpec()

    def __post_init__(self):
        if not 0 <= self.rule_id <= 0xFFFF:
            raise ValueError(f"rule id does not fit in 16 bits: {self.rule_id}")
        if self.priority < 0:
            raise ValueError(f"negative priority: {self.priority}")

    @cached_property
    def box(self) -> Box:
        """Hypercube of the rule, one inclusive interval per dimension."""
        return (self.src.interval, self.dst.interval, self.sport.interval,
                self.dport.interval, self.proto.interval)


@dataclass(frozen=True)
class TraceEntry:
    """One trace line: a header and, optionally, the rule id it should match."""

    header: PacketHeader
    expected: Optional[int] = None


@dataclass(frozen=True)
class Ruleset:
    """Priority-ordered rules; rule i has priority i."""

    rules: Tuple[Rule, ...] = ()

    def __post_init__(self):
        if len(self.rules) > MAX_RULES:
            raise ValueError(f"ruleset holds {len(self.rules)} rules, limit is {MAX_RULES}")
        seen = set()
        for position, rule in enumerate(self.rules):
            if rule.priority != position:
                raise ValueError(
                    f"rule {rule.rule_id} has priority {rule.priority}, expected {position}"
                )
            if rule.rule_id in seen:
                raise ValueError(f"duplicate rule id {rule.rule_id}")
            seen.add(rule.rule_id)

    @classmethod
    def from_rules(cls, rules: Sequence[Rule]) -> 'Ruleset':
        return cls(tuple(rules))

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self) -> Iterator[Rule]:
        return iter(self.rules)

    def __getitem__(self, index: int) -> Rule:
        return self.rules[index]

    @cached_property
    def bounds(self) -> np.ndarray:
        """Rule hypercubes as an (N, 5, 2) int64 array."""
        if not self.rules:
            return np.zeros((0, len(DIMENSIONS), 2), dtype=np.int64)
        return np.array([rule.box for rule in self.rules], dtype=np.int64)

    @cached_property
    def _ids(self) -> np.ndarray:
        return np.array([rule.rule_id for rule in self.rules], dtype=np.int64)

    def profile_summary(self) -> Dict[str, float]:
        """Wildcard counts and mean prefix lengths, for reports."""
        total = len(self.rules)
        if total == 0:
            return {'rules': 0}
        src_len = np.array([r.src.length for r in self.rules])
        dst_len = np.array([r.dst.length for r in self.rules])
        return {
            'rules': total,
            'wildcard_src': int((src_len == 0).sum()),
            'wildcard_dst': int((dst_len == 0).sum()),
            'wildcard_sport': sum(1 for r in self.rules if r.sport.is_wildcard),
            'wildcard_dport': sum(1 for r in self.rules if r.dport.is_wildcard),
            'wildcard_proto': sum(1 for r in self.rules if r.proto.wildcard),
            'mean_src_len': round(float(src_len.mean()), 2),
            'mean_dst_len': round(float(dst_len.mean()), 2),
        }


def matches(rule: Rule, header: PacketHeader) -> bool:
    """True iff the header falls inside every field of the rule."""
    return (rule.src.contains(header.sip)
            and rule.dst.contains(header.dip)
            and rule.sport.contains(header.sport)
            and rule.dport.contains(header.dport)
            and rule.proto.contains(header.proto))


def classify_linear(ruleset: Ruleset, header: PacketHeader) -> Optional[int]:
    """
    Linear-search oracle: id of the highest-priority matching rule.

    Args:
        ruleset: Rules in priority order
        header: Packet header to classify

    Returns:
        Rule id of the first matching rule, or None when nothing matches
    """
    if not ruleset.rules:
        return None
    bounds = ruleset.bounds
    point = np.asarray(header.point, dtype=np.int64)
    hits = ((bounds[:, :, 0] <= point) & (point <= bounds[:, :, 1])).all(axis=1)
    first = np.flatnonzero(hits)
    if first.size == 0:
        return None
    return int(ruleset._ids[first[0]])


# ---------------------------------------------------------------------------
# ClassBench format
# ---------------------------------------------------------------------------

_FILTER_LINE = re.compile(
    r'^@\s*(?P<src>\S+?)/(?P<src_len>\d+)\s+'
    r'(?P<dst>\S+?)/(?P<dst_len>\d+)\s+'
    r'(?P<sp_lo>\d+)\s*:\s*(?P<sp_hi>\d+)\s+'
    r'(?P<dp_lo>\d+)\s*:\s*(?P<dp_hi>\d+)\s+'
    r'0x(?P<proto>[0-9a-fA-F]{1,2})/0x(?P<mask>[0-9a-fA-F]{1,2})'
    r'(?:\s+.*)?$'
)


def _parse_prefix(addr_text: str, len_text: str, line_no: int) -> Prefix:
    try:
        addr = int(ipaddress.IPv4Address(addr_text))
    except ipaddress.AddressValueError as e:
        raise ClassBenchParseError(f"invalid address {addr_text!r}: {e}", line_no)
    length = int(len_text)
    if length > 32:
        raise ClassBenchParseError(f"prefix length {length} exceeds 32", line_no)
    return Prefix.canonical(addr, length)


def _parse_ports(lo_text: str, hi_text: str, line_no: int) -> PortRange:
    lo, hi = int(lo_text), int(hi_text)
    if hi > 0xFFFF or lo > hi:
        raise ClassBenchParseError(f"invalid port range {lo} : {hi}", line_no)
    return PortRange(lo, hi)


def parse_classbench(text: str) -> Ruleset:
    """
    Parse a ClassBench filter file.

    Priority and rule id both equal the rule's position in the file. Blank
    lines and '#' comments are skipped; trailing fields after the protocol
    are ignored.

    Raises:
        ClassBenchParseError: On a malformed line, a protocol mask other than
            0x00/0xFF, or more than 65536 rules
    """
    rules: List[Rule] = []
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        if not line.startswith('@'):
            raise ClassBenchParseError("filter line must start with '@'", line_no)
        m = _FILTER_LINE.match(line)
        if m is None:
            raise ClassBenchParseError(f"malformed filter line {line!r}", line_no)
        if len(rules) == MAX_RULES:
            raise ClassBenchParseError(f"more than {MAX_RULES} rules", line_no)

        mask = int(m['mask'], 16)
        if mask == 0xFF:
            proto = ProtoSpec(int(m['proto'], 16), wildcard=False)
        elif mask == 0x00:
            proto = ProtoSpec()
        else:
            raise ClassBenchParseError(f"unsupported protocol mask 0x{mask:02X}", line_no)

        position = len(rules)
        rules.append(Rule(
            priority=position,
            rule_id=position,
            src=_parse_prefix(m['src'], m['src_len'], line_no),
            dst=_parse_prefix(m['dst'], m['dst_len'], line_no),
            sport=_parse_ports(m['sp_lo'], m['sp_hi'], line_no),
            dport=_parse_ports(m['dp_lo'], m['dp_hi'], line_no),
            proto=proto,
        ))

    logger.info(f"Parsed {len(rules)} rules")
    return Ruleset(tuple(rules))


def format_rule(rule: Rule) -> str:
    """One ClassBench line; the protocol mask is 0x00 for a wildcard and 0xFF otherwise."""
    mask = 0x00 if rule.proto.wildcard else 0xFF
    return (f"@{rule.src}\t{rule.dst}\t"
            f"{rule.sport.lo} : {rule.sport.hi}\t{rule.dport.lo} : {rule.dport.hi}\t"
            f"0x{rule.proto.value:02X}/0x{mask:02X}")


def format_classbench(ruleset: Ruleset) -> str:
    """Render a ruleset as ClassBench filter lines (no trailing newline)."""
    return "\n".join(format_rule(rule) for rule in ruleset)


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------

def parse_trace(text: str) -> List[TraceEntry]:
    """
    Parse a trace: 'sip dip sport dport proto [expected]' per line, decimal.

    An expected id of -1 means the packet should match nothing.
    """
    trace: List[TraceEntry] = []
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        fields = line.split()
        if len(fields) not in (5, 6):
            raise TraceParseError(f"expected 5 or 6 fields, got {len(fields)}", line_no)
        try:
            values = [int(f) for f in fields]
        except ValueError:
            raise TraceParseError(f"non-integer field in {line!r}", line_no)
        try:
            header = PacketHeader(*values[:5])
        except ValueError as e:
            raise TraceParseError(str(e), line_no)
        expected = None
        if len(values) == 6:
            expected = values[5]
            if expected < NO_MATCH or expected > 0xFFFF:
                raise TraceParseError(f"invalid expected rule id {expected}", line_no)
        trace.append(TraceEntry(header, expected))
    return trace


def format_trace(trace: Sequence[TraceEntry]) -> str:
    """Render trace lines as five header fields plus the expected id when known."""
    lines = []
    for entry in trace:
        line = " ".join(str(v) for v in entry.header.point)
        if entry.expected is not None:
            line += f" {entry.expected}"
        lines.append(line)
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GenerationProfile:
    """Field distributions loosely shaped after the ClassBench seed families."""

    src_wildcard: float
    dst_wildcard: float
    src_lengths: Tuple[int, ...]
    src_weights: Tuple[float, ...]
    dst_lengths: Tuple[int, ...]
    dst_weights: Tuple[float, ...]
    # [wildcard, exact, range] probabilities per port field
    sport_mix: Tuple[float, float, float]
    dport_mix: Tuple[float, float, float]
    # [tcp, udp, icmp, gre, wildcard]
    proto_mix: Tuple[float, float, float, float, float]


PROFILES: Dict[str, GenerationProfile] = {
    'acl-like': GenerationProfile(
        src_wildcard=0.05, dst_wildcard=0.01,
        src_lengths=(8, 16, 24, 28, 32), src_weights=(0.05, 0.15, 0.30, 0.20, 0.30),
        dst_lengths=(16, 24, 30, 32), dst_weights=(0.10, 0.30, 0.20, 0.40),
        sport_mix=(0.90, 0.02, 0.08), dport_mix=(0.20, 0.60, 0.20),
        proto_mix=(0.70, 0.20, 0.00, 0.00, 0.10),
    ),
    'fw-like': GenerationProfile(
        src_wildcard=0.40, dst_wildcard=0.25,
        src_lengths=(8, 16, 24, 32), src_weights=(0.20, 0.30, 0.30, 0.20),
        dst_lengths=(16, 24, 32), dst_weights=(0.30, 0.30, 0.40),
        sport_mix=(0.70, 0.10, 0.20), dport_mix=(0.30, 0.40, 0.30),
        proto_mix=(0.45, 0.25, 0.05, 0.00, 0.25),
    ),
    'ipc-like': GenerationProfile(
        src_wildcard=0.15, dst_wildcard=0.10,
        src_lengths=(8, 12, 16, 24, 32), src_weights=(0.10, 0.10, 0.25, 0.30, 0.25),
        dst_lengths=(8, 12, 16, 24, 32), dst_weights=(0.10, 0.10, 0.25, 0.30, 0.25),
        sport_mix=(0.60, 0.20, 0.20), dport_mix=(0.20, 0.50, 0.30),
        proto_mix=(0.50, 0.30, 0.05, 0.05, 0.10),
    ),
}

_WELL_KNOWN_PORTS = (20, 21, 22, 23, 25, 53, 80, 110, 123, 143, 161, 443,
                     993, 995, 1433, 3306, 3389, 5060, 8080, 8443)
_PROTOCOLS = (6, 17, 1, 47)


def _exact_fraction(rng: np.random.Generator, n: int, fraction: float) -> np.ndarray:
    """Boolean mask with exactly ceil(fraction * n) set positions."""
    mask = np.zeros(n, dtype=bool)
    mask[rng.permutation(n)[:math.ceil(fraction * n)]] = True
    return mask


def _gen_prefixes(rng: np.random.Generator, n: int, wildcard: np.ndarray,
                  lengths: Tuple[int, ...], weights: Tuple[float, ...]) -> List[Prefix]:
    # Addresses cluster around a small pool of sites so prefixes nest and overlap.
    sites = rng.integers(0, 1 << 32, size=max(4, n // 16 + 1), dtype=np.int64)
    site_pick = rng.integers(0, len(sites), size=n)
    low_bits = rng.integers(0, 1 << 16, size=n, dtype=np.int64)
    length_pick = rng.choice(lengths, size=n, p=weights)
    prefixes = []
    for i in range(n):
        if wildcard[i]:
            prefixes.append(Prefix(0, 0))
            continue
        addr = (int(sites[site_pick[i]]) & 0xFFFF0000) | int(low_bits[i])
        prefixes.append(Prefix.canonical(addr, int(length_pick[i])))
    return prefixes


def _gen_ports(rng: np.random.Generator, n: int,
               mix: Tuple[float, float, float]) -> List[PortRange]:
    kinds = rng.choice(3, size=n, p=mix)
    exact = rng.choice(_WELL_KNOWN_PORTS, size=n)
    starts = rng.integers(0, 1 << 16, size=n)
    spans = rng.integers(0, 4096, size=n)
    shapes = rng.integers(0, 3, size=n)
    ports = []
    for i in range(n):
        if kinds[i] == 0:
            ports.append(PortRange())
        elif kinds[i] == 1:
            ports.append(PortRange(int(exact[i]), int(exact[i])))
        elif shapes[i] == 0:
            ports.append(PortRange(1024, 0xFFFF))
        elif shapes[i] == 1:
            ports.append(PortRange(0, 1023))
        else:
            lo = int(starts[i])
            ports.append(PortRange(lo, min(0xFFFF, lo + int(spans[i]))))
    return ports


def gen_synthetic(seed: int, n: int, profile: str) -> Ruleset:
    """
    Generate a deterministic synthetic ruleset.

    Args:
        seed: 64-bit seed; identical (seed, n, profile) give identical rulesets
        n: Number of rules (at most 65536)
        profile: One of 'acl-like', 'fw-like', 'ipc-like'

    Returns:
        Ruleset with priority = id = position
    """
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    if not 0 <= n <= MAX_RULES:
        raise ValueError(f"rule count must be in 0..{MAX_RULES}, got {n}")
    shape = PROFILES[profile]
    rng = np.random.default_rng(seed)

    src = _gen_prefixes(rng, n, _exact_fraction(rng, n, shape.src_wildcard),
                        shape.src_lengths, shape.src_weights)
    dst = _gen_prefixes(rng, n, _exact_fraction(rng, n, shape.dst_wildcard),
                        shape.dst_lengths, shape.dst_weights)
    sport = _gen_ports(rng, n, shape.sport_mix)
    dport = _gen_ports(rng, n, shape.dport_mix)
    proto_pick = rng.choice(len(shape.proto_mix), size=n, p=shape.proto_mix)

    rules = []
    for i in range(n):
        pick = int(proto_pick[i])
        proto = ProtoSpec() if pick == len(_PROTOCOLS) else ProtoSpec(_PROTOCOLS[pick], False)
        rules.append(Rule(i, i, src[i], dst[i], sport[i], dport[i], proto))

    logger.info(f"Generated {n} {profile} rules (seed {seed})")
    return Ruleset(tuple(rules))


def gen_trace(ruleset: Ruleset, seed: int, m: int) -> List[TraceEntry]:
    """
    Generate m headers, each a random point inside a randomly chosen rule.

    The expected id of each entry is the oracle's answer, which may be a
    higher-priority rule than the one sampled. An empty ruleset yields
    uniformly random headers expected to match nothing.
    """
    rng = np.random.default_rng(seed)
    if m <= 0:
        return []
    if not ruleset.rules:
        upper = np.array([1 << bits for bits in FIELD_BITS], dtype=np.int64)
        points = rng.integers(0, upper, size=(m, len(FIELD_BITS)), dtype=np.int64)
        return [TraceEntry(PacketHeader(*(int(v) for v in row)), NO_MATCH) for row in points]

    picks = rng.integers(0, len(ruleset), size=m)
    bounds = ruleset.bounds[picks]
    points = rng.integers(bounds[:, :, 0], bounds[:, :, 1] + 1, dtype=np.int64)
    trace = []
    for row in points:
        header = PacketHeader(*(int(v) for v in row))
        found = classify_linear(ruleset, header)
        trace.append(TraceEntry(header, NO_MATCH if found is None else found))
    return trace
