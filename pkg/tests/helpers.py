"""Builders for hand-written rules and headers."""

import ipaddress

from src.ruleset import PacketHeader, PortRange, Prefix, ProtoSpec, Rule, Ruleset


def make_rule(position, src='0.0.0.0/0', dst='0.0.0.0/0', sport=(0, 0xFFFF),
              dport=(0, 0xFFFF), proto=None):
    """Rule at a given position; proto None means wildcard."""
    return Rule(
        priority=position,
        rule_id=position,
        src=Prefix.from_string(src),
        dst=Prefix.from_string(dst),
        sport=PortRange(*sport),
        dport=PortRange(*dport),
        proto=ProtoSpec() if proto is None else ProtoSpec(proto, wildcard=False),
    )


def ruleset_of(*specs):
    """Ruleset from make_rule keyword dicts, in priority order."""
    return Ruleset(tuple(make_rule(i, **spec) for i, spec in enumerate(specs)))


def header(sip='0.0.0.0', dip='0.0.0.0', sport=0, dport=0, proto=0):
    return PacketHeader(int(ipaddress.IPv4Address(sip)), int(ipaddress.IPv4Address(dip)),
                        sport, dport, proto)
