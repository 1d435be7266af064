"""Shared fixtures: small hand-built rulesets and generated rulesets per profile."""

import pytest

from src.ruleset import gen_synthetic, gen_trace
from src.memory_layout import layout
from src.tree_builder import build

from tests.helpers import make_rule, ruleset_of


@pytest.fixture
def wildcard_rule():
    return make_rule(0)


@pytest.fixture
def small_ruleset():
    """Three overlapping rules in priority order."""
    return ruleset_of(
        dict(src='10.0.0.0/8', dst='192.168.1.0/24', dport=(80, 80), proto=6),
        dict(src='10.0.0.0/8'),
        dict(dport=(0, 1023), proto=17),
    )


@pytest.fixture
def quadrant_ruleset():
    """Four rules split by the top two source bits."""
    return ruleset_of(
        dict(src='0.0.0.0/2'),
        dict(src='64.0.0.0/2'),
        dict(src='128.0.0.0/2'),
        dict(src='192.0.0.0/2'),
    )


@pytest.fixture(params=['acl-like', 'fw-like', 'ipc-like'])
def generated_ruleset(request):
    return gen_synthetic(11, 200, request.param)


@pytest.fixture(scope='module')
def acl_image():
    """300-rule acl-like ruleset with its trace, tree and image."""
    ruleset = gen_synthetic(3, 300, 'acl-like')
    tree = build(ruleset)
    return ruleset, gen_trace(ruleset, 4, 500), tree, layout(tree)
