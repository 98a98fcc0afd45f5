import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings, strategies as st

from nestseq.lattice import LatticeScores
from nestseq.tagging import Mention, Tag, is_well_formed

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def tags_of(names: str):
    """``"O B I E"`` -> tag tuple."""
    return tuple(int(Tag[name]) for name in names.split())


def random_lattice(rng, n, k="X", low=-5.0, high=5.0):
    return LatticeScores(k, rng.uniform(low, high, size=(5, n)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def worked_example():
    with open(FIXTURES / "worked_example.json", encoding="utf-8") as fh:
        data = json.load(fh)
    data["lattice"] = LatticeScores(data["entity_type"], np.array(data["emissions"]))
    return data


def well_formed_tags(max_size=8):
    """Hypothesis strategy over well-formed IOBES sequences."""
    def build(pieces):
        out = []
        for kind, width in pieces:
            if kind == "O":
                out.append(int(Tag.O))
            elif width == 1:
                out.append(int(Tag.S))
            else:
                out.extend([int(Tag.B)] + [int(Tag.I)] * (width - 2) + [int(Tag.E)])
        return tuple(out)

    piece = st.tuples(st.sampled_from(["O", "M"]), st.integers(1, 4))
    return (st.lists(piece, min_size=1, max_size=max_size).map(build)
            .filter(lambda t: is_well_formed(t) and len(t) <= 12))


@st.composite
def nested_mentions(draw, max_n=10, types=("P", "Q"), max_depth=3):
    """Random non-crossing nested mention sets and their sentence length."""
    n = draw(st.integers(1, max_n))
    out = set()

    def fill(a, b, k, depth):
        i = a
        while i < b:
            if draw(st.booleans()):
                width = draw(st.integers(1, b - i))
                out.add(Mention(i, i + width, k))
                if depth < max_depth and width > 1 and draw(st.booleans()):
                    lo = draw(st.integers(i, i + width - 1))
                    hi = draw(st.integers(lo + 1, i + width))
                    if (lo, hi) != (i, i + width):
                        fill(lo, hi, k, depth + 1)
                i += width
            else:
                i += 1

    for k in types:
        fill(0, n, k, 1)
    return n, sorted(out)


def peeling_lattice(n, k="X"):
    """Worst case for nested decoding: the whole sentence is a mention and
    every runner-up keeps the same start while dropping the last token."""
    p = np.zeros((5, n))
    p[Tag.B] = -100.0
    p[Tag.B, 0] = 10.0
    p[Tag.I] = 2.0
    p[Tag.E] = np.arange(n, dtype=float)
    p[Tag.S] = -100.0
    return LatticeScores(k, p)


# Acceptance results collected by test_acceptance.py and echoed after the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
