import random
from pathlib import Path

import pytest

from contextmap.model import ContextMap, ItemId, MapItem, SECTION_ORDER

FIXTURES = Path(__file__).parent / "fixtures"

WORDS = (
    "record chapter delimiter user date label count entity offset schema table "
    "index summary field value threshold rate enum numeric location batch line"
).split()


def random_text(rng: random.Random, lo: int = 3, hi: int = 25) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi))) + f" #{rng.randint(0, 10**6)}"


def random_map(rng: random.Random, n_items: int, budget: int = 1024, max_seq: int = 5) -> ContextMap:
    """Map with ``n_items`` items spread over random sections, scores and ages."""
    sections = {k: [] for k in SECTION_ORDER}
    serials = {k.prefix: 1 for k in SECTION_ORDER}
    for _ in range(n_items):
        kind = rng.choice(SECTION_ORDER)
        serial = serials[kind.prefix]
        serials[kind.prefix] += rng.randint(1, 3)  # leave gaps as deletions would
        created = rng.randint(0, max_seq)
        sections[kind].append(
            MapItem(
                ItemId(kind.prefix, serial),
                random_text(rng),
                created,
                created + rng.randint(0, 2),
                rng.randint(-4, 4),
            )
        )
    return ContextMap(budget=budget, sections=sections, next_serial=serials, update_seq=max_seq + 3)


@pytest.fixture
def skeleton() -> str:
    return (FIXTURES / "skeleton.txt").read_text(encoding="utf-8")


@pytest.fixture
def rng():
    return random.Random(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
