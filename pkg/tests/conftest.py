import sys

import numpy as np
import pytest

from emhash.store import Store, StoreConfig


def make_store(B: int = 4096, M: int = 1 << 20) -> Store:
    return Store(StoreConfig(B, M))


def random_keys(n: int, seed: int = 0, tag: int = 0, width: int = 12) -> list[bytes]:
    """Distinct byte keys; ``tag`` separates disjoint key spaces."""
    rng = np.random.default_rng(seed)
    hi = rng.integers(0, 1 << 62, n, dtype=np.int64).tolist()
    return [((tag << 94) | (h << 32) | i).to_bytes(width, "big") for i, h in enumerate(hi)]


@pytest.fixture
def store():
    return make_store()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
