import itertools

import numpy as np
import pytest

from pfsdetect.response_data import ResponseMatrix


def make_matrix(cells, sources=None, prefix="r"):
    cells = np.asarray(cells)
    n, j = cells.shape
    ids = tuple(f"{prefix}{i}" for i in range(n))
    sources = tuple(sources) if sources is not None else ("human",) * n
    return ResponseMatrix(ids, sources, tuple(f"q{k}" for k in range(j)), cells)


def brute_guttman(x):
    """Pairs (i < j) with x_i = 0 and x_j = 1, by direct double loop."""
    return sum(1 for i in range(len(x)) for j in range(i + 1, len(x)) if x[i] == 0 and x[j] == 1)


def brute_u3(x, c):
    """U3 from scratch: x and c both easiest-first."""
    r = sum(x)
    if r in (0, len(x)):
        return None
    cs = sorted(c, reverse=True)
    w_max, w_min = sum(cs[:r]), sum(cs[len(cs) - r:])
    if w_max == w_min:
        return None
    w = sum(ci for ci, xi in zip(c, x) if xi)
    return (w_max - w) / (w_max - w_min)


def patterns_with_total(n_items, r):
    out = []
    for ones in itertools.combinations(range(n_items), r):
        x = np.zeros(n_items, dtype=np.int8)
        x[list(ones)] = 1
        out.append(x)
    return np.array(out)


@pytest.fixture
def four_item_p():
    return np.array([0.8, 0.6, 0.4, 0.2])


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
