import itertools
import sys

import numpy as np
import pytest

from sfcgan.connectome import Connectome, Domain
from sfcgan.synth import SynthConfig, gen_dataset


def random_fc(n, rng):
    x = np.tanh(rng.normal(size=(n, n)))
    x = (x + x.T) / 2
    np.fill_diagonal(x, 1.0)
    return Connectome(x, Domain.FC)


def random_sc(n, rng):
    x = rng.uniform(0, 1, size=(n, n))
    x = (x + x.T) / 2
    np.fill_diagonal(x, 0.0)
    return Connectome(x, Domain.SC)


def set_partitions(items):
    """All set partitions of ``items`` (Bell-number many)."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def all_graphs(n):
    """Every labelled simple graph on n nodes (n <= 5 keeps this small)."""
    pairs = list(itertools.combinations(range(n), 2))
    for mask in range(1 << len(pairs)):
        a = np.zeros((n, n), dtype=bool)
        for b, (i, j) in enumerate(pairs):
            if mask >> b & 1:
                a[i, j] = a[j, i] = True
        yield a


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """16-node, 12-subject cohort used by fast trainer/CLI tests."""
    out = tmp_path_factory.mktemp("tiny")
    return gen_dataset(SynthConfig(n=16, subjects_per_class=6, seed=3), out)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
