import numpy as np
import pytest

from ape_anomaly.core import EventSchema, Vocabulary, build_vocabulary
from ape_anomaly.model import ApeModel
from ape_anomaly.synth import SynthConfig


@pytest.fixture
def schema2():
    return EventSchema(("uid", "proc"))


@pytest.fixture
def vocab2(schema2):
    return build_vocabulary([("u1", "p1"), ("u1", "p2"), ("u2", "p1")], schema2)


def make_vocab(arities, counts=None):
    m = len(arities)
    schema = EventSchema(tuple(f"t{i}" for i in range(m)))
    entities = [[f"e{i}_{a}" for a in range(n)] for i, n in enumerate(arities)]
    if counts is None:
        counts = [np.ones(n, dtype=np.int64) for n in arities]
    n_events = int(sum(counts[0])) if m else 0
    return Vocabulary(schema, entities, counts, n_events)


def random_model(rng, arities, d, scale=1.0, mode="weighted"):
    """A model with non-trivial random parameters (UNK rows stay zero)."""
    vocab = make_vocab(arities)
    m = len(arities)
    blocks = []
    for n in arities:
        block = np.zeros((n + 1, d))
        block[:n] = rng.normal(scale=scale, size=(n, d))
        blocks.append(block)
    weights = rng.uniform(0.1, 2.0, size=m * (m - 1) // 2)
    return ApeModel(vocab.schema, vocab, d, np.concatenate(blocks), weights, rng.normal(), mode)


def random_events(rng, arities, n):
    return np.stack([rng.integers(0, a, size=n) for a in arities], axis=1)


@pytest.fixture(scope="session")
def acceptance_synth():
    return SynthConfig(m=5, arities=50, groups=5, rho=0.9, n_events=20000, seed=7)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
