from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pytest

from kcomplex.matrix import ActivityMatrix, EditEvent, prune
from kcomplex.rca import advantage_from_dense

FIXTURES = Path(__file__).parent / "fixtures"
INGEST_FIXTURES = FIXTURES / "ingest"


def ev(lang, art, editor="u", ts="2015-06-01T00:00:00Z", checksum=None, is_bot=False, tags=()):
    t = datetime.strptime(ts, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)
    return EditEvent(lang, art, editor, t, checksum, is_bot, frozenset(tags))


def dense_activity(E):
    E = np.asarray(E)
    langs = [f"l{i:03d}" for i in range(E.shape[0])]
    arts = [f"a{j:03d}" for j in range(E.shape[1])]
    return ActivityMatrix(langs, arts, E)


def random_counts(rng, n_lang, n_art, density):
    E = rng.integers(1, 20, size=(n_lang, n_art)) * (rng.random((n_lang, n_art)) < density)
    E[:, 0] += 1  # keep rows nonempty
    E[0, :] += 1  # keep columns nonempty
    return E


def random_advantage(rng, n_lang, n_art, density):
    """Random pruned binary matrix as an AdvantageMatrix."""
    while True:
        bits = (rng.random((n_lang, n_art)) < density).astype(int)
        bits = bits[bits.sum(1) > 0][:, bits[bits.sum(1) > 0].sum(0) > 0]
        if bits.shape[0] >= 2 and bits.shape[1] >= 2:
            return advantage_from_dense(bits)


class FakeClock:
    def __init__(self):
        self.t = 0.0
        self.sleeps = []

    def now(self):
        return self.t

    def sleep(self, seconds):
        self.sleeps.append(seconds)
        self.t += max(0.0, seconds)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def clock():
    return FakeClock()
