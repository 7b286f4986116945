import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from navmem.store import MemoryEntry, MemoryStore


def random_unit(rng, dim):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def make_entry(rng, dim=32, t_start=0.0, caption="a plain corridor"):
    return MemoryEntry(
        caption=caption,
        embedding=random_unit(rng, dim),
        position=rng.uniform(-50.0, 50.0, 3),
        t_start=t_start,
        t_end=t_start + 3.0,
    )


def build_random_store(n, dim=32, seed=0, duplicate_fraction=0.0):
    """Store of n entries with random unit embeddings; optionally a fraction
    of entries reuse an earlier entry's embedding/position/caption to
    exercise the duplicate-group paths."""
    rng = np.random.default_rng(seed)
    store = MemoryStore(embedding_dim=dim, provider_name="test")
    kept = []
    for i in range(n):
        if kept and rng.random() < duplicate_fraction:
            src = kept[int(rng.integers(len(kept)))]
            entry = MemoryEntry(
                caption=src.caption,
                embedding=src.embedding,
                position=src.position,
                t_start=3.0 * i,
                t_end=3.0 * i + 3.0,
            )
        else:
            entry = make_entry(rng, dim=dim, t_start=3.0 * i, caption=f"caption {i}")
        store.insert(entry)
        kept.append(entry)
    return store


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
