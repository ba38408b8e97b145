import json
import os

import numpy as np
import pytest

from stylepair.embedcore import EmbeddingSet, normalize

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden")


def make_set(rows, ids=None, unit=True) -> EmbeddingSet:
    """EmbeddingSet from a plain nested list / array; unit-normalizes by default."""
    data = np.asarray(rows, dtype=np.float32)
    if ids is None:
        ids = np.arange(data.shape[0], dtype=np.int64)
    es = EmbeddingSet(ids=np.asarray(ids, dtype=np.int64), data=data)
    return normalize(es) if unit else es


def random_unit_set(rng, count, dim, ids=None) -> EmbeddingSet:
    return make_set(rng.normal(size=(count, dim)), ids=ids)


def golden(name: str, computed: dict, rel_tol: float = 1e-9) -> dict:
    """Load a recorded fixture, writing `computed` on the first run.

    Returns the recorded values; numeric fields of `computed` must match
    them within rel_tol on later runs.
    """
    os.makedirs(GOLDEN_DIR, exist_ok=True)
    path = os.path.join(GOLDEN_DIR, f"{name}.json")
    if not os.path.exists(path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(computed, f, indent=2, sort_keys=True)
            f.write("\n")
        return computed
    with open(path, "r", encoding="utf-8") as f:
        recorded = json.load(f)
    assert set(recorded) == set(computed), f"{name}: fixture keys changed"
    for key, want in recorded.items():
        got = computed[key]
        if isinstance(want, (int, float)) and not isinstance(want, bool):
            assert got == pytest.approx(want, rel=rel_tol, abs=1e-12), (
                f"{name}.{key}: recorded {want}, computed {got}"
            )
        else:
            assert got == want, f"{name}.{key}: recorded {want!r}, computed {got!r}"
    return recorded
