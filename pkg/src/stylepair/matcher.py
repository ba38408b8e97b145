"""Exclusive greedy matching of text queries to an uncurated clip pool.

Each query takes the highest-similarity clip that has not been claimed by
an earlier query; the claimed clip leaves the candidate pool. Processing
order is pinned (ascending query id by default) so runs are reproducible,
and ties always go to the smallest clip id.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .embedcore import EmbeddingSet, pairwise_dots
from .errors import DimMismatch, DuplicateId, KTooLarge, NotNormalized, PoolExhausted

ORDER_QUERY_ID = "query_id"
ORDER_GLOBAL_GREEDY = "global_greedy"
DEFAULT_SHORTLIST_K = 32


@dataclass
class PseudoPairSet:
    """Query-to-clip assignments with their judge-space similarities."""

    query_ids: np.ndarray
    clip_ids: np.ndarray
    sims: np.ndarray
    query_set: str = ""
    clip_set: str = ""
    policy: str = ORDER_QUERY_ID

    def __post_init__(self):
        self.query_ids = np.asarray(self.query_ids, dtype=np.int64)
        self.clip_ids = np.asarray(self.clip_ids, dtype=np.int64)
        self.sims = np.asarray(self.sims, dtype=np.float64)
        if not (len(self.query_ids) == len(self.clip_ids) == len(self.sims)):
            raise ValueError("pair columns must have equal length")
        if len(np.unique(self.clip_ids)) != len(self.clip_ids):
            raise DuplicateId("a clip id is assigned to more than one query")
        if len(np.unique(self.query_ids)) != len(self.query_ids):
            raise DuplicateId("a query id appears in more than one pair")

    def __len__(self) -> int:
        return len(self.query_ids)

    def pairs(self):
        for q, c, s in zip(self.query_ids, self.clip_ids, self.sims):
            yield int(q), int(c), float(s)


def _check_inputs(queries: EmbeddingSet, clips: EmbeddingSet) -> None:
    if queries.dim != clips.dim:
        raise DimMismatch(f"dims differ: {queries.dim} vs {clips.dim}")
    if not queries.normalized or not clips.normalized:
        raise NotNormalized("matching requires normalized query and clip sets")


def _row_topk(row: np.ndarray, k: int) -> np.ndarray:
    # stable sort on -sim keeps equal sims in ascending index (= clip id) order
    return np.argsort(-row, kind="stable")[:k]


def match_exclusive(
    queries: EmbeddingSet,
    clips: EmbeddingSet,
    order: str = ORDER_QUERY_ID,
    shortlist_k: int = DEFAULT_SHORTLIST_K,
    threads: int = 1,
) -> PseudoPairSet:
    """Assign every query its best still-unclaimed clip.

    Under the default id-order policy, each query walks its top-k
    similarity shortlist and falls back to a full rescan once exclusions
    have consumed the shortlist; the result is identical to re-running a
    masked argmax over the full matrix. The global-greedy policy instead
    repeatedly takes the single best remaining (query, clip) cell.
    """
    _check_inputs(queries, clips)
    n_q, n_c = queries.count, clips.count
    if n_q > n_c:
        raise PoolExhausted(f"{n_q} queries but only {n_c} clips")
    if order not in (ORDER_QUERY_ID, ORDER_GLOBAL_GREEDY):
        raise ValueError(f"unknown order policy {order!r}")

    sims = pairwise_dots(queries.data, clips.data, threads=threads)
    taken = np.zeros(n_c, dtype=bool)
    chosen_col = np.empty(n_q, dtype=np.int64)
    chosen_sim = np.empty(n_q, dtype=np.float64)

    if order == ORDER_QUERY_ID:
        k = max(1, min(shortlist_k, n_c))
        for qi in range(n_q):
            col = -1
            for cand in _row_topk(sims[qi], k):
                if not taken[cand]:
                    col = int(cand)
                    break
            if col < 0:
                # shortlist exhausted by exclusions: rescan the full row
                free = np.flatnonzero(~taken)
                col = int(free[np.argmax(sims[qi, free])])
            taken[col] = True
            chosen_col[qi] = col
            chosen_sim[qi] = sims[qi, col]
    else:
        # ties resolve in flattened row-major order: lowest query id, then
        # lowest clip id
        masked = sims.copy()
        for _ in range(n_q):
            flat = np.argmax(masked)
            qi, col = np.unravel_index(flat, masked.shape)
            chosen_col[qi] = col
            chosen_sim[qi] = sims[qi, col]
            taken[col] = True
            masked[qi, :] = -np.inf
            masked[:, col] = -np.inf

    return PseudoPairSet(
        query_ids=queries.ids.copy(),
        clip_ids=clips.ids[chosen_col],
        sims=chosen_sim,
        policy=order,
    )


def match_topk_report(
    queries: EmbeddingSet,
    clips: EmbeddingSet,
    k: int,
    threads: int = 1,
) -> list[list[tuple[int, float]]]:
    """Per-query top-k (clip_id, sim) diagnostics without any exclusion."""
    _check_inputs(queries, clips)
    if k < 1 or k > clips.count:
        raise KTooLarge(f"k={k} outside 1..{clips.count}")
    sims = pairwise_dots(queries.data, clips.data, threads=threads)
    out = []
    for qi in range(queries.count):
        top = _row_topk(sims[qi], k)
        out.append([(int(clips.ids[c]), float(sims[qi, c])) for c in top])
    return out


def write_pseudo_pairs(pairs: PseudoPairSet, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({
            "kind": "pseudo_pairs",
            "query_set": pairs.query_set,
            "clip_set": pairs.clip_set,
            "policy": pairs.policy,
        }) + "\n")
        for q, c, s in pairs.pairs():
            f.write(json.dumps({"query_id": q, "clip_id": c, "sim": s}) + "\n")


def read_pseudo_pairs(path: str | os.PathLike) -> PseudoPairSet:
    with open(path, "r", encoding="utf-8") as f:
        header = json.loads(f.readline())
        if header.get("kind") != "pseudo_pairs":
            raise ValueError(f"{path} is not a pseudo-pair file")
        qs, cs, ss = [], [], []
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            qs.append(obj["query_id"])
            cs.append(obj["clip_id"])
            ss.append(obj["sim"])
    return PseudoPairSet(
        query_ids=np.array(qs, dtype=np.int64),
        clip_ids=np.array(cs, dtype=np.int64),
        sims=np.array(ss, dtype=np.float64),
        query_set=header.get("query_set", ""),
        clip_set=header.get("clip_set", ""),
        policy=header.get("policy", ORDER_QUERY_ID),
    )
