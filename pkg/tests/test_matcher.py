import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stylepair.errors import DimMismatch, KTooLarge, PoolExhausted
from stylepair.matcher import (
    ORDER_GLOBAL_GREEDY,
    PseudoPairSet,
    match_exclusive,
    match_topk_report,
    read_pseudo_pairs,
    write_pseudo_pairs,
)

from conftest import make_set, random_unit_set


def masked_argmax_reference(queries, clips):
    """Naive oracle: full matrix, per-query argmax over unassigned columns."""
    sims = queries.data.astype(np.float64) @ clips.data.astype(np.float64).T
    taken = np.zeros(clips.count, dtype=bool)
    cols, vals = [], []
    for qi in range(queries.count):
        row = sims[qi].copy()
        row[taken] = -np.inf
        col = int(np.argmax(row))   # first max = smallest clip id
        taken[col] = True
        cols.append(col)
        vals.append(sims[qi, col])
    return np.array(cols), np.array(vals)


def global_greedy_reference(queries, clips):
    """Repeatedly take the single best remaining (query, clip) cell."""
    sims = queries.data.astype(np.float64) @ clips.data.astype(np.float64).T
    masked = sims.copy()
    cols = np.empty(queries.count, dtype=np.int64)
    vals = np.empty(queries.count, dtype=np.float64)
    for _ in range(queries.count):
        qi, col = np.unravel_index(np.argmax(masked), masked.shape)
        cols[qi] = col
        vals[qi] = sims[qi, col]
        masked[qi, :] = -np.inf
        masked[:, col] = -np.inf
    return cols, vals


class TestMatchExclusive:
    def test_single_query_single_clip(self):
        q = make_set([[1.0, 0.0]])
        c = make_set([[1.0, 0.0]])
        out = match_exclusive(q, c)
        assert list(out.pairs()) == [(0, 0, pytest.approx(1.0))]

    def test_greedy_hand_trace(self):
        # identical queries: the first takes the best clip, the second the runner-up
        q = make_set([[1.0, 0.0], [1.0, 0.0]])
        c = make_set([[1.0, 0.0], [0.9, 0.43589]])
        out = match_exclusive(q, c)
        pairs = list(out.pairs())
        assert pairs[0][:2] == (0, 0)
        assert pairs[0][2] == pytest.approx(1.0, abs=1e-6)
        assert pairs[1][:2] == (1, 1)
        assert pairs[1][2] == pytest.approx(0.9, abs=1e-6)

    def test_matches_masked_argmax_oracle(self):
        rng = np.random.default_rng(0)
        q = random_unit_set(rng, 20, 6)
        c = random_unit_set(rng, 60, 6)
        out = match_exclusive(q, c)
        cols, vals = masked_argmax_reference(q, c)
        assert np.array_equal(out.clip_ids, c.ids[cols])
        assert np.array_equal(out.sims, vals)

    def test_shortlist_fallback_still_exact(self):
        # tiny shortlist forces the rescan path on most queries
        rng = np.random.default_rng(1)
        q = random_unit_set(rng, 40, 4)
        c = random_unit_set(rng, 45, 4)
        out = match_exclusive(q, c, shortlist_k=1)
        cols, vals = masked_argmax_reference(q, c)
        assert np.array_equal(out.clip_ids, c.ids[cols])
        assert np.array_equal(out.sims, vals)

    def test_pool_exhausted(self):
        q = make_set([[1.0, 0.0], [0.0, 1.0]])
        c = make_set([[1.0, 0.0]])
        with pytest.raises(PoolExhausted):
            match_exclusive(q, c)

    def test_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            match_exclusive(make_set([[1.0, 0.0]]), make_set([[1.0, 0.0, 0.0]]))

    def test_tie_breaks_to_smallest_clip_id(self):
        q = make_set([[1.0, 0.0]])
        c = make_set([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]], ids=[4, 7, 9])
        out = match_exclusive(q, c)
        assert out.clip_ids[0] == 4

    def test_monotone_degradation_for_identical_queries(self):
        rng = np.random.default_rng(2)
        q = make_set(np.tile(rng.normal(size=(1, 5)), (12, 1)))
        c = random_unit_set(rng, 30, 5)
        out = match_exclusive(q, c)
        assert np.all(np.diff(out.sims) <= 1e-12)

    def test_clip_relabeling_keeps_assigned_content(self):
        rng = np.random.default_rng(3)
        q = random_unit_set(rng, 8, 5)
        raw = rng.normal(size=(20, 5)).astype(np.float32)
        c1 = make_set(raw)
        perm = rng.permutation(20)
        c2 = make_set(raw[perm])   # same vectors, shuffled into different ids
        out1 = match_exclusive(q, c1)
        out2 = match_exclusive(q, c2)
        for (qa, ca, _), (qb, cb, _) in zip(out1.pairs(), out2.pairs()):
            assert qa == qb
            assert np.array_equal(c1.data[ca], c2.data[cb])

    def test_pair_sims_are_true_cosines(self):
        from stylepair.embedcore import cosine_sim
        rng = np.random.default_rng(9)
        q = random_unit_set(rng, 10, 5)
        c = random_unit_set(rng, 16, 5)
        out = match_exclusive(q, c)
        for qid, cid, sim in out.pairs():
            qi = int(np.searchsorted(q.ids, qid))
            ci = int(np.searchsorted(c.ids, cid))
            assert sim == pytest.approx(cosine_sim(q.data[qi], c.data[ci]), abs=1e-6)

    def test_global_greedy_matches_reference(self):
        rng = np.random.default_rng(4)
        q = random_unit_set(rng, 15, 5)
        c = random_unit_set(rng, 25, 5)
        out = match_exclusive(q, c, order=ORDER_GLOBAL_GREEDY)
        cols, vals = global_greedy_reference(q, c)
        assert np.array_equal(out.clip_ids, c.ids[cols])
        assert np.array_equal(out.sims, vals)

    def test_global_greedy_never_worse_on_first_pick(self):
        rng = np.random.default_rng(5)
        q = random_unit_set(rng, 10, 4)
        c = random_unit_set(rng, 20, 4)
        greedy = match_exclusive(q, c, order=ORDER_GLOBAL_GREEDY)
        by_id = match_exclusive(q, c)
        assert greedy.sims.max() >= by_id.sims.max() - 1e-12

    @settings(max_examples=40, deadline=None)
    @given(
        n_q=st.integers(1, 12),
        extra=st.integers(0, 10),
        dim=st.integers(2, 6),
        seed=st.integers(0, 2**31 - 1),
        k=st.integers(1, 8),
    )
    def test_injectivity_property(self, n_q, extra, dim, seed, k):
        rng = np.random.default_rng(seed)
        q = random_unit_set(rng, n_q, dim)
        c = random_unit_set(rng, n_q + extra, dim)
        out = match_exclusive(q, c, shortlist_k=k)
        assert len(np.unique(out.clip_ids)) == len(out.clip_ids)
        assert len(np.unique(out.query_ids)) == len(out.query_ids)


class TestTopkReport:
    def test_full_ranking_when_k_equals_pool(self):
        rng = np.random.default_rng(6)
        q = random_unit_set(rng, 3, 4)
        c = random_unit_set(rng, 10, 4)
        out = match_topk_report(q, c, k=10)
        for ranking in out:
            assert len(ranking) == 10
            sims = [s for _, s in ranking]
            assert sims == sorted(sims, reverse=True)
            assert sorted(cid for cid, _ in ranking) == list(range(10))

    def test_identity_basis_top1(self):
        basis = make_set(np.eye(4))
        out = match_topk_report(basis, basis, k=1)
        for i, ranking in enumerate(out):
            assert ranking[0][0] == i
            assert ranking[0][1] == pytest.approx(1.0, abs=1e-7)

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(7)
        q = random_unit_set(rng, 5, 6)
        c = random_unit_set(rng, 12, 6)
        out = match_topk_report(q, c, k=3)
        sims = q.data.astype(np.float64) @ c.data.astype(np.float64).T
        for qi in range(5):
            order = np.argsort(-sims[qi], kind="stable")[:3]
            assert [cid for cid, _ in out[qi]] == [int(c.ids[j]) for j in order]
            assert [s for _, s in out[qi]] == [sims[qi, j] for j in order]

    def test_k_too_large(self):
        q = make_set([[1.0, 0.0]])
        c = make_set([[1.0, 0.0]])
        with pytest.raises(KTooLarge):
            match_topk_report(q, c, k=2)

    def test_ties_by_clip_id_ascending(self):
        q = make_set([[1.0, 0.0]])
        # clip 2 ties clip 9 at sim 1.0 but clip 5 outranks both on similarity
        c = make_set([[0.8, 0.6], [1.0, 0.0], [0.8, 0.6], [1.0, 0.0]], ids=[2, 5, 7, 9])
        out = match_topk_report(q, c, k=4)
        assert [cid for cid, _ in out[0]] == [5, 9, 2, 7]


class TestPairPersistence:
    def test_jsonl_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        q = random_unit_set(rng, 6, 4)
        c = random_unit_set(rng, 9, 4)
        pairs = match_exclusive(q, c)
        pairs.query_set = "queries"
        pairs.clip_set = "pool"
        path = tmp_path / "pairs.jsonl"
        write_pseudo_pairs(pairs, path)
        back = read_pseudo_pairs(path)
        assert np.array_equal(back.query_ids, pairs.query_ids)
        assert np.array_equal(back.clip_ids, pairs.clip_ids)
        assert np.array_equal(back.sims, pairs.sims)
        assert (back.query_set, back.clip_set, back.policy) == ("queries", "pool", "query_id")

    def test_duplicate_clip_rejected(self):
        with pytest.raises(Exception, match="clip"):
            PseudoPairSet(query_ids=[0, 1], clip_ids=[5, 5], sims=[0.5, 0.4])
