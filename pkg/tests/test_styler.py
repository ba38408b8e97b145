import numpy as np
import pytest

from stylepair.embedcore import EmbeddingSet, normalize
from stylepair.errors import CountMismatch, DimMismatch, SingularSystem
from stylepair.matcher import PseudoPairSet
from stylepair.styler import (
    GeneratedPairSet,
    StyleTransform,
    filter_pairs,
    fit_style,
    generate_styled,
    load_style,
    read_generated_pairs,
    save_style,
    threshold_sweep,
    write_generated_pairs,
)

from conftest import make_set, random_unit_set


def pairs_over(queries, clips):
    n = min(queries.count, clips.count)
    return PseudoPairSet(query_ids=queries.ids[:n], clip_ids=clips.ids[:n],
                         sims=np.zeros(n))


def ridge_lstsq_oracle(v_rows, t_rows, lam):
    """Independent solve: augmented least squares through numpy's SVD lstsq."""
    n, dim_in = v_rows.shape
    dim_out = t_rows.shape[1]
    x = np.concatenate([v_rows, np.ones((n, 1))], axis=1)
    aug_rows = np.concatenate([np.sqrt(lam) * np.eye(dim_in), np.zeros((dim_in, 1))], axis=1)
    a = np.concatenate([x, aug_rows], axis=0)
    b = np.concatenate([t_rows, np.zeros((dim_in, dim_out))], axis=0)
    theta, *_ = np.linalg.lstsq(a, b, rcond=None)
    return theta[:dim_in].T, theta[dim_in]


class TestFitStyle:
    def test_identity_when_targets_equal_inputs(self):
        rng = np.random.default_rng(0)
        clips = random_unit_set(rng, 12, 4)
        fit = fit_style(pairs_over(clips, clips), clips, clips, ridge_lambda=0.0)
        assert np.allclose(fit.weight, np.eye(4), atol=1e-6)
        assert np.allclose(fit.bias, 0.0, atol=1e-6)

    def test_sign_flip(self):
        rng = np.random.default_rng(1)
        clips = random_unit_set(rng, 12, 4)
        flipped = EmbeddingSet(ids=clips.ids.copy(), data=-clips.data,
                               normalized=True)
        fit = fit_style(pairs_over(flipped, clips), flipped, clips, ridge_lambda=0.0)
        assert np.allclose(fit.weight, -np.eye(4), atol=1e-6)

    def test_matches_independent_ridge_oracle(self):
        rng = np.random.default_rng(2)
        queries = random_unit_set(rng, 30, 5)
        clips = random_unit_set(rng, 30, 7)
        pseudo = pairs_over(queries, clips)
        fit = fit_style(pseudo, queries, clips, ridge_lambda=0.1)
        w, b = ridge_lstsq_oracle(clips.data[:30].astype(np.float64),
                                  queries.data[:30].astype(np.float64), 0.1)
        assert np.abs(fit.weight - w).max() < 1e-5
        assert np.abs(fit.bias - b).max() < 1e-5

    def test_singular_without_ridge(self):
        # 2 pairs cannot pin down a 4-dim map at lambda=0
        rng = np.random.default_rng(3)
        queries = random_unit_set(rng, 2, 4)
        clips = random_unit_set(rng, 2, 4)
        with pytest.raises(SingularSystem):
            fit_style(pairs_over(queries, clips), queries, clips, ridge_lambda=0.0)
        # the same system solves fine once regularized
        fit_style(pairs_over(queries, clips), queries, clips, ridge_lambda=1e-2)

    def test_weight_norm_shrinks_with_lambda(self):
        rng = np.random.default_rng(4)
        queries = random_unit_set(rng, 25, 6)
        clips = random_unit_set(rng, 25, 6)
        pseudo = pairs_over(queries, clips)
        norms = [
            np.linalg.norm(fit_style(pseudo, queries, clips, ridge_lambda=lam).weight)
            for lam in (0.01, 1.0, 100.0)
        ]
        assert norms[0] > norms[1] > norms[2]


class TestGenerateStyled:
    def test_identity_map_no_noise_returns_input(self):
        rng = np.random.default_rng(5)
        clips = random_unit_set(rng, 10, 6)
        style = StyleTransform(weight=np.eye(6), bias=np.zeros(6),
                               ridge_lambda=0.0, noise_sigma=0.0)
        styled = generate_styled(clips, style, seed=0)
        assert np.allclose(styled.data, clips.data, atol=1e-6)
        assert np.array_equal(styled.ids, clips.ids)

    def test_same_seed_bit_identical(self):
        rng = np.random.default_rng(6)
        clips = random_unit_set(rng, 700, 5)   # spans two row chunks
        style = StyleTransform(weight=rng.normal(size=(5, 5)), bias=rng.normal(size=5),
                               ridge_lambda=0.0, noise_sigma=0.2)
        a = generate_styled(clips, style, seed=42)
        b = generate_styled(clips, style, seed=42)
        assert np.array_equal(a.data, b.data)

    def test_thread_count_does_not_change_bits(self):
        rng = np.random.default_rng(7)
        clips = random_unit_set(rng, 700, 5)
        style = StyleTransform(weight=rng.normal(size=(5, 5)), bias=rng.normal(size=5),
                               ridge_lambda=0.0, noise_sigma=0.2)
        a = generate_styled(clips, style, seed=1, threads=1)
        b = generate_styled(clips, style, seed=1, threads=4)
        assert np.array_equal(a.data, b.data)

    def test_seed_changes_output(self):
        rng = np.random.default_rng(8)
        clips = random_unit_set(rng, 8, 5)
        style = StyleTransform(weight=np.eye(5), bias=np.zeros(5),
                               ridge_lambda=0.0, noise_sigma=0.1)
        assert not np.array_equal(generate_styled(clips, style, seed=1).data,
                                  generate_styled(clips, style, seed=2).data)

    def test_matches_affine_normalize_oracle(self):
        rng = np.random.default_rng(9)
        clips = random_unit_set(rng, 9, 4)
        w = rng.normal(size=(6, 4))
        b = rng.normal(size=6)
        style = StyleTransform(weight=w, bias=b, ridge_lambda=0.0, noise_sigma=0.0)
        styled = generate_styled(clips, style, seed=0)
        for i in range(9):
            raw = w @ clips.data[i].astype(np.float64) + b
            expect = raw / np.linalg.norm(raw)
            assert styled.data[i] == pytest.approx(expect, abs=1e-6)

    def test_rows_unit_norm(self):
        rng = np.random.default_rng(10)
        clips = random_unit_set(rng, 50, 8)
        style = StyleTransform(weight=rng.normal(size=(8, 8)), bias=rng.normal(size=8),
                               ridge_lambda=0.0, noise_sigma=0.3)
        styled = generate_styled(clips, style, seed=3)
        norms = np.linalg.norm(styled.data.astype(np.float64), axis=1)
        assert np.abs(norms - 1.0).max() < 1e-5

    def test_dim_mismatch(self):
        clips = make_set([[1.0, 0.0]])
        style = StyleTransform(weight=np.eye(3), bias=np.zeros(3),
                               ridge_lambda=0.0, noise_sigma=0.0)
        with pytest.raises(DimMismatch):
            generate_styled(clips, style, seed=0)


def exact_sim_fixture():
    """Aligned sets whose per-pair sims are exactly 0.125, 0.3125, 0.28125.

    The similarity values are dyadic so the float64 dot products hit them
    exactly, making the strict-threshold boundary observable.
    """
    sims = [0.125, 0.3125, 0.28125]
    styled_rows = [[s, float(np.sqrt(1.0 - s * s))] for s in sims]
    clips_rows = [[1.0, 0.0]] * 3
    styled = EmbeddingSet(ids=np.arange(3), data=np.asarray(styled_rows, np.float32),
                          normalized=True)
    clips = EmbeddingSet(ids=np.arange(3), data=np.asarray(clips_rows, np.float32),
                         normalized=True)
    return styled, clips


class TestFilterPairs:
    def test_strict_boundary(self):
        styled, clips = exact_sim_fixture()
        kept = filter_pairs(styled, clips, th=0.28125)
        # the pair sitting exactly on the threshold is dropped
        assert list(kept.clip_ids) == [1]
        assert kept.sims[0] == 0.3125

    def test_threshold_below_everything_keeps_all(self):
        styled, clips = exact_sim_fixture()
        kept = filter_pairs(styled, clips, th=-1.0)
        assert len(kept) == 3
        assert kept.retention_rate == 1.0

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(11)
        styled = random_unit_set(rng, 40, 6)
        clips = random_unit_set(rng, 40, 6)
        th = 0.28
        kept = filter_pairs(styled, clips, th)
        expect = []
        for i in range(40):
            s = float(styled.data[i].astype(np.float64) @ clips.data[i].astype(np.float64))
            if s > th:
                expect.append((int(clips.ids[i]), i))
        assert [(c, r) for c, r, _ in kept.pairs()] == expect

    def test_count_mismatch(self):
        rng = np.random.default_rng(12)
        with pytest.raises(CountMismatch):
            filter_pairs(random_unit_set(rng, 3, 4), random_unit_set(rng, 4, 4), 0.0)

    def test_subset_monotonicity(self):
        rng = np.random.default_rng(13)
        styled = random_unit_set(rng, 60, 5)
        clips = random_unit_set(rng, 60, 5)
        low = set(filter_pairs(styled, clips, 0.1).clip_ids)
        high = set(filter_pairs(styled, clips, 0.3).clip_ids)
        assert high <= low


class TestThresholdSweep:
    def test_monotone_counts(self):
        rng = np.random.default_rng(14)
        styled = random_unit_set(rng, 80, 6)
        clips = random_unit_set(rng, 80, 6)
        rows = threshold_sweep(styled, clips, [0.26, 0.27, 0.28, 0.29, 0.30])
        counts = [r.kept for r in rows]
        assert counts == sorted(counts, reverse=True)

    def test_threshold_below_min_keeps_total(self):
        styled, clips = exact_sim_fixture()
        rows = threshold_sweep(styled, clips, [-1.0, 0.5])
        assert rows[0].kept == 3
        assert rows[0].rate == 1.0

    def test_consistent_with_filter_pairs(self):
        rng = np.random.default_rng(15)
        styled = random_unit_set(rng, 50, 4)
        clips = random_unit_set(rng, 50, 4)
        grid = [0.0, 0.2, 0.4, 0.6]
        rows = threshold_sweep(styled, clips, grid)
        for row in rows:
            assert row.kept == len(filter_pairs(styled, clips, row.threshold))

    def test_unsorted_grid_rejected(self):
        styled, clips = exact_sim_fixture()
        with pytest.raises(ValueError):
            threshold_sweep(styled, clips, [0.3, 0.2])


class TestPersistence:
    def test_style_round_trip(self, tmp_path):
        rng = np.random.default_rng(16)
        style = StyleTransform(weight=rng.normal(size=(6, 4)), bias=rng.normal(size=6),
                               ridge_lambda=0.01, noise_sigma=0.05, style_tag="msr")
        path = tmp_path / "style.iemb"
        save_style(style, path)
        back = load_style(path)
        assert np.array_equal(back.weight, style.weight)
        assert np.array_equal(back.bias, style.bias)
        assert back.ridge_lambda == style.ridge_lambda
        assert back.noise_sigma == style.noise_sigma
        assert back.style_tag == "msr"

    def test_generated_pairs_round_trip(self, tmp_path):
        rng = np.random.default_rng(17)
        styled = random_unit_set(rng, 30, 5)
        clips = random_unit_set(rng, 30, 5)
        gen = filter_pairs(styled, clips, 0.0)
        gen.style_tag = "msr"
        path = tmp_path / "gen.jsonl"
        write_generated_pairs(gen, path)
        back = read_generated_pairs(path)
        assert np.array_equal(back.clip_ids, gen.clip_ids)
        assert np.array_equal(back.rows, gen.rows)
        assert np.array_equal(back.sims, gen.sims)
        assert back.threshold == 0.0
        assert back.style_tag == "msr"
        assert back.total_candidates == 30

    def test_retained_pairs_must_clear_threshold(self):
        with pytest.raises(ValueError):
            GeneratedPairSet(clip_ids=[0], rows=[0], sims=[0.2], threshold=0.3)
