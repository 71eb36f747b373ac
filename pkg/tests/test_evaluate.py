"""Retrieval metric tests: a loop-based reference implementation on random
problems, hand-computed cases, tie handling, and chance-level sanity."""

import numpy as np
import pytest

from tbpslab.data import ToySpec, generate_toy
from tbpslab.evaluate import (
    EmptyGallery,
    NoPositive,
    RetrievalReport,
    evaluate_model,
    rank_gallery,
    retrieval_metrics,
    unique_images,
)
from tbpslab.model import ModelConfig, init_model
from tbpslab.numerics import Rng, ShapeMismatch


def reference_metrics(sim, query_ids, gallery_ids):
    """Slow, obviously-correct reimplementation used as the oracle."""
    nq, ng = sim.shape
    r1 = r5 = r10 = ap = inp = 0.0
    for qi in range(nq):
        # stable descending sort via (negated score, index) pairs
        order = sorted(range(ng), key=lambda g: (-sim[qi, g], g))
        rel_ranks = [r + 1 for r, g in enumerate(order) if gallery_ids[g] == query_ids[qi]]
        assert rel_ranks
        r1 += rel_ranks[0] <= 1
        r5 += rel_ranks[0] <= 5
        r10 += rel_ranks[0] <= 10
        ap += np.mean([(i + 1) / r for i, r in enumerate(rel_ranks)])
        inp += len(rel_ranks) / rel_ranks[-1]
    return r1 / nq, r5 / nq, r10 / nq, ap / nq, inp / nq


class TestRankGallery:
    def test_descending(self):
        order = rank_gallery(np.array([0.1, 0.9, 0.5]))
        assert list(order) == [1, 2, 0]

    def test_ties_keep_gallery_order(self):
        order = rank_gallery(np.array([0.5, 0.9, 0.5, 0.9]))
        assert list(order) == [1, 3, 0, 2]

    def test_rejects_matrix(self):
        with pytest.raises(ShapeMismatch):
            rank_gallery(np.zeros((2, 2)))


class TestAgainstReference:
    def test_random_problems(self, rng):
        for trial in range(100):
            r = rng.child(trial)
            nq = int(r.integers(1, 13))
            ng = int(r.integers(2, 13))
            gallery_ids = r.integers(0, 4, size=ng)
            # each query takes an identity that exists in the gallery
            query_ids = gallery_ids[r.integers(0, ng, size=nq)]
            sim = r.normal(size=(nq, ng))
            if trial % 3 == 0:
                sim = np.round(sim, 1)  # force score ties
            rep = retrieval_metrics(sim, query_ids, gallery_ids)
            ref = reference_metrics(sim, query_ids, gallery_ids)
            got = (rep.rank1, rep.rank5, rep.rank10, rep.mean_ap, rep.mean_inp)
            assert np.allclose(got, ref, atol=1e-12), f"trial {trial}"


class TestHandCases:
    def test_positives_at_ranks_two_and_four(self):
        # gallery scores rank it [g0, g1, g2, g3, g4]; positives g1, g3
        sim = np.array([[0.9, 0.8, 0.7, 0.6, 0.5]])
        gallery_ids = np.array([9, 1, 9, 1, 9])
        rep = retrieval_metrics(sim, np.array([1]), gallery_ids)
        # AP = (1/2)(1/2 + 2/4), INP = 2/4
        assert rep.mean_ap == pytest.approx(0.5, abs=1e-12)
        assert rep.mean_inp == pytest.approx(0.5, abs=1e-12)
        assert rep.rank1 == 0.0
        assert rep.rank5 == 1.0

    def test_perfect_retrieval(self):
        sim = np.array([[0.9, 0.8, 0.1], [0.1, 0.2, 0.9]])
        gallery_ids = np.array([0, 0, 1])
        rep = retrieval_metrics(sim, np.array([0, 1]), gallery_ids)
        assert rep.rank1 == 1.0
        assert rep.mean_ap == pytest.approx(1.0, abs=1e-12)
        assert rep.mean_inp == pytest.approx(1.0, abs=1e-12)

    def test_single_positive_last(self):
        sim = np.array([[0.9, 0.8, 0.1]])
        rep = retrieval_metrics(sim, np.array([7]), np.array([0, 1, 7]))
        assert rep.rank1 == 0.0
        assert rep.mean_ap == pytest.approx(1 / 3, abs=1e-12)
        assert rep.mean_inp == pytest.approx(1 / 3, abs=1e-12)

    def test_small_gallery_rank10(self):
        sim = np.array([[0.5, 0.4]])
        rep = retrieval_metrics(sim, np.array([1]), np.array([0, 1]))
        assert rep.rank10 == 1.0  # k past the gallery end still counts hits


class TestErrors:
    def test_empty_gallery(self):
        with pytest.raises(EmptyGallery):
            retrieval_metrics(np.zeros((1, 0)), np.array([0]), np.array([]))

    def test_no_positive(self):
        sim = np.array([[0.5, 0.4]])
        with pytest.raises(NoPositive, match="identity 3"):
            retrieval_metrics(sim, np.array([3]), np.array([0, 1]))

    def test_id_length_mismatch(self):
        with pytest.raises(ShapeMismatch):
            retrieval_metrics(np.zeros((2, 2)), np.array([0]), np.array([0, 0]))


class TestChanceLevel:
    def test_random_embeddings_score_at_chance(self):
        # 20-item gallery of distinct identities: chance Rank-1 is 1/20
        trials, nq, ng, d = 50, 40, 20, 8
        master = Rng(606)
        r1 = []
        for t in range(trials):
            r = master.child(t)
            q = r.normal(size=(nq, d))
            g = r.normal(size=(ng, d))
            q /= np.linalg.norm(q, axis=1, keepdims=True)
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            gallery_ids = np.arange(ng)
            query_ids = gallery_ids[r.integers(0, ng, size=nq)]
            rep = retrieval_metrics(q @ g.T, query_ids, gallery_ids)
            r1.append(rep.rank1)
        p = 1 / ng
        sigma = np.sqrt(p * (1 - p) / (trials * nq))
        assert abs(np.mean(r1) - p) < 3 * sigma


class TestGalleryAndModelEval:
    def test_unique_images_dedupes(self):
        ds = generate_toy(ToySpec(n_identities=6, images_per_identity=2, captions_per_image=2), Rng(4))
        samples = ds.train + ds.val + ds.test
        gallery, ids = unique_images(samples)
        assert len(samples) == 6 * 2 * 2
        assert gallery.shape[0] == 6 * 2  # captions share their image
        assert len(ids) == gallery.shape[0]

    def test_unique_images_empty(self):
        with pytest.raises(EmptyGallery):
            unique_images([])

    def test_untrained_model_runs(self):
        ds = generate_toy(ToySpec(n_identities=8, images_per_identity=2), Rng(4))
        samples = ds.train
        from tbpslab.data import build_vocab

        cfg = ModelConfig(vocab=build_vocab(samples), hidden_dim=16, embed_dim=8)
        model = init_model(cfg, Rng(9))
        rep = evaluate_model(model, samples)
        assert isinstance(rep, RetrievalReport)
        assert 0 <= rep.rank1 <= rep.rank5 <= rep.rank10 <= 1
        assert 0 <= rep.mean_ap <= 1
        assert 0 <= rep.mean_inp <= 1
        assert rep.n_queries == len(samples)

    def test_report_lines_mention_conventions(self):
        rep = RetrievalReport(1, 1, 1, 1, 1, 4, 4)
        text = "\n".join(rep.lines())
        assert "mINP" in text and "stable ties" in text
