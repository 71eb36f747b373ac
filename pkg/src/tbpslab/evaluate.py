"""Text-to-image retrieval metrics.

Queries are captions, the gallery is the deduplicated image set, and a
gallery item is relevant to a query when their identities match. Scores
are cosine similarities (embeddings arrive L2-normalized, so a plain dot
product). Conventions, also printed in every report header:

  ranking    descending score; equal scores keep ascending gallery order
  Rank-k     fraction of queries with a relevant item in the top k
  mAP        per query, mean over relevant items of precision at that
             item's rank; averaged over queries
  mINP       per query, |relevant| divided by the rank of the last
             relevant item (1.0 when the relevant set fills the top
             ranks exactly); averaged over queries
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import tokenize
from .model import Model, encode_image, encode_text
from .numerics import ShapeMismatch


class EmptyGallery(ValueError):
    """The gallery has no items."""


class NoPositive(ValueError):
    """A query has no relevant gallery item; its metrics are undefined."""


def rank_gallery(scores: np.ndarray) -> np.ndarray:
    """Gallery indices for one query, best first. Ties keep ascending
    gallery index (stable sort on negated scores)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1:
        raise ShapeMismatch(f"scores must be 1-d, got {scores.shape}")
    return np.argsort(-scores, kind="stable")


@dataclass(frozen=True)
class RetrievalReport:
    rank1: float
    rank5: float
    rank10: float
    mean_ap: float
    mean_inp: float
    n_queries: int
    n_gallery: int

    def lines(self) -> list:
        return [
            f"queries {self.n_queries}  gallery {self.n_gallery}",
            "conventions: descending score, stable ties; mAP = mean precision at",
            "each relevant rank; mINP = |relevant| / rank of last relevant item",
            f"Rank-1  {self.rank1:.4f}",
            f"Rank-5  {self.rank5:.4f}",
            f"Rank-10 {self.rank10:.4f}",
            f"mAP     {self.mean_ap:.4f}",
            f"mINP    {self.mean_inp:.4f}",
        ]

    def as_dict(self) -> dict:
        return {
            "rank1": self.rank1,
            "rank5": self.rank5,
            "rank10": self.rank10,
            "mAP": self.mean_ap,
            "mINP": self.mean_inp,
            "n_queries": self.n_queries,
            "n_gallery": self.n_gallery,
        }


def retrieval_metrics(sim: np.ndarray, query_ids, gallery_ids) -> RetrievalReport:
    """Metrics for a full similarity matrix (queries x gallery)."""
    sim = np.asarray(sim, dtype=np.float64)
    query_ids = np.asarray(query_ids)
    gallery_ids = np.asarray(gallery_ids)
    if sim.ndim != 2:
        raise ShapeMismatch(f"similarity must be 2-d, got {sim.shape}")
    nq, ng = sim.shape
    if ng == 0:
        raise EmptyGallery("gallery is empty")
    if len(query_ids) != nq or len(gallery_ids) != ng:
        raise ShapeMismatch(
            f"ids do not match similarity shape {sim.shape}: "
            f"{len(query_ids)} query ids, {len(gallery_ids)} gallery ids"
        )

    hits_at = {1: 0, 5: 0, 10: 0}
    ap_sum = 0.0
    inp_sum = 0.0
    for qi in range(nq):
        order = rank_gallery(sim[qi])
        relevant = gallery_ids[order] == query_ids[qi]
        n_rel = int(relevant.sum())
        if n_rel == 0:
            raise NoPositive(f"query {qi} (identity {query_ids[qi]}) has no relevant gallery item")
        ranks = np.flatnonzero(relevant) + 1  # 1-indexed ranks of relevant items
        for k in hits_at:
            hits_at[k] += int(ranks[0] <= k)
        precision = np.arange(1, n_rel + 1) / ranks
        ap_sum += precision.mean()
        inp_sum += n_rel / ranks[-1]

    return RetrievalReport(
        rank1=hits_at[1] / nq,
        rank5=hits_at[5] / nq,
        rank10=hits_at[10] / nq,
        mean_ap=float(ap_sum / nq),
        mean_inp=float(inp_sum / nq),
        n_queries=nq,
        n_gallery=ng,
    )


def unique_images(samples) -> tuple:
    """Deduplicated image stack and identity array. Samples that share an
    image (several captions of one photo) collapse to one gallery item;
    duplicates are detected by exact pixel bytes."""
    if not samples:
        raise EmptyGallery("no samples")
    images, ids, seen = [], [], {}
    for s in samples:
        key = s.image.tobytes()
        if key in seen:
            continue
        seen[key] = True
        images.append(s.image)
        ids.append(s.identity)
    return np.stack(images), np.array(ids, dtype=np.int64)


def evaluate_model(model: Model, samples) -> RetrievalReport:
    """Caption-to-image retrieval over one split: every caption queries the
    deduplicated image gallery."""
    gallery, gallery_ids = unique_images(samples)
    g_embed, _ = encode_image(model, gallery)
    tokens = [tokenize(s.caption) for s in samples]
    q_embed, _ = encode_text(model, tokens)
    query_ids = np.array([s.identity for s in samples], dtype=np.int64)
    return retrieval_metrics(q_embed @ g_embed.T, query_ids, gallery_ids)
