"""First-stage retrievers, candidate pools, score normalization, and recall.

Three retrievers mirror the three evidence channels: Okapi BM25 over item text,
Jaccard overlap over image tags, and co-occurrence weight sums over the item
graph. A RetrievalBackend precomputes index structures once per catalog so that
per-episode pool construction stays cheap.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import Catalog, ItemGraph
from .errors import ConfigurationError

BM25_K1 = 1.2
BM25_B = 0.75

TEXT = "text"
IMAGE = "image"
GRAPH = "graph"
MODALITIES = (TEXT, IMAGE, GRAPH)


class RetrievalBackend:
    """Immutable per-catalog index: BM25 postings, tag sets, graph rows."""

    def __init__(self, catalog: Catalog, graph: ItemGraph):
        self.catalog = catalog
        self.graph = graph
        self.item_ids: list[str] = sorted(catalog.items)
        self.index: dict[str, int] = {iid: i for i, iid in enumerate(self.item_ids)}
        n = len(self.item_ids)
        self.n_items = n

        # text: postings token -> (doc indices, term freqs)
        doc_lens = np.zeros(n)
        postings: dict[str, dict[int, int]] = {}
        for i, iid in enumerate(self.item_ids):
            tokens = catalog.items[iid].text_tokens()
            doc_lens[i] = len(tokens)
            for tok in tokens:
                tfs = postings.setdefault(tok, {})
                tfs[i] = tfs.get(i, 0) + 1
        self.doc_lens = doc_lens
        self.avg_doc_len = max(float(doc_lens.mean()) if n else 0.0, 1e-9)
        self.postings: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.idf: dict[str, float] = {}
        for tok, docs in postings.items():
            idx = np.fromiter(docs.keys(), dtype=np.int64)
            tf = np.fromiter(docs.values(), dtype=np.float64)
            self.postings[tok] = (idx, tf)
            df = len(docs)
            self.idf[tok] = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        self._bm25_denom = BM25_K1 * (1.0 - BM25_B + BM25_B * doc_lens / self.avg_doc_len)

        self.tag_sets: list[frozenset[str]] = [
            frozenset(catalog.items[iid].image_tags) for iid in self.item_ids
        ]
        self.tag_sizes = np.array([len(s) for s in self.tag_sets], dtype=np.float64)

        # graph rows as index/weight arrays for fast weight-sum accumulation
        self.graph_rows: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for iid, nbrs in graph.adjacency.items():
            idx = np.array([self.index[b] for b, _ in nbrs], dtype=np.int64)
            w = np.array([w for _, w in nbrs], dtype=np.float64)
            self.graph_rows[iid] = (idx, w)


def bm25_score(query: list[str], doc: list[str], backend: RetrievalBackend) -> float:
    """Okapi BM25 of a single document against a query, k1=1.2, b=0.75.

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)); query terms absent from the
    corpus contribute 0.
    """
    if not query or not doc:
        return 0.0
    tf: dict[str, int] = {}
    for tok in doc:
        tf[tok] = tf.get(tok, 0) + 1
    dl = len(doc)
    denom_norm = BM25_K1 * (1.0 - BM25_B + BM25_B * dl / backend.avg_doc_len)
    score = 0.0
    for tok in query:
        f = tf.get(tok, 0)
        if f == 0 or tok not in backend.idf:
            continue
        score += backend.idf[tok] * f * (BM25_K1 + 1.0) / (f + denom_norm)
    return score


def score_all_text(query: list[str], backend: RetrievalBackend) -> np.ndarray:
    scores = np.zeros(backend.n_items)
    if not query:
        return scores
    for tok in query:
        entry = backend.postings.get(tok)
        if entry is None:
            continue
        idx, tf = entry
        scores[idx] += backend.idf[tok] * tf * (BM25_K1 + 1.0) / (tf + backend._bm25_denom[idx])
    return scores


def score_all_image(tags: list[str], backend: RetrievalBackend) -> np.ndarray:
    scores = np.zeros(backend.n_items)
    q = frozenset(tags)
    if not q:
        return scores
    for i, item_tags in enumerate(backend.tag_sets):
        inter = len(q & item_tags)
        if inter:
            scores[i] = inter / (len(q) + len(item_tags) - inter)
    return scores


def score_all_graph(history: list[str], backend: RetrievalBackend) -> np.ndarray:
    scores = np.zeros(backend.n_items)
    for iid in history:
        row = backend.graph_rows.get(iid)
        if row is not None:
            scores[row[0]] += row[1]
    return scores


_SCORERS = {TEXT: score_all_text, IMAGE: score_all_image, GRAPH: score_all_graph}


def _rank_top_k(scores: np.ndarray, backend: RetrievalBackend, k: int) -> list[tuple[str, float]]:
    # sort whole catalog by (score desc, item id asc); item_ids is sorted so the
    # stable sort on -score keeps ascending-id order within ties
    order = np.argsort(-scores, kind="stable")[:k]
    return [(backend.item_ids[i], float(scores[i])) for i in order]


def retrieve(
    modality: str, evidence: list[str], backend: RetrievalBackend, k: int
) -> list[tuple[str, float]]:
    """Top-k (item_id, raw score) for one modality; empty evidence gives []."""
    if k > backend.n_items:
        raise ConfigurationError(f"K={k} exceeds catalog size {backend.n_items}")
    if not evidence:
        return []
    return _rank_top_k(_SCORERS[modality](evidence, backend), backend, k)


def retrieve_text(query: list[str], backend: RetrievalBackend, k: int) -> list[tuple[str, float]]:
    return retrieve(TEXT, query, backend, k)


def retrieve_image(tags: list[str], backend: RetrievalBackend, k: int) -> list[tuple[str, float]]:
    return retrieve(IMAGE, tags, backend, k)


def retrieve_graph(history: list[str], backend: RetrievalBackend, k: int) -> list[tuple[str, float]]:
    return retrieve(GRAPH, history, backend, k)


def normalize_first_stage(raw: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; a degenerate all-equal list maps to 0.5 everywhere."""
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.full_like(raw, 0.5)
    return (raw - lo) / (hi - lo)


def recall_at_k(ranked: list[str], target: str, k: int) -> int:
    if k < 1:
        raise ConfigurationError("K must be >= 1")
    return 1 if target in ranked[:k] else 0


@dataclass
class CandidatePool:
    """Fixed candidate set the policy may score but never extend.

    entries are (item_id, rank, s0) with ranks a permutation of 1..B and s0
    non-increasing in rank.
    """

    episode_id: str
    entries: list[tuple[str, int, float]]
    size: int
    contains_target: bool
    source_modality: str
    raw_scores: dict[str, float] = field(default_factory=dict, repr=False)

    @property
    def item_ids(self) -> list[str]:
        return [e[0] for e in self.entries]

    def s0_map(self) -> dict[str, float]:
        return {iid: s for iid, _, s in self.entries}

    def first_stage_order(self) -> list[str]:
        return [e[0] for e in sorted(self.entries, key=lambda e: e[1])]

    def validate(self) -> None:
        ids = self.item_ids
        if len(ids) != self.size or len(set(ids)) != self.size:
            raise ConfigurationError("pool must hold exactly B distinct items")
        ranks = sorted(e[1] for e in self.entries)
        if ranks != list(range(1, self.size + 1)):
            raise ConfigurationError("ranks must be a permutation of 1..B")
        by_rank = sorted(self.entries, key=lambda e: e[1])
        s0 = [e[2] for e in by_rank]
        if any(a < b - 1e-12 for a, b in zip(s0, s0[1:])):
            raise ConfigurationError("s0 must be non-increasing in rank")

    def to_records(self) -> list[str]:
        return [
            json.dumps(
                {"episode_id": self.episode_id, "item_id": iid, "rank": r, "s0": s0},
                sort_keys=True,
            )
            for iid, r, s0 in sorted(self.entries, key=lambda e: e[1])
        ]


def _assemble_pool(
    episode_id: str,
    scored: list[tuple[str, float]],
    modality: str,
    contains_target: bool,
) -> CandidatePool:
    ordered = sorted(scored, key=lambda x: (-x[1], x[0]))
    raw = np.array([s for _, s in ordered])
    s0 = normalize_first_stage(raw)
    entries = [(iid, rank, float(s)) for rank, ((iid, _), s) in enumerate(zip(ordered, s0), 1)]
    pool = CandidatePool(
        episode_id=episode_id,
        entries=entries,
        size=len(entries),
        contains_target=contains_target,
        source_modality=modality,
        raw_scores={iid: float(s) for iid, s in ordered},
    )
    pool.validate()
    return pool


def build_target_positive_pool(
    episode_id: str,
    target: str,
    surviving_modality: str,
    evidence: list[str],
    backend: RetrievalBackend,
    b: int,
) -> CandidatePool:
    """Target plus B-1 hard negatives retrieved from the surviving modality.

    The target keeps its true raw retrieval score; if it was not retrieved in
    the top B-1 it is inserted and the pool re-sorted, so s0 is never faked.
    """
    if backend.n_items < b:
        raise ConfigurationError(f"catalog has {backend.n_items} items, pool needs {b}")
    if target not in backend.index:
        raise ConfigurationError(f"unknown target item {target!r}")
    if not evidence:
        raise ConfigurationError("empty evidence for pool construction")
    scores = _SCORERS[surviving_modality](evidence, backend)
    ranked = _rank_top_k(scores, backend, b)
    negatives = [(iid, s) for iid, s in ranked if iid != target][: b - 1]
    scored = negatives + [(target, float(scores[backend.index[target]]))]
    return _assemble_pool(episode_id, scored, surviving_modality, True)


def build_retrieved_pool(
    episode_id: str,
    surviving_modality: str,
    evidence: list[str],
    backend: RetrievalBackend,
    b: int,
    target: str | None = None,
) -> CandidatePool:
    """Fixed-pool full-catalog protocol: plain top-B retrieval, no insertion."""
    if backend.n_items < b:
        raise ConfigurationError(f"catalog has {backend.n_items} items, pool needs {b}")
    if not evidence:
        raise ConfigurationError("empty evidence for pool construction")
    ranked = retrieve(surviving_modality, evidence, backend, b)
    contains = target is not None and any(iid == target for iid, _ in ranked)
    return _assemble_pool(episode_id, ranked, surviving_modality, contains)
