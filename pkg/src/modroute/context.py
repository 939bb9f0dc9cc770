"""User-side episode context and the shared policy-visible evidence scorers.

The evaluator derives a per-episode UserContext from the user's training
history (target held out). First-stage retrieval deliberately sees only a
shallow recency window of that context; the graph tool surfaces a deeper
window through its observation payload, which is where reranking headroom
comes from at this scale.

Evidence scoring is strictly policy-visible: every score is a deterministic
function of candidate summaries and observation payloads, so an external
policy speaking the wire protocol can reproduce the in-process scorers
bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Catalog, Interaction
from .retrieval import GRAPH, IMAGE, TEXT, RetrievalBackend, normalize_first_stage


@dataclass(frozen=True)
class ContextConfig:
    # history windows visible to first-stage retrieval, per evidence channel;
    # keyword and tag queries are cheap to widen, graph walks are not
    stage_depth_text: int = 6
    stage_depth_image: int = 9999  # effectively the full history
    stage_depth_graph: int = 2
    # the graph tool pages through history: first call aggregates this recency
    # window, a repeat call walks the full history
    tool_depth: int = 2
    payload_top_n: int = 100

    def stage_depth(self, modality: str) -> int:
        return {
            TEXT: self.stage_depth_text,
            IMAGE: self.stage_depth_image,
            GRAPH: self.stage_depth_graph,
        }[modality]


class UserContext:
    """Recency-ordered view of one user's training history, target excluded."""

    def __init__(
        self,
        user_id: str,
        history: list[Interaction],
        catalog: Catalog,
        backend: RetrievalBackend,
        config: ContextConfig,
    ):
        self.user_id = user_id
        self.config = config
        self._backend = backend
        self._catalog = catalog
        # most recent first; input is time-sorted ascending
        self.recent_items = [x.item_id for x in reversed(history)]

    def stage_evidence(self, modality: str) -> list[str]:
        window = self.recent_items[: self.config.stage_depth(modality)]
        if modality == TEXT:
            tokens: list[str] = []
            for iid in window:
                item = self._catalog.items[iid]
                tokens.extend(item.title + item.category)
            return tokens
        if modality == IMAGE:
            tags: list[str] = []
            for iid in window:
                for tag in self._catalog.items[iid].image_tags:
                    if tag not in tags:
                        tags.append(tag)
            return tags
        return list(window)

    def graph_neighbors(self, depth: int | None) -> list[tuple[str, str, float]]:
        """Aggregated co-occurrence neighbors of the recent `depth` items.

        Returns (item_id, title, weight) sorted by weight desc then id,
        truncated to payload_top_n. depth=None means the full history.
        """
        window = self.recent_items if depth is None else self.recent_items[:depth]
        scores = np.zeros(self._backend.n_items)
        for iid in window:
            row = self._backend.graph_rows.get(iid)
            if row is not None:
                scores[row[0]] += row[1]
        nz = np.nonzero(scores)[0]
        ranked = sorted(((self._backend.item_ids[i], scores[i]) for i in nz),
                        key=lambda x: (-x[1], x[0]))
        out = []
        for iid, w in ranked[: self.config.payload_top_n]:
            title = " ".join(self._catalog.items[iid].title)
            out.append((iid, title, float(w)))
        return out


def build_summary(item_id: str, source_modality: str, catalog: Catalog,
                  backend: RetrievalBackend) -> str:
    """Compact per-candidate snippet derived from the pool's source modality only."""
    item = catalog.items[item_id]
    if source_modality == TEXT:
        return f"title={' '.join(item.title)}|cat={' '.join(item.category)}"
    if source_modality == IMAGE:
        return f"tags={','.join(item.image_tags[:5])}"
    nbrs = backend.graph.neighbors(item_id)[:3]
    return "nbrs=" + ",".join(f"{b}:{w}" for b, w in nbrs)


def summary_tokens(summary: str) -> frozenset[str]:
    if summary.startswith("title="):
        body = summary.split("title=", 1)[1].replace("|cat=", " ")
        return frozenset(t for t in body.split(" ") if t)
    return frozenset()


def summary_tags(summary: str) -> frozenset[str]:
    if summary.startswith("tags="):
        return frozenset(t for t in summary.split("tags=", 1)[1].split(",") if t)
    return frozenset()


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a or not b:
        return 0.0
    inter = len(a & b)
    if inter == 0:
        return 0.0
    return inter / (len(a) + len(b) - inter)


@dataclass
class EvidenceState:
    """Everything a policy has legitimately observed, ready for scoring.

    Built incrementally from (action, observation) pairs; never touches the
    hidden mask or the raw catalog.
    """

    source_modality: str
    text_anchor: frozenset[str] | None = None
    image_anchor: frozenset[str] | None = None
    graph_weights: dict[str, float] | None = None
    gathered: set[str] = field(default_factory=set)

    def update(self, action_kind: str, obs_kind: str, payload: dict | None) -> None:
        if obs_kind == "evidence" and payload is not None:
            if action_kind == "analyze_text":
                toks = (payload.get("title", "") + " " + payload.get("category", "")
                        + " " + payload.get("description", ""))
                tokens = frozenset(t for t in toks.split(" ") if t)
                # anchors accumulate over analyzed items
                self.text_anchor = tokens | (self.text_anchor or frozenset())
                self.gathered.add(TEXT)
            elif action_kind == "analyze_image":
                tags = frozenset(payload.get("tags", []))
                self.image_anchor = tags | (self.image_anchor or frozenset())
                self.gathered.add(IMAGE)
            elif action_kind == "retrieve_graph":
                self.graph_weights = {iid: float(w) for iid, _, w in payload.get("neighbors", [])}
                self.gathered.add(GRAPH)
        elif obs_kind == "clarification" and payload is not None:
            if "neighbors" in payload:
                # a behavioral clarification widens the graph horizon
                self.graph_weights = {iid: float(w) for iid, w in payload["neighbors"]}
                self.gathered.add(GRAPH)

    def modality_scores(self, item_ids: list[str], summaries: dict[str, str]
                        ) -> dict[str, np.ndarray]:
        """Raw per-candidate evidence scores for each scoreable gathered modality."""
        out: dict[str, np.ndarray] = {}
        if self.text_anchor is not None and self.source_modality == TEXT:
            out[TEXT] = np.array(
                [jaccard(self.text_anchor, summary_tokens(summaries[i])) for i in item_ids]
            )
        if self.image_anchor is not None and self.source_modality == IMAGE:
            out[IMAGE] = np.array(
                [jaccard(self.image_anchor, summary_tags(summaries[i])) for i in item_ids]
            )
        if self.graph_weights is not None:
            out[GRAPH] = np.array([self.graph_weights.get(i, 0.0) for i in item_ids])
        return out


def combine_evidence_scores(
    item_ids: list[str],
    modal_scores: dict[str, np.ndarray],
    weights: dict[str, float],
) -> dict[str, float]:
    """Weighted sum of per-modality min-max normalized evidence scores.

    This is the single scoring path shared by the rule router (equal weights)
    and the learned policy (tuned weights). Returns {} when nothing was
    gathered, which downstream fusion treats as "keep the first-stage order".
    """
    total = None
    for modality in (TEXT, IMAGE, GRAPH):
        if modality not in modal_scores:
            continue
        normed = normalize_first_stage(modal_scores[modality])
        contrib = weights.get(modality, 0.0) * normed
        total = contrib if total is None else total + contrib
    if total is None:
        return {}
    return {iid: float(s) for iid, s in zip(item_ids, total)}
