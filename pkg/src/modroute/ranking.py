"""Score fusion and single-relevant ranking metrics.

Fusion follows s_hat = alpha * s0 + (1 - alpha) * s_agent with agent scores
min-max normalized within the pool. Candidates omitted from the agent's map
keep their first-stage score and relative order (implemented by assigning
them s_agent := s0). With one relevant item per episode, IDCG = 1 and
NDCG@K reduces to 1/log2(rank + 1).
"""

from __future__ import annotations

import math

from .retrieval import CandidatePool


def fuse_scores(
    pool: CandidatePool, agent_scores: dict[str, float], alpha: float
) -> list[tuple[str, float]]:
    """Fused (item_id, score) list, sorted descending, ties by ascending id."""
    s0 = pool.s0_map()
    if agent_scores:
        vals = list(agent_scores.values())
        lo, hi = min(vals), max(vals)
        if hi == lo:
            normed = {iid: 0.5 for iid in agent_scores}
        else:
            normed = {iid: (v - lo) / (hi - lo) for iid, v in agent_scores.items()}
    else:
        normed = {}
    fused = []
    for iid, base in s0.items():
        s_agent = normed.get(iid, base)
        fused.append((iid, alpha * base + (1.0 - alpha) * s_agent))
    fused.sort(key=lambda x: (-x[1], x[0]))
    return fused


def rank_of(ranked: list[str], target: str) -> int | None:
    try:
        return ranked.index(target) + 1
    except ValueError:
        return None


def ndcg_at_k(ranked: list[str], target: str, k: int) -> float:
    rank = rank_of(ranked, target)
    if rank is None or rank > k:
        return 0.0
    return 1.0 / math.log2(rank + 1)


def hr_at_k(ranked: list[str], target: str, k: int) -> int:
    rank = rank_of(ranked, target)
    return 1 if rank is not None and rank <= k else 0
