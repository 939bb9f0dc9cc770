"""Fusion weight selection, ranking metrics, agentic diagnostics, significance
statistics, and the fixed-pool full-catalog reranking check.

The Wilcoxon signed-rank test is built from scratch because the exact
distribution must honor average ranks under ties (needed for matched-episode
NDCG deltas, which tie often); the n <= 25 regime enumerates the sign
distribution by dynamic programming, larger n uses the normal approximation
with tie correction and continuity correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .environment import (
    EVIDENCE_TOOLS,
    EXPECTED_FIRST_TOOL,
    SINGLE_SOURCE_FAMILIES,
    SCORE_CANDIDATES,
    Environment,
    Episode,
    TaskFamily,
)
from .errors import ConfigurationError
from .ranking import fuse_scores, hr_at_k, ndcg_at_k

ALPHA_GRID = tuple(round(0.1 * i, 1) for i in range(11))


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("fusion alpha must lie in [0, 1]")


def terminal_score_map(episode: Episode) -> dict[str, float]:
    """The agent score map an episode terminated with; {} on any fallback."""
    if episode.outcome != "scored" or not episode.history:
        return {}
    action = episode.history[-1].action
    if action.kind != SCORE_CANDIDATES:
        return {}
    return dict(action.args.get("scores", {}))


def grid_search_alpha(
    episodes: list[Episode], grid: tuple[float, ...] = ALPHA_GRID
) -> float:
    """Pick the fusion weight maximizing mean NDCG@10; ties prefer smaller alpha."""
    if not episodes:
        raise ConfigurationError("alpha grid search needs validation episodes")
    cached = [(ep.pool, terminal_score_map(ep), ep.target) for ep in episodes]
    best_alpha, best_score = None, -1.0
    for alpha in grid:
        total = 0.0
        for pool, scores, target in cached:
            ranked = [iid for iid, _ in fuse_scores(pool, scores, alpha)]
            total += ndcg_at_k(ranked, target, 10)
        mean = total / len(cached)
        if mean > best_score + 1e-12:
            best_alpha, best_score = alpha, mean
    return float(best_alpha)


# ---- agentic diagnostics -------------------------------------------------------


@dataclass
class AgenticMetrics:
    failed_call_rate: float
    recovery_rate: float
    mean_turns: float
    turns_to_success: float
    first_action_rate: float
    n_episodes: int


def agentic_metrics(episodes: list[Episode]) -> AgenticMetrics:
    """Pooled routing diagnostics over completed episodes.

    failed-call rate counts Null returns among evidence-tool calls; recovery is
    the fraction of Null-hit episodes that still end with positive NDCG@10;
    first-action rate checks, on episodes with a single surviving modality,
    whether the first action targets that modality's tool.
    """
    tool_calls = 0
    failed_calls = 0
    null_episodes = 0
    recovered = 0
    turns_success: list[int] = []
    turns_all: list[int] = []
    single_source_total = 0
    single_source_first_hit = 0
    for ep in episodes:
        had_null = False
        for entry in ep.history:
            if entry.action.kind in EVIDENCE_TOOLS:
                tool_calls += 1
                if entry.observation.kind == "null":
                    failed_calls += 1
                    had_null = True
        ndcg = ep.final_ndcg10()
        turns_all.append(len(ep.history))
        if had_null:
            null_episodes += 1
            if ndcg > 0:
                recovered += 1
        if ndcg > 0:
            turns_success.append(len(ep.history))
        family = ep.family.family_id
        if family in SINGLE_SOURCE_FAMILIES and ep.history:
            single_source_total += 1
            if ep.history[0].action.kind == EXPECTED_FIRST_TOOL[family]:
                single_source_first_hit += 1
    return AgenticMetrics(
        failed_call_rate=failed_calls / tool_calls if tool_calls else 0.0,
        recovery_rate=recovered / null_episodes if null_episodes else 0.0,
        mean_turns=float(np.mean(turns_all)) if turns_all else 0.0,
        turns_to_success=float(np.mean(turns_success)) if turns_success else 0.0,
        first_action_rate=single_source_first_hit / single_source_total if single_source_total else 0.0,
        n_episodes=len(episodes),
    )


# ---- significance statistics ---------------------------------------------------


def _signed_ranks(deltas: np.ndarray) -> np.ndarray:
    """Average ranks of |deltas|, doubled so ties stay exact integers."""
    absd = np.abs(deltas)
    order = np.argsort(absd, kind="stable")
    ranks2 = np.zeros(len(deltas), dtype=np.int64)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and absd[order[j + 1]] == absd[order[i]]:
            j += 1
        avg2 = (i + 1) + (j + 1)  # 2 * average of ranks i+1..j+1
        for k in range(i, j + 1):
            ranks2[order[k]] = avg2
        i = j + 1
    return ranks2


def wilcoxon_signed_rank(deltas, exact_threshold: int = 25) -> float:
    """Two-sided paired signed-rank p-value.

    Zero deltas are dropped; all-zero input returns 1.0. Up to n=25 the exact
    sign-assignment distribution is enumerated (honoring average ranks), above
    that a tie-corrected normal approximation with continuity correction.
    """
    d = np.asarray(list(deltas), dtype=np.float64)
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        return 1.0
    ranks2 = _signed_ranks(d)
    w2 = int(ranks2[d > 0].sum())
    s2 = int(ranks2.sum())
    if n <= exact_threshold:
        counts = np.zeros(s2 + 1, dtype=np.float64)
        counts[0] = 1.0
        for r in ranks2:
            counts[r:] += counts[: s2 + 1 - r].copy()
        dev = np.abs(2 * np.arange(s2 + 1) - s2)
        observed = abs(2 * w2 - s2)
        p = counts[dev >= observed].sum() / counts.sum()
        return float(min(p, 1.0))
    w = w2 / 2.0
    mu = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks2, return_counts=True)
    tie_term = float(((tie_counts**3 - tie_counts) / 48.0).sum())
    sigma = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0 - tie_term)
    if sigma == 0:
        return 1.0
    z = max(abs(w - mu) - 0.5, 0.0) / sigma
    return float(min(math.erfc(z / math.sqrt(2.0)), 1.0))


def cliffs_delta(sample_a, sample_b) -> float:
    """Probability-of-superiority difference over all cross pairs, in [-1, 1]."""
    a = np.asarray(list(sample_a), dtype=np.float64)
    b = np.asarray(list(sample_b), dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ConfigurationError("Cliff's delta needs nonempty samples")
    gt = 0
    lt = 0
    chunk = max(1, 10_000_000 // max(len(b), 1))
    for start in range(0, len(a), chunk):
        block = a[start : start + chunk, None]
        gt += int((block > b[None, :]).sum())
        lt += int((block < b[None, :]).sum())
    return (gt - lt) / (len(a) * len(b))


@dataclass
class SignificanceReport:
    dataset: str
    comparison: str
    mean_delta: float
    wilcoxon_p: float
    cliffs_delta: float


def significance(
    dataset: str, comparison: str, scores_a: list[float], scores_b: list[float]
) -> SignificanceReport:
    """Paired comparison of per-episode metric values (a minus b)."""
    if len(scores_a) != len(scores_b):
        raise ConfigurationError("paired significance needs matched samples")
    deltas = np.asarray(scores_a) - np.asarray(scores_b)
    return SignificanceReport(
        dataset=dataset,
        comparison=comparison,
        mean_delta=float(deltas.mean()),
        wilcoxon_p=wilcoxon_signed_rank(deltas),
        cliffs_delta=cliffs_delta(scores_a, scores_b),
    )


# ---- aggregate reporting -------------------------------------------------------


@dataclass
class MetricSummary:
    mean: float
    std: float
    n_seeds: int


@dataclass
class MetricReport:
    metrics: dict[str, MetricSummary] = field(default_factory=dict)
    per_family: dict[str, dict[str, MetricSummary]] = field(default_factory=dict)

    @staticmethod
    def from_seed_values(
        seed_metrics: list[dict[str, float]],
        seed_family_metrics: list[dict[str, dict[str, float]]] | None = None,
    ) -> "MetricReport":
        report = MetricReport()
        keys = seed_metrics[0].keys()
        for key in keys:
            vals = np.array([m[key] for m in seed_metrics])
            report.metrics[key] = MetricSummary(float(vals.mean()), float(vals.std()), len(vals))
        if seed_family_metrics:
            families = seed_family_metrics[0].keys()
            for family in families:
                fam: dict[str, MetricSummary] = {}
                for key in seed_family_metrics[0][family]:
                    vals = np.array([m[family][key] for m in seed_family_metrics])
                    fam[key] = MetricSummary(float(vals.mean()), float(vals.std()), len(vals))
                report.per_family[family] = fam
        return report


def episode_metrics(episodes: list[Episode]) -> dict[str, float]:
    """Mean ranking metrics over completed episodes."""
    out: dict[str, list[float]] = {"hr@10": [], "hr@20": [], "ndcg@10": [], "ndcg@20": []}
    for ep in episodes:
        ranked = ep.final_ranking or ep.pool.first_stage_order()
        out["hr@10"].append(hr_at_k(ranked, ep.target, 10))
        out["hr@20"].append(hr_at_k(ranked, ep.target, 20))
        out["ndcg@10"].append(ndcg_at_k(ranked, ep.target, 10))
        out["ndcg@20"].append(ndcg_at_k(ranked, ep.target, 20))
    return {k: float(np.mean(v)) if v else 0.0 for k, v in out.items()}


# ---- fixed-pool full-catalog check ---------------------------------------------


@dataclass
class FullCatalogReport:
    recall_pre: float
    recall_post: float
    hr10: float
    ndcg10: float
    n_episodes: int


def full_catalog_check(
    env: Environment,
    policy,
    pairs: list[tuple[str, str]],
    family: TaskFamily,
    k: int = 100,
) -> FullCatalogReport:
    """Rerank plain top-K retrieved pools (no target insertion).

    Reranking permutes the fixed candidate set, so recall at the pool size is
    identical before and after by construction; the function asserts it.
    """
    from .training import run_episode

    recall_pre = []
    recall_post = []
    hr10 = []
    ndcg10 = []
    for user, target in pairs:
        episode = env.make_episode(
            user, target, family, split="test", full_catalog=True, pool_size=k
        )
        pre = 1 if episode.pool.contains_target else 0
        run_episode(env, episode, policy, greedy=True)
        ranked = episode.final_ranking or episode.pool.first_stage_order()
        post = 1 if target in ranked else 0
        if pre != post:
            raise AssertionError("reranking changed candidate-set recall")
        recall_pre.append(pre)
        recall_post.append(post)
        hr10.append(hr_at_k(ranked, target, 10))
        ndcg10.append(ndcg_at_k(ranked, target, 10))
    return FullCatalogReport(
        recall_pre=float(np.mean(recall_pre)),
        recall_post=float(np.mean(recall_post)),
        hr10=float(np.mean(hr10)),
        ndcg10=float(np.mean(ndcg10)),
        n_episodes=len(pairs),
    )


def render_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def fmt(cells):
        return "  ".join(c.ljust(widths[i]) for i, c in enumerate(cells))
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines)
