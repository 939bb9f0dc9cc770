"""Partially observable episode engine with maskable evidence tools.

A hidden per-episode modality mask decides which tools return evidence and
which return Null. Nothing the policy can observe encodes the mask directly;
missingness is discoverable only through Null observations. The terminal
action submits a candidate score map which is fused with first-stage scores
and rewarded by NDCG@10 of the hidden target; step costs follow the
tool/ask/invalid penalty schedule.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .context import ContextConfig, EvidenceState, UserContext, build_summary
from .corpus import Catalog, Interaction, ItemGraph
from .errors import ConfigurationError, UsageError
from .ranking import fuse_scores, ndcg_at_k
from .retrieval import (
    GRAPH,
    IMAGE,
    TEXT,
    CandidatePool,
    RetrievalBackend,
    build_retrieved_pool,
    build_target_positive_pool,
)

ANALYZE_TEXT = "analyze_text"
ANALYZE_IMAGE = "analyze_image"
RETRIEVE_GRAPH = "retrieve_graph"
ASK_USER = "ask_user"
SCORE_CANDIDATES = "score_candidates"

EVIDENCE_TOOLS = (ANALYZE_TEXT, ANALYZE_IMAGE, RETRIEVE_GRAPH)
ACTION_KINDS = EVIDENCE_TOOLS + (ASK_USER, SCORE_CANDIDATES)

TOOL_MODALITY = {ANALYZE_TEXT: TEXT, ANALYZE_IMAGE: IMAGE, RETRIEVE_GRAPH: GRAPH}
ASK_MODALITY = {"text": TEXT, "image": IMAGE, "behavior": GRAPH}

AUTO = "auto"
INTERACTIVE = "interactive"

SURVIVING_PRIORITY = (TEXT, GRAPH, IMAGE)


@dataclass(frozen=True)
class ModalityMask:
    m_text: int
    m_img: int
    m_beh: int

    def bit(self, modality: str) -> int:
        return {TEXT: self.m_text, IMAGE: self.m_img, GRAPH: self.m_beh}[modality]


@dataclass(frozen=True)
class TaskFamily:
    family_id: str
    mask: ModalityMask


FAMILIES: dict[str, TaskFamily] = {
    "full": TaskFamily("full", ModalityMask(1, 1, 1)),
    "no-text": TaskFamily("no-text", ModalityMask(0, 1, 1)),
    "no-img": TaskFamily("no-img", ModalityMask(1, 0, 1)),
    "cold-user": TaskFamily("cold-user", ModalityMask(1, 1, 0)),
    "text-only": TaskFamily("text-only", ModalityMask(1, 0, 0)),
    "img-only": TaskFamily("img-only", ModalityMask(0, 1, 0)),
    "beh-only": TaskFamily("beh-only", ModalityMask(0, 0, 1)),
}
FAMILY_ORDER = tuple(FAMILIES)
SINGLE_SOURCE_FAMILIES = ("text-only", "img-only", "beh-only")

# the tool a perfectly routed first action would call per single-surviving-modality family
EXPECTED_FIRST_TOOL = {
    "text-only": ANALYZE_TEXT,
    "img-only": ANALYZE_IMAGE,
    "beh-only": RETRIEVE_GRAPH,
}


def surviving_modality(mask: ModalityMask) -> str:
    for modality in SURVIVING_PRIORITY:
        if mask.bit(modality):
            return modality
    raise ConfigurationError("mask must keep at least one modality")


@dataclass
class Action:
    kind: str
    args: dict = field(default_factory=dict)


@dataclass
class Observation:
    kind: str  # evidence | null | clarification | terminal
    payload: dict | None = None


@dataclass
class HistoryEntry:
    t: int
    rationale: str
    action: Action
    observation: Observation
    reward: float


@dataclass(frozen=True)
class RewardParams:
    lambda_tool: float = -0.02
    lambda_ask: float = -0.10
    lambda_invalid: float = -0.20
    turn_budget: int = 8
    gamma: float = 1.0

    def __post_init__(self) -> None:
        if not self.lambda_invalid <= self.lambda_ask <= self.lambda_tool < 0:
            raise ConfigurationError("penalties must satisfy invalid <= ask <= tool < 0")
        if self.turn_budget < 1:
            raise ConfigurationError("turn budget must be >= 1")


@dataclass
class PolicyView:
    """The slice of episode state a policy may legally condition on."""

    episode_id: str
    pool: CandidatePool
    summaries: dict[str, str]
    mode: str
    turn_budget: int
    steps: list[tuple[Action, Observation]] = field(default_factory=list)

    @property
    def turn(self) -> int:
        return len(self.steps) + 1

    def evidence_state(self) -> EvidenceState:
        state = EvidenceState(source_modality=self.pool.source_modality)
        for action, obs in self.steps:
            state.update(action.kind, obs.kind, obs.payload)
        return state


@dataclass
class Episode:
    episode_id: str
    user_id: str
    target: str  # evaluator-only, never exposed to policies
    family: TaskFamily
    pool: CandidatePool
    summaries: dict[str, str]
    mode: str
    split: str  # support | query | val | test
    context: UserContext  # evaluator-side; policies must go through view()
    turn_budget: int = 8
    history: list[HistoryEntry] = field(default_factory=list)
    null_seen: set[str] = field(default_factory=set)
    done: bool = False
    final_ranking: list[str] | None = None
    outcome: str | None = None  # scored | fallback_invalid | fallback_timeout

    def view(self) -> PolicyView:
        return PolicyView(
            episode_id=self.episode_id,
            pool=self.pool,
            summaries=self.summaries,
            mode=self.mode,
            turn_budget=self.turn_budget,
            steps=[(e.action, e.observation) for e in self.history],
        )

    def final_ndcg10(self) -> float:
        if self.final_ranking is None:
            return 0.0
        return ndcg_at_k(self.final_ranking, self.target, 10)


def episode_return(history: list[HistoryEntry], gamma: float) -> float:
    """Discounted return with the discount exponent starting at turn 1."""
    return float(sum((gamma ** entry.t) * entry.reward for entry in history))


def split_tag(family_id: str, user_id: str, target: str) -> str:
    """Stable 80/20 support/query assignment by episode identity hash."""
    digest = hashlib.sha256(f"{family_id}:{user_id}:{target}".encode()).digest()
    return "query" if digest[0] % 5 == 0 else "support"


class Environment:
    """Episode factory and transition function over one immutable corpus."""

    def __init__(
        self,
        catalog: Catalog,
        graph: ItemGraph,
        backend: RetrievalBackend,
        train_interactions: list[Interaction],
        reward: RewardParams = RewardParams(),
        pool_size: int = 100,
        mode: str = AUTO,
        fusion_alpha: float = 0.5,
        context_config: ContextConfig = ContextConfig(),
    ):
        if pool_size < 2:
            raise ConfigurationError("pool size must be >= 2")
        self.catalog = catalog
        self.graph = graph
        self.backend = backend
        self.reward = reward
        self.pool_size = pool_size
        self.mode = mode
        self.fusion_alpha = fusion_alpha
        self.context_config = context_config
        self._history_by_user: dict[str, list[Interaction]] = {}
        for inter in train_interactions:
            self._history_by_user.setdefault(inter.user_id, []).append(inter)

    # ---- episode construction -------------------------------------------------

    def sample_task_family(self, rng: np.random.Generator) -> TaskFamily:
        return FAMILIES[FAMILY_ORDER[int(rng.integers(len(FAMILY_ORDER)))]]

    def user_context(self, user_id: str, exclude_item: str) -> UserContext:
        history = [
            x for x in self._history_by_user.get(user_id, []) if x.item_id != exclude_item
        ]
        return UserContext(user_id, history, self.catalog, self.backend, self.context_config)

    def sample_pair(
        self, rng: np.random.Generator, interactions: list[Interaction]
    ) -> tuple[str, str]:
        """Draw a (user, target) episode pair whose remaining context is nonempty."""
        if not interactions:
            raise ConfigurationError("no interactions to sample episodes from")
        for _ in range(1000):
            inter = interactions[int(rng.integers(len(interactions)))]
            history = self._history_by_user.get(inter.user_id, [])
            if any(x.item_id != inter.item_id for x in history):
                return inter.user_id, inter.item_id
        raise ConfigurationError("could not sample a user with usable history")

    def make_episode(
        self,
        user_id: str,
        target: str,
        family: TaskFamily,
        split: str = "test",
        episode_id: str | None = None,
        full_catalog: bool = False,
        pool_size: int | None = None,
    ) -> Episode:
        context = self.user_context(user_id, exclude_item=target)
        source = surviving_modality(family.mask)
        evidence = context.stage_evidence(source)
        b = self.pool_size if pool_size is None else pool_size
        if episode_id is None:
            episode_id = f"{split}:{family.family_id}:{user_id}:{target}"
        if full_catalog:
            pool = build_retrieved_pool(
                episode_id, source, evidence, self.backend, b, target=target
            )
        else:
            pool = build_target_positive_pool(
                episode_id, target, source, evidence, self.backend, b
            )
        summaries = {
            iid: build_summary(iid, source, self.catalog, self.backend)
            for iid in pool.item_ids
        }
        return Episode(
            episode_id=episode_id,
            user_id=user_id,
            target=target,
            family=family,
            pool=pool,
            summaries=summaries,
            mode=self.mode,
            split=split,
            context=context,
            turn_budget=self.reward.turn_budget,
        )

    # ---- transition -----------------------------------------------------------

    def step(self, episode: Episode, action: Action, rationale: str = "") -> tuple[Observation, float, bool]:
        if episode.done:
            raise UsageError("step() called on a finished episode")
        t = len(episode.history) + 1
        mask = episode.family.mask
        kind = action.kind
        reward: float
        obs: Observation

        if kind == SCORE_CANDIDATES:
            scores = action.args.get("scores")
            if self._valid_score_map(scores, episode.pool):
                # canonicalize for transcripts: JSON clients may send integral
                # numbers where the map semantically holds floats
                scores = {iid: float(v) for iid, v in scores.items()}
                action.args["scores"] = scores
                ranked = [iid for iid, _ in fuse_scores(episode.pool, scores, self.fusion_alpha)]
                episode.final_ranking = ranked
                episode.outcome = "scored"
                reward = ndcg_at_k(ranked, episode.target, 10)
            else:
                episode.final_ranking = episode.pool.first_stage_order()
                episode.outcome = "fallback_invalid"
                reward = self.reward.lambda_invalid
            obs = Observation("terminal")
            episode.done = True

        elif kind in TOOL_MODALITY:
            modality = TOOL_MODALITY[kind]
            if kind in episode.null_seen:
                obs, reward = Observation("null"), self.reward.lambda_invalid
            elif not self._valid_tool_args(kind, action, episode):
                obs, reward = Observation("null"), self.reward.lambda_invalid
            elif not mask.bit(modality):
                obs, reward = Observation("null"), self.reward.lambda_tool
                episode.null_seen.add(kind)
            else:
                obs = Observation("evidence", self._tool_payload(kind, action, episode))
                reward = self.reward.lambda_tool

        elif kind == ASK_USER:
            if episode.mode == AUTO:
                obs, reward = Observation("null"), self.reward.lambda_invalid
            else:
                modality = ASK_MODALITY.get(action.args.get("modality", ""))
                if modality is None or not self._valid_ask_args(modality, action, episode):
                    obs, reward = Observation("null"), self.reward.lambda_invalid
                elif not mask.bit(modality):
                    obs, reward = Observation("null"), self.reward.lambda_ask
                else:
                    obs = Observation(
                        "clarification", self._ask_payload(modality, action, episode)
                    )
                    reward = self.reward.lambda_ask
        else:
            obs, reward = Observation("null"), self.reward.lambda_invalid

        if not episode.done and t >= self.reward.turn_budget:
            # budget exhausted without a terminal action: fall back to the
            # first-stage ranking, charging one invalid penalty on top of the
            # final action's own cost
            episode.final_ranking = episode.pool.first_stage_order()
            episode.outcome = "fallback_timeout"
            reward += ndcg_at_k(episode.final_ranking, episode.target, 10)
            reward += self.reward.lambda_invalid
            obs = Observation("terminal")
            episode.done = True

        episode.history.append(HistoryEntry(t, rationale, action, obs, reward))
        return obs, reward, episode.done

    # ---- validation and payload synthesis -------------------------------------

    @staticmethod
    def _valid_score_map(scores, pool: CandidatePool) -> bool:
        if not isinstance(scores, dict):
            return False
        ids = set(pool.item_ids)
        for key, value in scores.items():
            if not isinstance(key, str) or key not in ids:
                return False
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                return False
            if not math.isfinite(float(value)):
                return False
        return True

    def _valid_tool_args(self, kind: str, action: Action, episode: Episode) -> bool:
        if kind == RETRIEVE_GRAPH:
            user = action.args.get("user_id", episode.user_id)
            if user != episode.user_id:
                return False
            action.args["user_id"] = episode.user_id
            return True
        item = action.args.get("item_id")
        return isinstance(item, str) and item in episode.summaries

    def _valid_ask_args(self, modality: str, action: Action, episode: Episode) -> bool:
        if modality == GRAPH:
            action.args.setdefault("query", "")
            return True
        query = action.args.get("query")
        return isinstance(query, str) and query in episode.summaries

    def _tool_payload(self, kind: str, action: Action, episode: Episode) -> dict:
        if kind == RETRIEVE_GRAPH:
            # repeat calls page deeper: first call sees the recent window, a
            # second walk aggregates the whole history
            prior = sum(
                1
                for e in episode.history
                if e.action.kind == RETRIEVE_GRAPH and e.observation.kind == "evidence"
            )
            depth = self.context_config.tool_depth if prior == 0 else None
            neighbors = episode.context.graph_neighbors(depth)
            return {
                "user_id": episode.user_id,
                "neighbors": [[iid, title, w] for iid, title, w in neighbors],
            }
        item = self.catalog.items[action.args["item_id"]]
        if kind == ANALYZE_TEXT:
            return {
                "item_id": item.item_id,
                "title": " ".join(item.title),
                "category": " ".join(item.category),
                "description": " ".join(item.description[:8]),
            }
        return {"item_id": item.item_id, "tags": list(item.image_tags[:5])}

    def _ask_payload(self, modality: str, action: Action, episode: Episode) -> dict:
        if modality == GRAPH:
            neighbors = episode.context.graph_neighbors(None)
            titles = "; ".join(title for _, title, _ in neighbors[:5])
            return {
                "answer": f"often liked together with: {titles}",
                "neighbors": [[iid, w] for iid, _, w in neighbors],
            }
        item = self.catalog.items[action.args["query"]]
        if modality == TEXT:
            return {
                "answer": f"title: {' '.join(item.title)}; category: {' '.join(item.category)}"
            }
        return {"answer": "tags: " + " ".join(item.image_tags[:5])}
