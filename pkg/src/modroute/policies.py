"""Routing policies: the learned linear-softmax router, the deterministic
rule router control, and a scripted interactive variant.

All policies consume the same PolicyView, build terminal score maps through
the one shared evidence-scoring path, and never see the hidden mask. The
learned policy routes over a compact feature vector; its evidence-combiner
weights are tuned on validation episodes, not by the policy gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .context import combine_evidence_scores
from .environment import (
    ANALYZE_IMAGE,
    ANALYZE_TEXT,
    ASK_USER,
    AUTO,
    RETRIEVE_GRAPH,
    SCORE_CANDIDATES,
    Action,
    PolicyView,
)
from .retrieval import GRAPH, IMAGE, TEXT

POLICY_ACTIONS = (ANALYZE_TEXT, ANALYZE_IMAGE, RETRIEVE_GRAPH, ASK_USER, SCORE_CANDIDATES)
ACTION_INDEX = {kind: i for i, kind in enumerate(POLICY_ACTIONS)}
N_ACTIONS = len(POLICY_ACTIONS)

FEATURE_NAMES = (
    "turn_frac",
    "tried_text",
    "tried_image",
    "tried_graph",
    "tried_ask",
    "null_text",
    "null_image",
    "null_graph",
    "evidence_frac",
    "pool_entropy",
    "top_gap",
    "bias",
)
FEATURE_DIM = len(FEATURE_NAMES)

_TOOL_FLAGS = (ANALYZE_TEXT, ANALYZE_IMAGE, RETRIEVE_GRAPH)


def extract_features(view: PolicyView) -> np.ndarray:
    """Deterministic function of policy-visible history and pool statistics."""
    f = np.zeros(FEATURE_DIM)
    f[0] = view.turn / view.turn_budget
    for action, obs in view.steps:
        if action.kind in _TOOL_FLAGS:
            slot = _TOOL_FLAGS.index(action.kind)
            f[1 + slot] = 1.0
            if obs.kind == "null":
                f[5 + slot] = 1.0
        elif action.kind == ASK_USER:
            f[4] = 1.0
        if obs.kind == "evidence":
            f[8] += 1.0
    f[8] /= view.turn_budget
    s0 = np.array([e[2] for e in sorted(view.pool.entries, key=lambda e: e[1])])
    total = s0.sum()
    p = s0 / total if total > 0 else np.full(len(s0), 1.0 / len(s0))
    nz = p[p > 0]
    f[9] = float(-(nz * np.log(nz)).sum() / np.log(len(s0))) if len(s0) > 1 else 0.0
    f[10] = float(s0[0] - s0[1]) if len(s0) > 1 else 0.0
    f[11] = 1.0
    return f


@dataclass
class PolicyParams:
    theta: np.ndarray  # (N_ACTIONS, FEATURE_DIM) routing head
    weights: dict[str, float] = field(
        default_factory=lambda: {TEXT: 1.0, IMAGE: 1.0, GRAPH: 1.0}
    )
    mode: str = AUTO

    @staticmethod
    def zeros(mode: str = AUTO) -> "PolicyParams":
        return PolicyParams(theta=np.zeros((N_ACTIONS, FEATURE_DIM)), mode=mode)

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "weights": dict(self.weights),
            "mode": self.mode,
        }

    @staticmethod
    def from_dict(data: dict) -> "PolicyParams":
        return PolicyParams(
            theta=np.array(data["theta"], dtype=np.float64),
            weights={k: float(v) for k, v in data["weights"].items()},
            mode=data["mode"],
        )


def action_mask(mode: str) -> np.ndarray:
    """Boolean support over action kinds; auto mode removes ask_user entirely."""
    mask = np.ones(N_ACTIONS, dtype=bool)
    if mode == AUTO:
        mask[ACTION_INDEX[ASK_USER]] = False
    return mask


def policy_distribution(theta: np.ndarray, features: np.ndarray, mask: np.ndarray) -> np.ndarray:
    logits = theta @ features
    shifted = logits - logits[mask].max()
    exp = np.where(mask, np.exp(shifted), 0.0)
    return exp / exp.sum()


def log_probs(theta: np.ndarray, features: np.ndarray, mask: np.ndarray) -> np.ndarray:
    logits = np.where(mask, theta @ features, -np.inf)
    m = logits[mask].max()
    lse = m + np.log(np.exp(logits[mask] - m).sum())
    return logits - lse


def _tool_args(kind: str, view: PolicyView) -> dict:
    if kind == RETRIEVE_GRAPH:
        return {}
    analyzed = {
        action.args.get("item_id")
        for action, _ in view.steps
        if action.kind == kind
    }
    for iid in view.pool.first_stage_order():
        if iid not in analyzed:
            return {"item_id": iid}
    return {"item_id": view.pool.first_stage_order()[0]}


def _ask_args(view: PolicyView) -> dict:
    source = view.pool.source_modality
    if source == GRAPH:
        return {"modality": "behavior", "query": ""}
    name = "text" if source == TEXT else "image"
    return {"modality": name, "query": view.pool.first_stage_order()[0]}


def build_score_map(view: PolicyView, weights: dict[str, float]) -> dict[str, float]:
    """Terminal score map from gathered evidence via the shared scoring path."""
    state = view.evidence_state()
    ids = view.pool.item_ids
    modal = state.modality_scores(ids, view.summaries)
    return combine_evidence_scores(ids, modal, weights)


def _action_for(kind: str, view: PolicyView, weights: dict[str, float]) -> Action:
    if kind == SCORE_CANDIDATES:
        return Action(SCORE_CANDIDATES, {"scores": build_score_map(view, weights)})
    if kind == ASK_USER:
        return Action(ASK_USER, _ask_args(view))
    return Action(kind, _tool_args(kind, view))


class LinearPolicy:
    """Softmax routing over hand-designed features; args filled deterministically."""

    def __init__(self, params: PolicyParams):
        self.params = params

    def act(self, view: PolicyView, rng: np.random.Generator | None = None,
            greedy: bool = False) -> tuple[Action, str]:
        action, _, _, _ = self.act_with_info(view, rng, greedy)
        return action, ""

    def act_with_info(
        self, view: PolicyView, rng: np.random.Generator | None = None, greedy: bool = False
    ) -> tuple[Action, int, np.ndarray, float]:
        features = extract_features(view)
        mask = action_mask(self.params.mode)
        probs = policy_distribution(self.params.theta, features, mask)
        if greedy or rng is None:
            idx = int(np.argmax(probs))
        else:
            idx = int(rng.choice(N_ACTIONS, p=probs))
        logp = float(np.log(probs[idx]))
        action = _action_for(POLICY_ACTIONS[idx], view, self.params.weights)
        return action, idx, features, logp


def linear_policy_act(
    params: PolicyParams,
    view: PolicyView,
    rng: np.random.Generator | None = None,
    greedy: bool = False,
) -> Action:
    return LinearPolicy(params).act(view, rng, greedy)[0]


@dataclass(frozen=True)
class RuleRouterConfig:
    probe_order: tuple[str, ...] = (ANALYZE_TEXT, RETRIEVE_GRAPH, ANALYZE_IMAGE)
    skip_on_null: bool = True


EQUAL_WEIGHTS = {TEXT: 1.0, IMAGE: 1.0, GRAPH: 1.0}


def rule_router_act(view: PolicyView, config: RuleRouterConfig = RuleRouterConfig()) -> Action:
    """Probe text, graph, image once each (never retrying a Null), then score
    with an equal-weight combination of whatever evidence came back."""
    tried = {action.kind for action, _ in view.steps}
    for kind in config.probe_order:
        if kind not in tried:
            return Action(kind, _tool_args(kind, view))
    return Action(SCORE_CANDIDATES, {"scores": build_score_map(view, EQUAL_WEIGHTS)})


class RuleRouterPolicy:
    def __init__(self, config: RuleRouterConfig = RuleRouterConfig()):
        self.config = config

    def act(self, view: PolicyView, rng=None, greedy: bool = False) -> tuple[Action, str]:
        return rule_router_act(view, self.config), ""


class FirstStagePolicy:
    """Terminates immediately with an empty map, keeping the first-stage order."""

    def act(self, view: PolicyView, rng=None, greedy: bool = False) -> tuple[Action, str]:
        return Action(SCORE_CANDIDATES, {"scores": {}}), ""


class ScriptedInteractivePolicy:
    """Rule-router probes plus one clarification about the pool's source
    modality before scoring; with asks disabled it is exactly the rule router."""

    def __init__(self, ask_enabled: bool = True):
        self.ask_enabled = ask_enabled
        self.config = RuleRouterConfig()

    def act(self, view: PolicyView, rng=None, greedy: bool = False) -> tuple[Action, str]:
        tried = {action.kind for action, _ in view.steps}
        for kind in self.config.probe_order:
            if kind not in tried:
                return Action(kind, _tool_args(kind, view)), ""
        if self.ask_enabled and ASK_USER not in tried and view.mode != AUTO:
            return Action(ASK_USER, _ask_args(view)), ""
        return Action(SCORE_CANDIDATES, {"scores": build_score_map(view, EQUAL_WEIGHTS)}), ""
