"""End-to-end experiment pipelines: corpus prep, training, validation tuning,
matched-episode evaluation, and the router comparison protocol.

Fusion weights are selected per policy on validation episodes and then frozen
for the test pass; both policies are evaluated on identical test episodes so
significance tests stay paired.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import EvalProtocol, ExperimentConfig
from .context import ContextConfig
from .corpus import (
    Catalog,
    Interaction,
    ItemGraph,
    annotate_graph_degrees,
    build_item_graph,
    chronological_split,
    generate_synthetic_corpus,
    load_catalog,
)
from .environment import (
    AUTO,
    FAMILIES,
    FAMILY_ORDER,
    INTERACTIVE,
    Environment,
    Episode,
    RewardParams,
    TaskFamily,
)
from .errors import ConfigurationError
from .evaluation import (
    ALPHA_GRID,
    AgenticMetrics,
    FullCatalogReport,
    SignificanceReport,
    agentic_metrics,
    episode_metrics,
    full_catalog_check,
    grid_search_alpha,
    significance,
)
from .policies import (
    EQUAL_WEIGHTS,
    LinearPolicy,
    PolicyParams,
    RuleRouterPolicy,
    ScriptedInteractivePolicy,
)
from .ranking import fuse_scores, ndcg_at_k
from .retrieval import GRAPH, IMAGE, TEXT, RetrievalBackend
from .training import PPOConfig, ValueParams, run_episode, train

WEIGHT_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass
class CorpusBundle:
    catalog: Catalog
    graph: ItemGraph
    backend: RetrievalBackend
    train: list[Interaction]
    val: list[Interaction]
    test: list[Interaction]


def prepare_corpus(config: ExperimentConfig) -> CorpusBundle:
    if config.synthetic is not None:
        catalog = generate_synthetic_corpus(config.synthetic)
    else:
        catalog = load_catalog(config.items_path, config.interactions_path)
    train, val, test = chronological_split(catalog)
    graph = build_item_graph(train)
    annotate_graph_degrees(catalog, graph)
    backend = RetrievalBackend(catalog, graph)
    return CorpusBundle(catalog, graph, backend, train, val, test)


def make_environment(
    bundle: CorpusBundle,
    config: ExperimentConfig,
    mode: str | None = None,
    fusion_alpha: float | None = None,
) -> Environment:
    return Environment(
        catalog=bundle.catalog,
        graph=bundle.graph,
        backend=bundle.backend,
        train_interactions=bundle.train,
        reward=config.reward,
        pool_size=config.pool_size,
        mode=config.mode if mode is None else mode,
        fusion_alpha=config.train_alpha if fusion_alpha is None else fusion_alpha,
        context_config=config.context,
    )


def sample_episode_specs(
    env: Environment,
    interactions: list[Interaction],
    families: tuple[str, ...],
    n_per_family: int,
    rng: np.random.Generator,
) -> list[tuple[TaskFamily, str, str]]:
    specs = []
    for family_id in families:
        family = FAMILIES[family_id]
        for _ in range(n_per_family):
            user, target = env.sample_pair(rng, interactions)
            specs.append((family, user, target))
    return specs


def replay_policy(
    env: Environment,
    specs: list[tuple[TaskFamily, str, str]],
    policy,
    split: str = "test",
) -> list[Episode]:
    episodes = []
    for family, user, target in specs:
        episode = env.make_episode(user, target, family, split=split)
        run_episode(env, episode, policy, greedy=True)
        episodes.append(episode)
    return episodes


# ---- validation tuning ---------------------------------------------------------


def _cached_eval_state(episodes: list[Episode]):
    cached = []
    for ep in episodes:
        state = ep.view().evidence_state()
        ids = ep.pool.item_ids
        cached.append((ep.pool, state.modality_scores(ids, ep.summaries), ep.target))
    return cached


def _mean_ndcg_for(cached, weights: dict[str, float], alpha: float) -> float:
    from .context import combine_evidence_scores

    total = 0.0
    for pool, modal, target in cached:
        scores = combine_evidence_scores(pool.item_ids, modal, weights)
        ranked = [iid for iid, _ in fuse_scores(pool, scores, alpha)]
        total += ndcg_at_k(ranked, target, 10)
    return total / len(cached)


def tune_combiner_weights(
    episodes: list[Episode], grid: tuple[float, ...] = WEIGHT_GRID, sweeps: int = 2
) -> dict[str, float]:
    """Coordinate grid search of the evidence-combiner weights on validation
    episodes, judged by the agent-score ranking alone (alpha = 0)."""
    if not episodes:
        raise ConfigurationError("weight tuning needs validation episodes")
    cached = _cached_eval_state(episodes)
    weights = {TEXT: 1.0, IMAGE: 1.0, GRAPH: 1.0}
    best = _mean_ndcg_for(cached, weights, 0.0)
    for _ in range(sweeps):
        for modality in (TEXT, IMAGE, GRAPH):
            for value in grid:
                cand = dict(weights)
                cand[modality] = value
                score = _mean_ndcg_for(cached, cand, 0.0)
                if score > best + 1e-12:
                    weights, best = cand, score
    total = sum(weights.values())
    if total > 0:
        weights = {m: w / total for m, w in weights.items()}
    return weights


def tune_alpha_with_weights(
    episodes: list[Episode], weights: dict[str, float], grid=ALPHA_GRID
) -> float:
    """11-point fusion grid with maps rebuilt under the given combiner weights;
    ties prefer the smaller alpha (lean on the first stage)."""
    cached = _cached_eval_state(episodes)
    best_alpha, best = None, -1.0
    for alpha in grid:
        score = _mean_ndcg_for(cached, weights, alpha)
        if score > best + 1e-12:
            best_alpha, best = alpha, score
    return float(best_alpha)


# ---- per-policy evaluation -----------------------------------------------------


@dataclass
class PolicyEvaluation:
    name: str
    alpha: float
    weights: dict[str, float]
    episodes: list[Episode] = field(repr=False, default_factory=list)
    metrics: dict[str, float] = field(default_factory=dict)
    per_family: dict[str, dict[str, float]] = field(default_factory=dict)
    agentic: AgenticMetrics | None = None
    episode_ndcg10: list[float] = field(default_factory=list)


def evaluate_policy(
    env: Environment,
    specs,
    policy,
    name: str,
    alpha: float,
    weights: dict[str, float],
) -> PolicyEvaluation:
    previous_alpha = env.fusion_alpha
    env.fusion_alpha = alpha
    try:
        episodes = replay_policy(env, specs, policy)
    finally:
        env.fusion_alpha = previous_alpha
    by_family: dict[str, list[Episode]] = {}
    for ep in episodes:
        by_family.setdefault(ep.family.family_id, []).append(ep)
    result = PolicyEvaluation(name=name, alpha=alpha, weights=dict(weights))
    result.episodes = episodes
    result.metrics = episode_metrics(episodes)
    result.per_family = {fam: episode_metrics(eps) for fam, eps in by_family.items()}
    result.agentic = agentic_metrics(episodes)
    result.episode_ndcg10 = [ep.final_ndcg10() for ep in episodes]
    return result


# ---- the router comparison protocol --------------------------------------------


@dataclass
class SeedOutcome:
    seed: int
    learned: PolicyEvaluation
    rule: PolicyEvaluation
    params: PolicyParams
    value_params: ValueParams
    train_log: list[dict]


@dataclass
class ComparisonResult:
    seeds: list[SeedOutcome]
    significance: SignificanceReport
    full_catalog: dict[str, FullCatalogReport]

    def mean_metric(self, policy: str, key: str) -> float:
        vals = [getattr(s, policy).metrics[key] for s in self.seeds]
        return float(np.mean(vals))

    def pooled_agentic(self, policy: str) -> AgenticMetrics:
        episodes = [ep for s in self.seeds for ep in getattr(s, policy).episodes]
        return agentic_metrics(episodes)


def train_learned_policy(
    bundle: CorpusBundle, config: ExperimentConfig, seed: int
) -> tuple[PolicyParams, ValueParams, list[dict]]:
    env = make_environment(bundle, config, mode=AUTO)
    ppo = PPOConfig(
        learning_rate=config.ppo.learning_rate,
        batch_episodes=config.ppo.batch_episodes,
        clip_epsilon=config.ppo.clip_epsilon,
        gae_lambda=config.ppo.gae_lambda,
        iterations=config.ppo.iterations,
        update_epochs=config.ppo.update_epochs,
        entropy_coef=config.ppo.entropy_coef,
        value_ridge=config.ppo.value_ridge,
        log_every=config.ppo.log_every,
        diag_episodes_per_family=config.ppo.diag_episodes_per_family,
        seed=seed,
    )
    initial = PolicyParams.zeros(mode=AUTO)
    return train(initial, env, bundle.train, ppo)


def run_seed(
    bundle: CorpusBundle, config: ExperimentConfig, seed: int
) -> SeedOutcome:
    params, value_params, train_log = train_learned_policy(bundle, config, seed)
    env = make_environment(bundle, config, mode=AUTO)

    val_rng = np.random.default_rng([101, seed])
    val_specs = sample_episode_specs(
        env, bundle.val, FAMILY_ORDER, config.eval.val_episodes_per_family, val_rng
    )
    learned_val = replay_policy(env, val_specs, LinearPolicy(params), split="val")
    weights = tune_combiner_weights(learned_val)
    alpha_learned = tune_alpha_with_weights(learned_val, weights)
    tuned_params = PolicyParams(theta=params.theta, weights=weights, mode=params.mode)

    rule = RuleRouterPolicy()
    rule_val = replay_policy(env, val_specs, rule, split="val")
    alpha_rule = grid_search_alpha(rule_val)

    test_rng = np.random.default_rng([202, seed])
    test_specs = sample_episode_specs(
        env, bundle.test, config.eval.families, config.eval.episodes_per_family, test_rng
    )
    learned_eval = evaluate_policy(
        env, test_specs, LinearPolicy(tuned_params), "learned", alpha_learned, weights
    )
    rule_eval = evaluate_policy(
        env, test_specs, rule, "rule-router", alpha_rule, EQUAL_WEIGHTS
    )
    return SeedOutcome(
        seed=seed,
        learned=learned_eval,
        rule=rule_eval,
        params=tuned_params,
        value_params=value_params,
        train_log=train_log,
    )


def run_comparison(bundle: CorpusBundle, config: ExperimentConfig) -> ComparisonResult:
    """Learned router vs deterministic control on matched test episodes."""
    outcomes = [run_seed(bundle, config, seed) for seed in config.seeds]
    learned_scores = [x for o in outcomes for x in o.learned.episode_ndcg10]
    rule_scores = [x for o in outcomes for x in o.rule.episode_ndcg10]
    sig = significance("synthetic", "learned vs rule-router", learned_scores, rule_scores)

    full_catalog: dict[str, FullCatalogReport] = {}
    env = make_environment(bundle, config, mode=AUTO)
    fc_rng = np.random.default_rng([303, config.seeds[0]])
    n_fc = config.eval.full_catalog_episodes
    fc_pairs = [env.sample_pair(fc_rng, bundle.test) for _ in range(n_fc)]
    first = outcomes[0]
    env.fusion_alpha = first.learned.alpha
    for family_id in config.eval.families:
        full_catalog[family_id] = full_catalog_check(
            env,
            LinearPolicy(first.params),
            fc_pairs,
            FAMILIES[family_id],
            k=config.eval.pool_size,
        )
    return ComparisonResult(seeds=outcomes, significance=sig, full_catalog=full_catalog)


# ---- interactive upper-bound check ---------------------------------------------


@dataclass
class InteractiveCheck:
    interactive_ndcg10: float
    auto_ndcg10: float
    per_seed: list[tuple[float, float]]


def run_interactive_check(bundle: CorpusBundle, config: ExperimentConfig) -> InteractiveCheck:
    """Scripted clarification policy against the same policy with asks disabled."""
    per_seed = []
    for seed in config.seeds:
        env_inter = make_environment(bundle, config, mode=INTERACTIVE)
        env_auto = make_environment(bundle, config, mode=AUTO)
        val_rng = np.random.default_rng([404, seed])
        val_specs = sample_episode_specs(
            env_auto, bundle.val, FAMILY_ORDER, config.eval.val_episodes_per_family, val_rng
        )
        inter_policy = ScriptedInteractivePolicy(ask_enabled=True)
        auto_policy = ScriptedInteractivePolicy(ask_enabled=False)
        alpha_inter = grid_search_alpha(
            replay_policy(env_inter, val_specs, inter_policy, split="val")
        )
        alpha_auto = grid_search_alpha(
            replay_policy(env_auto, val_specs, auto_policy, split="val")
        )
        test_rng = np.random.default_rng([505, seed])
        test_specs = sample_episode_specs(
            env_auto, bundle.test, config.eval.families,
            config.eval.episodes_per_family, test_rng,
        )
        inter_eval = evaluate_policy(
            env_inter, test_specs, inter_policy, "interactive", alpha_inter, EQUAL_WEIGHTS
        )
        auto_eval = evaluate_policy(
            env_auto, test_specs, auto_policy, "auto", alpha_auto, EQUAL_WEIGHTS
        )
        per_seed.append((inter_eval.metrics["ndcg@10"], auto_eval.metrics["ndcg@10"]))
    inter_mean = float(np.mean([a for a, _ in per_seed]))
    auto_mean = float(np.mean([b for _, b in per_seed]))
    return InteractiveCheck(inter_mean, auto_mean, per_seed)
