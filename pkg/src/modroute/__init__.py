"""Evidence-routing workbench for reranking under missing modalities."""

from .corpus import (
    Catalog,
    Interaction,
    ItemGraph,
    ItemRecord,
    SyntheticConfig,
    build_item_graph,
    chronological_split,
    generate_synthetic_corpus,
    load_catalog,
)
from .environment import (
    FAMILIES,
    SINGLE_SOURCE_FAMILIES,
    Action,
    Environment,
    Episode,
    ModalityMask,
    Observation,
    RewardParams,
    TaskFamily,
    episode_return,
)
from .evaluation import (
    agentic_metrics,
    cliffs_delta,
    full_catalog_check,
    grid_search_alpha,
    significance,
    wilcoxon_signed_rank,
)
from .policies import (
    LinearPolicy,
    PolicyParams,
    RuleRouterConfig,
    RuleRouterPolicy,
    ScriptedInteractivePolicy,
    extract_features,
    linear_policy_act,
    rule_router_act,
)
from .ranking import fuse_scores, hr_at_k, ndcg_at_k
from .retrieval import (
    CandidatePool,
    RetrievalBackend,
    bm25_score,
    build_retrieved_pool,
    build_target_positive_pool,
    normalize_first_stage,
    recall_at_k,
    retrieve_graph,
    retrieve_image,
    retrieve_text,
)
from .training import (
    PPOConfig,
    Trajectory,
    ValueParams,
    collect_rollouts,
    compute_gae,
    ppo_update,
    train,
    value_update,
)

__version__ = "0.1.0"
