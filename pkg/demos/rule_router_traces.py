# The deterministic control probes text -> graph -> image exactly once each,
# skipping nothing, then scores with an equal-weight evidence combination.
# Its trace shape is fixed per task family.

import numpy as np

from modroute import SyntheticConfig, FAMILIES, Environment, RuleRouterPolicy
from modroute.corpus import build_item_graph, chronological_split, generate_synthetic_corpus
from modroute.retrieval import RetrievalBackend
from modroute.training import run_episode

catalog = generate_synthetic_corpus(SyntheticConfig(n_topics=4, n_items=120, n_users=60,
                                                    interactions_per_user=24, seed=19))
train, _, test = chronological_split(catalog)
graph = build_item_graph(train)
env = Environment(catalog, graph, RetrievalBackend(catalog, graph), train, pool_size=20)

rng = np.random.default_rng(4)
router = RuleRouterPolicy()
for family_id in ("full", "text-only", "img-only", "beh-only", "cold-user"):
    user, target = env.sample_pair(rng, test)
    episode = env.make_episode(user, target, FAMILIES[family_id])
    run_episode(env, episode, router, greedy=True)
    trace = " -> ".join(
        f"{e.action.kind}:{e.observation.kind[0].upper()}" for e in episode.history
    )
    nulls = sum(1 for e in episode.history if e.observation.kind == "null")
    print(f"{family_id:10s} ({len(episode.history)} turns, {nulls} failed calls)")
    print(f"    {trace}")
