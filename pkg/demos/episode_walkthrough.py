# Step through one masked episode by hand: probe tools, watch Null returns,
# submit a score map, and see the fused reward.

import numpy as np

from modroute import SyntheticConfig, FAMILIES, Action, Environment
from modroute.corpus import build_item_graph, chronological_split, generate_synthetic_corpus
from modroute.policies import build_score_map
from modroute.retrieval import RetrievalBackend

catalog = generate_synthetic_corpus(SyntheticConfig(n_topics=4, n_items=120, n_users=60,
                                                    interactions_per_user=24, seed=11))
train, _, test = chronological_split(catalog)
graph = build_item_graph(train)
env = Environment(catalog, graph, RetrievalBackend(catalog, graph), train,
                  pool_size=20, fusion_alpha=0.0)

rng = np.random.default_rng(2)
user, target = env.sample_pair(rng, test)
episode = env.make_episode(user, target, FAMILIES["beh-only"])
print(f"episode {episode.episode_id}: mask hides everything except behavior")
print("pool head:", [(iid, round(s0, 2)) for iid, _, s0 in episode.pool.entries[:4]])

top = episode.pool.first_stage_order()[0]

# text is masked: the first call returns Null at tool cost...
obs, reward, done = env.step(episode, Action("analyze_text", {"item_id": top}))
print(f"analyze_text  -> {obs.kind:13s} reward {reward:+.2f}")

# ...and repeating a Null-returning tool is penalized much harder
obs, reward, done = env.step(episode, Action("analyze_text", {"item_id": top}))
print(f"analyze_text  -> {obs.kind:13s} reward {reward:+.2f}  (repeat of a Null tool)")

# behavior is present: the graph tool surfaces co-occurrence neighbors
obs, reward, done = env.step(episode, Action("retrieve_graph", {}))
print(f"retrieve_graph-> {obs.kind:13s} reward {reward:+.2f}, "
      f"{len(obs.payload['neighbors'])} neighbors, first: {obs.payload['neighbors'][0]}")

# a second walk pages deeper into the history
obs, reward, done = env.step(episode, Action("retrieve_graph", {}))
print(f"retrieve_graph-> {obs.kind:13s} reward {reward:+.2f}, "
      f"{len(obs.payload['neighbors'])} neighbors after the full walk")

# terminal: score candidates from gathered evidence; reward is NDCG@10
scores = build_score_map(episode.view(), {"text": 0, "image": 0, "graph": 1})
obs, reward, done = env.step(episode, Action("score_candidates", {"scores": scores}))
rank = episode.final_ranking.index(episode.target) + 1
print(f"score_candidates -> done={done}, target fused rank {rank}, NDCG@10 reward {reward:.3f}")
