# PPO-train the linear routing policy at reduced scale and watch the return
# climb as it learns to walk the graph twice and terminate early elsewhere.

import numpy as np

from modroute import SyntheticConfig, Environment, PPOConfig, PolicyParams, train
from modroute.corpus import build_item_graph, chronological_split, generate_synthetic_corpus
from modroute.retrieval import RetrievalBackend

catalog = generate_synthetic_corpus(SyntheticConfig(seed=1))
train_split, _, _ = chronological_split(catalog)
graph = build_item_graph(train_split)
env = Environment(catalog, graph, RetrievalBackend(catalog, graph), train_split,
                  pool_size=100, fusion_alpha=0.0)

config = PPOConfig(learning_rate=0.04, batch_episodes=64, iterations=120,
                   entropy_coef=0.05, log_every=40, diag_episodes_per_family=4, seed=1)
params, value_params, logs = train(PolicyParams.zeros(), env, train_split, config)

print("iter  mean_return  clip_frac  value_loss")
for record in logs[::10]:
    print(f"{record['iter']:4d}  {record['mean_return']:+.4f}      "
          f"{record['clip_frac']:.3f}     {record['value_loss']:.4f}")

diag = next(r["per_family_ndcg10"] for r in reversed(logs) if r["per_family_ndcg10"])
print("\nquery-split NDCG@10 by family at the last diagnostic checkpoint:")
for family, value in diag.items():
    print(f"  {family:10s} {value if value is None else round(value, 4)}")
