# Build a synthetic multimodal catalog, split it chronologically, and look at
# the co-occurrence graph that behavioral evidence is served from.

import numpy as np

from modroute import (
    SyntheticConfig,
    build_item_graph,
    chronological_split,
    generate_synthetic_corpus,
)

config = SyntheticConfig(n_topics=6, n_items=240, n_users=120,
                         interactions_per_user=30, seed=3)
catalog = generate_synthetic_corpus(config)
print(f"catalog: {len(catalog.items)} items, {len(catalog.users)} users, "
      f"{len(catalog.interactions)} interactions")

item = next(iter(catalog.items.values()))
print("example item:")
print("  title:", " ".join(item.title))
print("  category:", " ".join(item.category))
print("  tags:", item.image_tags)

train, val, test = chronological_split(catalog)
print(f"chronological split: {len(train)} train / {len(val)} val / {len(test)} test")
print("boundary timestamps:", train[-1].timestamp, val[0].timestamp, test[0].timestamp)

graph = build_item_graph(train)
degrees = np.array([len(nbrs) for nbrs in graph.adjacency.values()])
weights = np.array([w for nbrs in graph.adjacency.values() for _, w in nbrs])
print(f"graph: {len(graph.adjacency)} nodes, mean degree {degrees.mean():.1f}, "
      f"median edge weight {np.median(weights):.0f}")

# co-occurrence is symmetric with no self-loops
some = next(iter(graph.adjacency))
nbr, w = graph.adjacency[some][0]
print(f"spot check: weight({some}, {nbr}) = {w} = weight({nbr}, {some}) = {graph.weight(nbr, some)}")
