"""Catalogs, interaction logs, chronological splits, and the item co-occurrence graph.

Items carry three evidence channels: text fields (title/category/description),
image tags, and their position in a co-occurrence graph built from training
interactions. A synthetic generator produces topic-structured catalogs so that
every channel independently carries a recoverable preference signal.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataFormatError, IntegrityError

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop empty tokens."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


@dataclass
class ItemRecord:
    item_id: str
    title: list[str]
    category: list[str]
    description: list[str]
    image_tags: list[str]
    graph_degree: int = 0

    def text_tokens(self) -> list[str]:
        return self.title + self.category + self.description


@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    timestamp: int


@dataclass
class Catalog:
    items: dict[str, ItemRecord]
    users: set[str]
    interactions: list[Interaction]  # sorted ascending by timestamp

    def __post_init__(self) -> None:
        self.interactions = sorted(self.interactions, key=lambda x: x.timestamp)
        for inter in self.interactions:
            if inter.item_id not in self.items:
                raise IntegrityError(
                    f"interaction references unknown item {inter.item_id!r}"
                )

    def serialize(self) -> str:
        """Canonical JSON of the whole catalog, for determinism checks."""
        payload = {
            "items": {
                iid: {
                    "title": it.title,
                    "category": it.category,
                    "description": it.description,
                    "image_tags": it.image_tags,
                }
                for iid, it in sorted(self.items.items())
            },
            "interactions": [
                [x.user_id, x.item_id, x.timestamp] for x in self.interactions
            ],
        }
        return json.dumps(payload, sort_keys=True)

    def content_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()


@dataclass
class ItemGraph:
    """Symmetric co-occurrence graph; weight = number of distinct co-interacting users."""

    adjacency: dict[str, list[tuple[str, int]]] = field(default_factory=dict)

    def weight(self, a: str, b: str) -> int:
        for nbr, w in self.adjacency.get(a, ()):
            if nbr == b:
                return w
        return 0

    def neighbors(self, item_id: str) -> list[tuple[str, int]]:
        return self.adjacency.get(item_id, [])


@dataclass(frozen=True)
class SyntheticConfig:
    n_topics: int = 12
    n_items: int = 600
    n_users: int = 300
    interactions_per_user: int = 40
    vocab_per_topic: int = 40
    tag_pool_per_topic: int = 10
    noise_rate: float = 0.2
    seed: int = 1

    def __post_init__(self) -> None:
        counts = (
            self.n_topics,
            self.n_items,
            self.n_users,
            self.interactions_per_user,
            self.vocab_per_topic,
            self.tag_pool_per_topic,
        )
        if any(c < 1 for c in counts):
            raise ConfigurationError("all synthetic counts must be >= 1")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ConfigurationError("noise_rate must lie in [0, 1)")


def _parse_jsonl(path: str) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed record ({exc.msg})")
            if not isinstance(rec, dict):
                raise DataFormatError(f"{path}:{lineno}: expected an object")
            records.append(rec)
    return records


def load_catalog(items_path: str, interactions_path: str) -> Catalog:
    """Load line-delimited item and interaction files into a Catalog.

    Unknown keys are ignored; missing modality keys mean the payload is empty.
    """
    items: dict[str, ItemRecord] = {}
    for rec in _parse_jsonl(items_path):
        if "item_id" not in rec:
            raise DataFormatError(f"{items_path}: item record without item_id")
        iid = str(rec["item_id"])
        items[iid] = ItemRecord(
            item_id=iid,
            title=tokenize(str(rec.get("title", ""))),
            category=tokenize(str(rec.get("category", ""))),
            description=tokenize(str(rec.get("description", ""))),
            image_tags=[str(t).lower() for t in rec.get("image_tags", [])],
        )

    interactions = []
    users = set()
    for rec in _parse_jsonl(interactions_path):
        try:
            inter = Interaction(
                user_id=str(rec["user_id"]),
                item_id=str(rec["item_id"]),
                timestamp=int(rec["timestamp"]),
            )
        except KeyError as exc:
            raise DataFormatError(f"{interactions_path}: record missing key {exc}")
        interactions.append(inter)
        users.add(inter.user_id)

    return Catalog(items=items, users=users, interactions=interactions)


def chronological_split(
    catalog: Catalog, fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
) -> tuple[list[Interaction], list[Interaction], list[Interaction]]:
    """Split the time-sorted interaction list at floor(f1*N) and floor((f1+f2)*N).

    Ties in timestamp keep input order (the list is stable-sorted at load).
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError("split fractions must sum to 1")
    inters = catalog.interactions
    n = len(inters)
    if n < 3:
        raise ConfigurationError(f"need at least 3 interactions to split, got {n}")
    b1 = int(np.floor(fractions[0] * n))
    b2 = int(np.floor((fractions[0] + fractions[1]) * n))
    return list(inters[:b1]), list(inters[b1:b2]), list(inters[b2:])


def build_item_graph(train_interactions: list[Interaction]) -> ItemGraph:
    """Co-occurrence graph: weight(i, j) = distinct users who interacted with both.

    Only the training split may be passed in; edges with weight 0 are absent and
    there are no self-loops.
    """
    baskets: dict[str, set[str]] = defaultdict(set)
    for inter in train_interactions:
        baskets[inter.user_id].add(inter.item_id)

    weights: dict[tuple[str, str], int] = defaultdict(int)
    for items in baskets.values():
        ordered = sorted(items)
        for i, a in enumerate(ordered):
            for b in ordered[i + 1 :]:
                weights[(a, b)] += 1

    adjacency: dict[str, list[tuple[str, int]]] = defaultdict(list)
    for (a, b), w in weights.items():
        adjacency[a].append((b, w))
        adjacency[b].append((a, w))
    for nbrs in adjacency.values():
        nbrs.sort(key=lambda x: (-x[1], x[0]))
    return ItemGraph(adjacency=dict(adjacency))


def annotate_graph_degrees(catalog: Catalog, graph: ItemGraph) -> None:
    for iid, item in catalog.items.items():
        item.graph_degree = len(graph.adjacency.get(iid, ()))


# Within a topic, items fall into co-consumption subgroups and a user mostly
# buys from one subgroup. Token and tag payloads carry no subgroup signal, so
# only the interaction graph can resolve preferences below the topic level.
SUBGROUPS_PER_TOPIC = 3
SUBGROUP_COHERENCE = 0.8


def generate_synthetic_corpus(config: SyntheticConfig) -> Catalog:
    """Deterministic topic-structured catalog plus interaction log.

    Each item gets one primary topic (round-robin over a shuffled order, so
    per-topic counts are balanced); its tokens and tags come from that topic's
    vocabulary with probability 1 - noise_rate, else from a global noise pool.
    Each user prefers one topic and interacts with items of that topic with
    probability 1 - noise_rate, drawn mostly from the user's co-consumption
    subgroup. Timestamps are globally sequential.
    """
    rng = np.random.default_rng(config.seed)
    k = config.n_topics
    topic_vocab = [
        [f"t{t}w{j}" for j in range(config.vocab_per_topic)] for t in range(k)
    ]
    noise_vocab = [f"noise{j}" for j in range(config.vocab_per_topic)]
    topic_tags = [
        [f"t{t}tag{j}" for j in range(config.tag_pool_per_topic)] for t in range(k)
    ]
    noise_tags = [f"noisetag{j}" for j in range(config.tag_pool_per_topic)]

    def draw_tokens(topic: int, count: int) -> list[str]:
        out = []
        for _ in range(count):
            if rng.random() < config.noise_rate:
                out.append(noise_vocab[rng.integers(len(noise_vocab))])
            else:
                out.append(topic_vocab[topic][rng.integers(config.vocab_per_topic)])
        return out

    def draw_tags(topic: int, count: int) -> list[str]:
        out: list[str] = []
        pool = topic_tags[topic]
        for _ in range(count):
            if rng.random() < config.noise_rate:
                tag = noise_tags[rng.integers(len(noise_tags))]
            else:
                tag = pool[rng.integers(len(pool))]
            if tag not in out:
                out.append(tag)
        return out

    item_topics = np.array(
        [i % k for i in range(config.n_items)], dtype=int
    )
    rng.shuffle(item_topics)

    width = len(str(config.n_items - 1))
    items: dict[str, ItemRecord] = {}
    for i in range(config.n_items):
        topic = int(item_topics[i])
        iid = f"i{i:0{width}d}"
        items[iid] = ItemRecord(
            item_id=iid,
            title=draw_tokens(topic, 4),
            category=draw_tokens(topic, 1),
            description=draw_tokens(topic, 12),
            image_tags=draw_tags(topic, 5),
        )

    ids = sorted(items)
    by_topic: dict[int, list[str]] = defaultdict(list)
    for iid in ids:
        by_topic[int(item_topics[int(iid[1:])])].append(iid)
    by_subgroup: dict[tuple[int, int], list[str]] = defaultdict(list)
    for topic, members in by_topic.items():
        for j, iid in enumerate(members):
            by_subgroup[(topic, j % SUBGROUPS_PER_TOPIC)].append(iid)

    interactions: list[Interaction] = []
    users = set()
    ts = 0
    uwidth = len(str(config.n_users - 1))
    user_topic = {f"u{u:0{uwidth}d}": u % k for u in range(config.n_users)}
    user_subgroup = {
        f"u{u:0{uwidth}d}": (u // k) % SUBGROUPS_PER_TOPIC for u in range(config.n_users)
    }
    users_order = sorted(user_topic)
    for _ in range(config.interactions_per_user):
        for uid in users_order:
            ts += 1
            if rng.random() < config.noise_rate:
                iid = ids[rng.integers(len(ids))]
            else:
                topic = user_topic[uid]
                pool = by_subgroup[(topic, user_subgroup[uid])]
                if not pool or rng.random() >= SUBGROUP_COHERENCE:
                    pool = by_topic[topic]
                iid = pool[rng.integers(len(pool))]
            interactions.append(Interaction(user_id=uid, item_id=iid, timestamp=ts))
            users.add(uid)

    catalog = Catalog(items=items, users=users, interactions=interactions)
    catalog.item_topics = {  # type: ignore[attr-defined]
        iid: int(item_topics[int(iid[1:])]) for iid in ids
    }
    catalog.user_topics = dict(user_topic)  # type: ignore[attr-defined]
    return catalog


def write_catalog_files(catalog: Catalog, items_path: str, interactions_path: str) -> None:
    """Serialize a catalog to the line-delimited interchange files."""
    with open(items_path, "w", encoding="utf-8") as fh:
        for iid in sorted(catalog.items):
            it = catalog.items[iid]
            rec = {
                "item_id": iid,
                "title": " ".join(it.title),
                "category": " ".join(it.category),
                "description": " ".join(it.description),
                "image_tags": it.image_tags,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(interactions_path, "w", encoding="utf-8") as fh:
        for inter in catalog.interactions:
            rec = {
                "user_id": inter.user_id,
                "item_id": inter.item_id,
                "timestamp": inter.timestamp,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
