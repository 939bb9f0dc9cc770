import itertools
import math

import numpy as np
import pytest

from modroute.corpus import SyntheticConfig, build_item_graph, chronological_split, generate_synthetic_corpus
from modroute.environment import (
    ANALYZE_TEXT,
    FAMILIES,
    RETRIEVE_GRAPH,
    SCORE_CANDIDATES,
    Action,
    Environment,
    HistoryEntry,
    Observation,
)
from modroute.errors import ConfigurationError
from modroute.evaluation import (
    agentic_metrics,
    cliffs_delta,
    full_catalog_check,
    grid_search_alpha,
    significance,
    wilcoxon_signed_rank,
)
from modroute.policies import FirstStagePolicy, RuleRouterPolicy
from modroute.ranking import fuse_scores, hr_at_k, ndcg_at_k
from modroute.retrieval import CandidatePool, RetrievalBackend
from modroute.training import run_episode


def _lattice_pool(rng, b=20, episode_id="p"):
    """Pool with s0 on an exact binary lattice so float ties are bit-stable."""
    raw = rng.integers(0, 128, size=b) / 128.0
    ids = [f"i{k:03d}" for k in range(b)]
    order = sorted(zip(ids, raw), key=lambda x: (-x[1], x[0]))
    lo, hi = min(raw), max(raw)
    entries = []
    for rank, (iid, r) in enumerate(order, 1):
        s0 = 0.5 if hi == lo else (r - lo) / (hi - lo)
        entries.append((iid, rank, float(s0)))
    return CandidatePool(episode_id, entries, b, True, "text")


class TestFusion:
    def test_alpha_one_reproduces_first_stage(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            pool = _lattice_pool(rng)
            scores = {iid: float(rng.normal()) for iid in pool.item_ids[::2]}
            fused = [iid for iid, _ in fuse_scores(pool, scores, 1.0)]
            assert fused == pool.first_stage_order()

    def test_alpha_zero_reproduces_agent_order_among_scored(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            pool = _lattice_pool(rng)
            scored_ids = [iid for iid in pool.item_ids if rng.random() < 0.5]
            scores = {iid: float(rng.integers(0, 64)) / 64.0 for iid in scored_ids}
            fused = [iid for iid, _ in fuse_scores(pool, scores, 0.0)]
            among_scored = [iid for iid in fused if iid in scores]
            expected = sorted(scores, key=lambda i: (-scores[i], i))
            assert among_scored == expected

    def test_positive_affine_invariance_exact(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            pool = _lattice_pool(rng)
            scores = {
                iid: float(rng.integers(-32, 32)) / 16.0
                for iid in pool.item_ids
                if rng.random() < 0.7
            }
            if not scores:
                continue
            a = float(rng.integers(1, 8))
            b = float(rng.integers(-64, 64)) / 8.0
            transformed = {iid: a * v + b for iid, v in scores.items()}
            alpha = float(rng.integers(0, 11)) / 10.0
            base = [iid for iid, _ in fuse_scores(pool, scores, alpha)]
            moved = [iid for iid, _ in fuse_scores(pool, transformed, alpha)]
            assert base == moved

    def test_omitted_items_keep_first_stage_relative_order(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            pool = _lattice_pool(rng)
            scored_ids = pool.item_ids[:5]
            scores = {iid: float(rng.normal()) for iid in scored_ids}
            alpha = float(rng.integers(0, 11)) / 10.0
            fused = [iid for iid, _ in fuse_scores(pool, scores, alpha)]
            omitted_in_fused = [iid for iid in fused if iid not in scores]
            stage_order = [iid for iid in pool.first_stage_order() if iid not in scores]
            assert omitted_in_fused == stage_order


class TestRankingMetrics:
    def test_rank_one(self):
        ranked = [f"i{k}" for k in range(100)]
        assert ndcg_at_k(ranked, "i0", 10) == 1.0
        assert hr_at_k(ranked, "i0", 10) == 1

    def test_rank_three(self):
        ranked = [f"i{k}" for k in range(100)]
        assert ndcg_at_k(ranked, "i2", 10) == pytest.approx(0.5)

    def test_bruteforce_oracle_1000_rankings(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            perm = rng.permutation(100)
            ranked = [f"i{k}" for k in perm]
            target = f"i{rng.integers(100)}"
            for k in (10, 20):
                # textbook DCG/IDCG with a single relevant item
                dcg = sum(
                    (1.0 if ranked[pos] == target else 0.0) / math.log2(pos + 2)
                    for pos in range(k)
                )
                assert ndcg_at_k(ranked, target, k) == pytest.approx(dcg, abs=1e-15)
                assert hr_at_k(ranked, target, k) == int(target in ranked[:k])

    def test_absent_target_scores_zero(self):
        assert ndcg_at_k(["a", "b"], "z", 10) == 0.0
        assert hr_at_k(["a", "b"], "z", 10) == 0


@pytest.fixture(scope="module")
def corpus():
    cfg = SyntheticConfig(
        n_topics=4, n_items=80, n_users=40, interactions_per_user=16,
        vocab_per_topic=20, tag_pool_per_topic=8, noise_rate=0.2, seed=37,
    )
    catalog = generate_synthetic_corpus(cfg)
    train, val, test = chronological_split(catalog)
    graph = build_item_graph(train)
    backend = RetrievalBackend(catalog, graph)
    env = Environment(catalog, graph, backend, train, pool_size=20)
    return env, val, test


class TestGridSearchAlpha:
    def _scored_episodes(self, corpus, score_fn, n=12):
        env, val, _ = corpus
        rng = np.random.default_rng(8)
        episodes = []
        for _ in range(n):
            user, target = env.sample_pair(rng, val)
            ep = env.make_episode(user, target, FAMILIES["full"], split="val")
            env.step(ep, Action(SCORE_CANDIDATES, {"scores": score_fn(ep, rng)}))
            episodes.append(ep)
        return episodes

    def test_s0_copy_policy_returns_zero_by_tie_rule(self, corpus):
        eps = self._scored_episodes(corpus, lambda ep, rng: ep.pool.s0_map())
        assert grid_search_alpha(eps) == 0.0

    def test_oracle_policy_prefers_agent_scores(self, corpus):
        def oracle(ep, rng):
            return {iid: 1.0 if iid == ep.target else 0.0 for iid in ep.pool.item_ids}

        eps = self._scored_episodes(corpus, oracle)
        assert grid_search_alpha(eps) == 0.0
        # and the chosen alpha actually achieves perfect NDCG
        ranked = [i for i, _ in fuse_scores(eps[0].pool, oracle(eps[0], None), 0.0)]
        assert ranked[0] == eps[0].target

    def test_matches_exhaustive_scan(self, corpus):
        def noisy(ep, rng):
            return {iid: float(rng.normal()) for iid in ep.pool.item_ids}

        eps = self._scored_episodes(corpus, noisy, n=50)
        got = grid_search_alpha(eps)
        from modroute.evaluation import ALPHA_GRID, terminal_score_map

        best, best_alpha = -1.0, None
        for alpha in ALPHA_GRID:
            vals = []
            for ep in eps:
                ranked = [i for i, _ in fuse_scores(ep.pool, terminal_score_map(ep), alpha)]
                vals.append(ndcg_at_k(ranked, ep.target, 10))
            mean = float(np.mean(vals))
            if mean > best + 1e-12:
                best, best_alpha = mean, alpha
        assert got == best_alpha

    def test_empty_validation_set(self):
        with pytest.raises(ConfigurationError):
            grid_search_alpha([])


def _fixture_episode(family_id, entries, target_rank, target="t"):
    """Hand-built 15-item episode shell for agentic-metric accounting."""
    ids = [f"c{k:02d}" for k in range(14)] + [target]
    pool = CandidatePool(
        "e", [(iid, r + 1, 1.0 - 0.05 * r) for r, iid in enumerate(ids)],
        len(ids), True, "text",
    )
    from modroute.environment import Episode

    episode = Episode(
        episode_id="e", user_id="u", target=target, family=FAMILIES[family_id],
        pool=pool, summaries={i: "title=x|cat=y" for i in ids}, mode="auto",
        split="test", context=None, turn_budget=8,
    )
    for t, (kind, obs_kind, reward) in enumerate(entries, 1):
        episode.history.append(
            HistoryEntry(t, "", Action(kind, {}), Observation(obs_kind), reward)
        )
    others = [i for i in ids if i != target]
    ranking = others[: target_rank - 1] + [target] + others[target_rank - 1 :]
    episode.final_ranking = ranking
    return episode


class TestAgenticMetrics:
    def test_hand_computed_fixture(self):
        # ep1: text-only, first action correct, one null, success (rank 1)
        e1 = _fixture_episode("text-only", [
            (ANALYZE_TEXT, "evidence", -0.02),
            (RETRIEVE_GRAPH, "null", -0.02),
            (SCORE_CANDIDATES, "terminal", 1.0),
        ], target_rank=1)
        # ep2: img-only, wrong first action, two nulls, failure (rank 15)
        e2 = _fixture_episode("img-only", [
            (ANALYZE_TEXT, "null", -0.02),
            (RETRIEVE_GRAPH, "null", -0.02),
            (SCORE_CANDIDATES, "terminal", 0.0),
        ], target_rank=15)
        # ep3: beh-only, correct first action, no nulls, success (rank 3)
        e3 = _fixture_episode("beh-only", [
            (RETRIEVE_GRAPH, "evidence", -0.02),
            (SCORE_CANDIDATES, "terminal", 0.5),
        ], target_rank=3)
        # ep4: full family (multi-modality), one null then success (rank 5)
        e4 = _fixture_episode("full", [
            (ANALYZE_TEXT, "null", -0.02),
            (SCORE_CANDIDATES, "terminal", 0.5),
        ], target_rank=5)
        # ep5: text-only, correct first action, null, failure (rank 12)
        e5 = _fixture_episode("text-only", [
            (ANALYZE_TEXT, "null", -0.02),
            (SCORE_CANDIDATES, "terminal", 0.0),
        ], target_rank=12)

        m = agentic_metrics([e1, e2, e3, e4, e5])
        # tool calls: e1=2, e2=2, e3=1, e4=1, e5=1 -> 7; nulls: 1+2+0+1+1 = 5
        assert m.failed_call_rate == pytest.approx(5 / 7)
        # episodes with >=1 null: e1, e2, e4, e5; recovered (ndcg>0): e1, e4
        assert m.recovery_rate == pytest.approx(2 / 4)
        # successes: e1 (3 turns), e3 (2), e4 (2)
        assert m.turns_to_success == pytest.approx((3 + 2 + 2) / 3)
        assert m.mean_turns == pytest.approx((3 + 3 + 2 + 2 + 2) / 5)
        # single-surviving episodes: e1 (hit), e2 (miss), e3 (hit), e5 (hit)
        assert m.first_action_rate == pytest.approx(3 / 4)

    def test_rule_router_img_only_first_action_rate_zero(self, corpus):
        env, _, test = corpus
        rng = np.random.default_rng(12)
        eps = []
        for _ in range(5):
            user, target = env.sample_pair(rng, test)
            ep = env.make_episode(user, target, FAMILIES["img-only"], split="test")
            run_episode(env, ep, RuleRouterPolicy(), greedy=True)
            eps.append(ep)
        assert agentic_metrics(eps).first_action_rate == 0.0


def _oracle_wilcoxon(deltas):
    """Full 2^n sign enumeration, written independently of the implementation."""
    d = [x for x in deltas if x != 0.0]
    n = len(d)
    if n == 0:
        return 1.0
    absd = sorted((abs(x), i) for i, x in enumerate(d))
    ranks = [0.0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and absd[j + 1][0] == absd[i][0]:
            j += 1
        avg = (i + j + 2) / 2.0
        for k in range(i, j + 1):
            ranks[absd[k][1]] = avg
        i = j + 1
    total = sum(ranks)
    w_obs = sum(r for r, x in zip(ranks, d) if x > 0)
    obs_dev = abs(w_obs - total / 2.0)
    hits = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for r, s in zip(ranks, signs) if s)
        if abs(w - total / 2.0) >= obs_dev - 1e-12:
            hits += 1
    return hits / 2.0**n


class TestWilcoxon:
    def test_all_zero_deltas(self):
        assert wilcoxon_signed_rank([0.0, 0.0, 0.0]) == 1.0

    def test_symmetric_pairs_center_p(self):
        deltas = [0.3, -0.3, 0.7, -0.7, 1.1, -1.1]
        assert wilcoxon_signed_rank(deltas) == pytest.approx(1.0)

    def test_exact_matches_enumeration_oracle(self):
        fixtures = [
            [0.5, 1.2, -0.3, 2.2, 0.9, -1.7, 0.1, 0.4, -0.6, 1.0, 1.5, -0.2],
            [1.0, 1.0, 1.0, -1.0, 2.0, 3.0, -2.0, 0.5, 0.5, -0.5, 4.0, -4.0],
            [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
            [-1.0, -2.0, -3.0, 1.5, 2.5, 0.0, 0.0, 3.5, -0.5],
            [2.0, 2.0, -2.0, -2.0, 2.0, 1.0],
        ]
        for deltas in fixtures:
            ours = wilcoxon_signed_rank(deltas)
            oracle = _oracle_wilcoxon(deltas)
            assert ours == pytest.approx(oracle, abs=1e-10)

    def test_one_sided_shift_detected(self):
        rng = np.random.default_rng(6)
        deltas = rng.normal(loc=1.0, scale=0.3, size=20)
        assert wilcoxon_signed_rank(deltas) < 0.001

    def test_normal_approximation_close_to_exact_at_boundary(self):
        rng = np.random.default_rng(9)
        deltas = rng.normal(loc=0.4, scale=1.0, size=24).tolist()
        exact = wilcoxon_signed_rank(deltas, exact_threshold=25)
        approx = wilcoxon_signed_rank(deltas, exact_threshold=10)
        assert approx == pytest.approx(exact, rel=0.15, abs=0.02)


class TestCliffsDelta:
    def test_identical_samples(self):
        assert cliffs_delta([1, 2, 3], [1, 2, 3]) == 0.0

    def test_complete_separation(self):
        assert cliffs_delta([5, 6, 7], [1, 2]) == 1.0
        assert cliffs_delta([1, 2], [5, 6, 7]) == -1.0

    def test_double_loop_oracle(self):
        rng = np.random.default_rng(10)
        a = rng.normal(size=30)
        b = rng.normal(loc=0.3, size=30)
        gt = sum(1 for x in a for y in b if x > y)
        lt = sum(1 for x in a for y in b if x < y)
        assert cliffs_delta(a, b) == pytest.approx((gt - lt) / 900)

    def test_bounds(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            a = rng.normal(size=int(rng.integers(1, 50)))
            b = rng.normal(size=int(rng.integers(1, 50)))
            assert -1.0 <= cliffs_delta(a, b) <= 1.0


class TestMetricReportInvariants:
    def test_ndcg_bounded_by_hr_and_rates_in_unit_interval(self, corpus):
        from modroute.evaluation import episode_metrics

        env, _, test = corpus
        rng = np.random.default_rng(19)
        episodes = []
        for _ in range(30):
            user, target = env.sample_pair(rng, test)
            fam = list(FAMILIES)[int(rng.integers(7))]
            ep = env.make_episode(user, target, FAMILIES[fam], split="test")
            run_episode(env, ep, RuleRouterPolicy(), greedy=True)
            episodes.append(ep)
        metrics = episode_metrics(episodes)
        assert metrics["ndcg@10"] <= metrics["hr@10"]
        assert metrics["ndcg@20"] <= metrics["hr@20"]
        diag = agentic_metrics(episodes)
        for rate in (diag.failed_call_rate, diag.recovery_rate, diag.first_action_rate):
            assert 0.0 <= rate <= 1.0


class TestSignificanceWrapper:
    def test_paired_report(self):
        a = [0.5, 0.6, 0.7, 0.8, 0.4, 0.9, 0.65, 0.55]
        b = [0.4, 0.5, 0.6, 0.9, 0.3, 0.8, 0.60, 0.50]
        rep = significance("synthetic", "a vs b", a, b)
        assert rep.mean_delta == pytest.approx(float(np.mean(np.array(a) - np.array(b))))
        assert 0.0 < rep.wilcoxon_p <= 1.0
        assert -1.0 <= rep.cliffs_delta <= 1.0

    def test_unmatched_samples_rejected(self):
        with pytest.raises(ConfigurationError):
            significance("d", "c", [1.0], [1.0, 2.0])


class TestFullCatalog:
    def test_recall_conserved_and_reported(self, corpus):
        env, _, test = corpus
        rng = np.random.default_rng(13)
        pairs = [env.sample_pair(rng, test) for _ in range(30)]
        report = full_catalog_check(env, RuleRouterPolicy(), pairs, FAMILIES["beh-only"], k=20)
        assert report.recall_pre == report.recall_post
        assert report.n_episodes == 30

    def test_identity_policy_reproduces_first_stage(self, corpus):
        env, _, test = corpus
        rng = np.random.default_rng(14)
        pairs = [env.sample_pair(rng, test) for _ in range(20)]
        report = full_catalog_check(env, FirstStagePolicy(), pairs, FAMILIES["text-only"], k=20)
        # identity rerank: metrics equal first-stage metrics by construction
        manual_hr, manual_ndcg, manual_recall = [], [], []
        rng = np.random.default_rng(14)
        for user, target in pairs:
            ep = env.make_episode(user, target, FAMILIES["text-only"], split="test",
                                  full_catalog=True, pool_size=20)
            order = ep.pool.first_stage_order()
            manual_hr.append(hr_at_k(order, target, 10))
            manual_ndcg.append(ndcg_at_k(order, target, 10))
            manual_recall.append(1 if ep.pool.contains_target else 0)
        assert report.hr10 == pytest.approx(float(np.mean(manual_hr)))
        assert report.ndcg10 == pytest.approx(float(np.mean(manual_ndcg)))
        assert report.recall_pre == pytest.approx(float(np.mean(manual_recall)))

    def test_unretrieved_target_scores_zero(self, corpus):
        env, _, test = corpus
        rng = np.random.default_rng(15)
        pairs = [env.sample_pair(rng, test) for _ in range(40)]
        report = full_catalog_check(env, RuleRouterPolicy(), pairs, FAMILIES["img-only"], k=10)
        # HR can never exceed recall: the reranker cannot add items
        assert report.hr10 <= report.recall_pre + 1e-12
