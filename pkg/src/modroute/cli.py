"""Command-line entry points: gen-data, train, eval, compare, serve-bridge.

Every command takes a single JSON config file; flags only override config
keys. All outputs embed the config hash, and eval refuses checkpoints whose
hash does not match the active config. Exit codes: 0 success, 2 configuration
error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import ExperimentConfig
from .corpus import write_catalog_files
from .errors import ConfigurationError
from .evaluation import grid_search_alpha
from .experiments import (
    ComparisonResult,
    make_environment,
    prepare_corpus,
    replay_policy,
    run_comparison,
    run_seed,
    sample_episode_specs,
    tune_alpha_with_weights,
    tune_combiner_weights,
    train_learned_policy,
)
from .environment import FAMILY_ORDER
from .policies import LinearPolicy, PolicyParams
from .reports import comparison_records, comparison_tables
from .training import ValueParams


def _load_config(args) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.load(args.config)
    else:
        config = ExperimentConfig()
        config.validate()
    if args.seed:
        config.seeds = tuple(args.seed)
    if args.out:
        config.out_dir = args.out
    if getattr(args, "policy", None):
        config.policy = args.policy
    config.validate()
    return config


def _checkpoint_path(out_dir: str, seed: int) -> str:
    return os.path.join(out_dir, f"checkpoint_s{seed}.json")


def cmd_gen_data(args) -> int:
    config = _load_config(args)
    if config.synthetic is None:
        raise ConfigurationError("gen-data needs a synthetic corpus config")
    os.makedirs(config.out_dir, exist_ok=True)
    bundle = prepare_corpus(config)
    items = os.path.join(config.out_dir, "items.jsonl")
    inters = os.path.join(config.out_dir, "interactions.jsonl")
    write_catalog_files(bundle.catalog, items, inters)
    manifest = {
        "config_hash": config.config_hash(),
        "n_items": len(bundle.catalog.items),
        "n_users": len(bundle.catalog.users),
        "n_interactions": len(bundle.catalog.interactions),
        "split_sizes": [len(bundle.train), len(bundle.val), len(bundle.test)],
        "catalog_hash": bundle.catalog.content_hash(),
    }
    with open(os.path.join(config.out_dir, "splits.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {items}, {inters} ({manifest['n_interactions']} interactions)")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    os.makedirs(config.out_dir, exist_ok=True)
    bundle = prepare_corpus(config)
    for seed in config.seeds:
        params, value_params, logs = train_learned_policy(bundle, config, seed)
        env = make_environment(bundle, config)
        rng = np.random.default_rng([101, seed])
        val_specs = sample_episode_specs(
            env, bundle.val, FAMILY_ORDER, config.eval.val_episodes_per_family, rng
        )
        val_eps = replay_policy(env, val_specs, LinearPolicy(params), split="val")
        weights = tune_combiner_weights(val_eps)
        alpha = tune_alpha_with_weights(val_eps, weights)
        checkpoint = {
            "config_hash": config.config_hash(),
            "seed": seed,
            "alpha": alpha,
            "policy": PolicyParams(params.theta, weights, params.mode).to_dict(),
            "value": value_params.to_dict(),
        }
        path = _checkpoint_path(config.out_dir, seed)
        with open(path, "w") as fh:
            json.dump(checkpoint, fh, sort_keys=True)
            fh.write("\n")
        log_path = os.path.join(config.out_dir, f"trainlog_s{seed}.jsonl")
        with open(log_path, "w") as fh:
            fh.write(json.dumps({"config_hash": config.config_hash(), "seed": seed},
                                sort_keys=True) + "\n")
            for record in logs:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        print(f"seed {seed}: checkpoint {path}, final mean return "
              f"{logs[-1]['mean_return']:.4f}")
    return 0


def load_checkpoint(path: str, config: ExperimentConfig):
    with open(path) as fh:
        data = json.load(fh)
    if data.get("config_hash") != config.config_hash():
        raise ConfigurationError(
            f"checkpoint {path} was trained under config hash "
            f"{data.get('config_hash')}, active config is {config.config_hash()}"
        )
    return (
        PolicyParams.from_dict(data["policy"]),
        ValueParams.from_dict(data["value"]),
        float(data["alpha"]),
    )


def _write_outputs(config: ExperimentConfig, result: ComparisonResult) -> None:
    os.makedirs(config.out_dir, exist_ok=True)
    tables = comparison_tables(result)
    header = f"config_hash: {config.config_hash()}\n\n"
    report_path = os.path.join(config.out_dir, "report.txt")
    with open(report_path, "w") as fh:
        fh.write(header + tables)
    records_path = os.path.join(config.out_dir, "records.jsonl")
    with open(records_path, "w") as fh:
        for record in comparison_records(result):
            record["config_hash"] = config.config_hash()
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(header + tables)
    print(f"wrote {report_path} and {records_path}")


def cmd_compare(args) -> int:
    config = _load_config(args)
    bundle = prepare_corpus(config)
    result = run_comparison(bundle, config)
    _write_outputs(config, result)
    return 0


def _eval_single_policy(config: ExperimentConfig, bundle) -> int:
    """Deterministic evaluation of one in-process policy, no training."""
    from .evaluation import MetricReport, render_table
    from .experiments import evaluate_policy
    from .policies import EQUAL_WEIGHTS, RuleRouterPolicy, ScriptedInteractivePolicy

    if config.policy == "rule-router":
        make_policy = lambda: RuleRouterPolicy()
    elif config.policy == "interactive-scripted":
        make_policy = lambda: ScriptedInteractivePolicy(ask_enabled=True)
    else:
        raise ConfigurationError(f"cannot evaluate policy {config.policy!r} without training")

    seed_metrics, seed_family = [], []
    pooled_episodes = []
    for seed in config.seeds:
        env = make_environment(bundle, config)
        policy = make_policy()
        rng = np.random.default_rng([101, seed])
        val_specs = sample_episode_specs(
            env, bundle.val, FAMILY_ORDER, config.eval.val_episodes_per_family, rng
        )
        alpha = grid_search_alpha(replay_policy(env, val_specs, policy, split="val"))
        test_rng = np.random.default_rng([202, seed])
        test_specs = sample_episode_specs(
            env, bundle.test, config.eval.families,
            config.eval.episodes_per_family, test_rng,
        )
        outcome = evaluate_policy(env, test_specs, policy, config.policy, alpha, EQUAL_WEIGHTS)
        seed_metrics.append(outcome.metrics)
        seed_family.append(outcome.per_family)
        pooled_episodes.extend(outcome.episodes)
    report = MetricReport.from_seed_values(seed_metrics, seed_family)
    from .evaluation import agentic_metrics

    pooled = agentic_metrics(pooled_episodes)
    os.makedirs(config.out_dir, exist_ok=True)
    rows = [
        [metric, f"{s.mean:.4f}", f"{s.std:.4f}", str(s.n_seeds)]
        for metric, s in sorted(report.metrics.items())
    ]
    rows += [
        ["failed_call_rate", f"{pooled.failed_call_rate:.4f}", "0.0000", str(len(config.seeds))],
        ["mean_turns", f"{pooled.mean_turns:.4f}", "0.0000", str(len(config.seeds))],
        ["first_action_rate", f"{pooled.first_action_rate:.4f}", "0.0000", str(len(config.seeds))],
    ]
    text = (f"config_hash: {config.config_hash()}\npolicy: {config.policy}\n\n"
            + render_table(["metric", "mean", "std", "n_seeds"], rows) + "\n")
    report_path = os.path.join(config.out_dir, "report.txt")
    with open(report_path, "w") as fh:
        fh.write(text)
    records_path = os.path.join(config.out_dir, "records.jsonl")
    with open(records_path, "w") as fh:
        for metric, s in sorted(report.metrics.items()):
            fh.write(json.dumps({
                "config_hash": config.config_hash(), "dataset": "synthetic",
                "policy": config.policy, "family": "all", "metric": metric,
                "mean": s.mean, "std": s.std, "n_seeds": s.n_seeds,
            }, sort_keys=True) + "\n")
        for family, metrics in sorted(report.per_family.items()):
            for metric, s in sorted(metrics.items()):
                fh.write(json.dumps({
                    "config_hash": config.config_hash(), "dataset": "synthetic",
                    "policy": config.policy, "family": family, "metric": metric,
                    "mean": s.mean, "std": s.std, "n_seeds": s.n_seeds,
                }, sort_keys=True) + "\n")
    print(text)
    print(f"wrote {report_path} and {records_path}")
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args)
    bundle = prepare_corpus(config)
    if config.policy in ("rule-router", "interactive-scripted"):
        return _eval_single_policy(config, bundle)
    if config.policy == "learned":
        # evaluate trained checkpoints against the deterministic control
        from .experiments import SeedOutcome, evaluate_policy
        from .evaluation import significance
        from .environment import FAMILIES
        from .policies import EQUAL_WEIGHTS, RuleRouterPolicy
        from .evaluation import full_catalog_check

        outcomes = []
        for seed in config.seeds:
            path = args.checkpoint or _checkpoint_path(config.out_dir, seed)
            if args.checkpoint and len(config.seeds) > 1:
                raise ConfigurationError(
                    "single --checkpoint with multiple seeds; pass one --seed"
                )
            params, value_params, alpha = load_checkpoint(path, config)
            env = make_environment(bundle, config)
            rule = RuleRouterPolicy()
            rng = np.random.default_rng([101, seed])
            val_specs = sample_episode_specs(
                env, bundle.val, FAMILY_ORDER, config.eval.val_episodes_per_family, rng
            )
            alpha_rule = grid_search_alpha(
                replay_policy(env, val_specs, rule, split="val")
            )
            test_rng = np.random.default_rng([202, seed])
            test_specs = sample_episode_specs(
                env, bundle.test, config.eval.families,
                config.eval.episodes_per_family, test_rng,
            )
            learned_eval = evaluate_policy(
                env, test_specs, LinearPolicy(params), "learned", alpha, params.weights
            )
            rule_eval = evaluate_policy(
                env, test_specs, rule, "rule-router", alpha_rule, EQUAL_WEIGHTS
            )
            outcomes.append(
                SeedOutcome(seed, learned_eval, rule_eval, params, value_params, [])
            )
        learned_scores = [x for o in outcomes for x in o.learned.episode_ndcg10]
        rule_scores = [x for o in outcomes for x in o.rule.episode_ndcg10]
        sig = significance("synthetic", "learned vs rule-router", learned_scores, rule_scores)
        env = make_environment(bundle, config)
        env.fusion_alpha = outcomes[0].learned.alpha
        fc_rng = np.random.default_rng([303, config.seeds[0]])
        fc_pairs = [
            env.sample_pair(fc_rng, bundle.test)
            for _ in range(config.eval.full_catalog_episodes)
        ]
        full_catalog = {
            fam: full_catalog_check(
                env, LinearPolicy(outcomes[0].params), fc_pairs, FAMILIES[fam],
                k=config.eval.pool_size,
            )
            for fam in config.eval.families
        }
        result = ComparisonResult(outcomes, sig, full_catalog)
        _write_outputs(config, result)
        return 0
    raise ConfigurationError(f"unknown eval policy {config.policy!r}")


def cmd_serve_bridge(args) -> int:
    from .bridge import serve_bridge

    config = _load_config(args)
    host, _, port = (args.listen or "127.0.0.1:7501").rpartition(":")
    transcripts = os.path.join(config.out_dir, "transcripts")
    server = serve_bridge(
        config,
        host or "127.0.0.1",
        int(port),
        n_episodes=args.episodes,
        transcript_dir=transcripts,
        timeout=args.timeout,
    )
    addr = server.server_address
    print(f"serving episodes on {addr[0]}:{addr[1]}, transcripts in {transcripts}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modroute",
        description="evidence-routing reranker workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, action="append", help="override seeds")
        p.add_argument("--out", help="output directory override")

    p = sub.add_parser("gen-data", help="write synthetic corpus files")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="PPO-train the learned router per seed")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate policies from checkpoints")
    common(p)
    p.add_argument("--policy", help="policy to evaluate")
    p.add_argument("--checkpoint", help="checkpoint path (single seed)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train and compare learned vs rule router")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("serve-bridge", help="serve episodes over the wire protocol")
    common(p)
    p.add_argument("--listen", default="127.0.0.1:7501", help="host:port")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--timeout", type=float, default=30.0)
    p.set_defaults(func=cmd_serve_bridge)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
