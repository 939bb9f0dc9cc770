"""Human-readable result tables and machine-readable metric records."""

from __future__ import annotations

import numpy as np

from .evaluation import MetricReport, render_table
from .experiments import ComparisonResult

RANK_METRICS = ("hr@10", "hr@20", "ndcg@10", "ndcg@20")


def _policy_report(result: ComparisonResult, policy: str) -> MetricReport:
    seed_metrics = [getattr(o, policy).metrics for o in result.seeds]
    seed_family = [getattr(o, policy).per_family for o in result.seeds]
    return MetricReport.from_seed_values(seed_metrics, seed_family)


def _fmt(mean: float, std: float | None = None) -> str:
    if std is None:
        return f"{mean:.4f}"
    return f"{mean:.4f}±{std:.4f}"


def comparison_tables(result: ComparisonResult, dataset: str = "synthetic") -> str:
    learned = _policy_report(result, "learned")
    rule = _policy_report(result, "rule")
    families = sorted(learned.per_family)
    blocks = []

    # averaged single-surviving-modality row per policy
    rows = []
    for name, rep in (("rule-router-fuse", rule), ("learned-router", learned)):
        m = rep.metrics["ndcg@10"]
        rows.append([dataset, name, _fmt(m.mean, m.std)])
    base = rule.metrics["ndcg@10"].mean
    gain = (learned.metrics["ndcg@10"].mean / base - 1.0) * 100 if base > 0 else float("nan")
    rows.append([dataset, "relative gain", f"{gain:+.1f}%"])
    blocks.append("== average NDCG@10 ==\n" + render_table(["dataset", "policy", "ndcg@10"], rows))

    # per-family breakdown
    rows = []
    for name, rep in (("rule-router-fuse", rule), ("learned-router", learned)):
        row = [name]
        for family in families:
            m = rep.per_family[family]["ndcg@10"]
            row.append(_fmt(m.mean, m.std))
        rows.append(row)
    blocks.append(
        "== per-family NDCG@10 ==\n" + render_table(["policy"] + families, rows)
    )

    # full-catalog fixed-pool check
    rows = []
    for family, rep in sorted(result.full_catalog.items()):
        rows.append(
            [
                family,
                _fmt(rep.recall_pre),
                _fmt(rep.recall_post),
                _fmt(rep.hr10),
                _fmt(rep.ndcg10),
            ]
        )
    blocks.append(
        "== full-catalog fixed-pool (learned) ==\n"
        + render_table(["family", "recall@B pre", "recall@B post", "hr@10", "ndcg@10"], rows)
    )

    # significance
    sig = result.significance
    blocks.append(
        "== significance ==\n"
        + render_table(
            ["dataset", "comparison", "mean delta", "wilcoxon p", "cliffs delta"],
            [[sig.dataset, sig.comparison, f"{sig.mean_delta:+.4f}",
              f"{sig.wilcoxon_p:.4g}", f"{sig.cliffs_delta:+.3f}"]],
        )
    )

    # router-control diagnostics
    la = result.pooled_agentic("learned")
    ra = result.pooled_agentic("rule")
    rows = [
        ["ndcg@10", _fmt(rule.metrics["ndcg@10"].mean), _fmt(learned.metrics["ndcg@10"].mean)],
        ["avg failed-call rate", f"{ra.failed_call_rate:.1%}", f"{la.failed_call_rate:.1%}"],
        ["avg turns", f"{ra.mean_turns:.2f}", f"{la.mean_turns:.2f}"],
        ["recovery rate", f"{ra.recovery_rate:.1%}", f"{la.recovery_rate:.1%}"],
        ["first-action rate", f"{ra.first_action_rate:.1%}", f"{la.first_action_rate:.1%}"],
    ]
    blocks.append(
        "== router control ==\n"
        + render_table(["metric", "rule-router-fuse", "learned-router"], rows)
    )
    return "\n\n".join(blocks) + "\n"


def comparison_records(result: ComparisonResult, dataset: str = "synthetic") -> list[dict]:
    records = []
    for policy_key, policy_name in (("learned", "learned"), ("rule", "rule-router")):
        rep = _policy_report(result, policy_key)
        for metric, summary in rep.metrics.items():
            records.append(
                {
                    "dataset": dataset,
                    "policy": policy_name,
                    "family": "all",
                    "metric": metric,
                    "mean": summary.mean,
                    "std": summary.std,
                    "n_seeds": summary.n_seeds,
                }
            )
        for family, metrics in rep.per_family.items():
            for metric, summary in metrics.items():
                records.append(
                    {
                        "dataset": dataset,
                        "policy": policy_name,
                        "family": family,
                        "metric": metric,
                        "mean": summary.mean,
                        "std": summary.std,
                        "n_seeds": summary.n_seeds,
                    }
                )
        pooled = result.pooled_agentic(policy_key)
        for metric, value in (
            ("failed_call_rate", pooled.failed_call_rate),
            ("recovery_rate", pooled.recovery_rate),
            ("mean_turns", pooled.mean_turns),
            ("first_action_rate", pooled.first_action_rate),
        ):
            records.append(
                {
                    "dataset": dataset,
                    "policy": policy_name,
                    "family": "all",
                    "metric": metric,
                    "mean": value,
                    "std": 0.0,
                    "n_seeds": len(result.seeds),
                }
            )
    return records


def training_curve_summary(train_log: list[dict], window: int = 20) -> list[float]:
    """Mean return over consecutive non-overlapping iteration windows."""
    returns = [rec["mean_return"] for rec in train_log]
    return [
        float(np.mean(returns[i : i + window]))
        for i in range(0, len(returns) - window + 1, window)
    ]
