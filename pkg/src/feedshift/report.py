"""Report rendering: paper-style markdown tables plus diagnostic figures.

Reads only the stage CSVs (no recomputation) and writes ``report.md``
together with three PNG figures: anchor-date distributions by arm,
propensity-score distributions by arm, and the covariate SMD balance
before/after matching with the threshold line.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

if TYPE_CHECKING:
    from .study import StudyConfig

_FIG_DPI = 110


def _read_csv(path: Path) -> list[dict[str, str]]:
    import csv

    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def _num(value: str) -> float:
    return float(value) if value else float("nan")


def _fmt_cell(value: str, digits: int = 2) -> str:
    """Paper-style numeric cell: fixed decimals, raw ATE in E-notation."""
    if not value:
        return ""
    x = float(value)
    if x != 0 and abs(x) < 10 ** (-digits):
        mantissa, exp = f"{x:.1E}".split("E")
        return f"{float(mantissa):g}E{int(exp)}"
    return f"{x:.{digits}f}"


def _effects_table(rows: Sequence[dict[str, str]], title: str) -> list[str]:
    lines = [f"### {title}", ""]
    lines.append("| Metric | ATE% | d | t-stat. |")
    lines.append("|---|---:|---:|---:|")
    for r in rows:
        if r["ate_pct"]:
            ate_cell = _fmt_cell(r["ate_pct"])
        else:
            # Degenerate control mean: report the raw ATE, dagger-marked.
            ate_cell = _fmt_cell(r["ate"]) + "&dagger;"
        t_cell = _fmt_cell(r["t"]) + r["stars"]
        lines.append(
            f"| {r['metric']} | {ate_cell} | {_fmt_cell(r['cohens_d'])} | {t_cell} |"
        )
    lines.append("")
    lines.append(
        "Significance: \\*\\*\\* p&lt;.001, \\*\\* p&lt;.01, \\* p&lt;.05; "
        "&dagger; raw ATE shown where the control mean is ~0."
    )
    lines.append("")
    return lines


def _anchor_figure(out: Path, cohort_rows: Sequence[dict[str, str]]) -> str:
    treated = [int(r["anchor"]) for r in cohort_rows if r["arm"] == "treated"]
    control = [int(r["anchor"]) for r in cohort_rows if r["arm"] == "control"]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    all_anchors = treated + control
    bins = np.linspace(min(all_anchors), max(all_anchors) + 1, 40)
    days = 86400.0
    t0 = bins[0]
    ax.hist(
        [(a - t0) / days for a in treated],
        bins=(bins - t0) / days,
        alpha=0.6,
        label="treatment dates",
        density=True,
    )
    ax.hist(
        [(a - t0) / days for a in control],
        bins=(bins - t0) / days,
        alpha=0.6,
        label="placebo dates",
        density=True,
    )
    ax.set_xlabel("days since first anchor")
    ax.set_ylabel("density")
    ax.set_title("Treatment and placebo anchor dates")
    ax.legend()
    fig.tight_layout()
    rel = "figures/anchor_dates.png"
    fig.savefig(out / rel, dpi=_FIG_DPI)
    plt.close(fig)
    return rel


def _score_figure(
    out: Path,
    score_rows: Sequence[dict[str, str]],
    arm_of: dict[str, str],
) -> str:
    treated = [
        float(r["score"]) for r in score_rows if arm_of.get(r["user_id"]) == "treated"
    ]
    control = [
        float(r["score"]) for r in score_rows if arm_of.get(r["user_id"]) == "control"
    ]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    bins = np.linspace(0.0, 1.0, 31)
    ax.hist(treated, bins=bins, alpha=0.6, label="treated", density=True)
    ax.hist(control, bins=bins, alpha=0.6, label="control", density=True)
    ax.set_xlabel("propensity score")
    ax.set_ylabel("density")
    ax.set_title("Propensity scores by arm")
    ax.legend()
    fig.tight_layout()
    rel = "figures/propensity_scores.png"
    fig.savefig(out / rel, dpi=_FIG_DPI)
    plt.close(fig)
    return rel


def _balance_figure(
    out: Path, balance_rows: Sequence[dict[str, str]], threshold: float
) -> str:
    pre = [abs(_num(r["smd_pre"])) for r in balance_rows]
    post = [abs(_num(r["smd_post"])) for r in balance_rows]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    finite_max = max(
        [v for v in pre + post if np.isfinite(v)] + [threshold]
    )
    bins = np.linspace(0.0, finite_max * 1.05 + 1e-9, 40)
    ax.hist(pre, bins=bins, alpha=0.6, label="unmatched", density=False)
    ax.hist(post, bins=bins, alpha=0.6, label="matched", density=False)
    ax.axvline(threshold, linestyle="--", color="k", label=f"threshold {threshold}")
    ax.set_xlabel("|SMD|")
    ax.set_ylabel("covariates")
    ax.set_title("Covariate balance before and after matching")
    ax.legend()
    fig.tight_layout()
    rel = "figures/smd_balance.png"
    fig.savefig(out / rel, dpi=_FIG_DPI)
    plt.close(fig)
    return rel


def render_report(out: Path, config: "StudyConfig") -> list[str]:
    """Write report.md and figures; returns the output relpaths."""
    (out / "figures").mkdir(exist_ok=True)
    cohort_rows = _read_csv(out / "cohort.csv")
    kept_rows = [r for r in cohort_rows if not r["drop_reason"]]
    summary = json.loads((out / "cohort_summary.json").read_text(encoding="utf-8"))
    balance = json.loads((out / "balance_summary.json").read_text(encoding="utf-8"))
    effects = _read_csv(out / "effects.csv")
    regression = _read_csv(out / "regression.csv")
    score_rows = _read_csv(out / "scores.csv")
    balance_rows = _read_csv(out / "balance.csv")
    arm_of = {r["user_id"]: r["arm"] for r in kept_rows}

    outputs = []
    fig_anchor = _anchor_figure(out, kept_rows)
    fig_scores = _score_figure(out, score_rows, arm_of)
    fig_balance = _balance_figure(out, balance_rows, balance["threshold"])
    outputs.extend([fig_anchor, fig_scores, fig_balance])

    ks = summary["anchor_ks"]
    lines = [
        f"# Feed study report: {config.feed_id}",
        "",
        "## Cohort",
        "",
        f"- Treated: {summary['n_treated']}, Control: {summary['n_control']} "
        f"(eligible after filtering)",
        f"- Dropped: "
        + (
            ", ".join(f"{k}={v}" for k, v in sorted(summary["drops"].items()))
            if summary["drops"]
            else "none"
        ),
        f"- Anchor-date comparability (KS): D = {ks['statistic']:.4f}, "
        f"p = {ks['p_value']:.4f}",
        "",
        f"![anchor dates]({fig_anchor})",
        "",
        "## Matching quality",
        "",
        f"- Max |SMD|: {balance['max_pre']:.3f} &rarr; {balance['max_post']:.3f}",
        f"- Mean |SMD|: {balance['mean_pre']:.3f} &rarr; {balance['mean_post']:.3f}",
        f"- Imbalanced (|SMD| &ge; {balance['threshold']}): "
        f"{balance['n_imbalanced_pre']} ({100 * balance['frac_imbalanced_pre']:.1f}%) "
        f"&rarr; {balance['n_imbalanced_post']} "
        f"({100 * balance['frac_imbalanced_post']:.1f}%)",
        f"- Retained strata: {balance['prune']['retained_strata']}; users dropped by "
        f"pruning: treated {balance['prune']['dropped_treated']}, "
        f"control {balance['prune']['dropped_control']}",
        "",
        f"![propensity scores]({fig_scores})",
        "",
        f"![covariate balance]({fig_balance})",
        "",
        "## Treatment effects",
        "",
    ]
    core = [r for r in effects if not r["metric"].startswith("cat:")]
    cats = [r for r in effects if r["metric"].startswith("cat:")]
    lines.extend(_effects_table(core, "Lexico-semantic outcomes"))
    if cats:
        lines.extend(_effects_table(cats, "Psycholinguistic category rates"))

    topics_path = out / "topics.csv"
    if topics_path.exists():
        topic_rows = _read_csv(topics_path)
        renamed = [
            {
                "metric": r["topic"],
                "ate": r["ate"],
                "ate_pct": r["ate_pct"],
                "cohens_d": r["cohens_d"],
                "t": r["t"],
                "stars": r["stars"],
            }
            for r in topic_rows
        ]
        lines.extend(_effects_table(renamed, "Topic shares"))

    lines.extend(["## Engagement regression", ""])
    lines.append("| Eng. type | &beta; | t |")
    lines.append("|---|---:|---:|")
    r2_value = ""
    for r in regression:
        if r["term"] == "r2":
            r2_value = r["beta"]
            continue
        t_cell = (_fmt_cell(r["t"]) + r["stars"]) if r["t"] else ""
        lines.append(f"| {r['term']} | {_fmt_cell(r['beta'], 3)} | {t_cell} |")
    if r2_value:
        lines.append(f"| R&sup2; | {_fmt_cell(r2_value)} | |")
    lines.append("")

    (out / "report.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    outputs.append("report.md")
    return outputs
