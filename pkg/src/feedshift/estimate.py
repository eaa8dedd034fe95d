"""Stratified matching diagnostics and treatment-effect estimation.

Users are binned into k equal-width propensity strata over [0, 1];
strata keep both arms only when each has at least ``min_per_arm``
users.  Balance is summarized by standardized mean differences before
and after matching; effects report ATE, ATE%, Cohen's d, and Welch's t
over the pooled matched sample (a stratum-weighted variant is
available, since per-stratum testing could also be read into the
method description).

Summation runs compensated and in user_id-sorted order, so results are
bitwise-stable regardless of upstream worker scheduling.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from ._stats import cohens_d, fmean, fvar, t_two_sided_p, welch_t
from .cohort import CohortAssignment

ATE_PCT_EPSILON = 1e-8


class EstimateError(Exception):
    """Raised for degenerate estimation inputs."""


class NoOverlapError(EstimateError):
    """Raised when pruning leaves no stratum with both arms populated."""


@dataclass
class Stratum:
    index: int
    lo: float
    hi: float
    treated: list[str]
    control: list[str]


@dataclass(frozen=True)
class BalanceRow:
    """Pre/post covariate balance.

    ``smd_post`` is the stratum-adjusted SMD of the retained matched
    sample: the stratum-size-weighted within-stratum mean difference
    over the retained sample's pooled standard deviation.  The pooled
    (unadjusted) difference over the retained sample is kept in
    ``smd_post_pooled``; it only moves when pruning trims users, so it
    understates what stratified estimation actually adjusts for.
    """

    covariate: str
    smd_pre: float
    smd_post: float
    smd_post_pooled: float
    degenerate_pre: bool = False
    degenerate_post: bool = False


@dataclass
class BalanceSummary:
    max_pre: float
    max_post: float
    mean_pre: float
    mean_post: float
    n_imbalanced_pre: int
    n_imbalanced_post: int
    frac_imbalanced_pre: float
    frac_imbalanced_post: float
    threshold: float
    n_covariates: int


@dataclass(frozen=True)
class EffectRow:
    metric: str
    ate: float
    ate_pct: float | None
    cohens_d: float
    t: float
    df: float
    p: float
    n_treated: int
    n_control: int

    @property
    def stars(self) -> str:
        if self.p < 0.001:
            return "***"
        if self.p < 0.01:
            return "**"
        if self.p < 0.05:
            return "*"
        return ""


def stratify(
    scores: Mapping[str, float],
    assignments: Sequence[CohortAssignment],
    k: int = 15,
) -> list[Stratum]:
    """Assign every user to one of k equal-width score strata over [0, 1]."""
    if k < 1:
        raise EstimateError("k must be positive")
    arm = {a.user_id: a.arm for a in assignments}
    strata = [
        Stratum(index=i, lo=i / k, hi=(i + 1) / k, treated=[], control=[])
        for i in range(k)
    ]
    for user in sorted(scores):
        s = scores[user]
        if not 0.0 <= s <= 1.0:
            raise EstimateError(f"score out of [0,1] for {user}: {s}")
        idx = min(int(s * k), k - 1)
        if arm[user] == "treated":
            strata[idx].treated.append(user)
        else:
            strata[idx].control.append(user)
    return strata


def prune(
    strata: Sequence[Stratum], min_per_arm: int = 10
) -> tuple[list[Stratum], dict[str, int]]:
    """Retain strata with at least ``min_per_arm`` users in each arm.

    Returns the retained strata and a drop report with the counts of
    users discarded from each arm.
    """
    retained: list[Stratum] = []
    dropped_treated = 0
    dropped_control = 0
    for stratum in strata:
        if len(stratum.treated) >= min_per_arm and len(stratum.control) >= min_per_arm:
            retained.append(stratum)
        else:
            dropped_treated += len(stratum.treated)
            dropped_control += len(stratum.control)
    if not retained:
        raise NoOverlapError("no overlap: every stratum lacks support in one arm")
    report = {
        "dropped_treated": dropped_treated,
        "dropped_control": dropped_control,
        "retained_strata": len(retained),
    }
    return retained, report


def smd(treated: Sequence[float], control: Sequence[float]) -> tuple[float, bool]:
    """Standardized mean difference with the pooled-variance denominator.

    Returns (value, degenerate).  A zero denominator with equal means
    is 0.0; with differing means the value is NaN and flagged.
    """
    if not treated or not control:
        raise EstimateError("smd requires nonempty samples")
    m_t = fmean(treated)
    m_c = fmean(control)
    denom = math.sqrt((fvar(treated, m_t) + fvar(control, m_c)) / 2.0)
    if denom == 0.0:
        if m_t == m_c:
            return 0.0, False
        return float("nan"), True
    return (m_t - m_c) / denom, False


def matched_users(strata: Sequence[Stratum]) -> tuple[list[str], list[str]]:
    """(treated, control) user lists pooled over strata, user_id-sorted."""
    treated = sorted(u for s in strata for u in s.treated)
    control = sorted(u for s in strata for u in s.control)
    return treated, control


def _stratum_adjusted_smd(
    values: Mapping[str, float], retained: Sequence[Stratum]
) -> tuple[float, bool]:
    """Stratum-size-weighted mean difference over the pooled matched SD."""
    treated_post, control_post = matched_users(retained)
    t_all = [values[u] for u in treated_post]
    c_all = [values[u] for u in control_post]
    m_t_all = fmean(t_all)
    m_c_all = fmean(c_all)
    denom = math.sqrt((fvar(t_all, m_t_all) + fvar(c_all, m_c_all)) / 2.0)
    total = sum(len(s.treated) + len(s.control) for s in retained)
    diff = 0.0
    for s in retained:
        w = (len(s.treated) + len(s.control)) / total
        diff += w * (
            fmean([values[u] for u in sorted(s.treated)])
            - fmean([values[u] for u in sorted(s.control)])
        )
    if denom == 0.0:
        if diff == 0.0:
            return 0.0, False
        return float("nan"), True
    return diff / denom, False


def balance_report(
    covariates: Mapping[str, Sequence[float]],
    names: Sequence[str],
    assignments: Sequence[CohortAssignment],
    retained: Sequence[Stratum],
    threshold: float = 0.15,
) -> tuple[list[BalanceRow], BalanceSummary]:
    """Per-covariate SMD on the full cohort vs the retained matched sample."""
    treated_all = sorted(a.user_id for a in assignments if a.arm == "treated")
    control_all = sorted(a.user_id for a in assignments if a.arm == "control")
    treated_post, control_post = matched_users(retained)
    rows: list[BalanceRow] = []
    for j, name in enumerate(names):
        col = {u: covariates[u][j] for u in covariates}
        pre, deg_pre = smd(
            [col[u] for u in treated_all], [col[u] for u in control_all]
        )
        post, deg_post = _stratum_adjusted_smd(col, retained)
        post_pooled, _ = smd(
            [col[u] for u in treated_post], [col[u] for u in control_post]
        )
        rows.append(
            BalanceRow(
                covariate=name,
                smd_pre=pre,
                smd_post=post,
                smd_post_pooled=post_pooled,
                degenerate_pre=deg_pre,
                degenerate_post=deg_post,
            )
        )
    pre_abs = [abs(r.smd_pre) for r in rows if not r.degenerate_pre]
    post_abs = [abs(r.smd_post) for r in rows if not r.degenerate_post]
    summary = BalanceSummary(
        max_pre=max(pre_abs, default=0.0),
        max_post=max(post_abs, default=0.0),
        mean_pre=fmean(pre_abs) if pre_abs else 0.0,
        mean_post=fmean(post_abs) if post_abs else 0.0,
        n_imbalanced_pre=sum(1 for v in pre_abs if v >= threshold),
        n_imbalanced_post=sum(1 for v in post_abs if v >= threshold),
        frac_imbalanced_pre=(
            sum(1 for v in pre_abs if v >= threshold) / len(rows) if rows else 0.0
        ),
        frac_imbalanced_post=(
            sum(1 for v in post_abs if v >= threshold) / len(rows) if rows else 0.0
        ),
        threshold=threshold,
        n_covariates=len(rows),
    )
    return rows, summary


def _arm_values(
    outcomes: Mapping[str, float], users: Sequence[str]
) -> list[float]:
    missing = [u for u in users if u not in outcomes]
    if missing:
        raise EstimateError(f"missing outcomes for {len(missing)} users")
    return [outcomes[u] for u in users]


def effect(
    outcomes: Mapping[str, float],
    retained: Sequence[Stratum],
    metric: str,
    variant: str = "pooled",
) -> EffectRow:
    """ATE / ATE% / Cohen's d / Welch's t over the matched sample.

    ``pooled`` compares arm means over all retained strata at once;
    ``stratum-weighted`` averages within-stratum mean differences with
    stratum-size weights and tests with the corresponding Welch
    variance.  ATE% is omitted when the control mean is within
    ``ATE_PCT_EPSILON`` of zero (such rows report the raw ATE).
    """
    treated_users, control_users = matched_users(retained)
    t_vals = _arm_values(outcomes, treated_users)
    c_vals = _arm_values(outcomes, control_users)
    n_t, n_c = len(t_vals), len(c_vals)
    if n_t < 2 or n_c < 2:
        raise EstimateError("each arm needs at least 2 users with outcomes")
    m_t = fmean(t_vals)
    m_c = fmean(c_vals)
    v_t = fvar(t_vals, m_t)
    v_c = fvar(c_vals, m_c)
    d = cohens_d(m_t, v_t, n_t, m_c, v_c, n_c)
    if variant == "pooled":
        ate = m_t - m_c
        t_stat, df = welch_t(m_t, v_t, n_t, m_c, v_c, n_c)
    elif variant == "stratum-weighted":
        ate, t_stat, df = _stratum_weighted(outcomes, retained)
    else:
        raise ValueError(f"unknown effect variant: {variant!r}")
    p = t_two_sided_p(t_stat, df) if math.isfinite(t_stat) else 0.0
    if t_stat == 0.0:
        p = 1.0
    ate_pct = 100.0 * ate / m_c if abs(m_c) >= ATE_PCT_EPSILON else None
    return EffectRow(
        metric=metric,
        ate=ate,
        ate_pct=ate_pct,
        cohens_d=d,
        t=t_stat,
        df=df,
        p=p,
        n_treated=n_t,
        n_control=n_c,
    )


def _stratum_weighted(
    outcomes: Mapping[str, float], retained: Sequence[Stratum]
) -> tuple[float, float, float]:
    """Size-weighted within-stratum ATE with Welch-Satterthwaite df."""
    total = sum(len(s.treated) + len(s.control) for s in retained)
    ate = 0.0
    var = 0.0
    df_denom = 0.0
    for s in retained:
        t_vals = _arm_values(outcomes, sorted(s.treated))
        c_vals = _arm_values(outcomes, sorted(s.control))
        w = (len(t_vals) + len(c_vals)) / total
        m_t, m_c = fmean(t_vals), fmean(c_vals)
        v_t, v_c = fvar(t_vals, m_t), fvar(c_vals, m_c)
        ate += w * (m_t - m_c)
        for v, n in ((v_t, len(t_vals)), (v_c, len(c_vals))):
            comp = w * w * v / n
            var += comp
            df_denom += comp * comp / (n - 1)
    if var == 0.0:
        return ate, (0.0 if ate == 0.0 else math.copysign(math.inf, ate)), 1.0
    df = var * var / df_denom if df_denom > 0 else 1.0
    return ate, ate / math.sqrt(var), df


@dataclass
class TopicShareResult:
    effect: EffectRow
    baseline_mean_treated: float
    baseline_mean_control: float
    n_excluded_no_mapped: int


def load_topic_map(path: str | Path) -> dict[str, str]:
    """Read a post_id,topic_id CSV (header required)."""
    mapping: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or {"post_id", "topic_id"} - set(reader.fieldnames):
            raise EstimateError("topic map must have post_id,topic_id columns")
        for row in reader:
            mapping[row["post_id"]] = row["topic_id"]
    return mapping


def topic_share_outcome(
    topic_map: Mapping[str, str],
    topic_id: str,
    baseline_posts: Mapping[str, Sequence[str]],
    post_posts: Mapping[str, Sequence[str]],
    retained: Sequence[Stratum],
    variant: str = "pooled",
) -> TopicShareResult:
    """ATE on the share of a user's posts assigned to one topic.

    ``baseline_posts``/``post_posts`` map user ids to the post ids of
    each period.  Posts absent from the topic map are excluded from the
    share; users with no mapped posts in the post-exposure period are
    excluded and tallied.  The outcome is the post-exposure share; the
    baseline share is reported alongside.
    """
    if topic_id not in set(topic_map.values()):
        raise EstimateError(f"topic absent from map: {topic_id}")

    def share(post_ids: Sequence[str]) -> float | None:
        mapped = [topic_map[p] for p in post_ids if p in topic_map]
        if not mapped:
            return None
        return sum(1 for t in mapped if t == topic_id) / len(mapped)

    outcomes: dict[str, float] = {}
    base_shares: dict[str, float] = {}
    excluded = 0
    users = set()
    for s in retained:
        users.update(s.treated)
        users.update(s.control)
    for user in sorted(users):
        val = share(post_posts.get(user, ()))
        if val is None:
            excluded += 1
            continue
        outcomes[user] = val
        base = share(baseline_posts.get(user, ()))
        base_shares[user] = 0.0 if base is None else base
    pruned = [
        Stratum(
            index=s.index,
            lo=s.lo,
            hi=s.hi,
            treated=[u for u in s.treated if u in outcomes],
            control=[u for u in s.control if u in outcomes],
        )
        for s in retained
    ]
    pruned = [s for s in pruned if s.treated or s.control]
    row = effect(outcomes, pruned, metric=f"topic:{topic_id}", variant=variant)
    treated_users, control_users = matched_users(pruned)
    return TopicShareResult(
        effect=row,
        baseline_mean_treated=fmean([base_shares[u] for u in treated_users]),
        baseline_mean_control=fmean([base_shares[u] for u in control_users]),
        n_excluded_no_mapped=excluded,
    )
