"""Cohort construction: treated/control arms, placebo anchors, eligibility.

Treatment is the first engagement (any of the six kinds) with the study
feed; that timestamp is the anchor.  Controls never engaged with the
feed during the window and receive placebo anchors sampled with
replacement from the treated anchor distribution, whose comparability
is checked with a two-sample Kolmogorov-Smirnov test.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._stats import kolmogorov_sf
from .corpus import SECONDS_PER_DAY, EventStore, split_periods


class CohortError(Exception):
    """Raised for degenerate cohort inputs (e.g. no treated anchors)."""


@dataclass(frozen=True)
class CohortAssignment:
    user_id: str
    arm: str  # "treated" | "control"
    anchor: int
    feed_id: str


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n1: int
    n2: int


@dataclass(frozen=True)
class DropRecord:
    user_id: str
    arm: str
    anchor: int
    reason: str


def find_treated(store: EventStore, feed_id: str) -> list[tuple[str, int]]:
    """(user_id, anchor) for every user with an engagement on the feed.

    The anchor is the minimum engagement timestamp; rows sort by
    user_id.
    """
    anchors: dict[str, int] = {}
    for e in store.engagements_on(feed_id):
        current = anchors.get(e.user_id)
        if current is None or e.timestamp < current:
            anchors[e.user_id] = e.timestamp
    return sorted(anchors.items())


def find_controls(store: EventStore, feed_id: str) -> list[str]:
    """Users with at least one post and zero engagements on the feed.

    Engagement with other feeds does not disqualify.
    """
    engaged = {e.user_id for e in store.engagements_on(feed_id)}
    return sorted(
        u for u in store.users() if u not in engaged and store.posts_of(u)
    )


def sample_placebo(
    anchors: Sequence[int],
    controls: Sequence[str],
    seed: int,
    feed_id: str,
) -> list[CohortAssignment]:
    """Draw one placebo anchor per control from the treated anchor multiset.

    Sampling is uniform with replacement over the sorted anchor list
    using a seeded generator, so the result is a pure function of
    (seed, sorted controls, sorted anchors).
    """
    if not anchors:
        raise CohortError("no treated anchors to sample placebo dates from")
    anchor_arr = np.array(sorted(anchors), dtype=np.int64)
    ordered_controls = sorted(controls)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(anchor_arr), size=len(ordered_controls))
    return [
        CohortAssignment(
            user_id=u, arm="control", anchor=int(anchor_arr[i]), feed_id=feed_id
        )
        for u, i in zip(ordered_controls, idx)
    ]


def ks_two_sample(s1: Sequence[float], s2: Sequence[float]) -> KsResult:
    """Two-sample KS statistic with the asymptotic p-value.

    D is the supremum over pooled sample points of the ECDF gap; the
    p-value uses the Kolmogorov series at
    lambda = (sqrt(ne) + 0.12 + 0.11/sqrt(ne)) * D with
    ne = n1*n2/(n1+n2).
    """
    a = np.sort(np.asarray(s1, dtype=np.float64))
    b = np.sort(np.asarray(s2, dtype=np.float64))
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise CohortError("KS test requires nonempty samples")
    pooled = np.concatenate([a, b])
    cdf1 = np.searchsorted(a, pooled, side="right") / n1
    cdf2 = np.searchsorted(b, pooled, side="right") / n2
    d = float(np.max(np.abs(cdf1 - cdf2)))
    ne = n1 * n2 / (n1 + n2)
    lam = (np.sqrt(ne) + 0.12 + 0.11 / np.sqrt(ne)) * d
    return KsResult(statistic=d, p_value=kolmogorov_sf(float(lam)), n1=n1, n2=n2)


def apply_eligibility(
    assignments: Sequence[CohortAssignment],
    store: EventStore,
    min_baseline_days: float = 30.0,
) -> tuple[list[CohortAssignment], list[DropRecord]]:
    """Drop users with short baselines or an empty period.

    The baseline span runs from the user's first observed event (post
    or engagement) to the anchor.  Users must post at least once in
    each period.  Drop reasons are tallied per user.
    """
    kept: list[CohortAssignment] = []
    drops: list[DropRecord] = []
    min_span = min_baseline_days * SECONDS_PER_DAY
    for asg in sorted(assignments, key=lambda a: a.user_id):
        timeline = store.timeline(asg.user_id)
        reason = None
        if asg.anchor - timeline.first_seen < min_span:
            reason = "baseline_too_short"
        else:
            split = split_periods(timeline, asg.anchor)
            if not split.baseline:
                reason = "no_baseline_posts"
            elif not split.post_exposure:
                reason = "no_post_period_posts"
        if reason is None:
            kept.append(asg)
        else:
            drops.append(
                DropRecord(
                    user_id=asg.user_id, arm=asg.arm, anchor=asg.anchor, reason=reason
                )
            )
    return kept, drops


def build_cohort(
    store: EventStore,
    feed_id: str,
    seed: int,
    min_baseline_days: float = 30.0,
) -> tuple[list[CohortAssignment], list[DropRecord], KsResult]:
    """Full cohort assembly for one feed study.

    Returns eligible assignments (both arms), drop records, and the KS
    comparison between treated anchors and sampled placebo anchors.
    """
    treated = find_treated(store, feed_id)
    if not treated:
        raise CohortError(f"no users engaged with feed {feed_id!r}")
    anchors = [ts for _, ts in treated]
    controls = find_controls(store, feed_id)
    assignments = [
        CohortAssignment(user_id=u, arm="treated", anchor=ts, feed_id=feed_id)
        for u, ts in treated
    ]
    placebo = sample_placebo(anchors, controls, seed=seed, feed_id=feed_id)
    assignments.extend(placebo)
    ks = ks_two_sample(
        [float(a) for a in anchors], [float(a.anchor) for a in placebo]
    )
    kept, drops = apply_eligibility(assignments, store, min_baseline_days)
    return kept, drops, ks
