"""Engagement regression: post-exposure distance on log engagement counts.

For treated users, the design regresses the post-exposure cosine
distance (1 - cosine) to the feed embedding centroid on log1p-scaled
engagement counts of the six kinds plus the baseline distance.  A
negative coefficient on an engagement column means more of that
engagement goes with stronger linguistic alignment to the feed.

The solve uses a column-pivoted QR decomposition (never the normal
equations); rank deficiency is reported with the offending columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg as _slinalg

from ._stats import t_two_sided_p
from .corpus import EngagementKind, EventStore, split_periods
from .embedding import Embedder
from .textmetrics import FeedCentroid, MetricError, _mean_embedding, cosine

_RANK_TOL = 1e-10

DESIGN_COLUMNS = (
    "intercept",
    "log1p_post",
    "log1p_comment",
    "log1p_quote",
    "log1p_repost",
    "log1p_like",
    "log1p_bookmark",
    "baseline_distance",
)


class RegressError(Exception):
    """Raised for rank-deficient or undersized designs."""


@dataclass
class DesignMatrix:
    columns: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    user_ids: list[str]
    n_excluded: int = 0


@dataclass
class RegressionFit:
    columns: tuple[str, ...]
    beta: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    r2: float
    n: int
    df_resid: float


def distance_to_centroid(
    posts: Sequence, centroid: FeedCentroid, embedder: Embedder
) -> float:
    """Cosine distance (1 - similarity) of a user's mean post embedding."""
    return 1.0 - cosine(_mean_embedding(posts, embedder), centroid.embedding_centroid)


def build_design(
    treated_users: Sequence[str],
    store: EventStore,
    anchors: Mapping[str, int],
    feed_id: str,
    centroid: FeedCentroid,
    embedder: Embedder,
) -> DesignMatrix:
    """Assemble the engagement design for the treated arm.

    Engagement counts tally the user's actions on the study feed, by
    kind.  Users whose posts in either period all embed to zero are
    excluded and tallied.  Rows sort by user_id.
    """
    counts: dict[str, dict[EngagementKind, int]] = {}
    for e in store.engagements_on(feed_id):
        counts.setdefault(e.user_id, {}).setdefault(e.kind, 0)
        counts[e.user_id][e.kind] += 1
    rows = []
    ys = []
    kept_users = []
    n_excluded = 0
    for user in sorted(treated_users):
        split = split_periods(store.timeline(user), anchors[user])
        try:
            y = distance_to_centroid(split.post_exposure, centroid, embedder)
            base = distance_to_centroid(split.baseline, centroid, embedder)
        except MetricError:
            n_excluded += 1
            continue
        user_counts = counts.get(user, {})
        row = [1.0]
        row.extend(math.log1p(user_counts.get(kind, 0)) for kind in EngagementKind)
        row.append(base)
        rows.append(row)
        ys.append(y)
        kept_users.append(user)
    X = np.array(rows, dtype=np.float64)
    y_arr = np.array(ys, dtype=np.float64)
    if X.size and X.shape[0] < X.shape[1] + 1:
        raise RegressError(
            f"need at least {X.shape[1] + 1} rows, got {X.shape[0]}"
        )
    return DesignMatrix(
        columns=DESIGN_COLUMNS, X=X, y=y_arr, user_ids=kept_users, n_excluded=n_excluded
    )


def ols_fit(design: DesignMatrix) -> RegressionFit:
    """Least squares via column-pivoted QR, with per-coefficient t-tests.

    Standard errors come from the R factor (se_j = sigma * ||R^-T e||
    unpivoted); a constant response yields R^2 = 0 by convention.
    """
    X, y = design.X, design.y
    n, k = X.shape
    if n < k + 1:
        raise RegressError(f"need at least {k + 1} rows, got {n}")
    q, r, piv = _slinalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    scale = diag[0] if diag[0] > 0 else 1.0
    rank = int(np.sum(diag > _RANK_TOL * scale))
    if rank < k:
        collinear = sorted(design.columns[j] for j in piv[rank:])
        raise RegressError(f"rank-deficient design; collinear columns: {', '.join(collinear)}")
    qty = q.T @ y
    beta_piv = _slinalg.solve_triangular(r, qty)
    beta = np.empty(k, dtype=np.float64)
    beta[piv] = beta_piv
    resid = y - X @ beta
    ss_res = float(resid @ resid)
    df_resid = float(n - k)
    sigma2 = ss_res / df_resid
    r_inv = _slinalg.solve_triangular(r, np.eye(k))
    var_piv = np.sum(r_inv * r_inv, axis=1) * sigma2
    se = np.empty(k, dtype=np.float64)
    se[piv] = np.sqrt(var_piv)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / se, np.where(beta == 0, 0.0, np.inf))
    p = np.array([t_two_sided_p(float(tv), df_resid) for tv in t])
    y_mean = float(np.mean(y))
    ss_tot = float(np.sum((y - y_mean) ** 2))
    r2 = 0.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return RegressionFit(
        columns=design.columns,
        beta=beta,
        se=se,
        t=t,
        p=p,
        r2=r2,
        n=n,
        df_resid=df_resid,
    )
