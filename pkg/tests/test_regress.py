"""OLS engagement regression: recovery, diagnostics, design assembly."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from feedshift.corpus import SECONDS_PER_DAY, ingest_events
from feedshift.embedding import HashingEmbedder
from feedshift.regress import (
    DESIGN_COLUMNS,
    DesignMatrix,
    RegressError,
    build_design,
    ols_fit,
)
from feedshift.textmetrics import feed_centroid


def _design(X, y):
    return DesignMatrix(
        columns=tuple(f"x{j}" for j in range(X.shape[1])),
        X=np.asarray(X, dtype=float),
        y=np.asarray(y, dtype=float),
        user_ids=[f"u{i}" for i in range(X.shape[0])],
    )


class TestOlsFit:
    def test_exact_linear_recovery(self, rng):
        n, k = 60, 4
        X = np.column_stack([np.ones(n), rng.uniform(size=(n, k - 1))])
        beta = np.array([1.0, -2.0, 0.5, 3.0])
        fit = ols_fit(_design(X, X @ beta))
        assert np.allclose(fit.beta, beta, atol=1e-9)
        assert fit.r2 == pytest.approx(1.0, abs=1e-12)

    def test_constant_response(self, rng):
        n = 30
        X = np.column_stack([np.ones(n), rng.uniform(size=(n, 2))])
        fit = ols_fit(_design(X, np.full(n, 7.0)))
        assert fit.beta[0] == pytest.approx(7.0, abs=1e-9)
        assert np.allclose(fit.beta[1:], 0.0, atol=1e-9)
        assert fit.r2 == 0.0

    def test_planted_coefficients_within_3_se(self):
        rng = np.random.default_rng(314)
        n = 5000
        beta = np.array([0.5, -0.02, 0.0, 0.0, -0.015, 0.0, -0.03, 0.8])
        X = np.column_stack([np.ones(n), rng.uniform(0, 4, size=(n, 6)),
                             rng.uniform(0, 1, size=n)])
        y = X @ beta + 0.01 * rng.standard_normal(n)
        fit = ols_fit(_design(X, y))
        for j in range(8):
            assert abs(fit.beta[j] - beta[j]) <= 3.0 * fit.se[j]
        assert fit.df_resid == n - 8

    def test_residuals_orthogonal_to_columns(self, rng):
        n = 200
        X = np.column_stack([np.ones(n), rng.standard_normal((n, 5))])
        y = rng.standard_normal(n)
        fit = ols_fit(_design(X, y))
        resid = y - X @ fit.beta
        assert np.all(np.abs(X.T @ resid) < 1e-8)

    def test_r2_invariant_beta_rescales_under_column_scaling(self, rng):
        n = 120
        X = np.column_stack([np.ones(n), rng.standard_normal((n, 3))])
        y = X @ np.array([1.0, 0.5, -0.3, 0.2]) + 0.1 * rng.standard_normal(n)
        fit1 = ols_fit(_design(X, y))
        X2 = X.copy()
        X2[:, 2] *= 10.0
        fit2 = ols_fit(_design(X2, y))
        assert fit2.r2 == pytest.approx(fit1.r2, abs=1e-12)
        assert fit2.beta[2] == pytest.approx(fit1.beta[2] / 10.0, abs=1e-9)
        assert fit2.t[2] == pytest.approx(fit1.t[2], abs=1e-6)

    def test_rank_deficiency_names_collinear_columns(self, rng):
        n = 50
        a = rng.standard_normal(n)
        X = np.column_stack([np.ones(n), a, 2.0 * a])
        design = DesignMatrix(
            columns=("intercept", "a", "a_twice"),
            X=X,
            y=rng.standard_normal(n),
            user_ids=[str(i) for i in range(n)],
        )
        with pytest.raises(RegressError, match="collinear"):
            ols_fit(design)

    def test_too_few_rows_rejected(self, rng):
        X = rng.standard_normal((4, 4))
        with pytest.raises(RegressError, match="rows"):
            ols_fit(_design(X, np.zeros(4)))

    def test_matches_lstsq_oracle(self, rng):
        n = 300
        X = np.column_stack([np.ones(n), rng.standard_normal((n, 4))])
        y = rng.standard_normal(n)
        fit = ols_fit(_design(X, y))
        want, *_ = np.linalg.lstsq(X, y, rcond=None)
        assert np.allclose(fit.beta, want, atol=1e-10)
        # classical SE via normal equations, independently of the QR path
        resid = y - X @ want
        sigma2 = resid @ resid / (n - X.shape[1])
        se = np.sqrt(np.diag(sigma2 * np.linalg.inv(X.T @ X)))
        assert np.allclose(fit.se, se, atol=1e-10)


def _event_lines():
    day = SECONDS_PER_DAY
    lines = []
    # feed posts early, surfaced via engagement targets
    for i in range(3):
        lines.append(json.dumps({
            "type": "post", "post_id": f"fp{i}", "author_id": "feedauth",
            "timestamp": i, "text": f"the feed voice artaaa{i} speaks"
        }))
    # nine treated users with posts both periods
    for i in range(9):
        u = f"t{i}"
        anchor = 40 * day
        lines.append(json.dumps({
            "type": "post", "post_id": f"{u}_b", "author_id": u,
            "timestamp": 1 * day, "text": f"own words before w{i} base"
        }))
        lines.append(json.dumps({
            "type": "post", "post_id": f"{u}_p", "author_id": u,
            "timestamp": 60 * day, "text": f"own words after w{i} tail"
        }))
        lines.append(json.dumps({
            "type": "engagement", "user_id": u, "feed_id": "f", "kind": "like",
            "timestamp": anchor, "target_post_id": f"fp{i % 3}"
        }))
        for _ in range(i):  # i extra reposts
            lines.append(json.dumps({
                "type": "engagement", "user_id": u, "feed_id": "f",
                "kind": "repost", "timestamp": anchor + day,
                "target_post_id": "fp0"
            }))
    return lines


class TestBuildDesign:
    def _fixture(self, lex):
        store, report = ingest_events(_event_lines())
        assert report.n_rejected == 0
        embedder = HashingEmbedder(dim=64, seed=0)
        centroid = feed_centroid(store.feed_posts("f"), lex, embedder, feed_id="f")
        anchors = {f"t{i}": 40 * SECONDS_PER_DAY for i in range(9)}
        design = build_design(
            sorted(anchors), store, anchors, "f", centroid, embedder
        )
        return design

    def test_columns_and_log_transform(self, lex):
        design = self._fixture(lex)
        assert design.columns == DESIGN_COLUMNS
        assert design.X.shape == (9, 8)
        # user t0: one like, zero of everything else
        row0 = design.X[0]
        assert row0[0] == 1.0
        like_col = DESIGN_COLUMNS.index("log1p_like")
        repost_col = DESIGN_COLUMNS.index("log1p_repost")
        assert row0[like_col] == pytest.approx(math.log(2.0))
        assert row0[repost_col] == 0.0  # log1p(0)
        # user t5 reposted 5 times
        assert design.X[5][repost_col] == pytest.approx(math.log(6.0))

    def test_count_99_gives_ln_100(self):
        assert math.log1p(99) == pytest.approx(4.605170185988092, abs=1e-12)

    def test_identical_to_centroid_gives_zero_distances(self, lex):
        feed_text = "the same exact words"
        day = SECONDS_PER_DAY
        lines = [json.dumps({
            "type": "post", "post_id": "fp0", "author_id": "fa",
            "timestamp": 0, "text": feed_text
        })]
        users = [f"u{i}" for i in range(9)]
        for u in users:
            lines.append(json.dumps({
                "type": "post", "post_id": f"{u}b", "author_id": u,
                "timestamp": 1 * day, "text": feed_text
            }))
            lines.append(json.dumps({
                "type": "post", "post_id": f"{u}p", "author_id": u,
                "timestamp": 60 * day, "text": feed_text
            }))
            lines.append(json.dumps({
                "type": "engagement", "user_id": u, "feed_id": "f", "kind": "like",
                "timestamp": 40 * day, "target_post_id": "fp0"
            }))
        store, _ = ingest_events(lines)
        embedder = HashingEmbedder(dim=64, seed=0)
        centroid = feed_centroid(store.feed_posts("f"), lex, embedder)
        anchors = {u: 40 * day for u in users}
        design = build_design(users, store, anchors, "f", centroid, embedder)
        base_col = DESIGN_COLUMNS.index("baseline_distance")
        assert np.allclose(design.y, 0.0, atol=1e-12)
        assert np.allclose(design.X[:, base_col], 0.0, atol=1e-12)

    def test_rows_sorted_by_user(self, lex):
        design = self._fixture(lex)
        assert design.user_ids == sorted(design.user_ids)
