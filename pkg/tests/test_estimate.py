"""Stratification, balance, and treatment-effect estimation."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate

from feedshift.cohort import CohortAssignment
from feedshift.estimate import (
    EstimateError,
    NoOverlapError,
    Stratum,
    balance_report,
    effect,
    load_topic_map,
    matched_users,
    prune,
    smd,
    stratify,
    topic_share_outcome,
)


def _assignments(scores_by_arm):
    out = []
    for arm, users in scores_by_arm.items():
        for u in users:
            out.append(CohortAssignment(user_id=u, arm=arm, anchor=0, feed_id="f"))
    return out


class TestStratify:
    def _run(self, scores):
        users = {f"u{i}": s for i, s in enumerate(scores)}
        assignments = _assignments({"treated": list(users)})
        return stratify(users, assignments, k=15), users

    def test_boundaries(self):
        strata, _ = self._run([0.0, 1.0])
        assert "u0" in strata[0].treated
        assert "u1" in strata[14].treated

    def test_half_lands_in_stratum_7(self):
        strata, _ = self._run([0.5])
        assert "u0" in strata[7].treated

    def test_uniform_scores_spread_evenly(self):
        rng = np.random.default_rng(15)
        scores = {f"u{i:05d}": float(s) for i, s in enumerate(rng.uniform(size=15000))}
        assignments = _assignments({"treated": list(scores)})
        strata = stratify(scores, assignments, k=15)
        for s in strata:
            assert len(s.treated) == pytest.approx(1000, abs=100)

    def test_user_in_exactly_one_stratum(self):
        rng = np.random.default_rng(5)
        scores = {f"u{i}": float(s) for i, s in enumerate(rng.uniform(size=500))}
        assignments = _assignments({"treated": list(scores)})
        strata = stratify(scores, assignments, k=15)
        seen: list[str] = []
        for s in strata:
            seen.extend(s.treated)
        assert sorted(seen) == sorted(scores)

    def test_score_out_of_range_rejected(self):
        assignments = _assignments({"treated": ["u0"]})
        with pytest.raises(EstimateError):
            stratify({"u0": 1.5}, assignments, k=15)


class TestPrune:
    def _stratum(self, idx, n_t, n_c):
        return Stratum(
            index=idx,
            lo=0.0,
            hi=1.0,
            treated=[f"t{idx}_{i}" for i in range(n_t)],
            control=[f"c{idx}_{i}" for i in range(n_c)],
        )

    def test_nine_treated_dropped(self):
        retained, report = prune([self._stratum(0, 9, 50), self._stratum(1, 10, 10)])
        assert [s.index for s in retained] == [1]
        assert report["dropped_treated"] == 9
        assert report["dropped_control"] == 50

    def test_ten_ten_kept(self):
        retained, _ = prune([self._stratum(0, 10, 10)])
        assert len(retained) == 1

    def test_no_overlap_raises(self):
        with pytest.raises(NoOverlapError, match="no overlap"):
            prune([self._stratum(0, 100, 0), self._stratum(14, 0, 100)])


class TestSmd:
    def test_identity_zero(self):
        v, degenerate = smd([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert v == 0.0 and not degenerate

    def test_hand_value(self):
        v, _ = smd([0.0, 2.0], [2.0, 4.0])
        assert v == pytest.approx(-2.0 / math.sqrt(2.0), abs=1e-12)

    def test_constant_equal_arms(self):
        v, degenerate = smd([5.0, 5.0], [5.0, 5.0])
        assert v == 0.0 and not degenerate

    def test_constant_unequal_arms_flagged(self):
        v, degenerate = smd([5.0, 5.0], [6.0, 6.0])
        assert math.isnan(v) and degenerate

    def test_sign_flips_under_arm_exchange(self, rng):
        for _ in range(20):
            a = list(rng.normal(size=10))
            b = list(rng.normal(size=12))
            v1, _ = smd(a, b)
            v2, _ = smd(b, a)
            assert v1 == pytest.approx(-v2, abs=1e-15)

    def test_empty_errors(self):
        with pytest.raises(EstimateError):
            smd([], [1.0])


def _matched_fixture(t_vals, c_vals):
    treated = [f"t{i}" for i in range(len(t_vals))]
    control = [f"c{i}" for i in range(len(c_vals))]
    outcomes = dict(zip(treated, t_vals)) | dict(zip(control, c_vals))
    stratum = Stratum(index=0, lo=0.0, hi=1.0, treated=treated, control=control)
    return outcomes, [stratum]


class TestEffect:
    def test_identical_arm_distributions(self):
        outcomes, strata = _matched_fixture([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        row = effect(outcomes, strata, "m")
        assert row.ate == 0.0
        assert row.cohens_d == 0.0
        assert row.t == 0.0
        assert row.p == 1.0

    def test_constant_shift_exact(self):
        base = [0.4, 1.1, 2.2, 3.3, 4.0]
        outcomes, strata = _matched_fixture([b + 1.0 for b in base], list(base))
        row = effect(outcomes, strata, "m")
        assert row.ate == pytest.approx(1.0, abs=1e-12)

    def test_hand_fixture_full_row(self):
        outcomes, strata = _matched_fixture([1.0, 2.0, 3.0, 4.0], [2.0, 3.0, 4.0, 5.0])
        row = effect(outcomes, strata, "m")
        assert row.ate == pytest.approx(-1.0, abs=1e-12)
        assert row.cohens_d == pytest.approx(-0.7745966692414834, abs=1e-9)
        assert row.t == pytest.approx(-1.0954451150103321, abs=1e-9)
        assert row.df == pytest.approx(6.0, abs=1e-9)
        assert row.n_treated == 4 and row.n_control == 4

    def test_ate_pct_definition(self):
        outcomes, strata = _matched_fixture([3.0, 5.0], [1.5, 2.5])
        row = effect(outcomes, strata, "m")
        assert row.ate_pct == pytest.approx(100.0 * row.ate / 2.0)

    def test_ate_pct_absent_for_zero_control_mean(self):
        outcomes, strata = _matched_fixture([1.0, 2.0], [-1.0, 1.0])
        row = effect(outcomes, strata, "m")
        assert row.ate_pct is None
        assert row.ate == pytest.approx(1.5)

    def test_shift_invariance(self, rng):
        t = list(rng.normal(size=30))
        c = list(rng.normal(size=25))
        outcomes1, strata1 = _matched_fixture(t, c)
        outcomes2, strata2 = _matched_fixture([x + 5.0 for x in t], [x + 5.0 for x in c])
        r1 = effect(outcomes1, strata1, "m")
        r2 = effect(outcomes2, strata2, "m")
        assert r2.ate == pytest.approx(r1.ate, abs=1e-9)
        assert r2.cohens_d == pytest.approx(r1.cohens_d, abs=1e-9)
        assert r2.t == pytest.approx(r1.t, abs=1e-9)

    def test_scale_invariance_of_d_t_p(self, rng):
        t = list(rng.normal(loc=1.0, size=30))
        c = list(rng.normal(size=25))
        lam = 3.7
        outcomes1, strata1 = _matched_fixture(t, c)
        outcomes2, strata2 = _matched_fixture([lam * x for x in t], [lam * x for x in c])
        r1 = effect(outcomes1, strata1, "m")
        r2 = effect(outcomes2, strata2, "m")
        assert r2.ate == pytest.approx(lam * r1.ate, abs=1e-9)
        assert r2.cohens_d == pytest.approx(r1.cohens_d, abs=1e-9)
        assert r2.t == pytest.approx(r1.t, abs=1e-9)
        assert r2.p == pytest.approx(r1.p, abs=1e-9)
        if r1.ate_pct is not None:
            assert r2.ate_pct == pytest.approx(r1.ate_pct, abs=1e-9)

    def test_welch_p_matches_quadrature_on_random_fixtures(self, rng):
        def t_pdf(x, df):
            c = math.exp(
                math.lgamma((df + 1) / 2)
                - math.lgamma(df / 2)
                - 0.5 * math.log(df * math.pi)
            )
            return c * (1 + x * x / df) ** (-(df + 1) / 2)

        for _ in range(100):
            t = list(rng.normal(loc=rng.uniform(-1, 1), size=int(rng.integers(5, 40))))
            c = list(rng.normal(size=int(rng.integers(5, 40))))
            outcomes, strata = _matched_fixture(t, c)
            row = effect(outcomes, strata, "m")
            want, _ = integrate.quad(t_pdf, abs(row.t), np.inf, args=(row.df,))
            assert row.p == pytest.approx(2 * want, abs=1e-6)

    def test_small_arm_rejected(self):
        outcomes, strata = _matched_fixture([1.0], [1.0, 2.0])
        with pytest.raises(EstimateError):
            effect(outcomes, strata, "m")

    def test_stratum_weighted_variant(self):
        s0 = Stratum(index=0, lo=0, hi=0.5, treated=["t0", "t1"], control=["c0", "c1"])
        s1 = Stratum(index=1, lo=0.5, hi=1, treated=["t2", "t3"], control=["c2", "c3"])
        outcomes = {
            "t0": 2.0, "t1": 4.0, "c0": 1.0, "c1": 3.0,   # diff 1.0
            "t2": 10.0, "t3": 14.0, "c2": 4.0, "c3": 6.0,  # diff 7.0
        }
        row = effect(outcomes, [s0, s1], "m", variant="stratum-weighted")
        assert row.ate == pytest.approx(0.5 * 1.0 + 0.5 * 7.0)

    def test_stars_thresholds(self):
        outcomes, strata = _matched_fixture(
            list(np.arange(50) * 0.01 + 10.0), list(np.arange(50) * 0.01)
        )
        row = effect(outcomes, strata, "m")
        assert row.stars == "***"
        outcomes2, strata2 = _matched_fixture([1.0, 2.0, 3.0], [1.0, 2.0, 3.1])
        assert effect(outcomes2, strata2, "m").stars == ""


class TestBalanceReport:
    def test_identical_arms_all_zero(self):
        users_t = [f"t{i}" for i in range(12)]
        users_c = [f"c{i}" for i in range(12)]
        vals = list(np.linspace(0, 1, 12))
        covariates = {u: [v, 2 * v] for u, v in zip(users_t, vals)}
        covariates.update({u: [v, 2 * v] for u, v in zip(users_c, vals)})
        assignments = _assignments({"treated": users_t, "control": users_c})
        strata = [Stratum(index=0, lo=0, hi=1, treated=users_t, control=users_c)]
        rows, summary = balance_report(covariates, ["a", "b"], assignments, strata)
        assert all(r.smd_pre == 0.0 and r.smd_post == 0.0 for r in rows)
        assert summary.max_pre == 0.0
        assert summary.n_imbalanced_post == 0

    def test_matching_reduces_smd_on_confounded_fixture(self, rng):
        # treated users concentrated at high covariate values; matching
        # keeps only the overlapping stratum
        t_users = {f"t{i}": float(v) for i, v in enumerate(rng.normal(2.0, 1.0, 200))}
        c_users = {f"c{i}": float(v) for i, v in enumerate(rng.normal(0.0, 1.0, 200))}
        covariates = {u: [v] for u, v in (t_users | c_users).items()}
        assignments = _assignments(
            {"treated": list(t_users), "control": list(c_users)}
        )
        overlap_t = sorted(u for u, v in t_users.items() if 0.5 < v < 1.5)
        overlap_c = sorted(u for u, v in c_users.items() if 0.5 < v < 1.5)
        strata = [
            Stratum(index=7, lo=0.45, hi=0.55, treated=overlap_t, control=overlap_c)
        ]
        rows, summary = balance_report(covariates, ["x"], assignments, strata)
        assert abs(rows[0].smd_pre) > 1.0
        assert abs(rows[0].smd_post) < abs(rows[0].smd_pre)
        assert summary.max_post < summary.max_pre


class TestTopicShare:
    def _setup(self):
        strata = [
            Stratum(
                index=0,
                lo=0,
                hi=1,
                treated=[f"t{i}" for i in range(4)],
                control=[f"c{i}" for i in range(4)],
            )
        ]
        baseline = {u: [f"{u}_b0", f"{u}_b1"] for u in strata[0].treated + strata[0].control}
        post = {u: [f"{u}_p0", f"{u}_p1"] for u in strata[0].treated + strata[0].control}
        return strata, baseline, post

    def test_topic_never_posted_gives_zero_ate(self):
        strata, baseline, post = self._setup()
        topic_map = {p: "other" for posts in post.values() for p in posts}
        topic_map.update({p: "other" for posts in baseline.values() for p in posts})
        topic_map["extra"] = "T"
        result = topic_share_outcome(topic_map, "T", baseline, post, strata)
        assert result.effect.ate == 0.0

    def test_planted_share_shift_recovered(self):
        strata, baseline, post = self._setup()
        topic_map = {}
        for u in strata[0].treated:
            topic_map[post[u][0]] = "T"
            topic_map[post[u][1]] = "other"
        for u in strata[0].control:
            topic_map[post[u][0]] = "other"
            topic_map[post[u][1]] = "other"
        for posts in baseline.values():
            for p in posts:
                topic_map[p] = "other"
        result = topic_share_outcome(topic_map, "T", baseline, post, strata)
        assert result.effect.ate == pytest.approx(0.5)
        assert result.baseline_mean_treated == 0.0

    def test_absent_topic_errors(self):
        strata, baseline, post = self._setup()
        topic_map = {p: "other" for posts in post.values() for p in posts}
        with pytest.raises(EstimateError, match="absent"):
            topic_share_outcome(topic_map, "nope", baseline, post, strata)

    def test_unmapped_posts_excluded_from_share(self):
        strata, baseline, post = self._setup()
        topic_map = {}
        for u in strata[0].treated + strata[0].control:
            topic_map[post[u][0]] = "T" if u.startswith("t") else "other"
            # post[u][1] deliberately unmapped
            topic_map[baseline[u][0]] = "other"
        result = topic_share_outcome(topic_map, "T", baseline, post, strata)
        assert result.effect.ate == pytest.approx(1.0)  # share of mapped posts only

    def test_topic_map_loader(self, tmp_path):
        path = tmp_path / "topics.csv"
        path.write_text("post_id,topic_id\np1,T\np2,other\n", encoding="utf-8")
        assert load_topic_map(path) == {"p1": "T", "p2": "other"}


def test_matched_users_sorted():
    s = Stratum(index=0, lo=0, hi=1, treated=["b", "a"], control=["z", "y"])
    t, c = matched_users([s])
    assert t == ["a", "b"] and c == ["y", "z"]
