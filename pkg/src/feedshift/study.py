"""Study orchestration: stage-wise pipeline with manifest hash-chaining.

Each stage consumes the previous stage's manifest-verified outputs and
writes its own files plus updated manifest entries, so desk-scale
studies are resumable and each stage is independently testable.  A
stage refuses to run when an upstream artifact is missing or has
changed since it was recorded (``force=True`` overrides).

All numeric output is written with ``repr`` (shortest round-trip), no
wall-clock state enters any artifact, and per-user work is collected
in user_id-sorted order, so two runs with the same config and seed
produce byte-identical bundles at any worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence, TypeVar

import numpy as np

from . import __version__
from .cohort import CohortAssignment, build_cohort
from .corpus import (
    EngagementKind,
    EventStore,
    filter_language,
    ingest_events,
    iter_event_lines,
    split_periods,
)
from .covariates import CovariateSchema, activity_covariates, build_ngram_block
from ._fastpath import FastProfiler
from .embedding import Embedder, HashingEmbedder, make_embedder
from .estimate import (
    EffectRow,
    Stratum,
    balance_report,
    effect,
    load_topic_map,
    prune,
    stratify,
    topic_share_outcome,
)
from .lexicon import CategoryLexicon, bundled_lexicon, load_lexicon, tokenize
from .propensity import (
    covariate_schema_hash,
    fit_adaboost,
    load_model,
    save_model,
    score_matrix,
)
from .regress import DESIGN_COLUMNS, DesignMatrix, ols_fit
from .textmetrics import (
    CORE_METRICS,
    FeedCentroid,
    MetricError,
    feed_centroid,
    period_profile,
)

T = TypeVar("T")
U = TypeVar("U")

STAGE_ORDER = (
    "ingest",
    "cohort",
    "covariates",
    "score",
    "match",
    "effects",
    "regress",
    "report",
)

_STAGE_DEPS: dict[str, tuple[str, ...]] = {
    "ingest": (),
    "cohort": ("ingest",),
    "covariates": ("ingest", "cohort"),
    "score": ("covariates",),
    "match": ("cohort", "score", "covariates"),
    "effects": ("ingest", "cohort", "match"),
    "regress": ("ingest", "cohort", "effects"),
    "report": ("cohort", "match", "effects", "regress"),
}


class ValidationError(Exception):
    """Configuration or stale-input problems (CLI exit code 2)."""


class StageError(Exception):
    """A stage failed mid-run (CLI exit code 3)."""


@dataclass
class StudyConfig:
    """One feed study.  Defaults are the published pipeline constants."""

    feed_id: str
    events: list[str]
    out_dir: str
    lexicon: str | None = None  # None = bundled test-lex-mini
    embedder: dict = field(default_factory=lambda: {"type": "builtin"})
    seed: int = 0
    k_strata: int = 15
    min_per_arm: int = 10
    smd_threshold: float = 0.15
    min_baseline_days: float = 30.0
    ngram_top_k: int = 500
    ngram_ns: tuple[int, ...] = (2, 3, 4)
    ngram_per_n: bool = False  # top-k per size instead of pooled top-k
    boosting: dict = field(
        default_factory=lambda: {
            "n_estimators": 500,
            "learning_rate": 0.05,
            "max_depth": 3,
        }
    )
    aggregate: str = "pooled"
    effect_variant: str = "pooled"
    language: str = "en"
    window: tuple[int, int] | None = None  # observation window; None = full span
    centroid_window: tuple[int, int] | None = None
    topic_map: str | None = None
    topics: list[str] = field(default_factory=list)
    threads: int = 1
    strict_ingest: bool = False

    def validate(self) -> None:
        if not self.feed_id:
            raise ValidationError("feed_id must be non-empty")
        if not self.events:
            raise ValidationError("at least one event log is required")
        for path in self.events:
            if not Path(path).exists():
                raise ValidationError(f"event log not found: {path}")
        if self.lexicon is not None and not Path(self.lexicon).exists():
            raise ValidationError(f"lexicon not found: {self.lexicon}")
        if self.topic_map is not None and not Path(self.topic_map).exists():
            raise ValidationError(f"topic map not found: {self.topic_map}")
        if self.k_strata < 1 or self.min_per_arm < 1:
            raise ValidationError("k_strata and min_per_arm must be positive")
        if self.aggregate not in ("pooled", "per-post-mean"):
            raise ValidationError(f"unknown aggregate mode: {self.aggregate}")
        if self.effect_variant not in ("pooled", "stratum-weighted"):
            raise ValidationError(f"unknown effect variant: {self.effect_variant}")
        if self.threads < 1:
            raise ValidationError("threads must be positive")

    def to_json(self) -> dict:
        return {
            "feed_id": self.feed_id,
            "events": list(self.events),
            "out_dir": self.out_dir,
            "lexicon": self.lexicon,
            "embedder": dict(self.embedder),
            "seed": self.seed,
            "k_strata": self.k_strata,
            "min_per_arm": self.min_per_arm,
            "smd_threshold": self.smd_threshold,
            "min_baseline_days": self.min_baseline_days,
            "ngram_top_k": self.ngram_top_k,
            "ngram_ns": list(self.ngram_ns),
            "ngram_per_n": self.ngram_per_n,
            "boosting": dict(self.boosting),
            "aggregate": self.aggregate,
            "effect_variant": self.effect_variant,
            "language": self.language,
            "window": list(self.window) if self.window else None,
            "centroid_window": (
                list(self.centroid_window) if self.centroid_window else None
            ),
            "topic_map": self.topic_map,
            "topics": list(self.topics),
            "strict_ingest": self.strict_ingest,
        }

    @classmethod
    def from_json(cls, obj: Mapping, out_dir: str | None = None) -> "StudyConfig":
        kwargs = dict(obj)
        kwargs.pop("threads", None)
        if out_dir is not None:
            kwargs["out_dir"] = out_dir
        if "ngram_ns" in kwargs:
            kwargs["ngram_ns"] = tuple(kwargs["ngram_ns"])
        if kwargs.get("window"):
            kwargs["window"] = tuple(kwargs["window"])
        if kwargs.get("centroid_window"):
            kwargs["centroid_window"] = tuple(kwargs["centroid_window"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @property
    def config_hash(self) -> str:
        # threads and out_dir do not affect results, so they stay out
        # of the hash (reproducibility across worker counts is a test).
        obj = self.to_json()
        obj.pop("out_dir")
        payload = json.dumps(obj, sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def _fmt(value: float | None) -> str:
    if value is None:
        return ""
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    return repr(float(value))


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def parallel_map(
    fn: Callable[[T], U], items: Sequence[T], threads: int
) -> list[U]:
    """Order-preserving map, optionally on a bounded thread pool."""
    if threads <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


class Study:
    """Filesystem-backed study run; stages verify upstream hashes."""

    def __init__(self, config: StudyConfig) -> None:
        config.validate()
        self.config = config
        self.out = Path(config.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self._manifest_path = self.out / "manifest.json"
        # in-process caches; stage outputs on disk stay authoritative
        self._store_cache: EventStore | None = None

    # -- manifest ---------------------------------------------------------

    def _load_manifest(self) -> dict:
        if self._manifest_path.exists():
            manifest = json.loads(self._manifest_path.read_text(encoding="utf-8"))
            return manifest
        return {
            "version": __version__,
            "config_hash": self.config.config_hash,
            "config": self.config.to_json(),
            "stages": {},
        }

    def _save_manifest(self, manifest: dict) -> None:
        tmp = self._manifest_path.with_suffix(".json.tmp")
        tmp.write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        os.replace(tmp, self._manifest_path)

    def _check_upstream(self, stage: str, manifest: dict, force: bool) -> None:
        if force:
            return
        if manifest.get("config_hash") != self.config.config_hash:
            raise ValidationError(
                "stale input: config changed since this output directory was "
                "created (rerun with --force to overwrite)"
            )
        for dep in _STAGE_DEPS[stage]:
            entry = manifest["stages"].get(dep)
            if entry is None:
                raise ValidationError(f"stale input: stage '{dep}' has not been run")
            for rel, recorded in entry["outputs"].items():
                path = self.out / rel
                if not path.exists():
                    raise ValidationError(f"stale input: missing {rel} from '{dep}'")
                if _sha256_file(path) != recorded:
                    raise ValidationError(
                        f"stale input: {rel} changed since stage '{dep}' ran"
                    )

    def _record(
        self,
        stage: str,
        outputs: Iterable[str],
        inputs: Mapping[str, str] | None = None,
    ) -> None:
        manifest = self._load_manifest()
        manifest["config_hash"] = self.config.config_hash
        manifest["config"] = self.config.to_json()
        manifest["version"] = __version__
        manifest["stages"][stage] = {
            "inputs": dict(inputs or {}),
            "outputs": {rel: _sha256_file(self.out / rel) for rel in sorted(outputs)},
        }
        self._save_manifest(manifest)

    # -- shared loads ------------------------------------------------------

    def _load_store(self) -> EventStore:
        if self._store_cache is not None:
            return self._store_cache
        store = EventStore.load(self.out / "store")
        posts = store.posts
        engagements = store.engagements
        if self.config.window is not None:
            lo, hi = self.config.window
            posts = [p for p in posts if lo <= p.timestamp <= hi]
            engagements = [e for e in engagements if lo <= e.timestamp <= hi]
        if self.config.language:
            posts, _ = filter_language(posts, self.config.language)
        self._store_cache = EventStore(posts, engagements)
        return self._store_cache

    def _lexicon(self) -> CategoryLexicon:
        if self.config.lexicon is None:
            return bundled_lexicon()
        return load_lexicon(self.config.lexicon)

    def _embedder(self) -> Embedder:
        return make_embedder(self.config.embedder)

    def _assignments(self) -> list[CohortAssignment]:
        rows = _read_csv(self.out / "cohort.csv")
        return [
            CohortAssignment(
                user_id=r["user_id"],
                arm=r["arm"],
                anchor=int(r["anchor"]),
                feed_id=self.config.feed_id,
            )
            for r in rows
            if not r["drop_reason"]
        ]

    def _centroid(self, store: EventStore, lex, embedder) -> FeedCentroid:
        posts = store.feed_posts(self.config.feed_id)
        if self.config.centroid_window is not None:
            lo, hi = self.config.centroid_window
            posts = [p for p in posts if lo <= p.timestamp <= hi]
        if not posts:
            raise StageError(
                f"feed {self.config.feed_id!r} has no surfaced posts in the window"
            )
        return feed_centroid(posts, lex, embedder, feed_id=self.config.feed_id)

    # -- stages ------------------------------------------------------------

    def run_stage(self, stage: str, force: bool = False, **stage_kwargs) -> None:
        manifest = self._load_manifest()
        self._check_upstream(stage, manifest, force)
        failed_marker = self.out / "FAILED"
        try:
            getattr(self, f"_stage_{stage}")(**stage_kwargs)
        except (ValidationError,):
            raise
        except Exception as exc:
            failed_marker.write_text(f"{stage}: {exc}\n", encoding="utf-8")
            raise
        if failed_marker.exists():
            failed_marker.unlink()

    def run_all(self, force: bool = False) -> None:
        for stage in STAGE_ORDER:
            self.run_stage(stage, force=force)

    def _stage_ingest(self) -> None:
        inputs = {p: _sha256_file(Path(p)) for p in self.config.events}
        store, report = ingest_events(
            iter_event_lines(self.config.events), strict=self.config.strict_ingest
        )
        store.save(self.out / "store")
        self._store_cache = None
        report_obj = {
            "n_accepted": report.n_accepted,
            "n_rejected": report.n_rejected,
            "rejects": [
                {"line_no": r.line_no, "reason": r.reason} for r in report.rejects[:1000]
            ],
        }
        (self.out / "ingest_report.json").write_text(
            json.dumps(report_obj, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        self._record(
            "ingest",
            [
                "store/posts.jsonl",
                "store/engagements.jsonl",
                "store/store.json",
                "ingest_report.json",
            ],
            inputs=inputs,
        )

    def _stage_cohort(self) -> None:
        store = self._load_store()
        kept, drops, ks = build_cohort(
            store,
            self.config.feed_id,
            seed=self.config.seed,
            min_baseline_days=self.config.min_baseline_days,
        )
        rows = [
            {"user_id": a.user_id, "arm": a.arm, "anchor": str(a.anchor), "drop_reason": ""}
            for a in kept
        ]
        rows.extend(
            {
                "user_id": d.user_id,
                "arm": d.arm,
                "anchor": str(d.anchor),
                "drop_reason": d.reason,
            }
            for d in drops
        )
        rows.sort(key=lambda r: r["user_id"])
        _write_csv(
            self.out / "cohort.csv", ["user_id", "arm", "anchor", "drop_reason"], rows
        )
        drop_tally: dict[str, int] = {}
        for d in drops:
            drop_tally[d.reason] = drop_tally.get(d.reason, 0) + 1
        summary = {
            "n_treated": sum(1 for a in kept if a.arm == "treated"),
            "n_control": sum(1 for a in kept if a.arm == "control"),
            "drops": drop_tally,
            "anchor_ks": {
                "statistic": ks.statistic,
                "p_value": ks.p_value,
                "n_treated": ks.n1,
                "n_control": ks.n2,
            },
        }
        (self.out / "cohort_summary.json").write_text(
            json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        self._record("cohort", ["cohort.csv", "cohort_summary.json"])

    def _stage_covariates(self) -> None:
        store = self._load_store()
        lex = self._lexicon()
        assignments = self._assignments()
        corpora: dict[str, list[list[str]]] = {}
        activity: dict[str, tuple[float, float]] = {}
        for a in assignments:
            timeline = store.timeline(a.user_id)
            split = split_periods(timeline, a.anchor)
            corpora[a.user_id] = [tokenize(p.text).tokens for p in split.baseline]
            activity[a.user_id] = activity_covariates(timeline, a.anchor)
        vocab, ngram_feats = build_ngram_block(
            corpora,
            ns=self.config.ngram_ns,
            k=self.config.ngram_top_k,
            per_n=self.config.ngram_per_n,
        )
        schema = CovariateSchema(
            ngrams=vocab, category_names=lex.category_names, ns=self.config.ngram_ns
        )
        (self.out / "schema.json").write_text(
            json.dumps(schema.to_json(), sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )

        from .lexicon import TokenSequence, category_rates

        def vector_for(user: str) -> np.ndarray:
            ppd, tenure = activity[user]
            pooled = [t for g in corpora[user] for t in g]
            rates = category_rates(TokenSequence(pooled), lex)
            return np.concatenate(
                [
                    np.array([ppd, tenure], dtype=np.float64),
                    ngram_feats[user],
                    np.array(
                        [rates[c] for c in schema.category_names], dtype=np.float64
                    ),
                ]
            )

        users = sorted(corpora)
        vectors = parallel_map(vector_for, users, self.config.threads)
        header = ["user_id"] + schema.names
        rows = [
            {"user_id": u, **{n: _fmt(v) for n, v in zip(schema.names, vec)}}
            for u, vec in zip(users, vectors)
        ]
        _write_csv(self.out / "covariates.csv", header, rows)
        self._record("covariates", ["schema.json", "covariates.csv"])

    def _stage_score(self, model_path: str | None = None) -> None:
        schema_obj = json.loads((self.out / "schema.json").read_text(encoding="utf-8"))
        names = schema_obj["names"]
        rows = _read_csv(self.out / "covariates.csv")
        users = [r["user_id"] for r in rows]
        X = np.array(
            [[float(r[name]) for name in names] for r in rows], dtype=np.float64
        )
        arm = {a.user_id: a.arm for a in self._assignments()}
        y = np.array([1 if arm[u] == "treated" else 0 for u in users], dtype=np.int64)
        schema_hash = covariate_schema_hash(names)
        if model_path is not None:
            ens = load_model(model_path, expect_schema_hash=schema_hash)
        else:
            ens = fit_adaboost(
                X,
                y,
                n_estimators=int(self.config.boosting["n_estimators"]),
                learning_rate=float(self.config.boosting["learning_rate"]),
                max_depth=int(self.config.boosting["max_depth"]),
                schema_hash=schema_hash,
            )
            save_model(ens, self.out / "model.json")
        scores = score_matrix(ens, X)
        _write_csv(
            self.out / "scores.csv",
            ["user_id", "score"],
            [{"user_id": u, "score": _fmt(s)} for u, s in zip(users, scores)],
        )
        outputs = ["scores.csv"]
        if model_path is None:
            outputs.append("model.json")
        self._record("score", outputs)

    def _stage_match(self) -> None:
        assignments = self._assignments()
        score_rows = _read_csv(self.out / "scores.csv")
        scores = {r["user_id"]: float(r["score"]) for r in score_rows}
        strata = stratify(scores, assignments, k=self.config.k_strata)
        retained, drop_report = prune(strata, min_per_arm=self.config.min_per_arm)
        retained_ids = {s.index for s in retained}
        arm = {a.user_id: a.arm for a in assignments}
        stratum_of: dict[str, int] = {}
        for s in strata:
            for u in s.treated + s.control:
                stratum_of[u] = s.index
        _write_csv(
            self.out / "strata.csv",
            ["user_id", "arm", "score", "stratum", "retained"],
            [
                {
                    "user_id": u,
                    "arm": arm[u],
                    "score": _fmt(scores[u]),
                    "stratum": str(stratum_of[u]),
                    "retained": "1" if stratum_of[u] in retained_ids else "0",
                }
                for u in sorted(scores)
            ],
        )
        cov_rows = _read_csv(self.out / "covariates.csv")
        names = json.loads((self.out / "schema.json").read_text(encoding="utf-8"))[
            "names"
        ]
        covariates = {
            r["user_id"]: [float(r[n]) for n in names] for r in cov_rows
        }
        rows, summary = balance_report(
            covariates, names, assignments, retained, threshold=self.config.smd_threshold
        )
        _write_csv(
            self.out / "balance.csv",
            ["covariate", "smd_pre", "smd_post", "smd_post_pooled"],
            [
                {
                    "covariate": r.covariate,
                    "smd_pre": _fmt(r.smd_pre),
                    "smd_post": _fmt(r.smd_post),
                    "smd_post_pooled": _fmt(r.smd_post_pooled),
                }
                for r in rows
            ],
        )
        summary_obj = {
            "max_pre": summary.max_pre,
            "max_post": summary.max_post,
            "mean_pre": summary.mean_pre,
            "mean_post": summary.mean_post,
            "n_imbalanced_pre": summary.n_imbalanced_pre,
            "n_imbalanced_post": summary.n_imbalanced_post,
            "frac_imbalanced_pre": summary.frac_imbalanced_pre,
            "frac_imbalanced_post": summary.frac_imbalanced_post,
            "threshold": summary.threshold,
            "n_covariates": summary.n_covariates,
            "prune": drop_report,
        }
        (self.out / "balance_summary.json").write_text(
            json.dumps(summary_obj, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        self._record("match", ["strata.csv", "balance.csv", "balance_summary.json"])

    def _retained_strata(self) -> list[Stratum]:
        rows = _read_csv(self.out / "strata.csv")
        by_index: dict[int, Stratum] = {}
        k = self.config.k_strata
        for r in rows:
            if r["retained"] != "1":
                continue
            idx = int(r["stratum"])
            stratum = by_index.setdefault(
                idx, Stratum(index=idx, lo=idx / k, hi=(idx + 1) / k, treated=[], control=[])
            )
            if r["arm"] == "treated":
                stratum.treated.append(r["user_id"])
            else:
                stratum.control.append(r["user_id"])
        return [by_index[i] for i in sorted(by_index)]

    def _stage_effects(self) -> None:
        store = self._load_store()
        lex = self._lexicon()
        embedder = self._embedder()
        centroid = self._centroid(store, lex, embedder)
        assignments = self._assignments()
        metric_names = list(CORE_METRICS) + [f"cat:{c}" for c in lex.category_names]

        profiler: FastProfiler | None = None
        if isinstance(embedder, HashingEmbedder) and self.config.aggregate == "pooled":
            profiler = FastProfiler(lex, embedder)

        def profile_user(a: CohortAssignment):
            split = split_periods(store.timeline(a.user_id), a.anchor)
            out = {}
            for period, posts in (
                ("baseline", split.baseline),
                ("post", split.post_exposure),
            ):
                try:
                    if profiler is not None:
                        profiler.index_posts(posts)
                        prof = profiler.period_profile(posts, centroid)
                    else:
                        prof = period_profile(
                            posts, lex, centroid, embedder,
                            aggregate=self.config.aggregate,
                        )
                except MetricError:
                    return None
                values = dict(prof.metrics)
                values.update({f"cat:{c}": v for c, v in prof.rates.items()})
                out[period] = values
            return a.user_id, out["baseline"], out["post"]

        ordered = sorted(assignments, key=lambda a: a.user_id)
        # The fast profiler mutates shared token tables, so it runs on
        # one thread; the public path can fan out.
        threads = 1 if profiler is not None else self.config.threads
        profiles = [p for p in parallel_map(profile_user, ordered, threads) if p]
        n_excluded = len(ordered) - len(profiles)
        arm = {a.user_id: a.arm for a in assignments}
        out_rows = []
        post_outcomes: dict[str, dict[str, float]] = {m: {} for m in metric_names}
        for user, baseline, post in profiles:
            for period, values in (("baseline", baseline), ("post", post)):
                out_rows.append(
                    {
                        "user_id": user,
                        "arm": arm[user],
                        "period": period,
                        **{m: _fmt(values[m]) for m in metric_names},
                    }
                )
            for m in metric_names:
                post_outcomes[m][user] = post[m]
        (self.out / "effects_meta.json").write_text(
            json.dumps({"n_users_excluded_no_text": n_excluded}, indent=2) + "\n",
            encoding="utf-8",
        )
        _write_csv(
            self.out / "outcomes.csv",
            ["user_id", "arm", "period"] + metric_names,
            out_rows,
        )

        retained = self._retained_strata()
        profiled = {user for user, _, _ in profiles}
        retained = [
            Stratum(
                index=s.index,
                lo=s.lo,
                hi=s.hi,
                treated=[u for u in s.treated if u in profiled],
                control=[u for u in s.control if u in profiled],
            )
            for s in retained
        ]
        treated_all = sorted(
            a.user_id for a in assignments if a.arm == "treated" and a.user_id in profiled
        )
        control_all = sorted(
            a.user_id for a in assignments if a.arm == "control" and a.user_id in profiled
        )
        naive_stratum = [
            Stratum(index=0, lo=0.0, hi=1.0, treated=treated_all, control=control_all)
        ]
        effect_rows = []
        naive_rows = []
        for m in metric_names:
            effect_rows.append(
                effect(post_outcomes[m], retained, m, variant=self.config.effect_variant)
            )
            naive_rows.append(effect(post_outcomes[m], naive_stratum, m, variant="pooled"))
        _write_effects_csv(self.out / "effects.csv", effect_rows)
        _write_effects_csv(self.out / "naive_effects.csv", naive_rows)

        outputs = ["outcomes.csv", "effects.csv", "naive_effects.csv", "effects_meta.json"]
        if self.config.topic_map:
            topic_rows = self._topic_effects(store, assignments, retained)
            _write_csv(
                self.out / "topics.csv",
                [
                    "topic",
                    "ate",
                    "ate_pct",
                    "cohens_d",
                    "t",
                    "df",
                    "p",
                    "stars",
                    "n_treated",
                    "n_control",
                    "baseline_mean_treated",
                    "baseline_mean_control",
                ],
                topic_rows,
            )
            outputs.append("topics.csv")
        self._record("effects", outputs)

    def _topic_effects(
        self,
        store: EventStore,
        assignments: Sequence[CohortAssignment],
        retained: Sequence[Stratum],
    ) -> list[dict]:
        topic_map = load_topic_map(self.config.topic_map)  # type: ignore[arg-type]
        baseline_posts: dict[str, list[str]] = {}
        post_posts: dict[str, list[str]] = {}
        for a in assignments:
            split = split_periods(store.timeline(a.user_id), a.anchor)
            baseline_posts[a.user_id] = [p.post_id for p in split.baseline]
            post_posts[a.user_id] = [p.post_id for p in split.post_exposure]
        rows = []
        for topic in self.config.topics or sorted(set(topic_map.values())):
            result = topic_share_outcome(
                topic_map,
                topic,
                baseline_posts,
                post_posts,
                retained,
                variant=self.config.effect_variant,
            )
            r = result.effect
            rows.append(
                {
                    "topic": topic,
                    "ate": _fmt(r.ate),
                    "ate_pct": _fmt(r.ate_pct),
                    "cohens_d": _fmt(r.cohens_d),
                    "t": _fmt(r.t),
                    "df": _fmt(r.df),
                    "p": _fmt(r.p),
                    "stars": r.stars,
                    "n_treated": str(r.n_treated),
                    "n_control": str(r.n_control),
                    "baseline_mean_treated": _fmt(result.baseline_mean_treated),
                    "baseline_mean_control": _fmt(result.baseline_mean_control),
                }
            )
        return rows

    def _stage_regress(self) -> None:
        # The engagement design reuses the distances already computed by
        # the effects stage: distance = 1 - semconv for each period.
        store = self._load_store()
        assignments = self._assignments()
        treated = {a.user_id for a in assignments if a.arm == "treated"}
        semconv: dict[tuple[str, str], float] = {}
        for r in _read_csv(self.out / "outcomes.csv"):
            if r["user_id"] in treated:
                semconv[(r["user_id"], r["period"])] = float(r["semconv"])
        counts: dict[str, dict[EngagementKind, int]] = {}
        for e in store.engagements_on(self.config.feed_id):
            counts.setdefault(e.user_id, {}).setdefault(e.kind, 0)
            counts[e.user_id][e.kind] += 1
        rows = []
        ys = []
        kept_users = []
        for user in sorted(treated):
            if (user, "post") not in semconv or (user, "baseline") not in semconv:
                continue
            user_counts = counts.get(user, {})
            row = [1.0]
            row.extend(
                math.log1p(user_counts.get(kind, 0)) for kind in EngagementKind
            )
            row.append(1.0 - semconv[(user, "baseline")])
            rows.append(row)
            ys.append(1.0 - semconv[(user, "post")])
            kept_users.append(user)
        design = DesignMatrix(
            columns=DESIGN_COLUMNS,
            X=np.array(rows, dtype=np.float64),
            y=np.array(ys, dtype=np.float64),
            user_ids=kept_users,
            n_excluded=len(treated) - len(kept_users),
        )
        if design.X.shape[0] < design.X.shape[1] + 1:
            raise StageError(
                f"regression needs at least {design.X.shape[1] + 1} treated users"
            )
        fit = ols_fit(design)
        rows = []
        for j, name in enumerate(fit.columns):
            p = fit.p[j]
            stars = "***" if p < 0.001 else "**" if p < 0.01 else "*" if p < 0.05 else ""
            rows.append(
                {
                    "term": name,
                    "beta": _fmt(fit.beta[j]),
                    "se": _fmt(fit.se[j]),
                    "t": _fmt(fit.t[j]),
                    "p": _fmt(p),
                    "stars": stars,
                }
            )
        rows.append(
            {"term": "r2", "beta": _fmt(fit.r2), "se": "", "t": "", "p": "", "stars": ""}
        )
        _write_csv(
            self.out / "regression.csv", ["term", "beta", "se", "t", "p", "stars"], rows
        )
        self._record("regress", ["regression.csv"])

    def _stage_report(self) -> None:
        from .report import render_report

        outputs = render_report(self.out, self.config)
        self._record("report", outputs)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Mapping[str, str]]) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(header))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _read_csv(path: Path) -> list[dict[str, str]]:
    import csv

    with open(path, newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def _write_effects_csv(path: Path, rows: Sequence[EffectRow]) -> None:
    _write_csv(
        path,
        [
            "metric",
            "ate",
            "ate_pct",
            "cohens_d",
            "t",
            "df",
            "p",
            "stars",
            "n_treated",
            "n_control",
        ],
        [
            {
                "metric": r.metric,
                "ate": _fmt(r.ate),
                "ate_pct": _fmt(r.ate_pct),
                "cohens_d": _fmt(r.cohens_d),
                "t": _fmt(r.t),
                "df": _fmt(r.df),
                "p": _fmt(r.p),
                "stars": r.stars,
                "n_treated": str(r.n_treated),
                "n_control": str(r.n_control),
            }
            for r in rows
        ],
    )


def run_study(config: StudyConfig, force: bool = False) -> Path:
    """Execute every stage end-to-end; returns the bundle directory."""
    study = Study(config)
    study.run_all(force=force)
    return study.out
