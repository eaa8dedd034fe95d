"""Synthetic event-log generator with planted confounding and effects.

The generator grounds the end-to-end acceptance tests: it emits event
logs the ingestion layer can read, together with the analytic expected
value of every estimand, so the whole pipeline can be checked against
a known truth.

Token process (the reason every linguistic effect has a closed form):
each post is a fixed, even number of tokens built from pair slots.  A
pair slot is either a two-token phrase (drawn without replacement from
a phrase pool) or two single positions; a single position either
copies the most recent fresh single token of the period (probability
``copy_prob``) or draws a fresh token: a pool by the categorical
mixing vector ``f``, then a token within the pool, never repeating a
token inside one user-period.  All pool tokens are 6 letters except
the long pool (12), pools map 1:1 onto the bundled lexicon's prefix
entries, and phrase tokens match no category.  Consequently, per
user-period:

- category rate expectation  = 100 * (1 - phrase_prob) * f[pool]
- mean word length           = 6 + 6 * (1 - phrase_prob) * f[long]
- sentences per word         = (1 + (L-1) * q) / L
- repeatability expectation  = rho * ((1 - phrase_prob) - E[1/(P*L)])

all linear in the generator parameters, so additive deltas plant
exactly.  Cosine outcomes (style accommodation, semantic convergence)
get plug-in expectations and are flagged approximate.

One latent trait per user confounds both treatment propensity
(logistic) and the article/preposition mixing weights, the minimal
structure that biases the naive contrast while leaving the matched
contrast consistent.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import SECONDS_PER_DAY, EngagementKind

EPOCH_OFFSET = 1_600_000_000  # window start, UTC seconds

TOKEN_LEN = 6
LONG_TOKEN_LEN = 12

# Pool order is fixed; the first 14 map 1:1 onto the bundled lexicon's
# categories via their prefix entries.
CATEGORY_POOLS = (
    ("article", "art"),
    ("preposition", "prp"),
    ("ppron", "ppr"),
    ("ipron", "ipr"),
    ("auxverb", "aux"),
    ("conjunction", "cnj"),
    ("adverb", "adv"),
    ("negation", "ngt"),
    ("focuspast", "fpa"),
    ("focuspresent", "fpr"),
    ("focusfuture", "ffu"),
    ("i", "pri"),
    ("we", "prw"),
    ("they", "prt"),
)
LONG_POOL = "lng"
FEED_VOCAB_POOL = "xfe"
NEUTRAL_POOL = "xne"
POOL_NAMES = tuple(name for name, _ in CATEGORY_POOLS) + (
    LONG_POOL,
    FEED_VOCAB_POOL,
    NEUTRAL_POOL,
)
_LONG_IDX = POOL_NAMES.index(LONG_POOL)

# The feed-vocabulary pool is hashed into this bucket subset of the
# default built-in embedder (dim 64, seed 0), concentrating the feed's
# semantic mass so mixing toward the feed moves embedding cosines by a
# usable amount.  Other embedders still work; only planted-semconv
# calibration assumes the default.
_FEED_BUCKET_SUBSET = frozenset(range(16))
_EMBED_DIM = 64

_BASE_F = {
    "article": 0.055,
    "preposition": 0.065,
    "ppron": 0.050,
    "ipron": 0.040,
    "auxverb": 0.055,
    "conjunction": 0.040,
    "adverb": 0.030,
    "negation": 0.015,
    "focuspast": 0.050,
    "focuspresent": 0.045,
    "focusfuture": 0.025,
    "i": 0.035,
    "we": 0.030,
    "they": 0.030,
    LONG_POOL: 0.020,
    FEED_VOCAB_POOL: 0.0,
}

_FEED_OFFSETS = {
    "article": 0.050,
    "preposition": 0.040,
    "focuspresent": 0.020,
    "ipron": 0.010,
    "ppron": -0.020,
    "i": -0.012,
    "adverb": -0.010,
    FEED_VOCAB_POOL: 0.120,
}

_CDI_SIGNS = {
    "article": 1.0,
    "preposition": 1.0,
    "ppron": -1.0,
    "ipron": -1.0,
    "auxverb": -1.0,
    "conjunction": -1.0,
    "adverb": -1.0,
    "negation": -1.0,
}

# How the latent trait tilts the mixing vector, per unit of
# confound_rate_shift * tanh(u).  The temporal-focus and pronoun-subclass
# categories carry most of the trait signal (they are covariates but do
# not enter the categorical-dynamic index), while the CDI classes get
# softer loadings whose signed sum still biases CDI upward; this keeps
# the trait learnable by the propensity model at realistic text volumes
# without making the naive outcome bias unremovably large.
_DEFAULT_CONFOUND_LOADINGS = {
    "article": 0.15,
    "preposition": 0.15,
    "ppron": -0.10,
    "ipron": -0.08,
    "auxverb": -0.08,
    "conjunction": -0.06,
    "adverb": -0.06,
    "negation": -0.03,
    "focuspast": 0.80,
    "focuspresent": -0.70,
    "i": 0.55,
    "we": -0.50,
    "they": 0.50,
    "focusfuture": -0.30,
}

_DEFAULT_ENGAGEMENT_RATES = {
    "post": 0.5,
    "comment": 0.8,
    "quote": 0.3,
    "repost": 1.2,
    "like": 3.0,
    "bookmark": 0.4,
}

_PLANTABLE = {"cdi", "complexity", "readability", "repeatability", "lsa", "semconv"}


class SynthError(Exception):
    """Raised for infeasible configurations."""


@dataclass
class SynthConfig:
    seed: int = 0
    n_treated: int = 500
    n_control: int = 500
    days: float = 120.0
    base_post_rate: float = 0.35
    tokens_per_post: int = 12
    confounder_strength: float = 0.0
    confound_rate_shift: float = 0.0
    confound_loadings: dict[str, float] = field(
        default_factory=lambda: dict(_DEFAULT_CONFOUND_LOADINGS)
    )
    planted_effects: dict[str, float] = field(default_factory=dict)
    engagement_mixing: dict[str, float] = field(default_factory=dict)
    feed_id: str = "feed:study"
    decoy_feed_id: str = "feed:decoy"
    feed_post_pool: int = 300
    phrase_prob: float = 0.2
    copy_prob: float = 0.02
    sentence_break_prob: float = 0.12
    engagement_rates: dict[str, float] = field(
        default_factory=lambda: dict(_DEFAULT_ENGAGEMENT_RATES)
    )
    other_feed_rate: float = 0.3
    anchor_window: tuple[float, float] = (0.35, 0.65)
    pool_size: int = 2000
    neutral_pool_size: int = 8000
    phrase_pool_size: int = 3000
    feed_phrase_pool_size: int = 800

    def validate(self) -> None:
        if self.n_treated < 0 or self.n_control < 0:
            raise SynthError("cohort sizes must be non-negative")
        if self.days <= 0 or self.base_post_rate <= 0:
            raise SynthError("days and base_post_rate must be positive")
        if self.tokens_per_post < 2 or self.tokens_per_post % 2:
            raise SynthError("tokens_per_post must be even and at least 2")
        if not 0.0 <= self.phrase_prob < 1.0:
            raise SynthError("phrase_prob must be in [0, 1)")
        if not 0.0 <= self.copy_prob < 1.0:
            raise SynthError("copy_prob must be in [0, 1)")
        if not 0.0 <= self.sentence_break_prob <= 1.0:
            raise SynthError("sentence_break_prob must be in [0, 1]")
        if not 0.0 <= self.anchor_window[0] < self.anchor_window[1] <= 1.0:
            raise SynthError("anchor_window must be an increasing pair in [0, 1]")
        plantable_cats = {f"cat:{name}" for name, _ in CATEGORY_POOLS}
        for key in self.planted_effects:
            if key not in _PLANTABLE and key not in plantable_cats:
                raise SynthError(f"cannot plant effect on unknown metric: {key}")
        if "lsa" in self.planted_effects and "semconv" in self.planted_effects:
            raise SynthError("plant at most one of lsa/semconv (both move the mixing)")
        for kind in self.engagement_mixing:
            if kind not in _DEFAULT_ENGAGEMENT_RATES:
                raise SynthError(f"unknown engagement kind: {kind}")
        for pool in self.confound_loadings:
            if pool not in POOL_NAMES or pool == NEUTRAL_POOL:
                raise SynthError(f"unknown confound pool: {pool}")
        # Solve generator parameters now so infeasible deltas fail at
        # configuration time rather than mid-generation.
        _Params.solve(self)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "n_treated": self.n_treated,
            "n_control": self.n_control,
            "days": self.days,
            "base_post_rate": self.base_post_rate,
            "tokens_per_post": self.tokens_per_post,
            "confounder_strength": self.confounder_strength,
            "confound_rate_shift": self.confound_rate_shift,
            "confound_loadings": dict(self.confound_loadings),
            "planted_effects": dict(self.planted_effects),
            "engagement_mixing": dict(self.engagement_mixing),
            "feed_id": self.feed_id,
            "decoy_feed_id": self.decoy_feed_id,
            "feed_post_pool": self.feed_post_pool,
            "phrase_prob": self.phrase_prob,
            "copy_prob": self.copy_prob,
            "sentence_break_prob": self.sentence_break_prob,
            "engagement_rates": dict(self.engagement_rates),
            "other_feed_rate": self.other_feed_rate,
            "anchor_window": list(self.anchor_window),
            "pool_size": self.pool_size,
            "neutral_pool_size": self.neutral_pool_size,
            "phrase_pool_size": self.phrase_pool_size,
            "feed_phrase_pool_size": self.feed_phrase_pool_size,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "SynthConfig":
        kwargs = dict(obj)
        if "anchor_window" in kwargs:
            kwargs["anchor_window"] = tuple(kwargs["anchor_window"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


@dataclass
class GroundTruth:
    """Analytic expectations implied by a SynthConfig.

    ``expected_ate`` entries for metrics listed in ``approx_metrics``
    are plug-in approximations (the cosine outcomes); the rest are
    exact up to an O(1/(P*L)) eligibility-conditioning remainder,
    orders of magnitude below the test tolerances.  Engagement mixing
    makes treatment effects trait-dependent, so regression truth is
    recorded as signs, not coefficients.
    """

    expected_ate: dict[str, float]
    naive_bias: dict[str, float]
    approx_metrics: list[str]
    expected_regression_sign: dict[str, int]
    control_post_means: dict[str, float]

    def to_json(self) -> dict:
        return {
            "expected_ate": self.expected_ate,
            "naive_bias": self.naive_bias,
            "approx_metrics": self.approx_metrics,
            "expected_regression_sign": self.expected_regression_sign,
            "control_post_means": self.control_post_means,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "GroundTruth":
        return cls(
            expected_ate=dict(obj["expected_ate"]),
            naive_bias=dict(obj["naive_bias"]),
            approx_metrics=list(obj["approx_metrics"]),
            expected_regression_sign={
                k: int(v) for k, v in obj["expected_regression_sign"].items()
            },
            control_post_means=dict(obj["control_post_means"]),
        )


def _suffixes(n: int, repeat: int = 3) -> list[str]:
    out = []
    for combo in itertools.product("abcdefghijklmnopqrstuvwxyz", repeat=repeat):
        out.append("".join(combo))
        if len(out) == n:
            return out
    raise SynthError(f"cannot build {n} suffixes of length {repeat}")


def _bucket_subset_tokens(prefix: str, n: int) -> list[str]:
    """Fixed-length tokens whose embedder buckets land in the feed subset."""
    out = []
    for combo in itertools.product("abcdefghijklmnopqrstuvwxyz", repeat=3):
        token = prefix + "".join(combo)
        if _bucket(token, _EMBED_DIM) in _FEED_BUCKET_SUBSET:
            out.append(token)
            if len(out) == n:
                return out
    raise SynthError(f"cannot build {n} bucket-subset tokens")


class _Pools:
    """All token pools, built once per generation run."""

    def __init__(self, cfg: SynthConfig) -> None:
        self.by_name: dict[str, np.ndarray] = {}
        for name, prefix in CATEGORY_POOLS:
            self.by_name[name] = np.array(
                [prefix + s for s in _suffixes(cfg.pool_size)]
            )
        self.by_name[LONG_POOL] = np.array(
            ["lng" + s * 3 for s in _suffixes(cfg.pool_size)]
        )
        self.by_name[FEED_VOCAB_POOL] = np.array(
            _bucket_subset_tokens("xfe", cfg.pool_size)
        )
        self.by_name[NEUTRAL_POOL] = np.array(
            ["xne" + s for s in _suffixes(cfg.neutral_pool_size)]
        )
        self.ordered = [self.by_name[name] for name in POOL_NAMES]
        user_suffix = _suffixes(cfg.phrase_pool_size)
        self.user_phrase_a = np.array(["pha" + s for s in user_suffix])
        self.user_phrase_b = np.array(["phb" + s for s in user_suffix])
        feed_suffix = _suffixes(cfg.feed_phrase_pool_size)
        self.feed_phrase_a = np.array(["phc" + s for s in feed_suffix])
        self.feed_phrase_b = np.array(["phd" + s for s in feed_suffix])


@dataclass
class _Params:
    """Resolved fresh-draw distribution and structural rates for one arm-period.

    ``f`` already includes any config-level feed mixing plus planted
    corrections; ``lam`` is the probability a phrase slot draws from
    the feed phrase pool (the semantic-convergence channel).
    """

    f: np.ndarray
    rho: float
    q: float
    lam: float

    @staticmethod
    def base_f(cfg: SynthConfig) -> np.ndarray:
        f = np.zeros(len(POOL_NAMES))
        for i, name in enumerate(POOL_NAMES[:-1]):
            f[i] = _BASE_F[name]
        f[-1] = 1.0 - float(np.sum(f))
        if f[-1] <= 0:
            raise SynthError("base pool probabilities exceed 1")
        return f

    @staticmethod
    def feed_f(cfg: SynthConfig) -> np.ndarray:
        f = _Params.base_f(cfg)
        for name, off in _FEED_OFFSETS.items():
            f[POOL_NAMES.index(name)] += off
        f[-1] = 1.0 - float(np.sum(f[:-1]))
        if np.any(f < 0):
            raise SynthError("feed pool probabilities out of range")
        return f

    @classmethod
    def solve(cls, cfg: SynthConfig) -> dict[str, "_Params"]:
        """Derive baseline/post parameters for both arms from the config.

        Planted deltas are realized by closed-form shifts applied after
        the feed-mixing component, so the final expectations hit the
        targets exactly for the linear metrics.
        """
        base = cls.base_f(cfg)
        feed = cls.feed_f(cfg)
        single_frac = 1.0 - cfg.phrase_prob
        L = cfg.tokens_per_post
        deltas = cfg.planted_effects

        lam = 0.0
        if "lsa" in deltas or "semconv" in deltas:
            metric = "lsa" if "lsa" in deltas else "semconv"
            lam = _solve_mixing(cfg, base, feed, metric, deltas[metric])
        f_post = (1.0 - lam) * base + lam * feed

        def shift(pool: str, amount: float) -> None:
            idx = POOL_NAMES.index(pool)
            f_post[idx] += amount
            f_post[-1] -= amount

        # Complexity first: readability depends on the length shift.
        if "complexity" in deltas:
            target = deltas["complexity"]
            implied = (LONG_TOKEN_LEN - TOKEN_LEN) * single_frac * (
                f_post[_LONG_IDX] - base[_LONG_IDX]
            )
            shift(
                LONG_POOL,
                (target - implied) / ((LONG_TOKEN_LEN - TOKEN_LEN) * single_frac),
            )
        d_len = (LONG_TOKEN_LEN - TOKEN_LEN) * single_frac * (
            f_post[_LONG_IDX] - base[_LONG_IDX]
        )

        q_post = cfg.sentence_break_prob
        if "readability" in deltas:
            target = deltas["readability"]
            q_post = cfg.sentence_break_prob + (5.88 * d_len - target) * L / (
                29.6 * (L - 1)
            )
            if not 0.0 <= q_post <= 1.0:
                raise SynthError("readability delta pushes sentence rate out of [0,1]")

        if "cdi" in deltas:
            target = deltas["cdi"]
            implied = 100.0 * single_frac * sum(
                sign * (f_post[POOL_NAMES.index(p)] - base[POOL_NAMES.index(p)])
                for p, sign in _CDI_SIGNS.items()
            )
            half = (target - implied) / (200.0 * single_frac)
            shift("article", half)
            shift("preposition", half)

        for key, target in deltas.items():
            if key.startswith("cat:"):
                pool = key.split(":", 1)[1]
                implied = 100.0 * single_frac * (
                    f_post[POOL_NAMES.index(pool)] - base[POOL_NAMES.index(pool)]
                )
                shift(pool, (target - implied) / (100.0 * single_frac))

        rho_post = cfg.copy_prob
        if "repeatability" in deltas:
            factor = single_frac - _expected_inv_tokens(cfg)
            rho_post = cfg.copy_prob + deltas["repeatability"] / factor
            if not 0.0 <= rho_post < 1.0:
                raise SynthError(
                    "repeatability delta pushes copy probability out of [0,1)"
                )

        if np.any(f_post < -1e-12) or f_post[-1] <= 0:
            raise SynthError("planted deltas make the pool distribution infeasible")
        f_post = np.clip(f_post, 0.0, None)
        # Headroom for the per-user confounder shift (|tanh| <= 1).
        kappa = abs(cfg.confound_rate_shift)
        loading_sum = sum(cfg.confound_loadings.values())
        for f in (base, f_post):
            if f[-1] - kappa * abs(loading_sum) <= 0:
                raise SynthError("confound_rate_shift exceeds neutral pool headroom")
            for pool, loading in cfg.confound_loadings.items():
                if f[POOL_NAMES.index(pool)] - kappa * abs(loading) < 0:
                    raise SynthError("confound_rate_shift exceeds category headroom")

        baseline = cls(f=base, rho=cfg.copy_prob, q=cfg.sentence_break_prob, lam=0.0)
        return {
            "control": baseline,
            "treated_baseline": baseline,
            "treated_post": cls(f=f_post, rho=rho_post, q=q_post, lam=lam),
            "feed": cls(f=feed, rho=cfg.copy_prob, q=cfg.sentence_break_prob, lam=1.0),
        }


def _expected_inv_tokens(cfg: SynthConfig) -> float:
    """E[1 / (P * L) | P >= 1] over the post-period length distribution."""
    L = cfg.tokens_per_post
    lo, hi = cfg.anchor_window
    day_grid = cfg.days - np.linspace(lo * cfg.days, hi * cfg.days, 257)
    total = 0.0
    for days in day_grid:
        mu = cfg.base_post_rate * float(days)
        norm = 1.0 - math.exp(-mu)
        if norm <= 0.0:
            continue
        acc = 0.0
        pmf = math.exp(-mu)
        p = 0
        cap = int(mu + 12 * math.sqrt(mu) + 20)
        while p < cap:
            p += 1
            pmf *= mu / p
            acc += pmf / (p * L)
        total += acc / norm
    return total / len(day_grid)


def _expected_linear_metrics(cfg: SynthConfig, params: _Params) -> dict[str, float]:
    """Exact expectations of the linear metrics under one parameter set."""
    single = 1.0 - cfg.phrase_prob
    L = cfg.tokens_per_post
    out: dict[str, float] = {}
    for i, (name, _) in enumerate(CATEGORY_POOLS):
        out[f"cat:{name}"] = 100.0 * single * params.f[i]
    out["cdi"] = 30.0 + sum(sign * out[f"cat:{p}"] for p, sign in _CDI_SIGNS.items())
    mean_len = TOKEN_LEN + (LONG_TOKEN_LEN - TOKEN_LEN) * single * params.f[_LONG_IDX]
    out["complexity"] = mean_len
    sents_per_word = (1.0 + (L - 1) * params.q) / L
    out["readability"] = (
        0.0588 * 100.0 * mean_len - 0.296 * 100.0 * sents_per_word - 15.8
    )
    out["repeatability"] = params.rho * (single - _expected_inv_tokens(cfg))
    return out


def _style_vector(cfg: SynthConfig, params: _Params) -> np.ndarray:
    """Expected noncontent rate vector (category pools are all noncontent)."""
    single = 1.0 - cfg.phrase_prob
    return 100.0 * single * params.f[: len(CATEGORY_POOLS)]


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.sha1(token.encode()).digest()
    return int.from_bytes(digest[:8], "big") % dim


def _bucket_profile(
    pools: _Pools, params: _Params, cfg: SynthConfig, dim: int, projection: np.ndarray
) -> np.ndarray:
    """Plug-in expected embedding: projection of expected bucket counts."""
    counts = np.zeros(dim)
    single = 1.0 - cfg.phrase_prob
    for i, name in enumerate(POOL_NAMES):
        pool = pools.by_name[name]
        mass = single * params.f[i] / len(pool)
        for token in pool:
            counts[_bucket(str(token), dim)] += mass
    for weight, arr_a, arr_b in (
        (1.0 - params.lam, pools.user_phrase_a, pools.user_phrase_b),
        (params.lam, pools.feed_phrase_a, pools.feed_phrase_b),
    ):
        if weight <= 0.0:
            continue
        mass = cfg.phrase_prob * weight / (2 * len(arr_a))
        for token in itertools.chain(arr_a, arr_b):
            counts[_bucket(str(token), dim)] += mass
    vec = counts * projection
    norm = float(np.linalg.norm(vec))
    return vec / norm if norm > 0 else vec


def _plugin_cosines(
    cfg: SynthConfig, pools: _Pools, params: Mapping[str, _Params]
) -> dict[str, dict[str, float]]:
    dim, seed = 64, 0
    projection = np.random.default_rng(seed).standard_normal(dim)
    feed_style = _style_vector(cfg, params["feed"])
    feed_embed = _bucket_profile(pools, params["feed"], cfg, dim, projection)
    out: dict[str, dict[str, float]] = {}
    for arm in ("control", "treated_post"):
        style = _style_vector(cfg, params[arm])
        embed = _bucket_profile(pools, params[arm], cfg, dim, projection)
        out[arm] = {
            "lsa": float(
                np.dot(style, feed_style)
                / (np.linalg.norm(style) * np.linalg.norm(feed_style))
            ),
            "semconv": float(np.dot(embed, feed_embed)),
        }
    return out


def _solve_mixing(
    cfg: SynthConfig,
    base: np.ndarray,
    feed: np.ndarray,
    metric: str,
    delta: float,
) -> float:
    """Bisection on the plug-in cosine shift to realize a mixing delta."""
    if delta < 0:
        raise SynthError(f"{metric} delta must be non-negative")
    if delta == 0:
        return 0.0
    pools = _Pools(cfg)
    structural = dict(rho=cfg.copy_prob, q=cfg.sentence_break_prob)

    def gap(lam: float) -> float:
        p = {
            "control": _Params(f=base, lam=0.0, **structural),
            "treated_post": _Params(
                f=(1 - lam) * base + lam * feed, lam=lam, **structural
            ),
            "feed": _Params(f=feed, lam=1.0, **structural),
        }
        cos = _plugin_cosines(cfg, pools, p)
        return cos["treated_post"][metric] - cos["control"][metric]

    lo, hi = 0.0, 1.0
    if gap(1.0) < delta:
        raise SynthError(f"{metric} delta {delta} unreachable even at full mixing")
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if gap(mid) < delta:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _tanh_gap(confounder_strength: float) -> float:
    """E[tanh u | treated] - E[tanh u | control] under logistic selection."""
    if confounder_strength == 0.0:
        return 0.0
    u = np.linspace(-8.0, 8.0, 16001)
    phi = np.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)
    sig = 1.0 / (1.0 + np.exp(-confounder_strength * u))
    w_t = phi * sig
    w_c = phi * (1.0 - sig)
    t_mean = np.trapezoid(np.tanh(u) * w_t, u) / np.trapezoid(w_t, u)
    c_mean = np.trapezoid(np.tanh(u) * w_c, u) / np.trapezoid(w_c, u)
    return float(t_mean - c_mean)


def ground_truth(cfg: SynthConfig) -> GroundTruth:
    """Analytic expected ATEs, naive biases, and regression signs."""
    params = _Params.solve(cfg)
    control = _expected_linear_metrics(cfg, params["control"])
    treated = _expected_linear_metrics(cfg, params["treated_post"])
    expected = {k: treated[k] - control[k] for k in control}
    pools = _Pools(cfg)
    cosines = _plugin_cosines(cfg, pools, params)
    expected["lsa"] = cosines["treated_post"]["lsa"] - cosines["control"]["lsa"]
    expected["semconv"] = (
        cosines["treated_post"]["semconv"] - cosines["control"]["semconv"]
    )
    control_means = dict(control)
    control_means["lsa"] = cosines["control"]["lsa"]
    control_means["semconv"] = cosines["control"]["semconv"]

    # Confounder-induced bias of the naive (unmatched) contrast: the
    # trait shifts each loaded pool by kappa * loading * tanh(u).
    gap = _tanh_gap(cfg.confounder_strength)
    kappa = cfg.confound_rate_shift
    single = 1.0 - cfg.phrase_prob
    bias: dict[str, float] = {k: 0.0 for k in expected}
    for pool, loading in cfg.confound_loadings.items():
        bias[f"cat:{pool}"] = 100.0 * single * kappa * loading * gap
    bias["cdi"] = sum(
        sign * bias[f"cat:{p}"] for p, sign in _CDI_SIGNS.items()
    )

    signs = {kind: 0 for kind in _DEFAULT_ENGAGEMENT_RATES}
    for kind, strength in cfg.engagement_mixing.items():
        if strength > 0:
            signs[kind] = -1  # mixing toward the feed shrinks the distance
        elif strength < 0:
            signs[kind] = 1
    return GroundTruth(
        expected_ate=expected,
        naive_bias=bias,
        approx_metrics=["lsa", "semconv"],
        expected_regression_sign=signs,
        control_post_means=control_means,
    )


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


class _PoolCursor:
    """Without-replacement draws as consecutive runs at a random offset.

    Tokens within one user-period never repeat (runs shorter than the
    pool), each draw is marginally uniform over the pool, and the cost
    is O(draws) instead of a per-period pool permutation.
    """

    def __init__(self, rng: np.random.Generator, sizes: list[int]) -> None:
        self._offsets = [int(rng.integers(0, s)) for s in sizes]
        self._used = [0] * len(sizes)
        self._sizes = sizes

    def take(self, pool_idx: int, count: int) -> np.ndarray:
        size = self._sizes[pool_idx]
        used = self._used[pool_idx]
        if used + count > size:
            raise SynthError("pool exhausted; increase pool sizes")
        start = self._offsets[pool_idx] + used
        self._used[pool_idx] = used + count
        return (start + np.arange(count)) % size


def _gen_period_texts(
    rng: np.random.Generator,
    pools: _Pools,
    cfg: SynthConfig,
    f: np.ndarray,
    rho: float,
    q: float,
    lam: float,
    n_posts: int,
) -> list[str]:
    """Token streams for one user-period under one parameter set."""
    if n_posts == 0:
        return []
    L = cfg.tokens_per_post
    pairs_per_post = L // 2
    n_pairs = n_posts * pairs_per_post
    n_tokens = n_posts * L

    is_phrase_pair = rng.random(n_pairs) < cfg.phrase_prob
    phrase_from_feed = rng.random(n_pairs) < lam
    copy_rand = rng.random(n_tokens)
    pool_pick = rng.choice(len(POOL_NAMES), size=n_tokens, p=f)
    break_rand = rng.random(n_tokens)

    phrase_pos = np.repeat(is_phrase_pair, 2)
    single_pos = ~phrase_pos
    copy_pos = single_pos & (copy_rand < rho)
    fresh_pos = single_pos & ~copy_pos
    # A copy before any fresh draw in the period becomes fresh.
    fresh_idx_marker = np.where(fresh_pos, np.arange(n_tokens), -1)
    last_fresh = np.maximum.accumulate(fresh_idx_marker)
    orphan = copy_pos & (last_fresh < 0)
    fresh_pos |= orphan
    copy_pos &= ~orphan
    fresh_idx_marker = np.where(fresh_pos, np.arange(n_tokens), -1)
    last_fresh = np.maximum.accumulate(fresh_idx_marker)

    tokens = np.empty(n_tokens, dtype="<U13")
    cursor = _PoolCursor(
        rng, [len(p) for p in pools.ordered] + [len(pools.user_phrase_a), len(pools.feed_phrase_a)]
    )
    fresh_where = np.nonzero(fresh_pos)[0]
    fresh_pools = pool_pick[fresh_where]
    for pool_idx in range(len(POOL_NAMES)):
        sel = fresh_where[fresh_pools == pool_idx]
        if sel.size:
            taken = cursor.take(pool_idx, sel.size)
            tokens[sel] = pools.ordered[pool_idx][taken]

    pair_first = np.arange(n_pairs) * 2
    for which, offset in (("user", len(POOL_NAMES)), ("feed", len(POOL_NAMES) + 1)):
        mask = is_phrase_pair & (
            phrase_from_feed if which == "feed" else ~phrase_from_feed
        )
        sel = pair_first[mask]
        if sel.size:
            taken = cursor.take(offset, sel.size)
            if which == "user":
                tokens[sel] = pools.user_phrase_a[taken]
                tokens[sel + 1] = pools.user_phrase_b[taken]
            else:
                tokens[sel] = pools.feed_phrase_a[taken]
                tokens[sel + 1] = pools.feed_phrase_b[taken]

    copy_where = np.nonzero(copy_pos)[0]
    tokens[copy_where] = tokens[last_fresh[copy_where]]

    is_post_end = np.zeros(n_tokens, dtype=bool)
    is_post_end[L - 1 :: L] = True
    dotted = is_post_end | (break_rand < q)
    tokens = np.where(dotted, np.char.add(tokens, "."), tokens)

    posts = tokens.reshape(n_posts, L)
    return [" ".join(row) for row in posts]


def _user_f(base: np.ndarray, cfg: SynthConfig, u: float) -> np.ndarray:
    """Apply the latent-trait mixing shift to a pool distribution."""
    if cfg.confound_rate_shift == 0.0:
        return base
    f = base.copy()
    scale = cfg.confound_rate_shift * math.tanh(u)
    total = 0.0
    for pool, loading in cfg.confound_loadings.items():
        f[POOL_NAMES.index(pool)] += scale * loading
        total += scale * loading
    f[-1] -= total
    return f


def _post_line(pid: str, author: str, ts: int, text: str) -> str:
    # Generated text is [a-z. ] only, so raw embedding is valid JSON.
    return (
        f'{{"type":"post","post_id":"{pid}","author_id":"{author}",'
        f'"timestamp":{ts},"text":"{text}","language_tag":"en"}}'
    )


def _engagement_line(
    user: str, feed: str, kind: str, ts: int, target: str
) -> str:
    return (
        f'{{"type":"engagement","user_id":"{user}","feed_id":"{feed}",'
        f'"kind":"{kind}","timestamp":{ts},"target_post_id":"{target}"}}'
    )


def generate(cfg: SynthConfig, out_dir: str | Path) -> tuple[Path, GroundTruth]:
    """Write ``events.jsonl`` and ``truth.json``; byte-identical per config.

    Users generate independently under per-user derived seeds and are
    written in user-sorted order, so output does not depend on
    generation scheduling.
    """
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pools = _Pools(cfg)
    params = _Params.solve(cfg)
    truth = ground_truth(cfg)

    window_seconds = int(cfg.days * SECONDS_PER_DAY)
    t_end = EPOCH_OFFSET + window_seconds
    lo, hi = cfg.anchor_window
    lines: list[str] = []
    post_counter = 0
    kinds = [k.value for k in EngagementKind]

    # Feed and decoy posts first: their timestamps precede every anchor,
    # so their pseudo-authors drop out of the cohort at eligibility.
    feed_post_ids: list[str] = []
    decoy_post_ids: list[str] = []
    for which, feed_name, id_list, n_pool in (
        ("feed", cfg.feed_id, feed_post_ids, cfg.feed_post_pool),
        ("decoy", cfg.decoy_feed_id, decoy_post_ids, max(20, cfg.feed_post_pool // 10)),
    ):
        rng = np.random.default_rng([cfg.seed, 7 if which == "feed" else 11])
        fp = params["feed"]
        author_count = max(1, n_pool // 25)
        stamps = np.sort(
            rng.integers(
                EPOCH_OFFSET,
                EPOCH_OFFSET + max(1, int(0.3 * lo * cfg.days * SECONDS_PER_DAY)),
                size=n_pool,
            )
        )
        texts = _gen_period_texts(rng, pools, cfg, fp.f, fp.rho, fp.q, fp.lam, n_pool)
        prefix = "feedauthor" if which == "feed" else "decoyauthor"
        for j, (ts, text) in enumerate(zip(stamps, texts)):
            pid = f"p{post_counter:09d}"
            post_counter += 1
            id_list.append(pid)
            lines.append(_post_line(pid, f"{prefix}{j % author_count:03d}", int(ts), text))

    # Cohort users: rejection-sample arms so quotas land exactly while
    # preserving the trait distribution conditional on each arm.
    need_t, need_c = cfg.n_treated, cfg.n_control
    candidate = 0
    user_rows: list[tuple[str, list[str]]] = []
    base_f = params["control"].f
    feed_f = _Params.feed_f(cfg)
    planted_corr = params["treated_post"].f - (
        (1.0 - params["treated_post"].lam) * base_f
        + params["treated_post"].lam * feed_f
    )
    while need_t > 0 or need_c > 0:
        rng = np.random.default_rng([cfg.seed, 13, candidate])
        user_id = f"u{candidate:07d}"
        candidate += 1
        u = float(rng.standard_normal())
        p_treat = 1.0 / (1.0 + math.exp(-cfg.confounder_strength * u))
        treated = bool(rng.random() < p_treat)
        if treated and need_t == 0:
            continue
        if not treated and need_c == 0:
            continue
        if treated:
            need_t -= 1
        else:
            need_c -= 1

        user_lines: list[str] = []
        n_posts = int(rng.poisson(cfg.base_post_rate * cfg.days))
        stamps = np.sort(rng.integers(EPOCH_OFFSET, t_end, size=n_posts))
        anchor = int(
            EPOCH_OFFSET + (lo + (hi - lo) * rng.random()) * cfg.days * SECONDS_PER_DAY
        )

        counts: dict[str, int] = {}
        if treated:
            for kind in kinds:
                counts[kind] = int(rng.poisson(cfg.engagement_rates.get(kind, 0.0)))
            if sum(counts.values()) == 0:
                counts["like"] = 1

        f_own = _user_f(base_f, cfg, u)
        if treated:
            tp = params["treated_post"]
            lam = tp.lam
            for kind, strength in cfg.engagement_mixing.items():
                lam += strength * math.log1p(counts.get(kind, 0))
            lam = min(0.95, max(0.0, lam))
            f_post = (1.0 - lam) * f_own + lam * feed_f + planted_corr
            f_post = np.clip(f_post, 0.0, None)
            f_post /= float(np.sum(f_post))
            n_base = int(np.sum(stamps < anchor))
            texts = _gen_period_texts(
                rng, pools, cfg, f_own, cfg.copy_prob, cfg.sentence_break_prob, 0.0, n_base
            )
            texts += _gen_period_texts(
                rng, pools, cfg, f_post, tp.rho, tp.q, lam, n_posts - n_base
            )
        else:
            texts = _gen_period_texts(
                rng, pools, cfg, f_own, cfg.copy_prob, cfg.sentence_break_prob, 0.0, n_posts
            )
        for ts, text in zip(stamps, texts):
            pid = f"p{post_counter:09d}"
            post_counter += 1
            user_lines.append(_post_line(pid, user_id, int(ts), text))

        if treated:
            first = True
            for kind in kinds:
                for _ in range(counts.get(kind, 0)):
                    ts = anchor if first else int(rng.integers(anchor, t_end + 1))
                    first = False
                    target = feed_post_ids[int(rng.integers(0, len(feed_post_ids)))]
                    user_lines.append(
                        _engagement_line(user_id, cfg.feed_id, kind, ts, target)
                    )
        else:
            for _ in range(int(rng.poisson(cfg.other_feed_rate))):
                ts = int(rng.integers(EPOCH_OFFSET, t_end + 1))
                target = decoy_post_ids[int(rng.integers(0, len(decoy_post_ids)))]
                user_lines.append(
                    _engagement_line(user_id, cfg.decoy_feed_id, "like", ts, target)
                )
        user_rows.append((user_id, user_lines))

    user_rows.sort(key=lambda r: r[0])
    for _, user_lines in user_rows:
        lines.extend(user_lines)

    events_path = out / "events.jsonl"
    events_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    truth_obj = {"config": cfg.to_json(), "truth": truth.to_json()}
    (out / "truth.json").write_text(
        json.dumps(truth_obj, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return events_path, truth


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


@dataclass
class VerifyCheck:
    name: str
    passed: bool
    detail: str


@dataclass
class VerifyReport:
    passed: bool
    checks: list[VerifyCheck]

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "detail": c.detail}
                for c in self.checks
            ],
        }


def verify(
    truth: GroundTruth,
    effect_rows: Mapping[str, Mapping[str, float]],
    rel_tol: float = 0.15,
    se_mult: float = 4.0,
) -> VerifyReport:
    """Compare estimated ATEs against the analytic ground truth.

    ``effect_rows`` maps metric name to a row with ``ate`` and ``t``
    values (as read from effects.csv).  Exact metrics must land within
    max(rel_tol * |expected|, se_mult * SE) of the expected ATE; the
    cosine metrics only have their sign checked, and only when the
    expected shift is meaningfully nonzero.
    """
    checks: list[VerifyCheck] = []
    for metric, expected in sorted(truth.expected_ate.items()):
        row = effect_rows.get(metric)
        if row is None:
            checks.append(VerifyCheck(metric, False, "missing from results"))
            continue
        ate = float(row["ate"])
        t = float(row["t"])
        se = abs(ate / t) if t != 0.0 and math.isfinite(t) else float("inf")
        if metric in truth.approx_metrics:
            if abs(expected) < 1e-3:
                continue
            ok = ate * expected > 0
            checks.append(
                VerifyCheck(
                    metric, ok, f"sign check: ate={ate:.4g}, expected~{expected:.4g}"
                )
            )
            continue
        tol = max(rel_tol * abs(expected), se_mult * se, 1e-9)
        ok = abs(ate - expected) <= tol
        checks.append(
            VerifyCheck(
                metric, ok, f"ate={ate:.6g}, expected={expected:.6g}, tol={tol:.3g}"
            )
        )
    return VerifyReport(passed=all(c.passed for c in checks), checks=checks)
