"""From-scratch boosted-tree propensity model.

Weighted CART trees (weighted Gini splits, midpoint thresholds, depth
capped at 3) boosted with discrete two-class SAMME.  Training contains
no randomness: split ties resolve to the lowest feature index, then
the lowest threshold, so a fixed input order yields a bitwise-identical
ensemble.  The propensity score is the normalized weighted vote for
class 1, which lands in [0, 1] by construction.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MODEL_FORMAT_VERSION = 1
_ERR_FLOOR = 1e-12


class PropensityError(Exception):
    """Raised for degenerate training inputs or model mismatches."""


@dataclass
class TreeNode:
    """Internal node (feature, threshold) or leaf (label, class mass)."""

    label: int
    mass: tuple[float, float]
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class DecisionTree:
    root: TreeNode
    max_depth: int
    n_features: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise PropensityError(
                f"dimension mismatch: {X.shape[1]} features, model has {self.n_features}"
            )
        out = np.empty(X.shape[0], dtype=np.int64)
        self._route(self.root, X, np.arange(X.shape[0]), out)
        return out

    def _route(
        self, node: TreeNode, X: np.ndarray, idx: np.ndarray, out: np.ndarray
    ) -> None:
        if node.is_leaf:
            out[idx] = node.label
            return
        go_left = X[idx, node.feature] <= node.threshold
        assert node.left is not None and node.right is not None
        self._route(node.left, X, idx[go_left], out)
        self._route(node.right, X, idx[~go_left], out)


@dataclass
class BoostedEnsemble:
    trees: list[DecisionTree] = field(default_factory=list)
    alphas: list[float] = field(default_factory=list)
    learning_rate: float = 0.05
    n_estimators: int = 500
    max_depth: int = 3
    schema_hash: str = ""


def _class_mass(y: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    w1 = float(np.sum(w[y == 1]))
    return float(np.sum(w)) - w1, w1


def _leaf(y: np.ndarray, w: np.ndarray) -> TreeNode:
    w0, w1 = _class_mass(y, w)
    return TreeNode(label=0 if w0 >= w1 else 1, mass=(w0, w1))


def _best_split(
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    active: np.ndarray,
    presorted: np.ndarray,
) -> tuple[int, float] | None:
    """Greedy weighted-Gini split over midpoint candidate thresholds.

    Returns None when no split strictly reduces the weighted impurity.
    Ties resolve to the lowest feature index, then lowest threshold.
    """
    mask = np.zeros(X.shape[0], dtype=bool)
    mask[active] = True
    w_total = float(np.sum(w[active]))
    w1_total = float(np.sum(w[active][y[active] == 1]))
    w0_total = w_total - w1_total
    if w_total <= 0.0:
        return None
    parent_imp = w_total - (w0_total**2 + w1_total**2) / w_total
    best: tuple[float, int, float] | None = None
    for f in range(X.shape[1]):
        order = presorted[:, f]
        order = order[mask[order]]
        xs = X[order, f]
        cand = np.nonzero(xs[1:] > xs[:-1])[0]
        if cand.size == 0:
            continue
        ws = w[order]
        w1s = ws * y[order]
        cw = np.cumsum(ws)
        cw1 = np.cumsum(w1s)
        wl = cw[cand]
        wl1 = cw1[cand]
        wl0 = wl - wl1
        wr = w_total - wl
        wr1 = w1_total - wl1
        wr0 = w0_total - wl0
        with np.errstate(divide="ignore", invalid="ignore"):
            imp_l = np.where(wl > 0.0, wl - (wl0**2 + wl1**2) / wl, 0.0)
            imp_r = np.where(wr > 0.0, wr - (wr0**2 + wr1**2) / wr, 0.0)
        imp = imp_l + imp_r
        j = int(np.argmin(imp))  # first minimum = lowest threshold
        if imp[j] < parent_imp and (best is None or imp[j] < best[0]):
            threshold = 0.5 * (xs[cand[j]] + xs[cand[j] + 1])
            best = (float(imp[j]), f, threshold)
    if best is None:
        return None
    return best[1], best[2]


def _grow(
    X: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    active: np.ndarray,
    depth: int,
    max_depth: int,
    presorted: np.ndarray,
) -> TreeNode:
    ya = y[active]
    wa = w[active]
    if depth >= max_depth or np.all(ya == ya[0]):
        return _leaf(ya, wa)
    split = _best_split(X, y, w, active, presorted)
    if split is None:
        return _leaf(ya, wa)
    feature, threshold = split
    go_left = X[active, feature] <= threshold
    node = TreeNode(
        label=0,
        mass=_class_mass(ya, wa),
        feature=feature,
        threshold=threshold,
        left=_grow(X, y, w, active[go_left], depth + 1, max_depth, presorted),
        right=_grow(X, y, w, active[~go_left], depth + 1, max_depth, presorted),
    )
    return node


def fit_tree(
    X: np.ndarray,
    y: Sequence[int],
    w: Sequence[float] | None = None,
    max_depth: int = 3,
    _presorted: np.ndarray | None = None,
) -> DecisionTree:
    """Fit one weighted CART tree.

    Weights must be non-negative and sum to 1 (within 1e-9); they
    default to uniform.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    if n == 0:
        raise PropensityError("empty training set")
    if y.shape != (n,) or not np.all((y == 0) | (y == 1)):
        raise PropensityError("labels must be 0/1 and match X rows")
    if w is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(w, dtype=np.float64)
        if np.any(w < 0.0) or abs(float(np.sum(w)) - 1.0) > 1e-9:
            raise PropensityError("weights must be non-negative and sum to 1")
    if _presorted is None:
        _presorted = np.argsort(X, axis=0, kind="stable")
    root = _grow(X, y, w, np.arange(n), 0, max_depth, _presorted)
    return DecisionTree(root=root, max_depth=max_depth, n_features=X.shape[1])


def fit_adaboost(
    X: np.ndarray,
    y: Sequence[int],
    n_estimators: int = 500,
    learning_rate: float = 0.05,
    max_depth: int = 3,
    schema_hash: str = "",
) -> BoostedEnsemble:
    """Discrete SAMME boosting over depth-capped CART trees (K=2).

    Per round: fit on current weights; stop when the weighted error
    reaches 1 - 1/K; otherwise alpha = lr * ln((1-err)/max(err, 1e-12)),
    misclassified weights scale by exp(alpha), and weights renormalize.
    A perfect round keeps its tree with the floor-capped alpha and
    stops.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    if n == 0:
        raise PropensityError("empty training set")
    if len(np.unique(y)) < 2:
        raise PropensityError("degenerate labels: both classes must be present")
    presorted = np.argsort(X, axis=0, kind="stable")
    w = np.full(n, 1.0 / n)
    ens = BoostedEnsemble(
        learning_rate=learning_rate,
        n_estimators=n_estimators,
        max_depth=max_depth,
        schema_hash=schema_hash,
    )
    for _ in range(n_estimators):
        tree = fit_tree(X, y, w, max_depth, _presorted=presorted)
        miss = tree.predict(X) != y
        err = float(np.sum(w[miss]))
        if err >= 0.5:
            if not ens.trees:
                # A 50/50 first round carries no signal; keep the tree
                # with zero vote weight so scoring stays defined (0.5).
                ens.trees.append(tree)
                ens.alphas.append(0.0)
            break
        alpha = learning_rate * math.log((1.0 - err) / max(err, _ERR_FLOOR))
        ens.trees.append(tree)
        ens.alphas.append(alpha)
        if err == 0.0:
            break
        w = w * np.exp(alpha * miss)
        w = w / float(np.sum(w))
    return ens


def predict_score(ens: BoostedEnsemble, x: np.ndarray) -> float:
    """Propensity score of one covariate vector."""
    return float(score_matrix(ens, np.atleast_2d(np.asarray(x, dtype=np.float64)))[0])


def score_matrix(ens: BoostedEnsemble, X: np.ndarray) -> np.ndarray:
    """Normalized weighted vote for class 1, one score per row of X."""
    if not ens.trees:
        raise PropensityError("ensemble has no trees")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    total_alpha = float(np.sum(ens.alphas))
    if total_alpha == 0.0:
        return np.full(X.shape[0], 0.5)
    votes = np.zeros(X.shape[0], dtype=np.float64)
    for tree, alpha in zip(ens.trees, ens.alphas):
        votes += alpha * (tree.predict(X) == 1)
    # Accumulation order can differ from np.sum by one ulp; the score
    # contract is a hard [0, 1].
    return np.clip(votes / total_alpha, 0.0, 1.0)


def covariate_schema_hash(names: Sequence[str]) -> str:
    payload = json.dumps(list(names)).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def _node_to_obj(node: TreeNode) -> dict:
    obj: dict = {"label": node.label, "mass": list(node.mass)}
    if not node.is_leaf:
        assert node.left is not None and node.right is not None
        obj.update(
            feature=node.feature,
            threshold=node.threshold,
            left=_node_to_obj(node.left),
            right=_node_to_obj(node.right),
        )
    return obj


def _node_from_obj(obj: dict) -> TreeNode:
    node = TreeNode(label=int(obj["label"]), mass=tuple(obj["mass"]))  # type: ignore[arg-type]
    if "feature" in obj:
        node.feature = int(obj["feature"])
        node.threshold = float(obj["threshold"])
        node.left = _node_from_obj(obj["left"])
        node.right = _node_from_obj(obj["right"])
    return node


def save_model(ens: BoostedEnsemble, path: str | Path) -> None:
    obj = {
        "format_version": MODEL_FORMAT_VERSION,
        "learning_rate": ens.learning_rate,
        "n_estimators": ens.n_estimators,
        "max_depth": ens.max_depth,
        "schema_hash": ens.schema_hash,
        "alphas": ens.alphas,
        "n_features": ens.trees[0].n_features if ens.trees else 0,
        "trees": [_node_to_obj(t.root) for t in ens.trees],
    }
    Path(path).write_text(
        json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )


def load_model(path: str | Path, expect_schema_hash: str | None = None) -> BoostedEnsemble:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("format_version") != MODEL_FORMAT_VERSION:
        raise PropensityError(f"unsupported model format: {obj.get('format_version')}")
    if expect_schema_hash is not None and obj["schema_hash"] != expect_schema_hash:
        raise PropensityError("model was trained against a different covariate schema")
    ens = BoostedEnsemble(
        learning_rate=float(obj["learning_rate"]),
        n_estimators=int(obj["n_estimators"]),
        max_depth=int(obj["max_depth"]),
        schema_hash=str(obj["schema_hash"]),
    )
    n_features = int(obj["n_features"])
    for tree_obj in obj["trees"]:
        ens.trees.append(
            DecisionTree(
                root=_node_from_obj(tree_obj),
                max_depth=ens.max_depth,
                n_features=n_features,
            )
        )
    ens.alphas = [float(a) for a in obj["alphas"]]
    return ens
