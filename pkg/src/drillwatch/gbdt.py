"""Gradient-boosted decision trees for binary lithotype classification.

Second-order boosting of the logistic loss with exact greedy split search.
Trees are grown depth-first; each node keeps its rows pre-sorted by every
candidate feature so children are obtained by stable partition instead of a
fresh sort.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from numba import njit
from scipy.special import expit

MODEL_VERSION = "v1"


class TrainingError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class ModelFormatError(ValueError):
    pass


class ModelVersionError(ModelFormatError):
    pass


@dataclass(frozen=True)
class Leaf:
    value: float


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Split]


@dataclass(frozen=True)
class GbdtConfig:
    """Boosting hyperparameters.

    Parameters
    ----------
    n_trees, max_depth, learning_rate:
        Ensemble size, per-tree depth limit and shrinkage.
    subsample_rows, subsample_features:
        Fractions of rows / features drawn (without replacement) per tree.
    min_leaf:
        Minimum rows on each side of a split.
    reg_lambda:
        L2 penalty on leaf values.
    balance_classes:
        Weight rows by inverse class frequency.
    """

    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.05
    subsample_rows: float = 1.0
    subsample_features: float = 1.0
    min_leaf: int = 20
    reg_lambda: float = 1.0
    balance_classes: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if not 1 <= self.max_depth <= 12:
            raise ValueError("max_depth must be in [1, 12]")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        for name in ("subsample_rows", "subsample_features"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in (0, 1]")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be >= 0")


@dataclass(frozen=True, eq=False)
class GbdtModel:
    base_score: float
    trees: tuple[TreeNode, ...]
    learning_rate: float
    feature_names: tuple[str, ...]
    train_loss: tuple[float, ...] = field(default=(), compare=False)

    def predict_proba(self, X) -> np.ndarray:
        return predict_proba(self, X)


def _midpoint(lo: float, hi: float) -> float:
    mid = lo + (hi - lo) / 2
    # adjacent doubles: the midpoint may round onto lo, which would send lo right
    return hi if mid <= lo else mid


@njit(cache=True)
def _best_split(idx, xs, gh, G, H, lam, min_leaf):
    n_feat, m = idx.shape
    parent = G * G / (H + lam)
    best_gain = 0.0
    best_k = -1
    best_j = -1
    best_gl = 0.0
    best_hl = 0.0
    for k in range(n_feat):
        gl = 0.0
        hl = 0.0
        for j in range(m - min_leaf):
            r = idx[k, j]
            gl += gh[r, 0]
            hl += gh[r, 1]
            if j + 1 < min_leaf or not xs[k, j] < xs[k, j + 1]:
                continue
            gr = G - gl
            gain = gl * gl / (hl + lam) + gr * gr / (H - hl + lam) - parent
            # strict: ties keep the lowest feature, then the lowest threshold
            if gain > best_gain:
                best_gain = gain
                best_k = k
                best_j = j
                best_gl = gl
                best_hl = hl
    return best_k, best_j, best_gain, best_gl, best_hl


@njit(cache=True)
def _partition(idx, xs, k, n_left, scratch):
    n_feat, m = idx.shape
    for j in range(n_left):
        scratch[idx[k, j]] = True
    left_idx = np.empty((n_feat, n_left), dtype=idx.dtype)
    left_xs = np.empty((n_feat, n_left), dtype=xs.dtype)
    right_idx = np.empty((n_feat, m - n_left), dtype=idx.dtype)
    right_xs = np.empty((n_feat, m - n_left), dtype=xs.dtype)
    for f in range(n_feat):
        a = 0
        b = 0
        for j in range(m):
            r = idx[f, j]
            if scratch[r]:
                left_idx[f, a] = r
                left_xs[f, a] = xs[f, j]
                a += 1
            else:
                right_idx[f, b] = r
                right_xs[f, b] = xs[f, j]
                b += 1
    for j in range(n_left):
        scratch[idx[k, j]] = False
    return left_idx, left_xs, right_idx, right_xs


class _TreeGrower:
    def __init__(self, n_rows, grad, hess, features, max_depth, min_leaf, reg_lambda):
        # interleaved so each row's statistics share a cache line
        self.gh = np.column_stack((grad, hess))
        self.features = features
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.lam = float(reg_lambda)
        self.scratch = np.zeros(n_rows, dtype=np.bool_)
        self.leaf_rows: list[tuple[np.ndarray, float]] = []

    def leaf(self, rows: np.ndarray, G: float, H: float) -> Leaf:
        node = Leaf(float(-G / (H + self.lam)))
        self.leaf_rows.append((rows, node.value))
        return node

    def is_terminal(self, m: int, depth: int) -> bool:
        return depth >= self.max_depth or m < 2 * self.min_leaf

    def grow(self, idx: np.ndarray, xs: np.ndarray, G: float, H: float, depth: int) -> TreeNode:
        # idx[k]: node rows sorted by self.features[k]; xs[k]: the matching values
        m = idx.shape[1]
        if self.is_terminal(m, depth):
            return self.leaf(idx[0], G, H)
        k, j, gain, G_left, H_left = _best_split(idx, xs, self.gh, G, H,
                                                 self.lam, self.min_leaf)
        if k < 0:
            return self.leaf(idx[0], G, H)
        threshold = _midpoint(float(xs[k, j]), float(xs[k, j + 1]))
        n_left = j + 1
        G_right, H_right = G - G_left, H - H_left
        if self.is_terminal(n_left, depth + 1) and self.is_terminal(m - n_left, depth + 1):
            left = self.leaf(idx[k, :n_left], G_left, H_left)
            right = self.leaf(idx[k, n_left:], G_right, H_right)
        else:
            left_idx, left_xs, right_idx, right_xs = _partition(idx, xs, k, n_left, self.scratch)
            left = self.grow(left_idx, left_xs, G_left, H_left, depth + 1)
            right = self.grow(right_idx, right_xs, G_right, H_right, depth + 1)
        return Split(int(self.features[k]), threshold, left, right)


def presort(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature stable argsort and the sorted values, both ``(n_features, n_rows)``."""
    X = np.asarray(X, dtype=np.float64)
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T, dtype=np.int64)
    return order, np.take_along_axis(X.T, order, axis=1)


def _grow_tree(X, grad, hess, cfg, rng, presorted, max_depth):
    n, n_feat = X.shape
    order, xs = presorted if presorted is not None else presort(X)
    features = np.arange(n_feat)
    if cfg.subsample_features < 1.0:
        k = max(1, int(round(cfg.subsample_features * n_feat)))
        features = np.sort(rng.choice(n_feat, size=k, replace=False))
        order, xs = order[features], xs[features]
    if cfg.subsample_rows < 1.0:
        k = max(1, int(round(cfg.subsample_rows * n)))
        keep = np.zeros(n, dtype=bool)
        keep[rng.choice(n, size=k, replace=False)] = True
        sel = keep[order]
        order = order[sel].reshape(len(features), k)
        xs = xs[sel].reshape(len(features), k)
        rows = np.flatnonzero(keep)
    else:
        rows = slice(None)
    G = float(np.sum(grad[rows]))
    H = float(np.sum(hess[rows]))
    grower = _TreeGrower(n, grad, hess, features, max_depth, cfg.min_leaf, cfg.reg_lambda)
    return grower.grow(order, xs, G, H, 0), grower.leaf_rows


def fit_tree(X, grad, hess, cfg: GbdtConfig, rng: np.random.Generator | None = None,
             *, presorted: tuple[np.ndarray, np.ndarray] | None = None,
             max_depth: int | None = None) -> TreeNode:
    """Grow one regression tree on gradient statistics.

    Splits maximise ``GL²/(HL+λ) + GR²/(HR+λ) − G²/(H+λ)``; a split needs
    positive gain and ``cfg.min_leaf`` rows per side. Leaves hold
    ``−G/(H+λ)``. Row and feature subsampling draw from ``rng``.

    ``presorted`` may pass the output of :func:`presort` for ``X``.
    """
    X = np.asarray(X, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    hess = np.asarray(hess, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise TrainingError("cannot fit a tree on empty input")
    n = X.shape[0]
    if grad.shape != (n,) or hess.shape != (n,):
        raise ShapeError("grad/hess length must match the number of rows")
    if np.any(hess < 0):
        raise TrainingError("hessian entries must be non-negative")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    tree, _ = _grow_tree(X, grad, hess, cfg, rng, presorted,
                         cfg.max_depth if max_depth is None else max_depth)
    return tree


def _compile(tree: TreeNode):
    feature, threshold, left, right, value = [], [], [], [], []

    def visit(node: TreeNode) -> int:
        i = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(i)
        right.append(i)
        value.append(0.0)
        if isinstance(node, Leaf):
            value[i] = node.value
        else:
            feature[i] = node.feature
            threshold[i] = node.threshold
            left[i] = visit(node.left)
            right[i] = visit(node.right)
        return i

    visit(tree)
    return (np.asarray(feature), np.asarray(threshold), np.asarray(left),
            np.asarray(right), np.asarray(value))


def tree_predict(tree: TreeNode, X: np.ndarray) -> np.ndarray:
    """Leaf value reached by every row; rows go left iff ``x[feature] < threshold``."""
    feature, threshold, left, right, value = _compile(tree)
    X = np.asarray(X, dtype=np.float64)
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    while True:
        f = feature[node]
        inner = f >= 0
        if not inner.any():
            break
        x = X[rows, np.where(inner, f, 0)]
        nxt = np.where(x < threshold[node], left[node], right[node])
        node = np.where(inner, nxt, node)
    return value[node]


def tree_depth(tree: TreeNode) -> int:
    if isinstance(tree, Leaf):
        return 0
    return 1 + max(tree_depth(tree.left), tree_depth(tree.right))


def log_loss(y: np.ndarray, score: np.ndarray) -> float:
    """Mean logistic loss of raw scores."""
    return float(np.mean(np.logaddexp(0.0, score) - y * score))


def fit_gbdt(X, y, cfg: GbdtConfig | None = None,
             feature_names: Sequence[str] | None = None) -> GbdtModel:
    """Boost ``cfg.n_trees`` trees on ``(X, y)`` with ``y`` in {0, 1} (1 = shale)."""
    cfg = cfg or GbdtConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ShapeError("X must be (n, d) and y (n,)")
    if not np.isfinite(X).all():
        raise TrainingError("features must be finite (impute first)")
    n = X.shape[0]
    if n < 2 * cfg.min_leaf:
        raise TrainingError(f"need at least {2 * cfg.min_leaf} rows, got {n}")
    pos = float(y.mean())
    if pos in (0.0, 1.0) or not np.isin(y, (0.0, 1.0)).all():
        raise TrainingError("training labels must contain both classes")
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{i}" for i in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise ShapeError("feature_names length does not match X")

    weight = np.ones(n)
    if cfg.balance_classes:
        weight = np.where(y == 1, 0.5 / pos, 0.5 / (1 - pos))
    base = math.log(pos / (1 - pos))
    rng = np.random.default_rng(cfg.seed)
    presorted = presort(X)
    score = np.full(n, base)
    trees = []
    losses = []
    for _ in range(cfg.n_trees):
        p = expit(score)
        grad = (p - y) * weight
        hess = p * (1 - p) * weight
        tree, leaves = _grow_tree(X, grad, hess, cfg, rng, presorted, cfg.max_depth)
        trees.append(tree)
        if cfg.subsample_rows < 1.0:
            update = tree_predict(tree, X)
        else:
            update = np.empty(n)
            for rows, value in leaves:
                update[rows] = value
        score = score + cfg.learning_rate * update
        losses.append(log_loss(y, score))
    return GbdtModel(base, tuple(trees), cfg.learning_rate, names, tuple(losses))


def train_gbdt(data, cfg: GbdtConfig | None = None) -> GbdtModel:
    """Train on a :class:`~drillwatch.preprocess.FeatureMatrix` or a list of them (pooled)."""
    from .preprocess import pool_features

    mats = [data] if hasattr(data, "X") else list(data)
    X, y, _ = pool_features(mats)
    return fit_gbdt(X, y, cfg, mats[0].feature_names)


def decision_function(model: GbdtModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.feature_names):
        raise ShapeError(f"expected rows with {len(model.feature_names)} features, got shape {X.shape}")
    total = np.zeros(X.shape[0])
    for tree in model.trees:
        total += tree_predict(tree, X)
    return model.base_score + model.learning_rate * total


def predict_proba(model: GbdtModel, X) -> np.ndarray:
    """Shale probability per row."""
    return expit(decision_function(model, X))


def _node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"leaf_value": node.value}
    return {"feature": node.feature, "threshold": node.threshold,
            "left": _node_to_dict(node.left), "right": _node_to_dict(node.right)}


def _node_from_dict(d, n_features: int, depth: int = 0) -> TreeNode:
    if not isinstance(d, dict):
        raise ModelFormatError("tree node must be an object")
    if depth > 64:
        raise ModelFormatError("tree too deep")
    if "leaf_value" in d:
        v = d["leaf_value"]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ModelFormatError("leaf_value must be a finite number")
        return Leaf(float(v))
    try:
        f, t = d["feature"], d["threshold"]
        left, right = d["left"], d["right"]
    except KeyError as exc:
        raise ModelFormatError(f"split node lacks {exc.args[0]!r}") from None
    if isinstance(f, bool) or not isinstance(f, int) or not 0 <= f < n_features:
        raise ModelFormatError(f"bad feature index {f!r}")
    if isinstance(t, bool) or not isinstance(t, (int, float)) or math.isnan(t):
        raise ModelFormatError("threshold must be a number")
    return Split(f, float(t), _node_from_dict(left, n_features, depth + 1),
                 _node_from_dict(right, n_features, depth + 1))


def save_model(model: GbdtModel) -> str:
    doc = {
        "version": MODEL_VERSION,
        "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "feature_names": list(model.feature_names),
        "trees": [_node_to_dict(t) for t in model.trees],
    }
    return json.dumps(doc, indent=1) + "\n"


def load_model(document: str) -> GbdtModel:
    """Parse a document written by :func:`save_model`; nothing is returned on any defect."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be an object")
    version = doc.get("version")
    if version != MODEL_VERSION:
        raise ModelVersionError(f"unsupported model version {version!r} (expected {MODEL_VERSION!r})")
    try:
        base = doc["base_score"]
        lr = doc["learning_rate"]
        names = doc["feature_names"]
        trees = doc["trees"]
    except KeyError as exc:
        raise ModelFormatError(f"model document lacks {exc.args[0]!r}") from None
    for key, v in (("base_score", base), ("learning_rate", lr)):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ModelFormatError(f"{key} must be a finite number")
    if not isinstance(names, list) or not all(isinstance(s, str) for s in names):
        raise ModelFormatError("feature_names must be a list of strings")
    if not isinstance(trees, list):
        raise ModelFormatError("trees must be a list")
    parsed = tuple(_node_from_dict(t, len(names)) for t in trees)
    return GbdtModel(float(base), parsed, float(lr), tuple(names))
