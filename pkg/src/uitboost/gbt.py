"""Boosting engine: additive tree ensembles under a regularized log-loss objective.

Each round fits one tree to the current first/second derivatives of the log
loss by exact greedy split search (all midpoints between consecutive distinct
sorted values), then shrinks its contribution by the learning rate. Leaf
weights take the closed form -G/(H+lambda); splits must clear the per-leaf
penalty gamma to be accepted.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from ._tree_kernels import build_tree_arrays, predict_tree_sum, scan_split_segment
from .metrics import auc_roc
from .preprocess import EncodedMatrix


@dataclass(frozen=True)
class Hyperparams:
    ntrees: int = 100
    eta: float = 0.1
    max_depth: int = 6
    gamma: float = 0.0
    lam: float = 1.0
    row_sample: float = 1.0
    col_sample: float = 1.0
    min_child_hessian: float = 1e-6
    base_score: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.ntrees < 0:
            raise ValueError("ntrees must be non-negative")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")
        if self.gamma < 0 or self.lam < 0 or self.min_child_hessian < 0:
            raise ValueError("penalties must be non-negative")
        if not 0.0 < self.row_sample <= 1.0 or not 0.0 < self.col_sample <= 1.0:
            raise ValueError("sampling fractions must lie in (0, 1]")
        if not 0.0 < self.base_score < 1.0:
            raise ValueError("base_score must lie strictly between 0 and 1")

    def to_dict(self) -> dict:
        return {
            "ntrees": self.ntrees,
            "eta": self.eta,
            "max_depth": self.max_depth,
            "gamma": self.gamma,
            "lam": self.lam,
            "row_sample": self.row_sample,
            "col_sample": self.col_sample,
            "min_child_hessian": self.min_child_hessian,
            "base_score": self.base_score,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Hyperparams":
        return cls(**doc)


@dataclass(frozen=True)
class GradPair:
    g: float
    h: float


@dataclass
class TreeNode:
    """Internal node (feature_index >= 0, threshold, children) or leaf (weight)."""

    feature_index: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    weight: float = 0.0
    gain: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature_index < 0


class SplitChoice(NamedTuple):
    feature: int
    threshold: float
    gain: float


class Tree:
    """One fitted tree stored as flat node arrays; rows go left when x < threshold."""

    def __init__(self, feat, thr, left, right, weight, gain):
        self.feat = feat
        self.thr = thr
        self.left = left
        self.right = right
        self.weight = weight
        self.gain = gain
        self._root: TreeNode | None = None

    @classmethod
    def from_root(cls, root: TreeNode) -> "Tree":
        nodes: list[TreeNode] = []

        def walk(node: TreeNode) -> int:
            idx = len(nodes)
            nodes.append(node)
            if not node.is_leaf:
                walk(node.left)
                walk(node.right)
            return idx

        walk(root)
        index = {id(n): i for i, n in enumerate(nodes)}
        n = len(nodes)
        feat = np.full(n, -1, np.int32)
        thr = np.zeros(n, np.float64)
        left = np.full(n, -1, np.int32)
        right = np.full(n, -1, np.int32)
        weight = np.zeros(n, np.float64)
        gain = np.zeros(n, np.float64)
        for i, node in enumerate(nodes):
            if node.is_leaf:
                weight[i] = node.weight
            else:
                feat[i] = node.feature_index
                thr[i] = node.threshold
                left[i] = index[id(node.left)]
                right[i] = index[id(node.right)]
                gain[i] = node.gain
        tree = cls(feat, thr, left, right, weight, gain)
        tree._root = root
        return tree

    @property
    def root(self) -> TreeNode:
        if self._root is None:
            def build(i: int) -> TreeNode:
                if self.feat[i] < 0:
                    return TreeNode(weight=float(self.weight[i]))
                return TreeNode(
                    feature_index=int(self.feat[i]),
                    threshold=float(self.thr[i]),
                    left=build(int(self.left[i])),
                    right=build(int(self.right[i])),
                    gain=float(self.gain[i]),
                )

            self._root = build(0)
        return self._root

    @property
    def n_nodes(self) -> int:
        return len(self.feat)

    @property
    def leaf_count(self) -> int:
        return int(np.sum(self.feat < 0))

    @property
    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        out = 0
        for i in range(self.n_nodes):
            if self.feat[i] >= 0:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
            else:
                out = max(out, int(depths[i]))
        return out

    @property
    def leaf_weights(self) -> np.ndarray:
        return self.weight[self.feat < 0]

    @property
    def split_gains(self) -> list[tuple[int, float]]:
        """(feature_index, gain) per accepted split, in pre-order."""
        records: list[tuple[int, float]] = []

        def walk(i: int) -> None:
            if self.feat[i] < 0:
                return
            records.append((int(self.feat[i]), float(self.gain[i])))
            walk(int(self.left[i]))
            walk(int(self.right[i]))

        walk(0)
        return records

    def predict_sum(self, X: np.ndarray, out: np.ndarray) -> None:
        predict_tree_sum(X, self.feat, self.thr, self.left, self.right, self.weight, out)


@dataclass
class BoostedModel:
    """The realized ensemble; margin(x) = logit(base_score) + eta * sum of trees."""

    base_score: float
    eta: float
    trees: list[Tree]
    feature_names: tuple[str, ...]
    best_round: int | None = None
    eval_history: list[float] = field(default_factory=list)

    @property
    def ntrees(self) -> int:
        return len(self.trees)


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def logloss_grad_hess(label: int, margin: float) -> GradPair:
    """First/second derivative of the binary log loss at a raw margin."""
    if not math.isfinite(margin):
        raise ValueError("margin must be finite")
    if margin >= 0:
        p = 1.0 / (1.0 + math.exp(-margin))
    else:
        e = math.exp(margin)
        p = e / (1.0 + e)
    return GradPair(g=p - label, h=p * (1.0 - p))


def _grad_hess_arrays(labels: np.ndarray, margins: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(over="ignore"):
        p = 1.0 / (1.0 + np.exp(-margins))
    return p - labels, p * (1.0 - p)


def leaf_weight(G: float, H: float, lam: float) -> float:
    """Optimal regularized leaf weight -G / (H + lambda)."""
    if H + lam <= 0.0:
        raise ValueError("H + lambda must be positive")
    return -G / (H + lam)


def split_gain(G_L: float, H_L: float, G_R: float, H_R: float, lam: float, gamma: float) -> float:
    """Loss reduction of a split, minus the per-leaf penalty gamma."""
    tot = G_L + G_R
    return 0.5 * (
        G_L * G_L / (H_L + lam)
        + G_R * G_R / (H_R + lam)
        - tot * tot / (H_L + H_R + lam)
    ) - gamma


def _as_matrix(X) -> tuple[np.ndarray, tuple[str, ...] | None]:
    if isinstance(X, EncodedMatrix):
        return np.ascontiguousarray(X.values, dtype=np.float64), X.names
    arr = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    if arr.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    return arr, None


def find_best_split(X, rows, cols, grad_pairs, params: Hyperparams) -> SplitChoice | None:
    """Exact greedy search over the given rows and column subset.

    Ties are broken by lowest feature index, then lowest threshold. Returns
    None when no candidate clears min_child_hessian with positive gain.
    """
    X, _ = _as_matrix(X)
    g, h = grad_pairs
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    rows = np.sort(np.asarray(rows, dtype=np.int64))
    if rows.size < 2:
        return None
    XT = np.ascontiguousarray(X.T)
    best: SplitChoice | None = None
    for c in sorted(int(c) for c in cols):
        order = np.argsort(X[rows, c], kind="mergesort")
        seg = rows[order]
        gain, thr = scan_split_segment(
            XT, g, h, seg, c, params.lam, params.gamma, params.min_child_hessian
        )
        if gain == -math.inf:
            continue
        if best is None or gain > best.gain:
            best = SplitChoice(feature=c, threshold=float(thr), gain=float(gain))
    if best is None or best.gain <= 0.0:
        return None
    return best


def _column_order(XT: np.ndarray) -> np.ndarray:
    m = XT.shape[0]
    order = np.empty((m, XT.shape[1]), dtype=np.int32)
    for j in range(m):
        order[j] = np.argsort(XT[j], kind="mergesort")
    return order


def build_tree(X, rows, grad_pairs, params: Hyperparams, rng: np.random.Generator) -> Tree:
    """Grow one tree on the given rows; the column subset is drawn from rng."""
    X, _ = _as_matrix(X)
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("cannot build a tree on zero rows")
    g, h = grad_pairs
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    mask = np.zeros(X.shape[0], dtype=np.bool_)
    mask[rows] = True
    m = X.shape[1]
    cols = _draw_columns(m, params.col_sample, rng)
    XT = np.ascontiguousarray(X.T)
    arrays = build_tree_arrays(
        XT,
        g,
        h,
        _column_order(XT),
        mask,
        cols,
        params.max_depth,
        params.lam,
        params.gamma,
        params.min_child_hessian,
    )
    return Tree(*arrays)


def _draw_columns(m: int, col_sample: float, rng: np.random.Generator) -> np.ndarray:
    if col_sample >= 1.0:
        return np.arange(m, dtype=np.int64)
    k = max(1, int(math.floor(col_sample * m)))
    return np.sort(rng.choice(m, size=k, replace=False)).astype(np.int64)


def _draw_rows(n: int, row_sample: float, rng: np.random.Generator) -> np.ndarray:
    mask = np.zeros(n, dtype=np.bool_)
    if row_sample >= 1.0:
        mask[:] = True
        return mask
    k = max(2, int(math.floor(row_sample * n)))
    mask[rng.choice(n, size=k, replace=False)] = True
    return mask


def train(
    X,
    labels,
    params: Hyperparams,
    *,
    feature_names: Sequence[str] | None = None,
    eval_set: tuple | None = None,
    patience: float | None = None,
) -> BoostedModel:
    """Fit the boosted ensemble.

    With ``eval_set=(X_val, y_val)`` the validation AUC is recorded every
    round; a finite ``patience`` stops training after that many rounds
    without improvement and keeps the best-round model.
    """
    X, names = _as_matrix(X)
    if feature_names is not None:
        names = tuple(feature_names)
    elif names is None:
        names = tuple(f"f{j}" for j in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise ValueError("feature_names length does not match the matrix")
    y = np.asarray(labels, dtype=np.float64)
    if X.shape[0] != y.size:
        raise ValueError("label count does not match the matrix")
    if X.shape[0] < 2 or len(np.unique(y)) < 2:
        raise ValueError("training needs at least 2 rows spanning both classes")
    if patience is not None and eval_set is None:
        raise ValueError("patience requires an eval_set")

    n, m = X.shape
    XT = np.ascontiguousarray(X.T)
    col_order = _column_order(XT)
    rng = np.random.default_rng(params.seed)
    margins = np.full(n, _logit(params.base_score))
    trees: list[Tree] = []

    eval_margins = None
    y_eval = None
    X_eval = None
    history: list[float] = []
    best_auc = -math.inf
    best_round = 0
    since_best = 0
    if eval_set is not None:
        X_eval, _ = _as_matrix(eval_set[0])
        y_eval = np.asarray(eval_set[1])
        eval_margins = np.full(X_eval.shape[0], _logit(params.base_score))

    for _ in range(params.ntrees):
        g, h = _grad_hess_arrays(y, margins)
        mask = _draw_rows(n, params.row_sample, rng)
        cols = _draw_columns(m, params.col_sample, rng)
        arrays = build_tree_arrays(
            XT, g, h, col_order, mask, cols,
            params.max_depth, params.lam, params.gamma, params.min_child_hessian,
        )
        tree = Tree(*arrays)
        trees.append(tree)
        psum = np.zeros(n)
        tree.predict_sum(X, psum)
        margins += params.eta * psum
        if eval_set is not None:
            esum = np.zeros(X_eval.shape[0])
            tree.predict_sum(X_eval, esum)
            eval_margins += params.eta * esum
            auc = auc_roc(y_eval, eval_margins)
            history.append(auc)
            if auc > best_auc:
                best_auc = auc
                best_round = len(trees)
                since_best = 0
            else:
                since_best += 1
            if patience is not None and since_best >= patience:
                break

    if patience is not None and math.isfinite(patience):
        trees = trees[:best_round]
    return BoostedModel(
        base_score=params.base_score,
        eta=params.eta,
        trees=trees,
        feature_names=names,
        best_round=best_round if eval_set is not None else None,
        eval_history=history,
    )


def predict_margin(model: BoostedModel, X) -> np.ndarray:
    X, _ = _as_matrix(X)
    if X.shape[1] != len(model.feature_names):
        raise ValueError(
            f"matrix has {X.shape[1]} columns, model expects {len(model.feature_names)}"
        )
    raw = np.zeros(X.shape[0])
    for tree in model.trees:
        tree.predict_sum(X, raw)
    return _logit(model.base_score) + model.eta * raw


def predict_proba(model: BoostedModel, X) -> np.ndarray:
    margins = predict_margin(model, X)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-margins))


def classify(model: BoostedModel, X, threshold: float = 0.5) -> np.ndarray:
    return (predict_proba(model, X) >= threshold).astype(np.int8)


def evaluate_objective(model: BoostedModel, X, labels, params: Hyperparams) -> float:
    """Summed log loss plus gamma * leaves + lam/2 * squared leaf weights, per tree."""
    y = np.asarray(labels, dtype=np.float64)
    margins = predict_margin(model, X)
    loss = float(np.sum(np.logaddexp(0.0, margins) - y * margins))
    penalty = 0.0
    for tree in model.trees:
        w = tree.leaf_weights
        penalty += params.gamma * tree.leaf_count + 0.5 * params.lam * float(np.sum(w * w))
    return loss + penalty


MODEL_HEADER = "uitboost-model v1"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps_model(model: BoostedModel) -> str:
    lines = [MODEL_HEADER]
    lines.append(f"base_score {_fmt(model.base_score)}")
    lines.append(f"eta {_fmt(model.eta)}")
    lines.append(f"features {len(model.feature_names)}")
    for name in model.feature_names:
        lines.append(f"f {json.dumps(name)}")
    lines.append(f"trees {len(model.trees)}")
    for k, tree in enumerate(model.trees):
        lines.append(f"tree {k} nodes {tree.n_nodes}")
        for i in range(tree.n_nodes):
            if tree.feat[i] >= 0:
                lines.append(
                    f"n {i} split {int(tree.feat[i])} {_fmt(tree.thr[i])} "
                    f"{int(tree.left[i])} {int(tree.right[i])} {_fmt(tree.gain[i])}"
                )
            else:
                lines.append(f"n {i} leaf {_fmt(tree.weight[i])}")
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> BoostedModel:
    lines = text.splitlines()
    if not lines or lines[0] != MODEL_HEADER:
        raise ValueError("not a v1 model file")
    at = 1
    base_score = float(lines[at].split()[1]); at += 1
    eta = float(lines[at].split()[1]); at += 1
    n_feat = int(lines[at].split()[1]); at += 1
    names = []
    for _ in range(n_feat):
        names.append(json.loads(lines[at][2:]))
        at += 1
    n_trees = int(lines[at].split()[1]); at += 1
    trees = []
    for _ in range(n_trees):
        parts = lines[at].split()
        n_nodes = int(parts[3]); at += 1
        feat = np.full(n_nodes, -1, np.int32)
        thr = np.zeros(n_nodes, np.float64)
        left = np.full(n_nodes, -1, np.int32)
        right = np.full(n_nodes, -1, np.int32)
        weight = np.zeros(n_nodes, np.float64)
        gain = np.zeros(n_nodes, np.float64)
        for _ in range(n_nodes):
            rec = lines[at].split(); at += 1
            i = int(rec[1])
            if rec[2] == "split":
                feat[i] = int(rec[3])
                thr[i] = float(rec[4])
                left[i] = int(rec[5])
                right[i] = int(rec[6])
                gain[i] = float(rec[7])
            else:
                weight[i] = float(rec[3])
        trees.append(Tree(feat, thr, left, right, weight, gain))
    return BoostedModel(
        base_score=base_score, eta=eta, trees=trees, feature_names=tuple(names)
    )


def save_model(model: BoostedModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(model))


def load_model(path) -> BoostedModel:
    with open(path, encoding="utf-8") as fh:
        return loads_model(fh.read())


def retrained(params: Hyperparams, ntrees: int, seed: int) -> Hyperparams:
    """The final-fit settings: tuned candidate with a fixed round count and seed."""
    return replace(params, ntrees=ntrees, seed=seed)
