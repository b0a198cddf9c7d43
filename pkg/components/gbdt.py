"""Second-order gradient boosted regression trees with logistic loss.

Exact greedy split search over sorted feature values. Rows go left when
x < threshold; missing values follow the node's default direction (left).
Ties between equal gains go to the lowest feature id, then the lowest
threshold.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import log_loss

from components.featurizer import FeatureVector, tree_matrix
from utils.exceptions import SingleClassError, ValidationError
from utils.helpers import GbdtConfig

logger = logging.getLogger(__name__)

# smaller holdouts are too noisy to stop on; every row then trains
MIN_VALIDATION_ROWS = 30
# gains closer than this (relative) count as ties
GAIN_TIE_TOLERANCE = 1e-12


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


def logistic_gradients(p: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """First and second derivatives of log-loss w.r.t. the raw score"""
    return p - y, p * (1.0 - p)


def leaf_weight(G: float, H: float, reg_lambda: float) -> float:
    return -G / (H + reg_lambda)


def split_gain(G_L, H_L, G_R, H_R, reg_lambda: float, gamma: float):
    G, H = G_L + G_R, H_L + H_R
    with np.errstate(divide="ignore", invalid="ignore"):
        return 0.5 * (G_L ** 2 / (H_L + reg_lambda) + G_R ** 2 / (H_R + reg_lambda) - G ** 2 / (H + reg_lambda)) - gamma


@dataclass
class TreeNode:
    weight: float = 0.0
    feature: Optional[int] = None
    threshold: Optional[float] = None
    default_left: bool = True
    gain: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())

    def leaves(self) -> List["TreeNode"]:
        if self.is_leaf:
            return [self]
        return self.left.leaves() + self.right.leaves()

    def to_dict(self) -> Dict:
        if self.is_leaf:
            return {"leaf": self.weight}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "default_left": self.default_left,
            "gain": self.gain,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "TreeNode":
        if "leaf" in data:
            return cls(weight=float(data["leaf"]))
        return cls(
            feature=int(data["feature"]),
            threshold=float(data["threshold"]),
            default_left=bool(data["default_left"]),
            gain=float(data["gain"]),
            left=cls.from_dict(data["left"]),
            right=cls.from_dict(data["right"]),
        )


class RegressionTree:
    def __init__(self, root: TreeNode):
        self.root = root

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.empty(X.shape[0])
        self._fill(self.root, X, np.arange(X.shape[0]), out)
        return out

    def _fill(self, node: TreeNode, X: np.ndarray, rows: np.ndarray, out: np.ndarray) -> None:
        if node.is_leaf:
            out[rows] = node.weight
            return
        column = X[rows, node.feature]
        missing = np.isnan(column)
        go_left = (column < node.threshold) | (missing & node.default_left)
        self._fill(node.left, X, rows[go_left], out)
        self._fill(node.right, X, rows[~go_left], out)

    @property
    def depth(self) -> int:
        return self.root.depth()

    def to_dict(self) -> Dict:
        return self.root.to_dict()

    @classmethod
    def from_dict(cls, data: Dict) -> "RegressionTree":
        return cls(TreeNode.from_dict(data))


def _improves(gain: float, best_gain: float) -> bool:
    return gain > best_gain + GAIN_TIE_TOLERANCE * max(1.0, abs(best_gain))


@dataclass
class SplitCandidate:
    feature: int
    threshold: float
    gain: float


def best_split(
    X: np.ndarray, g: np.ndarray, h: np.ndarray, rows: np.ndarray, reg_lambda: float, gamma: float
) -> Optional[SplitCandidate]:
    """Highest-gain (feature, midpoint threshold) over all features, missing rows sent left.

    Every column of the node is sorted at once (NaN last); the tie rules are
    those of a feature-by-feature scan: first threshold within tolerance of a
    feature's top gain, and a later feature only wins by more than the tolerance.
    """
    if len(rows) < 2:
        return None
    g_node, h_node = g[rows], h[rows]
    G, H = g_node.sum(), h_node.sum()
    block = X[rows]
    missing = np.isnan(block)
    G_miss = np.where(missing, g_node[:, None], 0.0).sum(axis=0)
    H_miss = np.where(missing, h_node[:, None], 0.0).sum(axis=0)

    order = np.argsort(block, axis=0, kind="mergesort")
    values = np.take_along_axis(block, order, axis=0)
    # NaN compares False, so no boundary touches a missing value
    boundary = values[:-1] < values[1:]
    usable = np.flatnonzero(boundary.any(axis=0))
    if usable.size == 0:
        return None

    G_L = np.cumsum(g_node[order], axis=0)[:-1] + G_miss
    H_L = np.cumsum(h_node[order], axis=0)[:-1] + H_miss
    gains = np.where(boundary, split_gain(G_L, H_L, G - G_L, H - H_L, reg_lambda, gamma), -np.inf)

    best: Optional[SplitCandidate] = None
    for feature in usable:
        column_gains = gains[:, feature]
        top = column_gains.max()
        j = int(np.flatnonzero(column_gains >= top - GAIN_TIE_TOLERANCE * max(1.0, abs(top)))[0])
        if best is None or _improves(column_gains[j], best.gain):
            threshold = 0.5 * (values[j, feature] + values[j + 1, feature])
            best = SplitCandidate(int(feature), float(threshold), float(column_gains[j]))
    return best


def build_tree(
    X: np.ndarray, g: np.ndarray, h: np.ndarray, rows: np.ndarray, depth: int, params: GbdtConfig
) -> TreeNode:
    node = TreeNode(weight=leaf_weight(g[rows].sum(), h[rows].sum(), params.reg_lambda))
    if depth >= params.max_depth or len(rows) < 2:
        return node
    split = best_split(X, g, h, rows, params.reg_lambda, params.gamma)
    if split is None or not split.gain > 0:
        return node

    column = X[rows, split.feature]
    go_left = (column < split.threshold) | np.isnan(column)
    node.feature, node.threshold, node.gain = split.feature, split.threshold, split.gain
    node.left = build_tree(X, g, h, rows[go_left], depth + 1, params)
    node.right = build_tree(X, g, h, rows[~go_left], depth + 1, params)
    return node


def brute_force_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, rows: np.ndarray, depth: int, params: GbdtConfig) -> TreeNode:
    """Reference tree builder: enumerates every (feature, threshold) pair with masked sums"""
    node = TreeNode(weight=leaf_weight(g[rows].sum(), h[rows].sum(), params.reg_lambda))
    if depth >= params.max_depth or len(rows) < 2:
        return node

    best = None
    for feature in range(X.shape[1]):
        column = X[rows, feature]
        levels = np.unique(column[~np.isnan(column)])
        for lo, hi in zip(levels[:-1], levels[1:]):
            threshold = 0.5 * (lo + hi)
            left = (column < threshold) | np.isnan(column)
            gain = split_gain(
                g[rows][left].sum(), h[rows][left].sum(), g[rows][~left].sum(), h[rows][~left].sum(),
                params.reg_lambda, params.gamma,
            )
            if best is None or _improves(gain, best[0]):
                best = (gain, feature, threshold, left)
    if best is None or not best[0] > 0:
        return node

    gain, feature, threshold, left = best
    node.feature, node.threshold, node.gain = feature, float(threshold), float(gain)
    node.left = brute_force_tree(X, g, h, rows[left], depth + 1, params)
    node.right = brute_force_tree(X, g, h, rows[~left], depth + 1, params)
    return node


def trees_match(a: TreeNode, b: TreeNode, tol: float = 1e-9) -> bool:
    if a.is_leaf != b.is_leaf:
        return False
    if a.is_leaf:
        return abs(a.weight - b.weight) <= tol
    return (
        a.feature == b.feature
        and abs(a.threshold - b.threshold) <= tol
        and trees_match(a.left, b.left, tol)
        and trees_match(a.right, b.right, tol)
    )


def fit_single_tree_oracle_check(X: np.ndarray, y: np.ndarray, params: GbdtConfig = GbdtConfig(max_depth=2)) -> bool:
    """Greedy first tree equals the exhaustive-enumeration tree (structure and leaf weights)"""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    p = np.full(len(y), _positive_rate(y))
    g, h = logistic_gradients(p, y)
    rows = np.arange(len(y))
    return trees_match(build_tree(X, g, h, rows, 0, params), brute_force_tree(X, g, h, rows, 0, params))


def _positive_rate(y: np.ndarray) -> float:
    # clipped so all-one-class oracle inputs keep a finite base score
    return float(np.clip(np.mean(y), 1e-6, 1 - 1e-6)) if len(y) else 0.5


@dataclass
class BoostedEnsemble:
    trees: List[RegressionTree]
    base_score: float
    learning_rate: float = 0.1
    params: GbdtConfig = field(default_factory=GbdtConfig)
    cat_sizes: Tuple[int, ...] = ()
    n_features: int = 0
    feature_names: List[str] = field(default_factory=list)
    train_loss: List[float] = field(default_factory=list)

    def raw_score(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValidationError(f"expected {self.n_features} tree features, got shape {X.shape}")
        score = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            score += self.learning_rate * tree.predict(X)
        return score

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.raw_score(X))

    def to_dict(self) -> Dict:
        return {
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "params": self.params.model_dump(mode="json"),
            "cat_sizes": list(self.cat_sizes),
            "n_features": self.n_features,
            "feature_names": list(self.feature_names),
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "BoostedEnsemble":
        return cls(
            trees=[RegressionTree.from_dict(t) for t in data["trees"]],
            base_score=float(data["base_score"]),
            learning_rate=float(data["learning_rate"]),
            params=GbdtConfig.model_validate(data["params"]),
            cat_sizes=tuple(data["cat_sizes"]),
            n_features=int(data["n_features"]),
            feature_names=list(data["feature_names"]),
        )


def fit_gbdt_matrix(
    X: np.ndarray,
    y: np.ndarray,
    params: GbdtConfig = GbdtConfig(),
    seed: int = 0,
    cat_sizes: Sequence[int] = (),
    feature_names: Optional[Sequence[str]] = None,
) -> BoostedEnsemble:
    """Boost on a dense design matrix, early-stopping on a seeded validation split"""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0 or len(np.unique(y)) < 2:
        raise SingleClassError("boosted trees need training rows of both classes")

    train_rows = np.arange(len(y))
    valid_rows = np.array([], dtype=np.int64)
    n_valid = int(len(y) * params.validation_fraction)
    if params.early_stopping_rounds is not None and n_valid >= MIN_VALIDATION_ROWS:
        order = np.random.default_rng(seed).permutation(len(y))
        candidate_train, candidate_valid = np.sort(order[n_valid:]), np.sort(order[:n_valid])
        if len(np.unique(y[candidate_train])) == 2:
            train_rows, valid_rows = candidate_train, candidate_valid

    X_train, y_train = X[train_rows], y[train_rows]
    base_score = float(np.log(np.mean(y_train) / (1.0 - np.mean(y_train))))
    ensemble = BoostedEnsemble(
        trees=[],
        base_score=base_score,
        learning_rate=params.learning_rate,
        params=params,
        cat_sizes=tuple(cat_sizes),
        n_features=X.shape[1],
        feature_names=list(feature_names) if feature_names is not None else [f"f{i}" for i in range(X.shape[1])],
    )

    train_score = np.full(len(y_train), base_score)
    valid_score = np.full(len(valid_rows), base_score)
    best_loss, best_round, stale = np.inf, 0, 0
    rows = np.arange(len(y_train))
    for round_no in range(1, params.n_trees + 1):
        g, h = logistic_gradients(sigmoid(train_score), y_train)
        tree = RegressionTree(build_tree(X_train, g, h, rows, 0, params))
        ensemble.trees.append(tree)
        train_score += params.learning_rate * tree.predict(X_train)
        ensemble.train_loss.append(float(log_loss(y_train, sigmoid(train_score), labels=[0, 1])))

        if len(valid_rows):
            valid_score += params.learning_rate * tree.predict(X[valid_rows])
            loss = float(log_loss(y[valid_rows], sigmoid(valid_score), labels=[0, 1]))
            if loss < best_loss:
                best_loss, best_round, stale = loss, round_no, 0
            else:
                stale += 1
            if stale >= params.early_stopping_rounds and round_no >= params.min_trees:
                keep = max(best_round, params.min_trees)
                logger.debug("Boosting stopped at round %d, keeping %d trees (best val loss %.5f at round %d)",
                             round_no, keep, best_loss, best_round)
                ensemble.trees = ensemble.trees[:keep]
                ensemble.train_loss = ensemble.train_loss[:keep]
                break

    logger.debug("Fitted %d trees on %d rows", len(ensemble.trees), len(y_train))
    return ensemble


def fit_gbdt(
    data: Sequence[Tuple[FeatureVector, int]],
    params: GbdtConfig = GbdtConfig(),
    cat_sizes: Sequence[int] = (),
    seed: int = 0,
    feature_names: Optional[Sequence[str]] = None,
) -> BoostedEnsemble:
    if not data:
        raise SingleClassError("boosted trees need training rows of both classes")
    X = tree_matrix([fv for fv, _ in data], cat_sizes)
    y = np.array([label for _, label in data], dtype=float)
    return fit_gbdt_matrix(X, y, params, seed, cat_sizes, feature_names)


def predict_gbdt(model: BoostedEnsemble, fv: FeatureVector) -> float:
    X = tree_matrix([fv], model.cat_sizes)
    return float(model.predict_proba(X)[0])


def feature_importance(model: BoostedEnsemble) -> Dict[str, float]:
    """Total split gain per input column, largest first; unused columns omitted"""
    totals = np.zeros(model.n_features)

    def visit(node: TreeNode) -> None:
        if node.is_leaf:
            return
        totals[node.feature] += node.gain
        visit(node.left)
        visit(node.right)

    for tree in model.trees:
        visit(tree.root)
    used = [(model.feature_names[i], float(totals[i])) for i in np.nonzero(totals)[0]]
    return dict(sorted(used, key=lambda item: (-item[1], item[0])))
