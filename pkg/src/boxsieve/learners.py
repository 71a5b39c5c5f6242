"""Elementary binary classifiers with a uniform train/predict contract.

Four families: Fisher LDA with ridge-regularized pooled covariance, CART
decision trees on Gini impurity, k-nearest-neighbors (odd k), and a linear
SVM trained by stochastic hinge-loss subgradient (Pegasos schedule).

Labels are +1 (particle) / -1 (non-particle). All inputs are expected to
be standardized per-column by the caller; models store standardized-space
parameters only. Training is a pure function of (spec, X, y): spec_seed
covers every internal random draw.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "LEARNER_KINDS",
    "LearnerSpec",
    "FittedLearner",
    "random_spec",
    "train",
    "predict",
    "predict_batch",
]

LEARNER_KINDS = ("lda", "tree", "knn", "linear_svm")

_SVM_EPOCHS = 50
_LDA_RIDGE_SCALE = 1e-6
_TREE_LEAF = -1  # sentinel feature index for leaf nodes


@dataclass(frozen=True)
class LearnerSpec:
    kind: str
    hyperparams: tuple  # sorted (name, value) pairs
    spec_seed: int

    def __post_init__(self) -> None:
        if self.kind not in LEARNER_KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")

    def hyper(self, name: str):
        return dict(self.hyperparams)[name]


@dataclass
class FittedLearner:
    spec: LearnerSpec
    params: dict


def _hyper_tuple(**kwargs) -> tuple:
    return tuple(sorted(kwargs.items()))


def random_spec(rng: np.random.Generator) -> LearnerSpec:
    """Draw a learner family uniformly and its hyperparameters from the
    standard ranges (tree depth 2-8, leaf 1-10; odd k in 1-25; SVM lambda
    log-uniform in [1e-4, 1])."""
    kind = LEARNER_KINDS[int(rng.integers(len(LEARNER_KINDS)))]
    if kind == "lda":
        hyper = _hyper_tuple()
    elif kind == "tree":
        hyper = _hyper_tuple(
            max_depth=int(rng.integers(2, 9)), min_leaf=int(rng.integers(1, 11))
        )
    elif kind == "knn":
        hyper = _hyper_tuple(k=int(1 + 2 * rng.integers(0, 13)))
    else:
        hyper = _hyper_tuple(reg_lambda=float(10.0 ** rng.uniform(-4.0, 0.0)), epochs=_SVM_EPOCHS)
    return LearnerSpec(kind=kind, hyperparams=hyper, spec_seed=int(rng.integers(2**63)))


def _check_training_data(X: np.ndarray, y: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2D with one row per label")
    if X.shape[0] < 2:
        raise ValueError("training needs at least 2 rows")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("training data contains non-finite values")
    if not ((y > 0).any() and (y <= 0).any()):
        raise ValueError("training data must contain both classes")


# ---------------------------------------------------------------------------
# LDA
# ---------------------------------------------------------------------------

def _fit_lda(X: np.ndarray, y: np.ndarray) -> dict:
    pos = X[y > 0]
    neg = X[y <= 0]
    mu_pos = pos.mean(axis=0)
    mu_neg = neg.mean(axis=0)
    centered = np.vstack([pos - mu_pos, neg - mu_neg])
    pooled = centered.T @ centered / max(X.shape[0] - 2, 1)
    dim = X.shape[1]
    ridge = _LDA_RIDGE_SCALE * np.trace(pooled) / dim + 1e-12
    weights = np.linalg.solve(pooled + ridge * np.eye(dim), mu_pos - mu_neg)
    offset = -float(weights @ (mu_pos + mu_neg) / 2.0)
    return {"weights": weights, "offset": offset}


# ---------------------------------------------------------------------------
# Decision tree
# ---------------------------------------------------------------------------

def _leaf_label(y: np.ndarray) -> int:
    n_pos = int((y > 0).sum())
    # Exact tie resolves to non-particle, matching the ensemble's bias.
    return 1 if n_pos * 2 > y.size else -1


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Lowest weighted-Gini axis split honoring min_leaf; None if no valid
    split exists. Zero-gain splits are allowed (deeper levels may still
    separate, e.g. an XOR layout)."""
    n = y.size
    pos = (y > 0).astype(np.float64)
    best_score = np.inf
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="mergesort")
        xs = X[order, j]
        cum_pos = np.cumsum(pos[order])
        idx = np.arange(min_leaf - 1, n - min_leaf)
        if idx.size == 0:
            continue
        distinct = xs[idx] < xs[idx + 1]
        idx = idx[distinct]
        if idx.size == 0:
            continue
        n_left = idx + 1.0
        n_right = n - n_left
        p_left = cum_pos[idx] / n_left
        p_right = (cum_pos[-1] - cum_pos[idx]) / n_right
        score = n_left * 2.0 * p_left * (1.0 - p_left) + n_right * 2.0 * p_right * (1.0 - p_right)
        k = int(np.argmin(score))
        if score[k] < best_score:
            best_score = score[k]
            best = (j, float((xs[idx[k]] + xs[idx[k] + 1]) / 2.0))
    return best


def _fit_tree(X: np.ndarray, y: np.ndarray, max_depth: int, min_leaf: int) -> dict:
    features: list[int] = []
    thresholds: list[float] = []
    left: list[int] = []
    right: list[int] = []
    labels: list[int] = []

    def build(rows: np.ndarray, depth: int) -> int:
        node = len(features)
        features.append(_TREE_LEAF)
        thresholds.append(0.0)
        left.append(-1)
        right.append(-1)
        labels.append(_leaf_label(y[rows]))
        ys = y[rows]
        pure = (ys > 0).all() or (ys <= 0).all()
        if pure or depth >= max_depth or rows.size < 2 * min_leaf:
            return node
        split = _best_split(X[rows], y[rows], min_leaf)
        if split is None:
            return node
        j, t = split
        mask = X[rows, j] < t
        features[node] = j
        thresholds[node] = t
        left[node] = build(rows[mask], depth + 1)
        right[node] = build(rows[~mask], depth + 1)
        return node

    build(np.arange(X.shape[0]), 0)
    return {
        "feature": np.asarray(features, dtype=np.int64),
        "threshold": np.asarray(thresholds, dtype=np.float64),
        "left": np.asarray(left, dtype=np.int64),
        "right": np.asarray(right, dtype=np.int64),
        "label": np.asarray(labels, dtype=np.int64),
    }


def _tree_predict(params: dict, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0], dtype=np.int64)
    feature = params["feature"]
    threshold = params["threshold"]
    left = params["left"]
    right = params["right"]
    label = params["label"]
    for i in range(X.shape[0]):
        node = 0
        while feature[node] != _TREE_LEAF:
            node = left[node] if X[i, feature[node]] < threshold[node] else right[node]
        out[i] = label[node]
    return out


# ---------------------------------------------------------------------------
# k-nearest-neighbors
# ---------------------------------------------------------------------------

def _knn_predict(params: dict, X: np.ndarray) -> np.ndarray:
    train_x = params["train_x"]
    train_y = params["train_y"]
    k = min(int(params["k"]), train_x.shape[0])
    d2 = (
        np.sum(X**2, axis=1)[:, None]
        - 2.0 * X @ train_x.T
        + np.sum(train_x**2, axis=1)[None, :]
    )
    # Stable sort keeps distance ties deterministic (lowest index wins).
    nearest = np.argsort(d2, axis=1, kind="mergesort")[:, :k]
    votes = train_y[nearest].sum(axis=1)
    return np.where(votes > 0, 1, -1).astype(np.int64)


# ---------------------------------------------------------------------------
# Linear SVM (Pegasos)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _pegasos(X, y, order, lam, w, b):  # pragma: no cover - exercised via train()
    t = 0
    bias = b
    for step in range(order.shape[0]):
        i = order[step]
        t += 1
        eta = 1.0 / (lam * t)
        margin = y[i] * (np.dot(w, X[i]) + bias)
        for j in range(w.shape[0]):
            w[j] *= 1.0 - eta * lam
        if margin < 1.0:
            for j in range(w.shape[0]):
                w[j] += eta * y[i] * X[i, j]
            bias += eta * y[i]
    return bias


def _fit_svm(X: np.ndarray, y: np.ndarray, reg_lambda: float, epochs: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    order = np.concatenate([rng.permutation(n) for _ in range(epochs)])
    w = np.zeros(X.shape[1], dtype=np.float64)
    b = _pegasos(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        order.astype(np.int64),
        float(reg_lambda),
        w,
        0.0,
    )
    return {"weights": w, "offset": float(b)}


# ---------------------------------------------------------------------------
# Uniform contract
# ---------------------------------------------------------------------------

def train(spec: LearnerSpec, X, y) -> FittedLearner:
    """Fit one elementary classifier on (already standardized) features."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_training_data(X, y)
    if spec.kind == "lda":
        params = _fit_lda(X, y)
    elif spec.kind == "tree":
        params = _fit_tree(X, y, spec.hyper("max_depth"), spec.hyper("min_leaf"))
    elif spec.kind == "knn":
        params = {"train_x": X.copy(), "train_y": y.copy(), "k": spec.hyper("k")}
    else:
        params = _fit_svm(X, y, spec.hyper("reg_lambda"), spec.hyper("epochs"), spec.spec_seed)
    return FittedLearner(spec=spec, params=params)


def predict_batch(model: FittedLearner, X) -> np.ndarray:
    """Labels (+1/-1) for each row of X."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("predict_batch expects a 2D matrix")
    if not np.isfinite(X).all():
        raise ValueError("inputs contain non-finite values")
    kind = model.spec.kind
    if kind in ("lda", "linear_svm"):
        score = X @ model.params["weights"] + model.params["offset"]
        # Exact zero resolves to + (fixed tie rule, measure-zero case).
        return np.where(score >= 0.0, 1, -1).astype(np.int64)
    if kind == "tree":
        return _tree_predict(model.params, X)
    return _knn_predict(model.params, X)


def predict(model: FittedLearner, x) -> int:
    """Label for a single feature vector."""
    return int(predict_batch(model, np.asarray(x, dtype=np.float64)[None, :])[0])
