"""Majority-vote ensemble built by bagging plus iterative greedy selection.

Training protocol: a 10% stratified validation holdout is set aside; the
remaining 90% pool is split 5 times into stratified 80% inner-train / 20%
eval subsamples. Each of the 40-60 random candidate classifiers is trained
once per inner split. The greedy loop repeatedly scores every unused
candidate by the mean balanced accuracy, over the 5 eval sets, of the
tentative ensemble (already-selected members' pool refits plus the
candidate's matching inner instance) and adds the best candidate while the
mean strictly improves. Each selected spec is then refit once on a
bootstrap resample of the full pool; those refits are the stored members.
The final ensemble is scored on the 10% holdout.

Prediction: features are z-scored with the pool statistics, members vote,
and the label is + iff the + vote fraction exceeds 1/2 (an exact tie votes
-, biasing toward non-particle removal).
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .features import FEATURE_NAMES
from .learners import (
    FittedLearner,
    LearnerSpec,
    predict_batch,
    random_spec,
    train,
)
from .metrics import EvaluationReport, confusion, roc_auc, summarize

__all__ = [
    "TrainingSplit",
    "Ensemble",
    "ModelFormatError",
    "split_training",
    "build_ensemble",
    "ensemble_predict",
    "ensemble_predict_batch",
    "save_model",
    "load_model",
]

MODEL_FORMAT_VERSION = 1
MAX_MEMBERS = 51


class ModelFormatError(ValueError):
    """Raised when a model file is malformed or from another format version."""


@dataclass
class TrainingSplit:
    """Index sets: 10% validation, the 90% pool, and 5 inner train/eval pairs."""

    validation: np.ndarray
    pool: np.ndarray
    inner: list[tuple[np.ndarray, np.ndarray]]


@dataclass
class Ensemble:
    members: list[FittedLearner]
    norm_means: np.ndarray
    norm_stds: np.ndarray
    zero_variance_flags: np.ndarray
    validation_report: EvaluationReport
    build_seed: int
    selection_trace: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.members)


def _stratified_take(rng, pos_idx, neg_idx, size, n_pos, n_total):
    """Pick `size` indices with class counts proportional within rounding;
    both classes keep at least one element on each side of the cut."""
    take_pos = round(size * n_pos / n_total)
    take_pos = min(max(take_pos, 1), size - 1, len(pos_idx) - 1)
    take_neg = size - take_pos
    if take_neg < 1 or take_neg > len(neg_idx) - 1:
        raise ValueError("classes too imbalanced to stratify this split")
    pos = rng.permutation(pos_idx)
    neg = rng.permutation(neg_idx)
    taken = np.concatenate([pos[:take_pos], neg[:take_neg]])
    rest = np.concatenate([pos[take_pos:], neg[take_neg:]])
    return np.sort(taken), np.sort(rest)


def split_training(y, rng: np.random.Generator) -> TrainingSplit:
    """Stratified 10% holdout plus 5 independent 80/20 splits of the pool."""
    y = np.asarray(y)
    n = y.size
    if n < 20:
        raise ValueError(f"training dataset needs at least 20 rows, got {n}")
    pos_idx = np.flatnonzero(y > 0)
    neg_idx = np.flatnonzero(y <= 0)
    if pos_idx.size == 0 or neg_idx.size == 0:
        raise ValueError("training dataset must contain both classes")

    v_size = round(0.10 * n)
    validation, pool = _stratified_take(rng, pos_idx, neg_idx, v_size, pos_idx.size, n)

    pool_pos = pool[y[pool] > 0]
    pool_neg = pool[y[pool] <= 0]
    inner = []
    for _ in range(5):
        t_size = round(0.80 * pool.size)
        train_idx, eval_idx = _stratified_take(
            rng, pool_pos, pool_neg, t_size, pool_pos.size, pool.size
        )
        inner.append((train_idx, eval_idx))
    return TrainingSplit(validation=validation, pool=pool, inner=inner)


def _balanced_accuracy_and_specificity(truth, pred) -> tuple[float, float]:
    c = confusion(truth, pred)
    sens = c.tp / (c.tp + c.fn)
    spec = c.tn / (c.tn + c.fp)
    return (sens + spec) / 2.0, spec


def _vote_labels(vote_sum: np.ndarray) -> np.ndarray:
    # + needs a strict majority; an exact tie votes -.
    return np.where(vote_sum > 0, 1, -1)


def _bootstrap_fit(spec: LearnerSpec, X, y, rng) -> FittedLearner:
    n = y.size
    for _ in range(100):
        rows = rng.integers(0, n, size=n)
        if (y[rows] > 0).any() and (y[rows] <= 0).any():
            return train(spec, X[rows], y[rows])
    raise ValueError("bootstrap resampling kept producing single-class samples")


def build_ensemble(
    X,
    y,
    pool_size: int = 48,
    seed: int = 0,
    candidates: list[LearnerSpec] | None = None,
) -> Ensemble:
    """Run the full selection protocol and return the fitted ensemble.

    ``candidates`` overrides the random candidate draw (handy for planting
    known classifiers in tests); otherwise ``pool_size`` specs are drawn.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != len(FEATURE_NAMES):
        raise ValueError(f"feature matrix must have {len(FEATURE_NAMES)} columns")
    if not np.isfinite(X).all():
        raise ValueError("feature matrix contains non-finite values")
    if pool_size < 1:
        raise ValueError("pool_size must be at least 1")

    rng = np.random.default_rng(seed & (2**64 - 1))
    split = split_training(y, rng)

    pool_X = X[split.pool]
    means = pool_X.mean(axis=0)
    stds = pool_X.std(axis=0)
    zero_variance = stds == 0.0
    stds = np.where(zero_variance, 1.0, stds)
    Xs = (X - means) / stds

    specs = list(candidates) if candidates is not None else [
        random_spec(rng) for _ in range(pool_size)
    ]

    # Train every candidate on each inner split and cache its eval votes.
    eval_sets = [(Xs[ev], y[ev]) for _, ev in split.inner]
    candidate_votes: list[list[np.ndarray] | None] = []
    for spec in specs:
        votes: list[np.ndarray] | None = []
        try:
            for (tr, _), (ev_X, _) in zip(split.inner, eval_sets):
                model = train(spec, Xs[tr], y[tr])
                votes.append(predict_batch(model, ev_X))
        except ValueError:
            votes = None  # candidate untrainable on this data
        candidate_votes.append(votes)
    if all(v is None for v in candidate_votes):
        raise ValueError("no candidate classifier is trainable on this dataset")

    members: list[FittedLearner] = []
    member_votes = [np.zeros(ev_y.size, dtype=np.int64) for _, ev_y in eval_sets]
    unused = [i for i, v in enumerate(candidate_votes) if v is not None]
    current_mean = -math.inf
    trace: list[float] = []

    while unused and len(members) < MAX_MEMBERS:
        best_key = None
        best_cand = None
        for c in unused:
            baccs = []
            specs_fold = []
            for f, (_, ev_y) in enumerate(eval_sets):
                vote_sum = member_votes[f] + candidate_votes[c][f]
                bacc, specificity = _balanced_accuracy_and_specificity(
                    ev_y, _vote_labels(vote_sum)
                )
                baccs.append(bacc)
                specs_fold.append(specificity)
            key = (float(np.mean(baccs)), float(np.mean(specs_fold)), -c)
            if best_key is None or key > best_key:
                best_key = key
                best_cand = c
        if best_key is None or best_key[0] <= current_mean:
            break
        refit = _bootstrap_fit(specs[best_cand], Xs[split.pool], y[split.pool], rng)
        members.append(refit)
        for f, (ev_X, _) in enumerate(eval_sets):
            member_votes[f] += predict_batch(refit, ev_X)
        unused.remove(best_cand)
        current_mean = best_key[0]
        trace.append(current_mean)

    val_labels, val_scores = _vote_batch(members, Xs[split.validation])
    val_truth = y[split.validation]
    report = summarize(
        confusion(val_truth, val_labels), auc=roc_auc(val_scores, val_truth)
    )
    return Ensemble(
        members=members,
        norm_means=means,
        norm_stds=stds,
        zero_variance_flags=zero_variance,
        validation_report=report,
        build_seed=int(seed),
        selection_trace=trace,
    )


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def _vote_batch(members: list[FittedLearner], Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Majority vote of members over already-standardized rows."""
    votes = np.zeros(Xs.shape[0], dtype=np.int64)
    for member in members:
        votes += predict_batch(member, Xs)
    k = len(members)
    scores = (votes + k) / (2.0 * k)
    labels = np.where(scores > 0.5, 1, -1)
    return labels.astype(np.int64), scores


def ensemble_predict_batch(e: Ensemble, X) -> tuple[np.ndarray, np.ndarray]:
    """(labels, + vote fractions) for each row of raw (unstandardized) X."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a 2D feature matrix")
    if not np.isfinite(X).all():
        raise ValueError("feature matrix contains non-finite values")
    Xs = (X - e.norm_means) / e.norm_stds
    return _vote_batch(e.members, Xs)


def ensemble_predict(e: Ensemble, x) -> tuple[int, float]:
    labels, scores = ensemble_predict_batch(e, np.asarray(x, dtype=np.float64)[None, :])
    return int(labels[0]), float(scores[0])


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _params_to_jsonable(model: FittedLearner) -> dict:
    out = {}
    for key, value in model.params.items():
        if isinstance(value, np.ndarray):
            out[key] = value.tolist()
        else:
            out[key] = value
    return out


_TREE_KEYS = ("feature", "threshold", "left", "right", "label")


def _params_from_jsonable(kind: str, raw: dict) -> dict:
    try:
        if kind in ("lda", "linear_svm"):
            return {
                "weights": np.asarray(raw["weights"], dtype=np.float64),
                "offset": float(raw["offset"]),
            }
        if kind == "tree":
            params = {}
            for key in _TREE_KEYS:
                dtype = np.float64 if key == "threshold" else np.int64
                params[key] = np.asarray(raw[key], dtype=dtype)
            return params
        return {
            "train_x": np.asarray(raw["train_x"], dtype=np.float64),
            "train_y": np.asarray(raw["train_y"], dtype=np.int64),
            "k": int(raw["k"]),
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"member parameters malformed for kind {kind!r}: {exc}") from exc


def _validate_finite(name: str, value) -> None:
    arr = np.asarray(value, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ModelFormatError(f"{name}: non-finite parameter value")


def save_model(e: Ensemble, path: str | os.PathLike) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "feature_names": list(FEATURE_NAMES),
        "norm_stats": {
            "means": e.norm_means.tolist(),
            "stds": e.norm_stds.tolist(),
            "zero_variance_flags": [bool(f) for f in e.zero_variance_flags],
        },
        "members": [
            {
                "kind": m.spec.kind,
                "hyperparams": {
                    **dict(m.spec.hyperparams),
                    "spec_seed": m.spec.spec_seed,
                },
                "parameters": _params_to_jsonable(m),
            }
            for m in e.members
        ],
        "validation_report": e.validation_report.to_dict(),
        "build_seed": e.build_seed,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path: str | os.PathLike) -> Ensemble:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"not valid JSON: {exc}") from exc
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"format_version: expected {MODEL_FORMAT_VERSION}, found {version!r}"
        )
    names = doc.get("feature_names")
    if names != list(FEATURE_NAMES):
        raise ModelFormatError(
            f"feature_names: file disagrees with this toolkit's canonical features {list(FEATURE_NAMES)}"
        )
    try:
        stats = doc["norm_stats"]
        means = np.asarray(stats["means"], dtype=np.float64)
        stds = np.asarray(stats["stds"], dtype=np.float64)
        flags = np.asarray(stats["zero_variance_flags"], dtype=bool)
        raw_members = doc["members"]
        report = EvaluationReport.from_dict(doc["validation_report"])
        build_seed = int(doc["build_seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"schema violation: {exc}") from exc
    if not (means.shape == stds.shape == flags.shape == (len(FEATURE_NAMES),)):
        raise ModelFormatError("norm_stats: wrong length")
    _validate_finite("norm_stats.means", means)
    _validate_finite("norm_stats.stds", stds)
    if (stds <= 0).any():
        raise ModelFormatError("norm_stats.stds: must be positive")
    if not raw_members:
        raise ModelFormatError("members: ensemble must contain at least one member")

    members = []
    for i, raw in enumerate(raw_members):
        kind = raw.get("kind")
        if kind not in ("lda", "tree", "knn", "linear_svm"):
            raise ModelFormatError(f"members[{i}].kind: unknown kind {kind!r}")
        hyper = dict(raw.get("hyperparams", {}))
        spec_seed = int(hyper.pop("spec_seed", 0))
        params = _params_from_jsonable(kind, raw.get("parameters", {}))
        for key, value in params.items():
            if isinstance(value, np.ndarray) and value.dtype == np.float64:
                _validate_finite(f"members[{i}].parameters.{key}", value)
        if kind == "knn" and params["train_x"].shape[1] != len(FEATURE_NAMES):
            raise ModelFormatError(f"members[{i}]: stored matrix has wrong width")
        spec = LearnerSpec(kind=kind, hyperparams=tuple(sorted(hyper.items())), spec_seed=spec_seed)
        members.append(FittedLearner(spec=spec, params=params))

    return Ensemble(
        members=members,
        norm_means=means,
        norm_stds=stds,
        zero_variance_flags=flags,
        validation_report=report,
        build_seed=build_seed,
    )
