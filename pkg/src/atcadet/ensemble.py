"""Stacked regression ensemble over base-detector scores.

Meta examples pair each utterance's base-system scores with its pooled
text feature vector. Three regressors (gradient boosting, random
forest, ridge) are fit to {0,1} targets under MSE; their convex
combination weights are tuned on out-of-fold predictions over a simplex
grid, then all three are refit on the full data.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    BadConfig,
    BadHeader,
    BadJson,
    CoverageMismatch,
    DimMismatch,
    MissingEmbedding,
    NonFinite,
    SingularSystem,
    TooFewExamples,
    TruncatedFile,
    WrongKind,
)
from .text import pool_text_vector

ENSEMBLE_MAGIC = b"ATEN"
ENSEMBLE_VERSION = 1
_OTHER_MAGICS = (b"ATCK", b"ATFX")


@dataclass(frozen=True, eq=False)
class MetaExample:
    utt_id: str
    base_scores: np.ndarray
    text_feat: np.ndarray
    target: Optional[float] = None

    def __post_init__(self):
        base = np.asarray(self.base_scores, dtype=np.float64).reshape(-1)
        feat = np.asarray(self.text_feat, dtype=np.float64).reshape(-1)
        if base.size < 1:
            raise DimMismatch(f"{self.utt_id}: need at least one base score")
        if not (np.all(np.isfinite(base)) and np.all(np.isfinite(feat))):
            raise NonFinite(f"{self.utt_id}: non-finite meta features")
        object.__setattr__(self, "base_scores", base)
        object.__setattr__(self, "text_feat", feat)


def feature_vector(example: MetaExample) -> np.ndarray:
    return np.concatenate([example.base_scores, example.text_feat])


def build_meta_examples(score_sets, embeddings, entries) -> list:
    """Align B score lists with protocol entries and text embeddings.

    Every score set must cover exactly the protocol's utterance set.
    Targets come from protocol labels (bonafide=1, spoof=0).
    """
    if not isinstance(embeddings, dict):
        embeddings = {e.utt_id: e for e in embeddings}
    protocol_utts = [e.utt_id for e in entries]
    want = set(protocol_utts)
    maps = []
    for i, trials in enumerate(score_sets):
        got = {t.utt_id for t in trials}
        if got != want:
            missing = sorted(want - got)[:3]
            extra = sorted(got - want)[:3]
            raise CoverageMismatch(
                f"score set {i} does not match the protocol (missing {missing}, extra {extra})"
            )
        maps.append({t.utt_id: t.score for t in trials})
    examples = []
    for entry in entries:
        if entry.utt_id not in embeddings:
            raise MissingEmbedding(f"no embedding for {entry.utt_id!r}")
        scores = np.array([m[entry.utt_id] for m in maps])
        feat = pool_text_vector(embeddings[entry.utt_id])
        target = 1.0 if entry.label == "bonafide" else 0.0
        examples.append(MetaExample(entry.utt_id, scores, feat, target))
    return examples


# ---------------------------------------------------------------------------
# Regression trees


@dataclass
class TreeNode:
    value: float = 0.0
    feature: Optional[int] = None
    threshold: float = 0.0
    left: Optional["TreeNode"] = None
    right: Optional["TreeNode"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"value": float(self.value)}
        return {
            "feature": int(self.feature),
            "threshold": float(self.threshold),
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "value" in d:
            return cls(value=float(d["value"]))
        if not {"feature", "threshold", "left", "right"} <= set(d):
            raise BadJson(f"malformed tree node: {sorted(d)}")
        return cls(
            feature=int(d["feature"]),
            threshold=float(d["threshold"]),
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
        )


def _best_split(x_node: np.ndarray, y_node: np.ndarray, feat_idx: np.ndarray):
    """Exact enumeration: per candidate feature, scan every boundary
    between distinct sorted values and minimize summed child SSE."""
    n = len(y_node)
    xf = x_node[:, feat_idx]
    order = np.argsort(xf, axis=0, kind="stable")
    xs = np.take_along_axis(xf, order, axis=0)
    ys = y_node[order]
    csum = np.cumsum(ys, axis=0)
    csq = np.cumsum(ys * ys, axis=0)
    left_n = np.arange(1, n, dtype=np.float64)[:, None]
    right_n = n - left_n
    left_sum, left_sq = csum[:-1], csq[:-1]
    right_sum = csum[-1] - left_sum
    right_sq = csq[-1] - left_sq
    sse = (left_sq - left_sum**2 / left_n) + (right_sq - right_sum**2 / right_n)
    sse = np.where(xs[:-1] < xs[1:], sse, np.inf)
    pos = np.argmin(sse, axis=0)
    per_feat = sse[pos, np.arange(len(feat_idx))]
    best = int(np.argmin(per_feat))
    if not np.isfinite(per_feat[best]):
        return None
    row = pos[best]
    threshold = (xs[row, best] + xs[row + 1, best]) / 2.0
    return int(feat_idx[best]), float(threshold), float(per_feat[best])


def _node_sse(y_node: np.ndarray) -> float:
    return float(np.sum((y_node - y_node.mean()) ** 2))


def fit_tree(x: np.ndarray, y: np.ndarray, max_depth: int, rng=None, n_feats: Optional[int] = None) -> TreeNode:
    d = x.shape[1]

    def grow(idx, depth):
        y_node = y[idx]
        leaf = TreeNode(value=float(y_node.mean()))
        if depth == 0 or len(idx) < 2 or np.all(y_node == y_node[0]):
            return leaf
        if rng is not None and n_feats is not None and n_feats < d:
            feat_idx = np.sort(rng.choice(d, size=n_feats, replace=False))
        else:
            feat_idx = np.arange(d)
        found = _best_split(x[idx], y_node, feat_idx)
        if found is None:
            return leaf
        feature, threshold, split_sse = found
        if split_sse >= _node_sse(y_node) - 1e-12:
            return leaf
        mask = x[idx, feature] <= threshold
        node = TreeNode(value=leaf.value, feature=feature, threshold=threshold)
        node.left = grow(idx[mask], depth - 1)
        node.right = grow(idx[~mask], depth - 1)
        return node

    return grow(np.arange(len(y)), max_depth)


def predict_tree(tree: TreeNode, x_rows: np.ndarray) -> np.ndarray:
    out = np.empty(len(x_rows))
    for i, row in enumerate(x_rows):
        node = tree
        while not node.is_leaf:
            node = node.left if row[node.feature] <= node.threshold else node.right
        out[i] = node.value
    return out


# ---------------------------------------------------------------------------
# The three regressors


@dataclass
class RidgeModel:
    weights: np.ndarray
    intercept: float
    lam: float


def fit_ridge(x: np.ndarray, y: np.ndarray, lam: float = 1.0) -> RidgeModel:
    """Normal equations on centered data; the intercept is unpenalized."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if lam < 0:
        raise BadConfig("ridge lambda must be >= 0")
    mu_x = x.mean(axis=0)
    mu_y = y.mean()
    xc = x - mu_x
    yc = y - mu_y
    d = x.shape[1]
    if lam == 0.0 and np.linalg.matrix_rank(xc) < d:
        raise SingularSystem("collinear features with lambda=0; the normal equations are singular")
    gram = xc.T @ xc + lam * np.eye(d)
    try:
        w = np.linalg.solve(gram, xc.T @ yc)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return RidgeModel(w, float(mu_y - mu_x @ w), float(lam))


def predict_ridge(m: RidgeModel, x_rows: np.ndarray) -> np.ndarray:
    return np.asarray(x_rows, dtype=np.float64) @ m.weights + m.intercept


@dataclass
class GbmModel:
    init: float
    trees: list
    shrinkage: float


def fit_gbm(x, y, rounds: int = 100, depth: int = 3, shrinkage: float = 0.1) -> GbmModel:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if rounds < 0:
        raise BadConfig("rounds must be >= 0")
    init = float(y.mean())
    pred = np.full(len(y), init)
    trees = []
    for _ in range(rounds):
        tree = fit_tree(x, y - pred, depth)
        trees.append(tree)
        pred += shrinkage * predict_tree(tree, x)
    return GbmModel(init, trees, float(shrinkage))


def predict_gbm(m: GbmModel, x_rows: np.ndarray) -> np.ndarray:
    x_rows = np.asarray(x_rows, dtype=np.float64)
    pred = np.full(len(x_rows), m.init)
    for tree in m.trees:
        pred += m.shrinkage * predict_tree(tree, x_rows)
    return pred


@dataclass
class ForestModel:
    trees: list
    seeds: list
    feature_frac: float


def fit_forest(
    x,
    y,
    n_trees: int = 100,
    max_depth: int = 6,
    feature_frac: float = 1.0 / 3.0,
    seed: int = 0,
    bootstrap: bool = True,
) -> ForestModel:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if n_trees < 1:
        raise BadConfig("n_trees must be >= 1")
    d = x.shape[1]
    n_feats = max(1, min(d, math.ceil(feature_frac * d)))
    trees = []
    seeds = []
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        seeds.append(t)
        idx = rng.integers(0, len(y), size=len(y)) if bootstrap else np.arange(len(y))
        trees.append(fit_tree(x[idx], y[idx], max_depth, rng=rng, n_feats=n_feats))
    return ForestModel(trees, seeds, float(feature_frac))


def predict_forest(m: ForestModel, x_rows: np.ndarray) -> np.ndarray:
    x_rows = np.asarray(x_rows, dtype=np.float64)
    total = np.zeros(len(x_rows))
    for tree in m.trees:
        total += predict_tree(tree, x_rows)
    return total / len(m.trees)


# ---------------------------------------------------------------------------
# Stacking


@dataclass(frozen=True)
class StackConfig:
    ridge_lambda: float = 1.0
    gbm_rounds: int = 100
    gbm_depth: int = 3
    gbm_shrinkage: float = 0.1
    forest_trees: int = 100
    forest_depth: int = 6
    feature_frac: float = 1.0 / 3.0
    bootstrap: bool = True
    seed: int = 0
    grid_step: float = 0.05


@dataclass
class StackedModel:
    gbm: GbmModel
    forest: ForestModel
    ridge: RidgeModel
    combine_weights: tuple
    n_features: int

    def to_dict(self) -> dict:
        return {
            "combine_weights": [float(w) for w in self.combine_weights],
            "n_features": int(self.n_features),
            "gbm": {
                "init": float(self.gbm.init),
                "shrinkage": float(self.gbm.shrinkage),
                "trees": [t.to_dict() for t in self.gbm.trees],
            },
            "forest": {
                "feature_frac": float(self.forest.feature_frac),
                "seeds": [int(s) for s in self.forest.seeds],
                "trees": [t.to_dict() for t in self.forest.trees],
            },
            "ridge": {
                "weights": [float(v) for v in self.ridge.weights],
                "intercept": float(self.ridge.intercept),
                "lambda": float(self.ridge.lam),
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StackedModel":
        try:
            weights = tuple(float(w) for w in d["combine_weights"])
            gbm = GbmModel(
                float(d["gbm"]["init"]),
                [TreeNode.from_dict(t) for t in d["gbm"]["trees"]],
                float(d["gbm"]["shrinkage"]),
            )
            forest = ForestModel(
                [TreeNode.from_dict(t) for t in d["forest"]["trees"]],
                [int(s) for s in d["forest"]["seeds"]],
                float(d["forest"]["feature_frac"]),
            )
            ridge = RidgeModel(
                np.array([float(v) for v in d["ridge"]["weights"]]),
                float(d["ridge"]["intercept"]),
                float(d["ridge"]["lambda"]),
            )
            n_features = int(d["n_features"])
        except (KeyError, ValueError, TypeError) as exc:
            raise BadJson(f"malformed ensemble model: {exc}") from exc
        if len(weights) != 3 or any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise BadConfig(f"combine_weights must lie on the 3-simplex, got {weights}")
        if ridge.lam < 0:
            raise BadConfig("ridge lambda must be >= 0")
        return cls(gbm, forest, ridge, weights, n_features)


def simplex_grid(step: float = 0.05) -> list:
    """All grid points on the 3-simplex plus the exact-uniform candidate."""
    n = round(1.0 / step)
    combos = []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            combos.append((i / n, j / n, (n - i - j) / n))
    combos.append((1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0))
    return combos


def choose_combine_weights(preds: np.ndarray, y: np.ndarray, step: float = 0.05) -> tuple:
    """Minimize MSE of the convex combination over the simplex grid.

    Ties within a 1e-9 relative band prefer the uniform candidate, then
    earliest enumeration order.
    """
    preds = np.asarray(preds, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    combos = simplex_grid(step)
    c = np.array(combos)
    errs = preds @ c.T - y[:, None]
    mses = np.mean(errs * errs, axis=0)
    best = float(mses.min())
    band = best * (1.0 + 1e-9) + 1e-18
    uniform = combos[-1]
    if mses[-1] <= band:
        return uniform
    for combo, mse in zip(combos, mses):
        if mse <= band:
            return combo
    raise AssertionError("unreachable: minimum not within its own band")


def _fit_three(x, y, cfg: StackConfig):
    gbm = fit_gbm(x, y, cfg.gbm_rounds, cfg.gbm_depth, cfg.gbm_shrinkage)
    forest = fit_forest(
        x, y, cfg.forest_trees, cfg.forest_depth, cfg.feature_frac, cfg.seed, cfg.bootstrap
    )
    ridge = fit_ridge(x, y, cfg.ridge_lambda)
    return gbm, forest, ridge


def fit_stacked(examples, folds: int = 5, cfg: StackConfig = StackConfig(), return_diagnostics: bool = False):
    if folds < 2:
        raise BadConfig("need at least 2 folds")
    examples = list(examples)
    if len(examples) < folds:
        raise TooFewExamples(f"{len(examples)} examples cannot fill {folds} folds")
    if any(e.target is None for e in examples):
        raise BadConfig("every example needs a target to fit the stack")
    x = np.stack([feature_vector(e) for e in examples])
    y = np.array([e.target for e in examples], dtype=np.float64)
    n = len(y)

    rng = np.random.default_rng(cfg.seed)
    fold_of = np.empty(n, dtype=np.int64)
    for k, chunk in enumerate(np.array_split(rng.permutation(n), folds)):
        fold_of[chunk] = k

    oof = np.zeros((n, 3))
    fold_train_indices = []
    for k in range(folds):
        hold = np.flatnonzero(fold_of == k)
        rest = np.flatnonzero(fold_of != k)
        fold_train_indices.append(rest)
        gbm, forest, ridge = _fit_three(x[rest], y[rest], cfg)
        oof[hold, 0] = predict_gbm(gbm, x[hold])
        oof[hold, 1] = predict_forest(forest, x[hold])
        oof[hold, 2] = predict_ridge(ridge, x[hold])

    weights = choose_combine_weights(oof, y, cfg.grid_step)
    gbm, forest, ridge = _fit_three(x, y, cfg)
    model = StackedModel(gbm, forest, ridge, weights, x.shape[1])
    if return_diagnostics:
        diag = {
            "fold_of": fold_of,
            "fold_train_indices": fold_train_indices,
            "oof_predictions": oof,
            "targets": y,
        }
        return model, diag
    return model


def predict_stacked(model: StackedModel, x) -> np.ndarray:
    x_rows = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x_rows.shape[1] != model.n_features:
        raise DimMismatch(f"expected {model.n_features} features, got {x_rows.shape[1]}")
    w = model.combine_weights
    return (
        w[0] * predict_gbm(model.gbm, x_rows)
        + w[1] * predict_forest(model.forest, x_rows)
        + w[2] * predict_ridge(model.ridge, x_rows)
    )


def predict_stacked_one(model: StackedModel, x) -> float:
    return float(predict_stacked(model, np.asarray(x).reshape(1, -1))[0])


# ---------------------------------------------------------------------------
# Ensemble model file


def save_ensemble(path, model: StackedModel) -> None:
    blob = json.dumps(model.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ENSEMBLE_MAGIC)
        fh.write(struct.pack("<II", ENSEMBLE_VERSION, len(blob)))
        fh.write(blob)


def load_ensemble(path) -> StackedModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != ENSEMBLE_MAGIC:
            if magic in _OTHER_MAGICS:
                raise WrongKind(f"{path}: this is a {magic.decode()} file, not an ensemble model")
            raise BadHeader(f"{path}: not an ensemble model file")
        head = fh.read(8)
        if len(head) < 8:
            raise TruncatedFile(f"{path}: truncated header")
        version, blob_len = struct.unpack("<II", head)
        if version != ENSEMBLE_VERSION:
            raise BadHeader(f"{path}: unsupported ensemble version {version}")
        blob = fh.read(blob_len)
        if len(blob) != blob_len:
            raise TruncatedFile(f"{path}: truncated model body")
        if fh.read(1):
            raise BadHeader(f"{path}: trailing data after model body")
    try:
        d = json.loads(blob.decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise BadJson(f"{path}: {exc}") from exc
    return StackedModel.from_dict(d)
