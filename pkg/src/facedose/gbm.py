"""From-scratch gradient-boosted regression trees with multi-output support.

Squared-error stage-wise boosting: each target starts from its training
mean and repeatedly fits a depth-bounded regression tree to the residuals,
shrunk by the learning rate.  Multi-output models are independent
per-target ensembles.  Split search and batched traversal run on the
kernels in :mod:`facedose.kernels`, so both the Numba and the NumPy
backend produce bit-identical models.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import FormatError, InsufficientData, InvalidData, ShapeMismatch

FORMAT_NAME = "facedose-gbm"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class GbmConfig:
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.05
    min_samples_leaf: int = 2
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise InvalidData(f"invalid tree configuration: {self}")
        if not (0.0 < self.learning_rate <= 1.0):
            raise InvalidData(f"learning_rate must lie in (0, 1], got {self.learning_rate}")
        if not (0.0 < self.subsample <= 1.0):
            raise InvalidData(f"subsample must lie in (0, 1], got {self.subsample}")

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
            "min_samples_leaf": self.min_samples_leaf,
            "subsample": self.subsample,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GbmConfig":
        return cls(**doc)


class _Forest:
    """Flat node storage shared by all trees of all targets."""

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.roots: list[int] = []
        self.targets: list[int] = []

    def new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1


@dataclass
class GbmModel:
    config: GbmConfig
    n_features: int
    n_targets: int
    base: np.ndarray                      # (q,)
    feature: np.ndarray                   # flat node arrays
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    targets: np.ndarray
    training_mse: list[list[float]] = field(default_factory=list)

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ShapeMismatch(f"expected (n, {self.n_features}) features, got {x.shape}")
        if not np.isfinite(x).all():
            raise InvalidData("prediction input must be finite")
        return kernels.forest_predict(
            x, self.feature, self.threshold, self.left, self.right, self.value,
            self.roots, self.targets, self.config.learning_rate, self.base,
        )

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_features,):
            raise ShapeMismatch(f"expected {self.n_features} features, got shape {x.shape}")
        return self.predict_batch(x[None, :])[0]

    def tree_depth_max(self) -> int:
        out = 0
        for root in self.roots:
            stack = [(int(root), 0)]
            while stack:
                node, d = stack.pop()
                out = max(out, d)
                if self.feature[node] >= 0:
                    stack.append((int(self.left[node]), d + 1))
                    stack.append((int(self.right[node]), d + 1))
        return out

    # -- serialization ------------------------------------------------------

    def save(self) -> bytes:
        doc = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "n_features": self.n_features,
            "n_targets": self.n_targets,
            "base": self.base.tolist(),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "roots": self.roots.tolist(),
            "targets": self.targets.tolist(),
            "training_mse": self.training_mse,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def load(cls, payload: bytes) -> "GbmModel":
        try:
            doc = json.loads(payload.decode())
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise FormatError(f"corrupt model payload: {exc}") from exc
        if doc.get("format") != FORMAT_NAME:
            raise FormatError(f"not a {FORMAT_NAME} payload")
        if doc.get("version") != FORMAT_VERSION:
            raise FormatError(f"unsupported model version {doc.get('version')}")
        try:
            return cls(
                config=GbmConfig.from_dict(doc["config"]),
                n_features=doc["n_features"],
                n_targets=doc["n_targets"],
                base=np.asarray(doc["base"], dtype=np.float64),
                feature=np.asarray(doc["feature"], dtype=np.int64),
                threshold=np.asarray(doc["threshold"], dtype=np.float64),
                left=np.asarray(doc["left"], dtype=np.int64),
                right=np.asarray(doc["right"], dtype=np.int64),
                value=np.asarray(doc["value"], dtype=np.float64),
                roots=np.asarray(doc["roots"], dtype=np.int64),
                targets=np.asarray(doc["targets"], dtype=np.int64),
                training_mse=doc["training_mse"],
            )
        except KeyError as exc:
            raise FormatError(f"model payload missing field {exc}") from exc

    @classmethod
    def stack(cls, models: list["GbmModel"]) -> "GbmModel":
        """Merge single-target models into one multi-output model."""
        if not models:
            raise InsufficientData("no models to stack")
        p = models[0].n_features
        cfg = models[0].config
        forest = _Forest()
        base = []
        mse = []
        for t, m in enumerate(models):
            if m.n_features != p or m.n_targets != 1 or m.config != cfg:
                raise ShapeMismatch("stacked models must share features and config")
            offset = len(forest.feature)
            forest.feature.extend(m.feature.tolist())
            forest.threshold.extend(m.threshold.tolist())
            forest.left.extend((m.left + np.where(m.left >= 0, offset, 0)).tolist())
            forest.right.extend((m.right + np.where(m.right >= 0, offset, 0)).tolist())
            forest.value.extend(m.value.tolist())
            forest.roots.extend((m.roots + offset).tolist())
            forest.targets.extend([t] * len(m.roots))
            base.append(float(m.base[0]))
            mse.append(m.training_mse[0])
        return _finalize(forest, cfg, p, len(models), np.asarray(base), mse)


def _finalize(forest: _Forest, cfg: GbmConfig, p: int, q: int, base: np.ndarray,
              mse: list[list[float]]) -> GbmModel:
    return GbmModel(
        config=cfg,
        n_features=p,
        n_targets=q,
        base=base,
        feature=np.asarray(forest.feature, dtype=np.int64),
        threshold=np.asarray(forest.threshold, dtype=np.float64),
        left=np.asarray(forest.left, dtype=np.int64),
        right=np.asarray(forest.right, dtype=np.int64),
        value=np.asarray(forest.value, dtype=np.float64),
        roots=np.asarray(forest.roots, dtype=np.int64),
        targets=np.asarray(forest.targets, dtype=np.int64),
        training_mse=mse,
    )


def _build_node(forest: _Forest, x: np.ndarray, g: np.ndarray, depth: int,
                cfg: GbmConfig) -> int:
    node = forest.new_node()
    n = x.shape[0]
    if depth < cfg.max_depth and n >= 2 * cfg.min_samples_leaf:
        feat, thr, _ = kernels.best_split(x, g, cfg.min_samples_leaf)
        if feat >= 0:
            mask = x[:, feat] <= thr
            forest.feature[node] = int(feat)
            forest.threshold[node] = float(thr)
            forest.left[node] = _build_node(forest, x[mask], g[mask], depth + 1, cfg)
            forest.right[node] = _build_node(forest, x[~mask], g[~mask], depth + 1, cfg)
            return node
    forest.value[node] = float(np.mean(g))
    return node


def train(x: np.ndarray, y: np.ndarray, cfg: GbmConfig) -> GbmModel:
    """Stage-wise least-squares boosting, one independent chain per target.

    Training MSE is recorded per stage and, for full-sample fits, asserted
    non-increasing (guaranteed for squared loss with mean leaves).
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"incompatible training shapes {x.shape} / {y.shape}")
    if x.shape[0] < 2:
        raise InsufficientData(f"need at least 2 samples, got {x.shape[0]}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise InvalidData("training data must be finite")
    n, p = x.shape
    q = y.shape[1]

    forest = _Forest()
    base = np.empty(q)
    mse_curves: list[list[float]] = []
    for t in range(q):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(t,)))
        base[t] = float(np.mean(y[:, t]))
        resid = y[:, t] - base[t]
        curve = [float(np.mean(resid ** 2))]
        for _ in range(cfg.n_trees):
            if cfg.subsample < 1.0:
                m = max(2 * cfg.min_samples_leaf, int(round(cfg.subsample * n)))
                rows = np.sort(rng.choice(n, size=min(m, n), replace=False))
            else:
                rows = slice(None)
            root = _build_node(forest, x[rows], resid[rows], 0, cfg)
            forest.roots.append(root)
            forest.targets.append(t)
            pred = kernels.forest_predict(
                x,
                np.asarray(forest.feature, dtype=np.int64),
                np.asarray(forest.threshold, dtype=np.float64),
                np.asarray(forest.left, dtype=np.int64),
                np.asarray(forest.right, dtype=np.int64),
                np.asarray(forest.value, dtype=np.float64),
                np.asarray([root], dtype=np.int64),
                np.asarray([0], dtype=np.int64),
                cfg.learning_rate,
                np.zeros(1),
            )[:, 0]
            resid = resid - pred
            stage_mse = float(np.mean(resid ** 2))
            if cfg.subsample >= 1.0 and stage_mse > curve[-1] + 1e-12:
                raise AssertionError(
                    f"training MSE increased at a full-sample stage: {curve[-1]} -> {stage_mse}"
                )
            curve.append(stage_mse)
        mse_curves.append(curve)
    return _finalize(forest, cfg, p, q, base, mse_curves)


def load_feature_csv(path, target_cols: int = 0):
    """Read a numeric CSV (optional header) into (X, Y) matrices.

    The last ``target_cols`` columns become Y; with 0, Y is None.
    """
    rows = []
    with open(path, newline="") as fh:
        for record in csv.reader(fh):
            if not record:
                continue
            try:
                rows.append([float(v) for v in record])
            except ValueError:
                if rows:
                    raise FormatError(f"non-numeric row in {path}: {record}")
                continue  # header line
    if not rows:
        raise FormatError(f"no numeric rows in {path}")
    data = np.asarray(rows, dtype=np.float64)
    if target_cols <= 0:
        return data, None
    if target_cols >= data.shape[1]:
        raise FormatError(f"target_cols={target_cols} leaves no features")
    return data[:, :-target_cols], data[:, -target_cols:]
