"""Fault classifiers (MLP, KNN, ID3 tree, PCA) and their evaluation.

All classifiers work on integer class indices into a fixed ``class_order``
and expose ``predict(features) -> indices``. Every tie rule falls back to
the lowest class index so results are reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .eps_plant import FaultKind
from .errors import ConfigError, DataError, LabelError, ShapeError, StateError
from .sysid import MlpRegressor, TrainConfig, predict, train_lm

CLASSIFIERS = ("mlp", "knn", "dt", "pca")


class Classifier(Protocol):
    class_order: tuple[FaultKind, ...]

    def predict(self, features: np.ndarray) -> np.ndarray: ...


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray  # class indices into class_order
    class_order: tuple[FaultKind, ...]

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2:
            raise ShapeError("features must be a sample x feature matrix")
        self.labels = np.asarray(self.labels, dtype=int)
        if self.labels.shape != (self.features.shape[0],):
            raise ShapeError(f"{self.features.shape[0]} rows vs {self.labels.size} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_order)):
            raise LabelError("label index outside class_order")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features must be finite")

    @classmethod
    def from_kinds(
        cls, features: np.ndarray, kinds: Sequence[FaultKind], class_order: Sequence[FaultKind]
    ) -> "LabeledDataset":
        order = tuple(FaultKind(c) for c in class_order)
        lookup = {c: i for i, c in enumerate(order)}
        try:
            idx = [lookup[FaultKind(k)] for k in kinds]
        except (KeyError, ValueError) as exc:
            raise LabelError(f"label {exc.args[0]!r} not in class_order") from None
        return cls(features, np.array(idx, dtype=int), order)

    @property
    def n(self) -> int:
        return self.labels.size

    def kinds(self) -> list[FaultKind]:
        return [self.class_order[i] for i in self.labels]

    def subset(self, idx: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx], self.class_order)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.class_order))


def _check_width(features: np.ndarray, width: int) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != width:
        raise ShapeError(f"expected {width} features, got {x.shape[1]}")
    return x


# --------------------------------------------------------------------------
# MLP
# --------------------------------------------------------------------------


@dataclass
class MlpClassifier:
    core: MlpRegressor
    class_order: tuple[FaultKind, ...]

    def scores(self, features: np.ndarray) -> np.ndarray:
        return predict(self.core, _check_width(features, self.core.n_in))

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(self.scores(features), axis=1)  # first maximum wins ties


def mlp_classifier_train(data: LabeledDataset, config: TrainConfig) -> MlpClassifier:
    counts = data.class_counts()
    if np.count_nonzero(counts) < 2:
        raise DataError("MLP classifier needs at least two classes")
    if counts.min() < 10:
        raise DataError("every class needs at least 10 samples")
    targets = np.eye(len(data.class_order))[data.labels]
    result = train_lm(data.features, targets, config)
    return MlpClassifier(result.model, data.class_order)


def mlp_classifier_predict(model: MlpClassifier, features: np.ndarray) -> list[FaultKind]:
    return [model.class_order[i] for i in model.predict(features)]


# --------------------------------------------------------------------------
# KNN
# --------------------------------------------------------------------------


@dataclass
class KnnClassifier:
    k: int
    points: np.ndarray
    labels: np.ndarray
    class_order: tuple[FaultKind, ...]

    def predict(self, features: np.ndarray, chunk: int = 512) -> np.ndarray:
        if self.points.shape[0] == 0:
            raise StateError("KNN store is empty")
        if not 1 <= self.k <= self.points.shape[0]:
            raise ConfigError("k", f"must lie in [1, {self.points.shape[0]}], got {self.k}")
        q = _check_width(features, self.points.shape[1])
        out = np.empty(q.shape[0], dtype=int)
        n_cls = len(self.class_order)
        for start in range(0, q.shape[0], chunk):
            block = q[start : start + chunk]
            d = np.sqrt(((block[:, None, :] - self.points[None, :, :]) ** 2).sum(axis=2))
            # stable sort keeps stored order among equal distances
            nearest = np.argsort(d, axis=1, kind="stable")[:, : self.k]
            for row, idx in enumerate(nearest):
                labs = self.labels[idx]
                votes = np.bincount(labs, minlength=n_cls)
                dist_sum = np.bincount(labs, weights=d[row, idx], minlength=n_cls)
                cand = np.flatnonzero(votes == votes.max())
                best = cand[np.argmin(dist_sum[cand])]  # argmin keeps the lowest index on ties
                out[start + row] = best
        return out


def knn_fit(data: LabeledDataset, k: int) -> KnnClassifier:
    if data.n == 0:
        raise StateError("KNN store is empty")
    if not 1 <= k <= data.n:
        raise ConfigError("k", f"must lie in [1, {data.n}], got {k}")
    return KnnClassifier(int(k), data.features.copy(), data.labels.copy(), data.class_order)


def knn_predict(clf: KnnClassifier, query: Sequence[float]) -> FaultKind:
    return clf.class_order[int(clf.predict(np.asarray(query, dtype=float)[None, :])[0])]


# --------------------------------------------------------------------------
# ID3 decision tree
# --------------------------------------------------------------------------


@dataclass
class TreeNode:
    label: int  # majority class at this node
    feature: int = -1  # -1 marks a leaf
    threshold: float = math.nan
    left: int = -1
    right: int = -1


@dataclass
class DecisionTree:
    nodes: list[TreeNode]
    n_features: int
    class_order: tuple[FaultKind, ...]

    def depth(self, node: int = 0) -> int:
        n = self.nodes[node]
        if n.feature < 0:
            return 0
        return 1 + max(self.depth(n.left), self.depth(n.right))

    def predict(self, features: np.ndarray) -> np.ndarray:
        x = _check_width(features, self.n_features)
        out = np.empty(x.shape[0], dtype=int)
        for i, row in enumerate(x):
            node = self.nodes[0]
            while node.feature >= 0:
                node = self.nodes[node.left if row[node.feature] < node.threshold else node.right]
            out[i] = node.label
        return out


def entropy(counts: np.ndarray) -> float:
    """Shannon entropy in bits of a class-count vector."""
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-np.sum(p * np.log2(p)))


def _entropy_rows(counts: np.ndarray) -> np.ndarray:
    total = counts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(counts > 0, counts / total, 1.0)
        return -np.sum(np.where(counts > 0, p * np.log2(p), 0.0), axis=1)


def split_candidates(
    x: np.ndarray, y: np.ndarray, n_classes: int, min_leaf: int = 1
) -> list[tuple[int, float, float]]:
    """All (feature, midpoint threshold, information gain) splits of one node."""
    n = y.size
    parent = entropy(np.bincount(y, minlength=n_classes))
    out: list[tuple[int, float, float]] = []
    for f in range(x.shape[1]):
        order = np.argsort(x[:, f], kind="stable")
        xs, ys = x[order, f], y[order]
        cum = np.cumsum(np.eye(n_classes, dtype=np.int64)[ys], axis=0)
        cut = np.flatnonzero(xs[1:] > xs[:-1])  # left side holds rows 0..cut
        n_left = cut + 1
        ok = (n_left >= min_leaf) & (n - n_left >= min_leaf)
        cut, n_left = cut[ok], n_left[ok]
        if cut.size == 0:
            continue
        left = cum[cut]
        right = cum[-1] - left
        gain = parent - (n_left / n) * _entropy_rows(left) - ((n - n_left) / n) * _entropy_rows(right)
        thr = (xs[cut] + xs[cut + 1]) / 2.0
        out.extend(zip([f] * cut.size, thr.tolist(), gain.tolist()))
    return out


def id3_train(data: LabeledDataset, max_depth: int | None = None, min_leaf: int = 1) -> DecisionTree:
    """Grow a binary ID3 tree with midpoint thresholds on continuous features.

    The split with the largest gain wins; ties keep the lowest feature index
    and then the lowest threshold. A node becomes a leaf when it is pure, at
    ``max_depth``, or when no split leaves ``min_leaf`` rows on each side.
    """
    if data.n < 1:
        raise DataError("id3_train needs at least one sample")
    if max_depth is not None and max_depth < 0:
        raise ConfigError("max_depth", "must be >= 0")
    if min_leaf < 1:
        raise ConfigError("min_leaf", "must be >= 1")
    n_cls = len(data.class_order)
    nodes: list[TreeNode] = []

    def grow(idx: np.ndarray, depth: int) -> int:
        y = data.labels[idx]
        counts = np.bincount(y, minlength=n_cls)
        node_id = len(nodes)
        nodes.append(TreeNode(label=int(np.argmax(counts))))
        if np.count_nonzero(counts) <= 1 or (max_depth is not None and depth >= max_depth):
            return node_id
        cands = split_candidates(data.features[idx], y, n_cls, min_leaf)
        if not cands:
            return node_id
        best = max(range(len(cands)), key=lambda i: (cands[i][2], -i))
        f, thr, _ = cands[best]
        go_left = data.features[idx, f] < thr
        nodes[node_id].feature, nodes[node_id].threshold = f, thr
        nodes[node_id].left = grow(idx[go_left], depth + 1)
        nodes[node_id].right = grow(idx[~go_left], depth + 1)
        return node_id

    grow(np.arange(data.n), 0)
    return DecisionTree(nodes, data.features.shape[1], data.class_order)


def id3_predict(tree: DecisionTree, features: np.ndarray) -> list[FaultKind]:
    return [tree.class_order[i] for i in tree.predict(features)]


# --------------------------------------------------------------------------
# PCA
# --------------------------------------------------------------------------


@dataclass
class PcaModel:
    mean: np.ndarray
    eigenvectors: np.ndarray  # feature x component, columns by descending eigenvalue
    eigenvalues: np.ndarray
    n_components: int


def pca_fit(features: np.ndarray, n_components: int) -> PcaModel:
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError("pca_fit needs a matrix with at least 2 samples")
    if not 1 <= n_components <= x.shape[1]:
        raise ConfigError("n_components", f"must lie in [1, {x.shape[1]}]")
    if not np.all(np.isfinite(x)):
        raise DataError("features must be finite")
    mean = x.mean(axis=0)
    xc = (x - mean).T  # feature x sample, so C = X X' / N
    cov = xc @ xc.T / x.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:n_components]
    return PcaModel(mean, vecs[:, order], vals[order], n_components)


def pca_project(model: PcaModel, features: np.ndarray) -> np.ndarray:
    x = _check_width(features, model.mean.size)
    return (x - model.mean) @ model.eigenvectors


@dataclass
class PcaClassifier:
    """Nearest class mean along the first principal component."""

    model: PcaModel
    class_means_1d: np.ndarray  # NaN for classes absent from training
    class_order: tuple[FaultKind, ...]

    def predict(self, features: np.ndarray) -> np.ndarray:
        z = pca_project(self.model, features)[:, 0]
        d = np.abs(z[:, None] - self.class_means_1d[None, :])
        d = np.where(np.isnan(d), np.inf, d)
        return np.argmin(d, axis=1)


def pca_train(data: LabeledDataset, n_components: int = 1) -> PcaClassifier:
    model = pca_fit(data.features, n_components)
    z = pca_project(model, data.features)[:, 0]
    means = np.full(len(data.class_order), np.nan)
    for c in range(len(data.class_order)):
        sel = data.labels == c
        if sel.any():
            means[c] = z[sel].mean()
    return PcaClassifier(model, means, data.class_order)


def pca_classify(model: PcaModel, train: LabeledDataset, query: Sequence[float]) -> FaultKind:
    z = pca_project(model, train.features)[:, 0]
    means = np.full(len(train.class_order), np.nan)
    for c in range(len(train.class_order)):
        sel = train.labels == c
        if sel.any():
            means[c] = z[sel].mean()
    clf = PcaClassifier(model, means, train.class_order)
    return train.class_order[int(clf.predict(np.asarray(query, dtype=float)[None, :])[0])]


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows true, columns predicted
    class_order: tuple[FaultKind, ...]

    def per_class_accuracy(self) -> list[float | None]:
        rows = self.counts.sum(axis=1)
        return [None if r == 0 else float(self.counts[i, i] / r) for i, r in enumerate(rows)]

    def overall_accuracy(self) -> float:
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else 0.0

    def to_text(self) -> str:
        names = [c.value for c in self.class_order]
        width = max(max(len(n) for n in names), len(str(int(self.counts.max(initial=0)))), 9)
        head = " " * width + " | " + " ".join(n.rjust(width) for n in names)
        lines = ["true \\ predicted", head, "-" * len(head)]
        for name, row in zip(names, self.counts):
            lines.append(name.rjust(width) + " | " + " ".join(str(int(v)).rjust(width) for v in row))
        return "\n".join(lines)


def confusion_matrix(
    true_labels: Sequence[FaultKind], predicted_labels: Sequence[FaultKind], class_order: Sequence[FaultKind]
) -> ConfusionMatrix:
    if len(true_labels) != len(predicted_labels):
        raise ShapeError("true and predicted label sequences differ in length")
    order = tuple(FaultKind(c) for c in class_order)
    lookup = {c: i for i, c in enumerate(order)}
    counts = np.zeros((len(order), len(order)), dtype=np.int64)
    for t, p in zip(true_labels, predicted_labels):
        try:
            counts[lookup[FaultKind(t)], lookup[FaultKind(p)]] += 1
        except (KeyError, ValueError):
            raise LabelError(f"label pair ({t!r}, {p!r}) outside class_order") from None
    return ConfusionMatrix(counts, order)


def confusion_from_indices(y_true: np.ndarray, y_pred: np.ndarray, class_order) -> ConfusionMatrix:
    n = len(class_order)
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return ConfusionMatrix(counts, tuple(class_order))


def resubstitution_loss(clf: Classifier, data: LabeledDataset) -> float:
    if data.n == 0:
        raise DataError("resubstitution loss needs data")
    return float(np.mean(clf.predict(data.features) != data.labels))


def stratified_folds(data: LabeledDataset, k_folds: int, seed: int) -> np.ndarray:
    """Fold id per sample. Each class is shuffled and dealt round-robin.

    The deal continues across classes, so with ``k_folds == n`` every fold
    holds exactly one sample (leave-one-out).
    """
    if k_folds < 2 or k_folds > data.n:
        raise ConfigError("k_folds", f"must lie in [2, {data.n}], got {k_folds}")
    counts = data.class_counts()
    if k_folds < data.n and counts[counts > 0].min() < k_folds:
        raise DataError(f"a class has fewer samples than the {k_folds} folds needed to stratify")
    rng = np.random.default_rng(seed)
    fold = np.empty(data.n, dtype=int)
    pos = 0
    for c in range(len(data.class_order)):
        idx = rng.permutation(np.flatnonzero(data.labels == c))
        fold[idx] = (pos + np.arange(idx.size)) % k_folds
        pos += idx.size
    return fold


def kfold_loss(
    trainer: Callable[[LabeledDataset], Classifier], data: LabeledDataset, k_folds: int = 5, seed: int = 0
) -> float:
    """Mean held-out misclassification rate over stratified folds."""
    fold = stratified_folds(data, k_folds, seed)
    losses = []
    for f in range(k_folds):
        test = fold == f
        clf = trainer(data.subset(np.flatnonzero(~test)))
        losses.append(float(np.mean(clf.predict(data.features[test]) != data.labels[test])))
    return float(np.mean(losses))


@dataclass
class KSelection:
    chosen_k: int
    resubstitution: dict[int, float]
    kfold: dict[int, float]


def knn_select_k(
    data: LabeledDataset, k_candidates: Sequence[int], folds: int = 5, seed: int = 0
) -> KSelection:
    """Pick k by k-fold loss. Ties go to the smallest tied k above 2, else the smallest."""
    if not k_candidates:
        raise ConfigError("k_candidates", "must be nonempty")
    ks = sorted(set(int(k) for k in k_candidates))
    resub, kf = {}, {}
    for k in ks:
        resub[k] = resubstitution_loss(knn_fit(data, k), data)
        kf[k] = kfold_loss(lambda d, k=k: knn_fit(d, k), data, folds, seed)
    best = min(kf.values())
    tied = [k for k in ks if kf[k] == best]
    above = [k for k in tied if k > 2]
    return KSelection(above[0] if above else tied[0], resub, kf)


# --------------------------------------------------------------------------
# Harness
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassifyConfig:
    knn_k: int = 3
    k_folds: int = 5
    dt_max_depth: int | None = None
    dt_min_leaf: int = 1
    pca_components: int = 1
    test_fraction: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if self.knn_k < 1:
            raise ConfigError("knn_k", "must be >= 1")
        if self.k_folds < 2:
            raise ConfigError("k_folds", "must be >= 2")
        if self.dt_max_depth is not None and self.dt_max_depth < 0:
            raise ConfigError("dt_max_depth", "must be >= 0")
        if self.dt_min_leaf < 1:
            raise ConfigError("dt_min_leaf", "must be >= 1")
        if self.pca_components < 1:
            raise ConfigError("pca_components", "must be >= 1")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction", "must lie in (0, 1)")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed", "must be an unsigned integer")


def make_trainer(
    name: str, config: ClassifyConfig, train_config: TrainConfig
) -> Callable[[LabeledDataset], Classifier]:
    if name == "mlp":
        return lambda d: mlp_classifier_train(d, train_config)
    if name == "knn":
        return lambda d: knn_fit(d, config.knn_k)
    if name == "dt":
        return lambda d: id3_train(d, config.dt_max_depth, config.dt_min_leaf)
    if name == "pca":
        return lambda d: pca_train(d, config.pca_components)
    raise ConfigError("classifier", f"unknown classifier {name!r}; choose from {', '.join(CLASSIFIERS)}")


def holdout_split(data: LabeledDataset, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/test index split."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in range(len(data.class_order)):
        idx = rng.permutation(np.flatnonzero(data.labels == c))
        n_test = int(round(test_fraction * idx.size))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


@dataclass
class EvalReport:
    task: str
    classifier: str
    confusion: ConfusionMatrix
    resubstitution_loss: float
    kfold_loss: float | None
    seed: int
    config_hash: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "classifier": self.classifier,
            "class_order": [c.value for c in self.confusion.class_order],
            "confusion": self.confusion.counts.tolist(),
            "per_class_accuracy": self.confusion.per_class_accuracy(),
            "overall_accuracy": self.confusion.overall_accuracy(),
            "resubstitution_loss": self.resubstitution_loss,
            "kfold_loss": self.kfold_loss,
            "seed": self.seed,
            "config_hash": self.config_hash,
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def evaluate(
    name: str,
    data: LabeledDataset,
    config: ClassifyConfig,
    train_config: TrainConfig,
    task: str = "",
    config_hash: str = "",
    with_kfold: bool = True,
) -> EvalReport:
    """Train on a stratified split, score the held-out part, add resub and k-fold losses."""
    config.validate()
    trainer = make_trainer(name, config, train_config)
    tr, te = holdout_split(data, config.test_fraction, config.seed)
    train = data.subset(tr)
    clf = trainer(train)
    cm = confusion_from_indices(data.labels[te], clf.predict(data.features[te]), data.class_order)
    resub = resubstitution_loss(clf, train)
    kf = kfold_loss(trainer, data, config.k_folds, config.seed) if with_kfold else None
    return EvalReport(task, name, cm, resub, kf, config.seed, config_hash)


def comparison_table(reports: Sequence[EvalReport]) -> str:
    rows = [("method", "task", "accuracy (%)")]
    rows += [(r.classifier, r.task, f"{100.0 * r.confusion.overall_accuracy():.2f}") for r in reports]
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
