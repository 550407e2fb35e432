"""Severity regression: standardization, boosted trees, feature elimination, LOPO-CV.

Feature matrices travel with their column names; every function that picks columns
does so by name so that model files stay valid across tables with different layouts.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import stats
from .features import CATALOG_VERSION, prune_correlated
from .trees import REL_TOL, RegressionTree, _boost, _predict_ensemble, sort_order, sorted_values, tree_from_rows

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
SCORE_MIN, SCORE_MAX = 0.0, 4.0


class MissingFeature(KeyError):
    pass


# -- scaling ------------------------------------------------------------------

@dataclass
class ScalerParams:
    features: list
    mean: np.ndarray
    std: np.ndarray
    dropped: list = field(default_factory=list)

    def subset(self, names):
        idx = [self.features.index(n) for n in names]
        return ScalerParams(list(names), self.mean[idx].copy(), self.std[idx].copy())

    def to_dict(self):
        return {"features": list(self.features), "mean": [float(v) for v in self.mean],
                "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["features"]), np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))


def fit_scaler(X, names) -> ScalerParams:
    """Per-column mean and population std over the finite training values.

    Columns with zero variance (or no finite value) are left out of the scaler.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2:
        raise ValueError("fit_scaler needs at least 2 rows")
    keep, means, stds, dropped = [], [], [], []
    for j, name in enumerate(names):
        col = X[:, j]
        col = col[np.isfinite(col)]
        sd = float(col.std()) if col.size else 0.0
        if col.size < 2 or sd == 0.0:
            dropped.append(name)
            continue
        keep.append(name)
        means.append(float(col.mean()))
        stds.append(sd)
    if dropped:
        log.warning("dropping %d zero-variance feature(s): %s", len(dropped), ", ".join(dropped))
    return ScalerParams(keep, np.array(means), np.array(stds), dropped)


def apply_scaler(params: ScalerParams, X, names):
    """Standardize the scaler's columns, taken from ``X`` by name; NaN maps to 0 (the training mean)."""
    Z = select_columns(X, names, params.features)
    Z = (Z - params.mean) / params.std
    return np.where(np.isfinite(Z), Z, 0.0)


def select_columns(X, names, wanted):
    X = np.asarray(X, dtype=float)
    pos = {n: i for i, n in enumerate(names)}
    missing = [n for n in wanted if n not in pos]
    if missing:
        raise MissingFeature(f"missing feature column(s): {', '.join(missing)}")
    return X[:, [pos[n] for n in wanted]]


# -- boosting -----------------------------------------------------------------

@dataclass(frozen=True)
class GBMConfig:
    learning_rate: float = 0.01313
    n_estimators: int = 611
    max_depth: int = 3
    subsample: float = 0.8
    min_leaf: int = 5
    seed: int = 42

    def validate(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be at least 1")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be at least 1")
        return self


def subsample_masks(n, config: GBMConfig):
    """One row mask per boosting round, floor(subsample * n) rows drawn without replacement.

    Philox is counter based, so the stream depends on the seed alone.
    """
    rng = np.random.Generator(np.random.Philox(config.seed))
    k = max(1, int(math.floor(config.subsample * n)))
    masks = np.zeros((config.n_estimators, n), dtype=np.bool_)
    for t in range(config.n_estimators):
        if k == n:
            masks[t] = True
        else:
            masks[t, rng.permutation(n)[:k]] = True
    return masks


@dataclass
class BoostedEnsemble:
    base_score: float
    learning_rate: float
    trees: list
    selected_features: list
    scaler: ScalerParams | None = None
    config: GBMConfig = GBMConfig()
    format_version: int = FORMAT_VERSION
    catalog_version: str = CATALOG_VERSION

    def __post_init__(self):
        self._stack()

    def _stack(self):
        size = max((t.n_nodes for t in self.trees), default=1)
        T = len(self.trees)
        self._feature = np.full((T, size), -1, np.int64)
        self._threshold = np.zeros((T, size))
        self._left = np.full((T, size), -1, np.int64)
        self._right = np.full((T, size), -1, np.int64)
        self._value = np.zeros((T, size))
        for i, t in enumerate(self.trees):
            s = t.n_nodes
            self._feature[i, :s] = t.feature
            self._threshold[i, :s] = t.threshold
            self._left[i, :s] = t.left
            self._right[i, :s] = t.right
            self._value[i, :s] = t.value

    def transform(self, X, names=None):
        """Rows as the trees see them: selected columns, standardized if a scaler is attached."""
        names = self.selected_features if names is None else names
        if self.scaler is not None:
            return apply_scaler(self.scaler, X, names)
        Z = select_columns(X, names, self.selected_features)
        return np.where(np.isfinite(Z), Z, 0.0)

    def predict_raw(self, X, names=None):
        Z = np.ascontiguousarray(self.transform(X, names), dtype=np.float64)
        if not self.trees:
            return np.full(Z.shape[0], float(self.base_score))
        return _predict_ensemble(Z, self._feature, self._threshold, self._left, self._right,
                                 self._value, float(self.base_score), float(self.learning_rate))

    def predict(self, X, names=None):
        return np.clip(self.predict_raw(X, names), SCORE_MIN, SCORE_MAX)

    def feature_importance(self):
        """Total split gain per selected feature."""
        imp = np.zeros(len(self.selected_features))
        for t in self.trees:
            internal = t.feature >= 0
            np.add.at(imp, t.feature[internal], t.gain[internal])
        return imp

    # serialization
    def to_dict(self):
        return {"format_version": self.format_version,
                "catalog_version": self.catalog_version,
                "config": asdict(self.config),
                "scaler": self.scaler.to_dict() if self.scaler is not None else None,
                "selected_features": list(self.selected_features),
                "base_score": float(self.base_score),
                "learning_rate": float(self.learning_rate),
                "seed": self.config.seed,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {d.get('format_version')!r}")
        scaler = ScalerParams.from_dict(d["scaler"]) if d.get("scaler") else None
        return cls(base_score=float(d["base_score"]), learning_rate=float(d["learning_rate"]),
                   trees=[RegressionTree.from_dict(t) for t in d["trees"]],
                   selected_features=list(d["selected_features"]), scaler=scaler,
                   config=GBMConfig(**d["config"]), format_version=d["format_version"],
                   catalog_version=d.get("catalog_version", CATALOG_VERSION))

    def dumps(self, extra=None):
        d = self.to_dict()
        if extra:
            d.update(extra)
        return json.dumps(d, sort_keys=True, indent=1)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


def _fit_arrays(Z, y, config, masks=None, order=None):
    n = Z.shape[0]
    if masks is None:
        masks = subsample_masks(n, config)
    if order is None:
        order = sort_order(Z)
    base = float(np.mean(y))
    out = _boost(Z, order, sorted_values(Z, order), y, masks, base, float(config.learning_rate), int(config.max_depth),
                 float(config.min_leaf), REL_TOL)
    *arrays, sizes = out
    trees = [tree_from_rows(*(a[t] for a in arrays), sizes[t]) for t in range(len(sizes))]
    return base, trees


def fit_gbm(X, y, config: GBMConfig = GBMConfig(), feature_names=None, scaler: ScalerParams | None = None,
            _masks=None, _order=None) -> BoostedEnsemble:
    """Gradient-boosted regression trees on squared error.

    Starts from the mean target; each round fits a tree to the residuals of a fresh
    subsample and adds ``learning_rate`` times its output. ``X`` holds raw rows in the
    order of ``feature_names``; when a scaler is given the trees see standardized rows.
    """
    config.validate()
    X = np.asarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.shape[0] < 5:
        raise ValueError("fit_gbm needs at least 5 rows")
    if X.shape[0] != len(y):
        raise ValueError("X and y disagree on the number of rows")
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(X.shape[1])]
    if scaler is not None:
        scaler = scaler.subset(names)
        Z = apply_scaler(scaler, X, names)
    else:
        Z = np.where(np.isfinite(X), X, 0.0)
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    base, trees = _fit_arrays(Z, y, config, _masks, _order)
    return BoostedEnsemble(base, config.learning_rate, trees, names, scaler, config)


def predict(ensemble: BoostedEnsemble, X, names=None):
    return ensemble.predict(X, names)


def boost_rfe(Z, y, names, n_top, config: GBMConfig = GBMConfig()):
    """Backward elimination driven by boosted-tree split gain.

    Repeatedly fits an ensemble on the surviving columns and drops the one with the
    lowest total gain (ties drop the later name in ``names``) until ``n_top`` remain.
    Returns (selected names in input order, eliminated names in elimination order).
    """
    if n_top < 1:
        raise ValueError("n_top must be at least 1")
    names = list(names)
    if n_top > len(names):
        raise ValueError("n_top exceeds the number of features")
    Z = np.ascontiguousarray(np.where(np.isfinite(Z), Z, 0.0), dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    masks = subsample_masks(Z.shape[0], config)
    order_full = sort_order(Z)
    alive = list(range(len(names)))
    eliminated = []
    while len(alive) > n_top:
        sub = np.ascontiguousarray(Z[:, alive])
        order = np.ascontiguousarray(order_full[alive])
        feature, _, _, _, _, _, gain, _ = _boost(sub, order, sorted_values(sub, order), y, masks,
                                                 float(np.mean(y)), float(config.learning_rate),
                                                 int(config.max_depth), float(config.min_leaf), REL_TOL)
        internal = feature >= 0
        imp = np.zeros(len(alive))
        np.add.at(imp, feature[internal], gain[internal])
        low = imp.min()
        # last position among the minimal ones, i.e. the later catalog name
        victim = max(k for k in range(len(alive)) if imp[k] == low)
        eliminated.append(names[alive[victim]])
        del alive[victim]
    return [names[k] for k in alive], eliminated


# -- oversampling -------------------------------------------------------------

def smote_oversample(X, labels, k: int = 5, rng=None):
    """Raise every class to the majority count with SMOTE interpolation.

    Each synthetic row is ``x + u * (neighbor - x)`` with u uniform in [0, 1) and the
    neighbor drawn from the k nearest same-class rows (Euclidean). Returns the input
    rows followed by the synthetic ones, and the matching labels.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    rng = np.random.Generator(np.random.Philox(0)) if rng is None else rng
    classes, counts = np.unique(labels, return_counts=True)
    target = counts.max()
    new_rows, new_labels = [], []
    for c, cnt in zip(classes, counts):
        if cnt == target:
            continue
        if cnt < 2:
            raise ValueError(f"class {c!r} has a single member; SMOTE needs at least 2")
        members = X[labels == c]
        kk = min(k, cnt - 1)
        d = np.linalg.norm(members[:, None, :] - members[None, :, :], axis=2)
        np.fill_diagonal(d, np.inf)
        neighbors = np.argsort(d, axis=1, kind="stable")[:, :kk]
        for s in range(target - cnt):
            i = s % cnt
            nb = members[neighbors[i, rng.integers(kk)]]
            u = rng.random()
            new_rows.append(members[i] + u * (nb - members[i]))
            new_labels.append(c)
    if not new_rows:
        return X.copy(), labels.copy()
    return np.vstack([X, np.array(new_rows)]), np.concatenate([labels, np.array(new_labels)])


# -- cross-validation ---------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    gbm: GBMConfig = GBMConfig()
    n_top: int = 22
    prune_threshold: float = 0.85
    use_feature_selection: bool = True
    use_smote: bool = False
    smote_k: int = 5


def train_pipeline(X, y, names, cfg: PipelineConfig = PipelineConfig(), audit=None, row_ids=None):
    """Prune, scale, select and fit on one training set; returns (ensemble, info)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    names = list(names)
    if audit is not None:
        audit["prune_rows"] = list(row_ids)
    retained = prune_correlated(X, names, cfg.prune_threshold)
    Xr = select_columns(X, names, retained)
    if audit is not None:
        audit["scaler_rows"] = list(row_ids)
    scaler = fit_scaler(Xr, retained)
    Z = apply_scaler(scaler, Xr, retained)
    yz = y
    if cfg.use_smote:
        Z, yz = smote_oversample(Z, np.round(y).astype(int), cfg.smote_k,
                                 np.random.Generator(np.random.Philox(cfg.gbm.seed)))
        yz = yz.astype(float)
    if audit is not None:
        audit["rfe_rows"] = list(row_ids)
    n_top = min(cfg.n_top, len(scaler.features))
    if cfg.use_feature_selection and n_top < len(scaler.features):
        selected, eliminated = boost_rfe(Z, yz, scaler.features, n_top, cfg.gbm)
    else:
        selected, eliminated = list(scaler.features), []
    sub = scaler.subset(selected)
    Zs = select_columns(Z, scaler.features, selected)
    if audit is not None:
        audit["train_rows"] = list(row_ids)
    base, trees = _fit_arrays(np.ascontiguousarray(Zs), np.ascontiguousarray(yz, dtype=np.float64), cfg.gbm)
    ens = BoostedEnsemble(base, cfg.gbm.learning_rate, trees, selected, sub, cfg.gbm)
    info = {"retained_after_pruning": retained, "dropped_zero_variance": scaler.dropped,
            "selected": selected, "eliminated": eliminated}
    return ens, info


@dataclass
class CVReport:
    folds: list
    video_ids: list
    participant_ids: list
    predictions: np.ndarray
    raw_predictions: np.ndarray
    truth: np.ndarray
    metrics: stats.MetricReport
    raw_mae: float

    @property
    def abs_errors(self):
        return np.abs(self.predictions - self.truth)

    def errors_by_video(self):
        return {v: (p, float(e)) for v, p, e in zip(self.video_ids, self.participant_ids, self.abs_errors)}

    def to_dict(self):
        return {"metrics": self.metrics.to_dict(), "raw_mae": self.raw_mae,
                "folds": self.folds,
                "videos": [{"video_id": v, "participant_id": p, "prediction": float(pr),
                            "raw_prediction": float(r), "truth": float(t), "abs_error": float(abs(pr - t))}
                           for v, p, pr, r, t in zip(self.video_ids, self.participant_ids, self.predictions,
                                                     self.raw_predictions, self.truth)]}


def lopo_cv(X, y, names, video_ids, participant_ids, cfg: PipelineConfig = PipelineConfig(),
            audit=None, progress=None, fold_callback=None) -> CVReport:
    """Leave-one-participant-out cross-validation.

    Each participant's recordings form one held-out fold; pruning, scaling, feature
    selection and boosting see only the remaining rows. ``audit``, when a list, receives
    one dict per fold naming the rows each training stage consumed. ``fold_callback``
    is called as ``fold_callback(participant_id, ensemble, held_out_indices)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    video_ids = list(video_ids)
    participant_ids = list(participant_ids)
    order = sorted(set(participant_ids))
    if len(order) < 3:
        raise ValueError("lopo_cv needs at least 3 participants")
    pid_arr = np.array(participant_ids, dtype=object)
    pred = np.full(len(y), np.nan)
    raw = np.full(len(y), np.nan)
    folds = []
    for fi, pid in enumerate(order):
        test = np.flatnonzero(pid_arr == pid)
        train = np.flatnonzero(pid_arr != pid)
        fold_audit = {"participant_id": pid, "held_out": [video_ids[i] for i in test]} if audit is not None else None
        ens, info = train_pipeline(X[train], y[train], names, cfg, fold_audit,
                                   [video_ids[i] for i in train])
        raw[test] = ens.predict_raw(X[test], names)
        pred[test] = np.clip(raw[test], SCORE_MIN, SCORE_MAX)
        folds.append({"participant_id": pid, "video_ids": [video_ids[i] for i in test],
                      "predictions": [float(pred[i]) for i in test],
                      "selected_features": info["selected"]})
        if audit is not None:
            audit.append(fold_audit)
        if fold_callback is not None:
            fold_callback(pid, ens, test)
        if progress is not None:
            progress(fi + 1, len(order))
    metrics = stats.regression_metrics(pred, y)
    return CVReport(folds, video_ids, participant_ids, pred, raw, y, metrics,
                    float(np.mean(np.abs(raw - y))))
