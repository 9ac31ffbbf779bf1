"""Goodness surrogates: regressors from branch-record features to GN.

Every model is a scikit-learn compatible estimator (``get_params``,
``fit(X, y)``, ``predict(X)``, ``score``), implemented here rather than
borrowed so tie-breaking and persistence are fully under our control.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .encoding import N_FEATURES, BranchRecord, feature_matrix
from .metrics import mae, mse, r2, rmse

_TIE_TOL = 1e-12


class _Tree:
    """Flat-array binary regression tree.  ``feature == -1`` marks a leaf."""

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def _add(self, value):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.value) - 1

    def freeze(self):
        self.feature_ = np.asarray(self.feature, dtype=np.intp)
        self.threshold_ = np.asarray(self.threshold, dtype=np.float64)
        self.left_ = np.asarray(self.left, dtype=np.intp)
        self.right_ = np.asarray(self.right, dtype=np.intp)
        self.value_ = np.asarray(self.value, dtype=np.float64)
        return self

    @property
    def node_count(self) -> int:
        return len(self.value)

    def depth(self) -> int:
        def rec(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(rec(self.left[i]), rec(self.right[i]))
        return rec(0)

    def apply(self, X) -> np.ndarray:
        n = len(X)
        node = np.zeros(n, dtype=np.intp)
        rows = np.arange(n)
        while True:
            feat = self.feature_[node]
            internal = feat >= 0
            if not internal.any():
                return node
            go_left = X[rows, np.maximum(feat, 0)] <= self.threshold_[node]
            nxt = np.where(go_left, self.left_[node], self.right_[node])
            node = np.where(internal, nxt, node)

    def predict(self, X) -> np.ndarray:
        return self.value_[self.apply(X)]

    def to_dict(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold, "left": self.left,
                "right": self.right, "value": self.value}

    @classmethod
    def from_dict(cls, d) -> "_Tree":
        t = cls()
        t.feature = [int(v) for v in d["feature"]]
        t.threshold = [float(v) for v in d["threshold"]]
        t.left = [int(v) for v in d["left"]]
        t.right = [int(v) for v in d["right"]]
        t.value = [float(v) for v in d["value"]]
        return t.freeze()


def _best_split_on(x, y):
    """Lowest-SSE threshold on one feature: (sse, threshold) or None."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    valid = np.nonzero(xs[:-1] < xs[1:])[0]
    if len(valid) == 0:
        return None
    n = len(ys)
    csum = np.cumsum(ys)
    csq = np.cumsum(ys * ys)
    n_left = valid + 1
    sum_l, sq_l = csum[valid], csq[valid]
    sum_r, sq_r = csum[-1] - sum_l, csq[-1] - sq_l
    sse = (np.maximum(sq_l - sum_l ** 2 / n_left, 0.0)
           + np.maximum(sq_r - sum_r ** 2 / (n - n_left), 0.0))
    best = sse.min()
    i = int(np.nonzero(sse <= best + _TIE_TOL * (1.0 + best))[0][0])
    k = valid[i]
    return float(sse[i]), float((xs[k] + xs[k + 1]) / 2.0)


def _n_features_to_try(max_features, p) -> int:
    if max_features is None:
        return p
    if max_features == "sqrt":
        return max(1, int(math.sqrt(p)))
    if max_features == "log2":
        return max(1, int(math.log2(p)))
    if isinstance(max_features, float):
        return max(1, int(max_features * p))
    return max(1, min(p, int(max_features)))


def build_tree(X, y, min_samples_split=2, max_depth=None, max_features=None, rng=None) -> _Tree:
    """CART regression tree with exhaustive squared-error splits.

    Thresholds are midpoints between consecutive distinct values; equally good
    splits resolve to the lowest feature index, then the lowest threshold.
    """
    tree = _Tree()
    p = X.shape[1]
    k = _n_features_to_try(max_features, p)
    stack = [(np.arange(len(y)), 0, None, None)]
    while stack:
        rows, depth, parent, is_left = stack.pop()
        ys = y[rows]
        node = tree._add(ys.mean())
        if parent is not None:
            (tree.left if is_left else tree.right)[parent] = node
        if (len(rows) < min_samples_split or np.ptp(ys) == 0.0
                or (max_depth is not None and depth >= max_depth)):
            continue
        if k < p and rng is not None:
            perm = rng.permutation(p)
            groups = [np.sort(perm[:k]), perm[k:]]
        else:
            groups = [np.arange(p)]
        found = None
        centered = ys - ys.mean()
        for f in groups[0]:
            res = _best_split_on(X[rows, f], centered)
            if res is not None and (found is None or res[0] < found[0] - _TIE_TOL * (1.0 + found[0])):
                found = (res[0], int(f), res[1])
        # sampled features all constant here: fall back to the first usable one
        for f in (groups[1] if found is None and len(groups) > 1 else ()):
            res = _best_split_on(X[rows, f], centered)
            if res is not None:
                found = (res[0], int(f), res[1])
                break
        if found is None:
            continue
        _, f, thr = found
        tree.feature[node] = f
        tree.threshold[node] = thr
        mask = X[rows, f] <= thr
        # push right first so the left subtree is numbered first
        stack.append((rows[~mask], depth + 1, node, False))
        stack.append((rows[mask], depth + 1, node, True))
    return tree.freeze()


class _Surrogate(RegressorMixin, BaseEstimator):
    kind = ""

    def fit_records(self, records: Sequence[BranchRecord]):
        if not records:
            raise ValueError("no training records")
        X, y = feature_matrix(records)
        return self.fit(X, y)

    def _validate_fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        return X, y

    def _validate_predict(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def predict_one(self, features) -> float:
        return float(self.predict(np.asarray(features, dtype=np.float64)[None, :])[0])


class DecisionTreeSurrogate(_Surrogate):
    kind = "decision_tree"

    def __init__(self, min_samples_split=2, max_depth=None):
        self.min_samples_split = min_samples_split
        self.max_depth = max_depth

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        self.tree_ = build_tree(X, y, self.min_samples_split, self.max_depth)
        return self

    def predict(self, X):
        X = self._validate_predict(X)
        return self.tree_.predict(X)

    def _state(self):
        return {"tree": self.tree_.to_dict()}

    def _load_state(self, state):
        self.tree_ = _Tree.from_dict(state["tree"])


class RandomForestSurrogate(_Surrogate):
    kind = "random_forest"

    def __init__(self, n_estimators=100, max_features="sqrt", bootstrap=True,
                 min_samples_split=2, max_depth=None, random_state=0):
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.min_samples_split = min_samples_split
        self.max_depth = max_depth
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be positive")
        seeds = np.random.SeedSequence(self.random_state).spawn(self.n_estimators)
        self.estimators_ = []
        n = len(y)
        for ss in seeds:
            rng = np.random.default_rng(ss)
            rows = rng.integers(0, n, n) if self.bootstrap else np.arange(n)
            self.estimators_.append(build_tree(X[rows], y[rows], self.min_samples_split,
                                               self.max_depth, self.max_features, rng))
        return self

    def predict(self, X):
        X = self._validate_predict(X)
        return np.mean([t.predict(X) for t in self.estimators_], axis=0)

    def _state(self):
        return {"trees": [t.to_dict() for t in self.estimators_]}

    def _load_state(self, state):
        self.estimators_ = [_Tree.from_dict(t) for t in state["trees"]]


class LinearSurrogate(_Surrogate):
    """Least squares with intercept; ridge ``eps`` kicks in on rank deficiency."""

    kind = "linear"

    def __init__(self, fit_intercept=True, eps=1e-8):
        self.fit_intercept = fit_intercept
        self.eps = eps

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        if self.fit_intercept:
            x_mean, y_mean = X.mean(axis=0), y.mean()
        else:
            x_mean, y_mean = np.zeros(X.shape[1]), 0.0
        Xc, yc = X - x_mean, y - y_mean
        gram = Xc.T @ Xc
        rhs = Xc.T @ yc
        self.regularized_ = bool(np.linalg.matrix_rank(gram) < gram.shape[0])
        if self.regularized_:
            gram = gram + self.eps * np.eye(gram.shape[0])
        self.coef_ = np.linalg.solve(gram, rhs)
        self.intercept_ = float(y_mean - x_mean @ self.coef_)
        return self

    def predict(self, X):
        X = self._validate_predict(X)
        return X @ self.coef_ + self.intercept_

    def _state(self):
        return {"coef": self.coef_.tolist(), "intercept": self.intercept_,
                "regularized": self.regularized_}

    def _load_state(self, state):
        self.coef_ = np.asarray(state["coef"], dtype=np.float64)
        self.intercept_ = float(state["intercept"])
        self.regularized_ = bool(state["regularized"])


class GradientBoostingSurrogate(_Surrogate):
    """Stagewise squared-error boosting of depth-limited CART trees."""

    kind = "gradient_boosting"

    def __init__(self, n_estimators=100, learning_rate=0.1, max_depth=3, min_samples_split=2):
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        self.init_ = float(y.mean())
        pred = np.full(len(y), self.init_)
        self.estimators_ = []
        self.train_loss_ = [float(np.mean((y - pred) ** 2))]
        for _ in range(self.n_estimators):
            tree = build_tree(X, y - pred, self.min_samples_split, self.max_depth)
            pred = pred + self.learning_rate * tree.predict(X)
            self.estimators_.append(tree)
            self.train_loss_.append(float(np.mean((y - pred) ** 2)))
        return self

    def predict(self, X):
        X = self._validate_predict(X)
        out = np.full(len(X), self.init_)
        for tree in self.estimators_:
            out += self.learning_rate * tree.predict(X)
        return out

    def _state(self):
        return {"init": self.init_, "trees": [t.to_dict() for t in self.estimators_],
                "train_loss": self.train_loss_}

    def _load_state(self, state):
        self.init_ = float(state["init"])
        self.estimators_ = [_Tree.from_dict(t) for t in state["trees"]]
        self.train_loss_ = list(state.get("train_loss", []))


class ReplaySurrogate(_Surrogate):
    """Exact lookup of training rows; unknown rows raise ``KeyError``."""

    kind = "replay"

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        table = {}
        for row, value in zip(map(tuple, X), y):
            if row in table and table[row] != value:
                raise ValueError(f"conflicting targets for feature row {row}")
            table[row] = float(value)
        self.table_ = table
        return self

    def predict(self, X):
        X = self._validate_predict(X)
        out = np.empty(len(X))
        for i, row in enumerate(map(tuple, X)):
            try:
                out[i] = self.table_[row]
            except KeyError:
                raise KeyError(f"feature row not in replay table: {row}") from None
        return out

    def _state(self):
        return {"rows": [[list(k), v] for k, v in self.table_.items()]}

    def _load_state(self, state):
        self.table_ = {tuple(float(v) for v in k): float(val) for k, val in state["rows"]}


SURROGATES = {cls.kind: cls for cls in (DecisionTreeSurrogate, RandomForestSurrogate,
                                       LinearSurrogate, GradientBoostingSurrogate,
                                       ReplaySurrogate)}
ALIASES = {"dt": "decision_tree", "rf": "random_forest", "lr": "linear",
           "gb": "gradient_boosting", "gbr": "gradient_boosting"}


def resolve_kind(kind: str) -> str:
    kind = ALIASES.get(kind, kind)
    if kind not in SURROGATES:
        raise ValueError(f"unknown surrogate kind {kind!r}; choose from {sorted(SURROGATES)}")
    return kind


def make_surrogate(kind: str, **params) -> _Surrogate:
    return SURROGATES[resolve_kind(kind)](**params)


def fit_decision_tree(records, min_samples_split=2, max_depth=None):
    return DecisionTreeSurrogate(min_samples_split, max_depth).fit_records(records)


def fit_random_forest(records, n_estimators=100, **params):
    return RandomForestSurrogate(n_estimators=n_estimators, **params).fit_records(records)


def fit_linear(records, **params):
    return LinearSurrogate(**params).fit_records(records)


def fit_gradient_boosting(records, n_estimators=100, learning_rate=0.1, **params):
    return GradientBoostingSurrogate(n_estimators, learning_rate, **params).fit_records(records)


# --------------------------------------------------------------------------
# leave-one-out harness


@dataclass
class LeaveOneOutResult:
    model: _Surrogate
    report: dict
    held_out: str
    train_sources: list[str] = field(default_factory=list)
    n_train: int = 0
    n_val: int = 0


def evaluation_report(kind: str, y, y_hat) -> dict:
    rep = {"kind": kind, "mae": mae(y, y_hat), "mse": mse(y, y_hat), "rmse": rmse(y, y_hat)}
    try:
        rep["r2"] = r2(y, y_hat)
    except ValueError:
        rep["r2"] = None  # constant validation target
    return rep


def leave_one_out_fit(datasets: Mapping[str, Sequence[BranchRecord]], held_out: str,
                      kind: str = "decision_tree", seed: int = 0, train_fraction: float = 0.7,
                      **params) -> LeaveOneOutResult:
    """Fit on every dataset except ``held_out`` and score on a seeded 30% split."""
    if len(datasets) < 2:
        raise ValueError("leave-one-out needs at least two datasets")
    if held_out not in datasets:
        raise KeyError(f"unknown dataset {held_out!r}; have {sorted(datasets)}")
    kind = resolve_kind(kind)
    pool = [BranchRecord(r.task, r.layer, r.gn, name)
            for name, recs in datasets.items() if name != held_out for r in recs]
    if not pool:
        raise ValueError("no records outside the held-out dataset")
    perm = np.random.default_rng(seed).permutation(len(pool))
    n_train = max(1, int(round(train_fraction * len(pool))))
    if n_train == len(pool) and len(pool) > 1:
        n_train -= 1
    train_rec = [pool[i] for i in perm[:n_train]]
    val_rec = [pool[i] for i in perm[n_train:]] or train_rec
    if kind == "random_forest" and "random_state" not in params:
        params["random_state"] = seed
    model = make_surrogate(kind, **params).fit_records(train_rec)
    Xv, yv = feature_matrix(val_rec)
    report = evaluation_report(kind, yv, model.predict(Xv))
    sources = sorted({r.source for r in train_rec})
    return LeaveOneOutResult(model, report, held_out, sources, len(train_rec), len(val_rec))


# --------------------------------------------------------------------------
# persistence


def to_json_dict(model: _Surrogate) -> dict:
    check_is_fitted(model)
    return {"schema_version": 1, "kind": model.kind, "params": model.get_params(),
            "n_features_in": int(model.n_features_in_), "state": model._state()}


def from_json_dict(d: Mapping) -> _Surrogate:
    model = make_surrogate(d["kind"], **d.get("params", {}))
    model.n_features_in_ = int(d["n_features_in"])
    model._load_state(d["state"])
    return model


def save(model: _Surrogate, path) -> None:
    Path(path).write_text(json.dumps(to_json_dict(model), sort_keys=True) + "\n")


def load(path, expected_features: int | None = N_FEATURES) -> _Surrogate:
    model = from_json_dict(json.loads(Path(path).read_text()))
    if expected_features is not None and model.n_features_in_ != expected_features:
        raise ValueError(f"surrogate expects {model.n_features_in_} features, "
                         f"branch records have {expected_features}")
    return model
