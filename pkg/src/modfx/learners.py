"""Base learners used by every treatment-effect estimator.

All learners canonicalize training-row order at fit time, so fitted models
and predictions are bit-identical under any permutation of the training
rows. Linear and logistic models standardize features internally with
train-set statistics; trees are scale invariant and skip it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np


class NotFittedError(RuntimeError):
    pass


@dataclass(frozen=True)
class LearnerParams:
    """Hyperparameters shared by the learner factories; conventional defaults."""

    l2: float = 1e-3
    trees: int = 200
    depth: int = 3
    learning_rate: float = 0.1
    tol: float = 1e-8
    max_iter: int = 500
    min_leaf: int = 10
    n_bins: int = 64
    seed: int = 0


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite values in training data")


def _canonical_order(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    # lexsort: last key is primary, so feature 0 dominates
    keys = [w, y] + [x[:, j] for j in range(x.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def _prep(x, y, sample_weight):
    x = _as_2d(x)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("empty training set")
    if len(y) != len(x):
        raise ValueError("feature/target length mismatch")
    w = (
        np.ones(len(y))
        if sample_weight is None
        else np.asarray(sample_weight, dtype=float)
    )
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("sample weights must be non-negative with positive total")
    _check_finite(x, y, w)
    w = w * (len(w) / w.sum())
    order = _canonical_order(x, y, w)
    return x[order], y[order], w[order]


def _standardize_fit(x: np.ndarray, w: np.ndarray):
    mu = np.average(x, axis=0, weights=w)
    sd = np.sqrt(np.average((x - mu) ** 2, axis=0, weights=w))
    sd = np.where(sd == 0, 1.0, sd)
    return mu, sd


class RidgeRegression:
    """Squared-error linear model with an L2 penalty; intercept unpenalized."""

    def __init__(self, l2: float = 1e-3):
        if l2 < 0:
            raise ValueError("l2 must be non-negative")
        self.l2 = l2
        self._beta = None

    def fit(self, x, y, sample_weight=None):
        x, y, w = _prep(x, y, sample_weight)
        self._mu, self._sd = _standardize_fit(x, w)
        z = (x - self._mu) / self._sd
        self._ybar = np.average(y, weights=w)
        yc = y - self._ybar
        if self.l2 == 0:
            sw = np.sqrt(w)
            self._beta, *_ = np.linalg.lstsq(z * sw[:, None], yc * sw, rcond=None)
        else:
            a = z.T @ (z * w[:, None]) + self.l2 * np.eye(z.shape[1])
            self._beta = np.linalg.solve(a, z.T @ (w * yc))
        return self

    def predict(self, x) -> np.ndarray:
        if self._beta is None:
            raise NotFittedError("predict before fit")
        z = (_as_2d(x) - self._mu) / self._sd
        return z @ self._beta + self._ybar

    @property
    def coef_(self) -> np.ndarray:
        if self._beta is None:
            raise NotFittedError("model not fitted")
        return self._beta / self._sd

    @property
    def intercept_(self) -> float:
        if self._beta is None:
            raise NotFittedError("model not fitted")
        return float(self._ybar - (self._mu / self._sd) @ self._beta)


class MeanRegression:
    """Predicts the (weighted) training mean everywhere.

    Useful as a deliberately misspecified outcome model in robustness checks.
    """

    def __init__(self):
        self._mean = None

    def fit(self, x, y, sample_weight=None):
        _, y, w = _prep(x, y, sample_weight)
        self._mean = float(np.average(y, weights=w))
        return self

    def predict(self, x) -> np.ndarray:
        if self._mean is None:
            raise NotFittedError("predict before fit")
        return np.full(len(_as_2d(x)), self._mean)


# ---------------------------------------------------------------------------
# logistic regression


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -35.0, 35.0)))


def logistic_objective(beta: np.ndarray, z1: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Penalized negative log-likelihood; column 0 of z1 is the intercept."""
    eta = z1 @ beta
    nll = float(np.sum(np.logaddexp(0.0, eta) - y * eta))
    return nll + 0.5 * l2 * float(beta[1:] @ beta[1:])


def logistic_gradient(beta: np.ndarray, z1: np.ndarray, y: np.ndarray, l2: float) -> np.ndarray:
    p = _sigmoid(z1 @ beta)
    g = z1.T @ (p - y)
    g[1:] += l2 * beta[1:]
    return g


class LogisticModel:
    """Binary probabilistic classifier fit by damped Newton iterations."""

    def __init__(self, l2: float = 1e-3, max_iter: int = 500, tol: float = 1e-8):
        self.l2 = l2
        self.max_iter = max_iter
        self.tol = tol
        self._beta = None

    def fit(self, x, y):
        x, y, _ = _prep(x, y, None)
        classes = np.unique(y)
        if not np.all(np.isin(classes, (0.0, 1.0))) or len(classes) < 2:
            raise ValueError("labels must contain both classes 0 and 1")
        self._mu, self._sd = _standardize_fit(x, np.ones(len(y)))
        z1 = np.column_stack([np.ones(len(y)), (x - self._mu) / self._sd])

        beta = np.zeros(z1.shape[1])
        pen = self.l2 * np.diag([0.0] + [1.0] * (z1.shape[1] - 1))
        self.converged_ = False
        self.n_iter_ = 0
        for it in range(1, self.max_iter + 1):
            self.n_iter_ = it
            g = logistic_gradient(beta, z1, y, self.l2)
            self.grad_norm_ = float(np.linalg.norm(g))
            if self.grad_norm_ < self.tol:
                self.converged_ = True
                break
            p = _sigmoid(z1 @ beta)
            s = np.clip(p * (1 - p), 1e-12, None)
            h = z1.T @ (z1 * s[:, None]) + pen
            try:
                step = np.linalg.solve(h, g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(h, g, rcond=None)[0]
            f0 = logistic_objective(beta, z1, y, self.l2)
            t = 1.0
            for _ in range(30):
                cand = beta - t * step
                if logistic_objective(cand, z1, y, self.l2) <= f0:
                    break
                t *= 0.5
            beta = beta - t * step
        else:
            g = logistic_gradient(beta, z1, y, self.l2)
            self.grad_norm_ = float(np.linalg.norm(g))
            self.converged_ = self.grad_norm_ < self.tol
        self._beta = beta
        return self

    def predict_proba(self, x) -> np.ndarray:
        if self._beta is None:
            raise NotFittedError("predict before fit")
        z = (_as_2d(x) - self._mu) / self._sd
        return _sigmoid(self._beta[0] + z @ self._beta[1:])


# ---------------------------------------------------------------------------
# gradient-boosted regression trees


class _Tree:
    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def add_leaf(self, value: float) -> int:
        return self._add(-1, 0.0, -1, -1, value)

    def _add(self, f, thr, lt, rt, value) -> int:
        self.feature.append(f)
        self.threshold.append(thr)
        self.left.append(lt)
        self.right.append(rt)
        self.value.append(value)
        return len(self.feature) - 1

    def finalize(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.asarray(self.value)

    def predict(self, x: np.ndarray) -> np.ndarray:
        idx = np.zeros(len(x), dtype=np.int64)
        rows = np.arange(len(x))
        while True:
            internal = self.feature[idx] >= 0
            if not internal.any():
                break
            sub = rows[internal]
            node = idx[sub]
            go_left = x[sub, self.feature[node]] <= self.threshold[node]
            idx[sub] = np.where(go_left, self.left[node], self.right[node])
        return self.value[idx]


class GradientBoostedTrees:
    """Stagewise squared-error boosting over depth-limited histogram trees.

    Split candidates come from per-feature quantile bins (exact order
    statistics of the training column), so fits are deterministic; ties in
    split gain break toward the lowest feature index, then lowest threshold.
    """

    def __init__(
        self,
        trees: int = 200,
        depth: int = 3,
        learning_rate: float = 0.1,
        min_leaf: int = 10,
        n_bins: int = 64,
        seed: int = 0,
    ):
        if trees < 1 or depth < 1:
            raise ValueError("need at least one tree of depth one")
        self.trees = trees
        self.depth = depth
        self.learning_rate = learning_rate
        self.min_leaf = max(1, min_leaf)
        self.n_bins = n_bins
        self.seed = seed
        self._stages: Optional[list[_Tree]] = None

    def fit(self, x, y, sample_weight=None):
        x, y, w = _prep(x, y, sample_weight)
        n, p = x.shape
        self._edges = []
        codes = np.empty((n, p), dtype=np.int64)
        for j in range(p):
            qs = np.quantile(x[:, j], np.linspace(0.0, 1.0, self.n_bins + 1)[1:-1])
            edges = np.unique(qs)
            self._edges.append(edges)
            codes[:, j] = np.searchsorted(edges, x[:, j], side="right")

        self._base = float(np.average(y, weights=w))
        self._stages = []
        if self.learning_rate == 0.0:
            return self
        pred = np.full(n, self._base)
        for _ in range(self.trees):
            tree = self._grow(x, codes, y - pred, w)
            pred += self.learning_rate * tree.predict(x)
            self._stages.append(tree)
        return self

    def _grow(self, x, codes, grad, w) -> _Tree:
        tree = _Tree()
        gw = grad * w
        root_rows = np.arange(len(grad))

        def build(rows: np.ndarray, depth_left: int) -> int:
            w_tot = w[rows].sum()
            g_tot = gw[rows].sum()
            value = g_tot / w_tot
            if depth_left == 0 or len(rows) < 2 * self.min_leaf:
                return tree.add_leaf(value)
            best_gain = 1e-12
            best = None
            parent_score = g_tot * g_tot / w_tot
            for j in range(codes.shape[1]):
                edges = self._edges[j]
                if len(edges) == 0:
                    continue
                nb = len(edges) + 1
                c = codes[rows, j]
                cnt = np.bincount(c, minlength=nb)
                sw = np.bincount(c, weights=w[rows], minlength=nb)
                sg = np.bincount(c, weights=gw[rows], minlength=nb)
                cl = np.cumsum(cnt)[:-1]
                wl = np.cumsum(sw)[:-1]
                gl = np.cumsum(sg)[:-1]
                cr = len(rows) - cl
                wr = w_tot - wl
                gr = g_tot - gl
                ok = (cl >= self.min_leaf) & (cr >= self.min_leaf) & (wl > 0) & (wr > 0)
                if not ok.any():
                    continue
                with np.errstate(divide="ignore", invalid="ignore"):
                    gain = gl * gl / wl + gr * gr / wr - parent_score
                gain = np.where(ok, gain, -np.inf)
                b = int(np.argmax(gain))
                if gain[b] > best_gain:
                    best_gain = float(gain[b])
                    best = (j, b)
            if best is None:
                return tree.add_leaf(value)
            j, b = best
            go_left = codes[rows, j] <= b
            node = tree._add(j, float(self._edges[j][b]), -1, -1, value)
            lt = build(rows[go_left], depth_left - 1)
            rt = build(rows[~go_left], depth_left - 1)
            tree.left[node] = lt
            tree.right[node] = rt
            return node

        build(root_rows, self.depth)
        tree.finalize()
        return tree

    def predict(self, x) -> np.ndarray:
        if self._stages is None:
            raise NotFittedError("predict before fit")
        x = _as_2d(x)
        pred = np.full(len(x), self._base)
        for tree in self._stages:
            pred += self.learning_rate * tree.predict(x)
        return pred


# ---------------------------------------------------------------------------
# factories and operation-shaped wrappers

REGRESSOR_NAMES = ("linear", "gbt", "mean")


def make_regressor(name: str, params: LearnerParams = LearnerParams()):
    if name == "linear":
        return RidgeRegression(l2=params.l2)
    if name == "gbt":
        return GradientBoostedTrees(
            trees=params.trees,
            depth=params.depth,
            learning_rate=params.learning_rate,
            min_leaf=params.min_leaf,
            n_bins=params.n_bins,
            seed=params.seed,
        )
    if name == "mean":
        return MeanRegression()
    raise ValueError(f"unknown regressor {name!r}; expected one of {REGRESSOR_NAMES}")


def make_classifier(params: LearnerParams = LearnerParams()) -> LogisticModel:
    return LogisticModel(l2=params.l2, max_iter=params.max_iter, tol=params.tol)


def fit_ridge(features, targets, l2: float) -> RidgeRegression:
    return RidgeRegression(l2=l2).fit(features, targets)


def fit_gbt(features, targets, trees: int, depth: int, learning_rate: float,
            seed: int = 0) -> GradientBoostedTrees:
    return GradientBoostedTrees(
        trees=trees, depth=depth, learning_rate=learning_rate, seed=seed
    ).fit(features, targets)


def fit_logistic(features, labels, l2: float = 1e-3, max_iter: int = 500,
                 tol: float = 1e-8) -> LogisticModel:
    return LogisticModel(l2=l2, max_iter=max_iter, tol=tol).fit(features, labels)
