"""Comparator models: 2-means clustering on k-mer frequencies, L2 logistic
regression, and an SMO-trained RBF support vector machine."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin

from .kernels import KernelMatrix


def _check_features(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("expected 2-D feature matrix")
    if not np.isfinite(X).all():
        raise ValueError("features contain non-finite values")
    return X


def _binary_targets(y) -> Tuple[np.ndarray, np.ndarray]:
    """Map labels to {0, 1}; returns (targets, classes in index order)."""
    y = np.asarray(y)
    classes = np.unique(y)
    if classes.shape[0] != 2:
        raise ValueError(f"expected exactly 2 classes, got {classes.tolist()}")
    return (y == classes[1]).astype(int), classes


# ---------------------------------------------------------------------------
# KMeans (k = 2)
# ---------------------------------------------------------------------------

@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    accuracy: Optional[float] = None
    empty_cluster: bool = False


def _kmeanspp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(
            np.stack([np.sum((X - c) ** 2, axis=1) for c in centers]), axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(n)])
            continue
        centers.append(X[rng.choice(n, p=d2 / total)])
    return np.stack(centers)


def kmeans2(
    features,
    labels: Sequence[str] = None,
    seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> KMeansResult:
    """Lloyd's algorithm with k-means++ init, k=2. When true labels are
    supplied, accuracy is the max over the two cluster-to-label
    permutations."""
    X = _check_features(features)
    if X.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(X, 2, rng)
    assignments = np.zeros(X.shape[0], dtype=int)
    empty = False
    for _ in range(max_iter):
        d = np.stack([np.sum((X - c) ** 2, axis=1) for c in centroids])
        assignments = np.argmin(d, axis=0)
        new_centroids = centroids.copy()
        for c in range(2):
            mask = assignments == c
            if mask.any():
                new_centroids[c] = X[mask].mean(axis=0)
            else:
                empty = True
        shift = np.sqrt(np.sum((new_centroids - centroids) ** 2, axis=1)).max()
        centroids = new_centroids
        if shift < tol:
            break
    d = np.stack([np.sum((X - c) ** 2, axis=1) for c in centroids])
    assignments = np.argmin(d, axis=0)
    inertia = float(d[assignments, np.arange(X.shape[0])].sum())

    accuracy = None
    if labels is not None:
        y, _ = _binary_targets(labels)
        acc = (assignments == y).mean()
        accuracy = float(max(acc, 1.0 - acc))
    return KMeansResult(assignments, centroids, inertia, accuracy, empty)


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------

def logistic_loss_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray, C: float):
    """L2-regularized mean-free logistic loss (bias unpenalized) and its
    gradient; theta = [weights..., bias]."""
    w, b = theta[:-1], theta[-1]
    z = X @ w + b
    # log(1 + exp(-s*z)) computed stably
    s = 2.0 * y - 1.0
    loss = np.logaddexp(0.0, -s * z).sum() + 0.5 / C * (w @ w)
    p = expit(z)
    grad_w = X.T @ (p - y) + w / C
    grad_b = (p - y).sum()
    return loss, np.concatenate([grad_w, [grad_b]])


class LogisticRegressionClassifier(BaseEstimator, ClassifierMixin):
    """L2-penalized logistic regression solved with L-BFGS."""

    def __init__(self, C: float = 10.0, gtol: float = 1e-6, max_iter: int = 1000):
        self.C = C
        self.gtol = gtol
        self.max_iter = max_iter

    def fit(self, X, y):
        X = _check_features(X)
        t, self.classes_ = _binary_targets(y)
        theta0 = np.zeros(X.shape[1] + 1)
        res = minimize(
            logistic_loss_grad,
            theta0,
            args=(X, t, self.C),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": self.max_iter, "gtol": self.gtol * 1e-2, "ftol": 1e-14},
        )
        self.weights_ = res.x[:-1]
        self.bias_ = float(res.x[-1])
        self.converged_ = bool(res.success)
        return self

    def decision_function(self, X) -> np.ndarray:
        X = _check_features(X)
        return X @ self.weights_ + self.bias_

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]

    def predict_proba(self, X) -> np.ndarray:
        p = expit(self.decision_function(X))
        return np.stack([1.0 - p, p], axis=1)


# ---------------------------------------------------------------------------
# SMO support vector machine
# ---------------------------------------------------------------------------

def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    aa = np.sum(A * A, axis=1)[:, None]
    bb = np.sum(B * B, axis=1)[None, :]
    return np.exp(-gamma * np.maximum(aa + bb - 2.0 * (A @ B.T), 0.0))


class SmoSvmClassifier(BaseEstimator, ClassifierMixin):
    """Binary C-SVM trained with a simplified SMO sweep.

    ``kernel`` is 'rbf', 'linear', or 'precomputed' (X is then the Gram
    matrix of the training samples). gamma=None uses 1 / (F * var(X)).
    """

    def __init__(
        self,
        C: float = 1.0,
        kernel: str = "rbf",
        gamma: Optional[float] = None,
        tol: float = 1e-3,
        max_passes: int = 10,
        max_iter: int = 10000,
        seed: int = 0,
    ):
        self.C = C
        self.kernel = kernel
        self.gamma = gamma
        self.tol = tol
        self.max_passes = max_passes
        self.max_iter = max_iter
        self.seed = seed

    def _gram(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        if self.kernel == "linear":
            return A @ B.T
        if self.kernel == "rbf":
            return rbf_kernel(A, B, self.gamma_)
        raise ValueError(f"unknown kernel {self.kernel!r}")

    def fit(self, X, y):
        X = _check_features(X)
        t, self.classes_ = _binary_targets(y)
        s = 2.0 * t - 1.0  # +-1 targets
        n = X.shape[0]
        if self.kernel == "precomputed":
            if X.shape[0] != X.shape[1]:
                raise ValueError("precomputed kernel must be square on fit")
            K = X
        else:
            if self.kernel == "rbf":
                var = X.var()
                self.gamma_ = self.gamma if self.gamma is not None else 1.0 / (
                    X.shape[1] * (var if var > 0 else 1.0)
                )
            K = self._gram(X, X)

        alpha = np.zeros(n)
        b = 0.0
        rng = np.random.default_rng(self.seed)
        passes = 0
        iters = 0
        while passes < self.max_passes and iters < self.max_iter:
            changed = 0
            for i in range(n):
                Ei = (alpha * s) @ K[:, i] + b - s[i]
                if (s[i] * Ei < -self.tol and alpha[i] < self.C) or (
                    s[i] * Ei > self.tol and alpha[i] > 0
                ):
                    j = int(rng.integers(n - 1))
                    if j >= i:
                        j += 1
                    Ej = (alpha * s) @ K[:, j] + b - s[j]
                    ai_old, aj_old = alpha[i], alpha[j]
                    if s[i] != s[j]:
                        L = max(0.0, aj_old - ai_old)
                        H = min(self.C, self.C + aj_old - ai_old)
                    else:
                        L = max(0.0, ai_old + aj_old - self.C)
                        H = min(self.C, ai_old + aj_old)
                    if L >= H:
                        continue
                    eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
                    if eta >= 0:
                        continue
                    aj = aj_old - s[j] * (Ei - Ej) / eta
                    aj = min(H, max(L, aj))
                    if abs(aj - aj_old) < 1e-12:
                        continue
                    ai = ai_old + s[i] * s[j] * (aj_old - aj)
                    alpha[i], alpha[j] = ai, aj
                    b1 = b - Ei - s[i] * (ai - ai_old) * K[i, i] - s[j] * (aj - aj_old) * K[i, j]
                    b2 = b - Ej - s[i] * (ai - ai_old) * K[i, j] - s[j] * (aj - aj_old) * K[j, j]
                    if 0 < ai < self.C:
                        b = b1
                    elif 0 < aj < self.C:
                        b = b2
                    else:
                        b = 0.5 * (b1 + b2)
                    changed += 1
            iters += 1
            passes = passes + 1 if changed == 0 else 0

        sv = alpha > 1e-10
        self.dual_coef_ = (alpha * s)[sv]
        self.alpha_ = alpha
        self.signed_targets_ = s
        self.support_ = np.where(sv)[0]
        self.bias_ = float(b)
        if self.kernel == "precomputed":
            self.support_vectors_ = None
        else:
            self.support_vectors_ = X[sv]
        return self

    def decision_function(self, X) -> np.ndarray:
        X = _check_features(X)
        if self.kernel == "precomputed":
            # X rows are kernel values against the full training set
            K = X[:, self.support_]
        else:
            K = self._gram(X, self.support_vectors_)
        return K @ self.dual_coef_ + self.bias_

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]

    def dual_objective(self, K: np.ndarray = None) -> float:
        """1^T a - 0.5 a^T (y y^T . K) a using the stored training Gram."""
        if K is None:
            raise ValueError("pass the training Gram matrix")
        a = self.alpha_
        s = self.signed_targets_
        return float(a.sum() - 0.5 * (a * s) @ K @ (a * s))


def svm_fit(
    train: Union[np.ndarray, KernelMatrix],
    labels: Sequence[str],
    C: float = 1.0,
    kernel: str = "rbf",
    gamma: Optional[float] = None,
    seed: int = 0,
) -> SmoSvmClassifier:
    """Fit on a feature matrix or directly on a precomputed KernelMatrix."""
    if isinstance(train, KernelMatrix):
        model = SmoSvmClassifier(C=C, kernel="precomputed", seed=seed)
        return model.fit(train.values, labels)
    model = SmoSvmClassifier(C=C, kernel=kernel, gamma=gamma, seed=seed)
    return model.fit(train, labels)


def svm_predict(model: SmoSvmClassifier, rows) -> np.ndarray:
    return model.predict(rows)


# ---------------------------------------------------------------------------
# Model serialization
# ---------------------------------------------------------------------------

def save_model_json(model, path: Union[str, Path]) -> None:
    if isinstance(model, LogisticRegressionClassifier):
        payload = {
            "model": "logreg",
            "C": model.C,
            "weights": model.weights_.tolist(),
            "bias": model.bias_,
            "classes": [str(c) for c in model.classes_],
        }
    elif isinstance(model, SmoSvmClassifier):
        payload = {
            "model": "svm",
            "C": model.C,
            "kernel": model.kernel,
            "gamma": getattr(model, "gamma_", model.gamma),
            "dual_coef": model.dual_coef_.tolist(),
            "support": model.support_.tolist(),
            "support_vectors": None
            if model.support_vectors_ is None
            else model.support_vectors_.tolist(),
            "bias": model.bias_,
            "classes": [str(c) for c in model.classes_],
        }
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_model_json(path: Union[str, Path]):
    payload = json.loads(Path(path).read_text())
    if payload["model"] == "logreg":
        model = LogisticRegressionClassifier(C=payload["C"])
        model.weights_ = np.array(payload["weights"])
        model.bias_ = payload["bias"]
        model.classes_ = np.array(payload["classes"])
        return model
    if payload["model"] == "svm":
        model = SmoSvmClassifier(C=payload["C"], kernel=payload["kernel"])
        model.gamma_ = payload["gamma"]
        model.dual_coef_ = np.array(payload["dual_coef"])
        model.support_ = np.array(payload["support"], dtype=int)
        model.support_vectors_ = (
            None if payload["support_vectors"] is None else np.array(payload["support_vectors"])
        )
        model.bias_ = payload["bias"]
        model.classes_ = np.array(payload["classes"])
        return model
    raise ValueError(f"unknown model kind {payload['model']!r}")
