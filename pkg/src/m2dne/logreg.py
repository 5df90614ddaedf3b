"""Built-in multinomial logistic regression (softmax + L2).

Self-contained so downstream classification metrics are reproducible
bit-for-bit: zero initialization, full-batch descent with a multiplicative
step adaptation, fixed tolerance and iteration cap.
"""

from __future__ import annotations

import numpy as np

L2_DEFAULT = 1e-4
TOL_DEFAULT = 1e-6
MAX_ITER_DEFAULT = 500


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


class LogisticRegression:
    """Softmax regression with bias, trained by gradient descent.

    Objective: mean cross-entropy + 0.5 * l2 * ||W||^2 (bias excluded).
    Stops when the absolute loss change drops below ``tol`` or after
    ``max_iter`` accepted/rejected proposals.
    """

    def __init__(self, l2: float = L2_DEFAULT, tol: float = TOL_DEFAULT,
                 max_iter: int = MAX_ITER_DEFAULT):
        self.l2 = float(l2)
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.weights: np.ndarray | None = None   # (C, D)
        self.bias: np.ndarray | None = None      # (C,)
        self.n_classes: int = 0

    def _loss_grads(self, X, onehot):
        z = X @ self.weights.T + self.bias
        p = _softmax(z)
        n = X.shape[0]
        ce = -np.sum(onehot * np.log(np.maximum(p, 1e-300))) / n
        loss = ce + 0.5 * self.l2 * float(np.sum(self.weights ** 2))
        diff = (p - onehot) / n
        gw = diff.T @ X + self.l2 * self.weights
        gb = diff.sum(axis=0)
        return loss, gw, gb

    def fit(self, X: np.ndarray, y: np.ndarray,
            n_classes: int | None = None) -> "LogisticRegression":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if n_classes is None:
            n_classes = int(y.max()) + 1
        if n_classes < 2:
            raise ValueError("need at least 2 classes")
        self.n_classes = n_classes
        D = X.shape[1]
        self.weights = np.zeros((n_classes, D))
        self.bias = np.zeros(n_classes)
        onehot = np.zeros((X.shape[0], n_classes))
        onehot[np.arange(X.shape[0]), y] = 1.0

        loss, gw, gb = self._loss_grads(X, onehot)
        step = 1.0 / (1.0 + float(np.sqrt(np.sum(gw ** 2) + np.sum(gb ** 2))))
        for _ in range(self.max_iter):
            w_old, b_old = self.weights, self.bias
            self.weights = w_old - step * gw
            self.bias = b_old - step * gb
            new_loss, new_gw, new_gb = self._loss_grads(X, onehot)
            if np.isfinite(new_loss) and new_loss < loss:
                if abs(loss - new_loss) <= self.tol:
                    loss, gw, gb = new_loss, new_gw, new_gb
                    break
                loss, gw, gb = new_loss, new_gw, new_gb
                step *= 1.2
            else:
                self.weights, self.bias = w_old, b_old
                step *= 0.5
                if step < 1e-16:
                    break
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return _softmax(np.asarray(X, dtype=np.float64) @ self.weights.T
                        + self.bias)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)


def f1_scores(y_true: np.ndarray, y_pred: np.ndarray,
              n_classes: int) -> tuple[float, float]:
    """(macro_f1, micro_f1) with per-class F1 = 0 when undefined.

    Macro averages over the classes present in the truth or the predictions;
    micro equals accuracy for single-label classification.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    present = sorted(set(y_true.tolist()) | set(y_pred.tolist()))
    per_class = []
    for c in present:
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        denom = 2 * tp + fp + fn
        per_class.append(2.0 * tp / denom if denom else 0.0)
    macro = float(np.mean(per_class)) if per_class else 0.0
    micro = float(np.mean(y_true == y_pred)) if y_true.size else 0.0
    return macro, micro
