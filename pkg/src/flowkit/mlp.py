"""Single-hidden-layer softmax classifier trained with Adam."""

from __future__ import annotations

import numpy as np


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class MLPSoftmax:
    """ReLU hidden layer, softmax output, cross-entropy with L2 penalty.

    The penalty is ``alpha / (2 * batch) * sum(W**2)`` over both weight
    matrices. Training holds out ``validation_fraction`` of the rows and
    stops once validation loss has not improved for ``patience`` epochs,
    restoring the best weights.
    """

    def __init__(
        self,
        hidden_units: int = 121,
        alpha: float = 1e-4,
        learning_rate: float = 1e-3,
        batch_size: int = 200,
        max_epochs: int = 200,
        patience: int = 10,
        validation_fraction: float = 0.1,
        tol: float = 1e-4,
        seed: int = 0,
    ):
        self.hidden_units = hidden_units
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.tol = tol
        self.seed = seed

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params_)

    def _forward(self, X: np.ndarray, params) -> tuple[np.ndarray, np.ndarray]:
        W1, b1, W2, b2 = params
        h = _relu(X @ W1 + b1)
        return h, softmax(h @ W2 + b2)

    def _loss(self, X: np.ndarray, Y: np.ndarray, params) -> float:
        _, p = self._forward(X, params)
        ce = -np.mean(np.sum(Y * np.log(np.clip(p, 1e-12, 1.0)), axis=1))
        l2 = sum(float(np.sum(w * w)) for w in (params[0], params[2]))
        return ce + self.alpha * l2 / (2 * len(X))

    def fit(self, X: np.ndarray, y: np.ndarray) -> "MLPSoftmax":
        X = np.asarray(X, dtype=np.float64)
        self.classes_, y_idx = np.unique(np.asarray(y), return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("MLP needs at least two classes")
        n, d = X.shape
        k = len(self.classes_)
        rng = np.random.default_rng(self.seed)
        Y = np.eye(k)[y_idx]

        order = rng.permutation(n)
        n_val = int(round(self.validation_fraction * n)) if n >= 10 else 0
        val_idx, fit_idx = order[:n_val], order[n_val:]
        Xf, Yf = X[fit_idx], Y[fit_idx]
        Xv, Yv = X[val_idx], Y[val_idx]

        def layer(fan_in: int, fan_out: int) -> list[np.ndarray]:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            return [rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)]

        params = layer(d, self.hidden_units) + layer(self.hidden_units, k)
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        step = 0
        best = (np.inf, [p.copy() for p in params])
        stale = 0
        self.loss_curve_ = []
        self.validation_curve_ = []
        batch = min(self.batch_size, len(Xf))
        for epoch in range(self.max_epochs):
            perm = rng.permutation(len(Xf))
            for start in range(0, len(Xf), batch):
                idx = perm[start : start + batch]
                xb, yb = Xf[idx], Yf[idx]
                nb = len(idx)
                h, p = self._forward(xb, params)
                delta = (p - yb) / nb
                gW2 = h.T @ delta + self.alpha * params[2] / nb
                gb2 = delta.sum(axis=0)
                dh = (delta @ params[2].T) * (h > 0)
                gW1 = xb.T @ dh + self.alpha * params[0] / nb
                gb1 = dh.sum(axis=0)
                step += 1
                lr = self.learning_rate * np.sqrt(1 - beta2**step) / (1 - beta1**step)
                for i, g in enumerate((gW1, gb1, gW2, gb2)):
                    m[i] = beta1 * m[i] + (1 - beta1) * g
                    v[i] = beta2 * v[i] + (1 - beta2) * g * g
                    params[i] = params[i] - lr * m[i] / (np.sqrt(v[i]) + eps)
            self.loss_curve_.append(self._loss(Xf, Yf, params))
            monitor = self._loss(Xv, Yv, params) if n_val else self.loss_curve_[-1]
            self.validation_curve_.append(monitor)
            if monitor < best[0] - self.tol:
                best = (monitor, [p.copy() for p in params])
                stale = 0
            else:
                stale += 1
                if stale >= self.patience:
                    break
        self.n_epochs_ = epoch + 1
        self.params_ = best[1]
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return self._forward(X, self.params_)[1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
