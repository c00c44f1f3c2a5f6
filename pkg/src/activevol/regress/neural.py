"""Feedforward neural network regressor trained by mini-batch gradient descent (Adam)."""

from __future__ import annotations

import numpy as np

from .base import Estimator, check_Xy, derive_seed, register

ACTIVATIONS = ("tanh", "relu", "identity")


def _act(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(z, a, kind):
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "relu":
        return (z > 0).astype(float)
    return np.ones_like(z)


def init_params(sizes, rng):
    """Glorot-uniform weights, zero biases. ``sizes`` = [n_in, *hidden, 1]."""
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        params.append((rng.uniform(-lim, lim, (fan_in, fan_out)), np.zeros(fan_out)))
    return params


def forward(params, X, activation):
    a = X
    for i, (W, b) in enumerate(params):
        z = a @ W + b
        a = z if i == len(params) - 1 else _act(z, activation)
    return a[:, 0]


def loss_and_grad(params, X, y, activation="tanh"):
    """Mean half-squared error ``0.5 * mean((f(X) - y)^2)`` and its gradient per (W, b)."""
    acts = [X]
    pre = []
    a = X
    for i, (W, b) in enumerate(params):
        z = a @ W + b
        pre.append(z)
        a = z if i == len(params) - 1 else _act(z, activation)
        acts.append(a)
    n = len(y)
    diff = acts[-1][:, 0] - y
    loss = 0.5 * float(diff @ diff) / n
    delta = (diff / n)[:, None]
    grads = [None] * len(params)
    for i in range(len(params) - 1, -1, -1):
        W, _ = params[i]
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ W.T) * _act_grad(pre[i - 1], acts[i], activation)
    return loss, grads


def looks_standardized(X, tol=1e-6):
    """Every column has mean 0 and population std 1, or is identically 0."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    ok = (np.abs(mean) <= tol) & ((np.abs(std - 1.0) <= tol) | (std <= tol))
    return bool(ok.all())


@register
class MLP(Estimator):
    """Fully connected net with squared loss.

    Inputs must be standardized (as produced by ``select.standardize``) unless
    ``allow_unscaled`` is set; the target is centred and scaled internally.
    """

    family = "mlp"
    defaults = {"hidden_layers": (64,), "activation": "tanh", "epochs": 100, "batch": 64, "lr": 1e-3,
                "lr_decay": 0.0, "allow_unscaled": False}

    def fit(self, X, y):
        X, y = check_Xy(X, y)
        P = self.params
        if P["activation"] not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not P["allow_unscaled"] and not looks_standardized(X):
            raise ValueError("mlp needs standardized inputs (select.standardize); pass allow_unscaled=True to override")
        rng = np.random.default_rng(derive_seed(self.seed, 0))
        self.y_mean_ = float(y.mean())
        self.y_scale_ = float(y.std()) or 1.0
        t = (y - self.y_mean_) / self.y_scale_
        sizes = [X.shape[1], *map(int, P["hidden_layers"]), 1]
        params = init_params(sizes, rng)
        m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
        v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
        b1, b2, eps = 0.9, 0.999, 1e-8
        n, bs = len(t), max(1, int(P["batch"]))
        step = 0
        self.loss_curve_ = []
        for epoch in range(int(P["epochs"])):
            lr = float(P["lr"]) / (1.0 + float(P["lr_decay"]) * epoch)
            order = rng.permutation(n)
            for s in range(0, n, bs):
                idx = order[s:s + bs]
                _, grads = loss_and_grad(params, X[idx], t[idx], P["activation"])
                step += 1
                c1 = 1.0 - b1 ** step
                c2 = 1.0 - b2 ** step
                new = []
                for k, ((W, b), (gW, gb)) in enumerate(zip(params, grads)):
                    mW = b1 * m[k][0] + (1 - b1) * gW
                    mb = b1 * m[k][1] + (1 - b1) * gb
                    vW = b2 * v[k][0] + (1 - b2) * gW * gW
                    vb = b2 * v[k][1] + (1 - b2) * gb * gb
                    m[k], v[k] = (mW, mb), (vW, vb)
                    new.append((W - lr * (mW / c1) / (np.sqrt(vW / c2) + eps),
                                b - lr * (mb / c1) / (np.sqrt(vb / c2) + eps)))
                params = new
            self.loss_curve_.append(loss_and_grad(params, X, t, P["activation"])[0])
        self.params_ = params
        self.final_loss_ = self.loss_curve_[-1] if self.loss_curve_ else loss_and_grad(params, X, t, P["activation"])[0]
        self.fitted = True
        return self

    def predict(self, X):
        self._check_fitted()
        return self.y_mean_ + self.y_scale_ * forward(self.params_, check_Xy(X), self.params["activation"])

    def state(self):
        arrays = {}
        for k, (W, b) in enumerate(self.params_):
            arrays[f"W{k}"] = W
            arrays[f"b{k}"] = b
        return ({"n_layers": len(self.params_), "y_mean": self.y_mean_, "y_scale": self.y_scale_,
                 "final_loss": self.final_loss_, "loss_curve": self.loss_curve_}, arrays)

    def _restore(self, meta, arrays):
        self.params_ = [(np.array(arrays[f"W{k}"]), np.array(arrays[f"b{k}"])) for k in range(int(meta["n_layers"]))]
        self.y_mean_ = float(meta["y_mean"])
        self.y_scale_ = float(meta["y_scale"])
        self.final_loss_ = float(meta["final_loss"])
        self.loss_curve_ = list(meta["loss_curve"])


def fit_mlp(X, y, hidden_layers=(64,), activation="tanh", epochs=100, batch=64, lr=1e-3, seed=0, **kw) -> MLP:
    """Train an :class:`MLP`; ``lr_decay`` shrinks the step as ``lr / (1 + lr_decay * epoch)``."""
    return MLP(hidden_layers=tuple(hidden_layers), activation=activation, epochs=epochs, batch=batch, lr=lr,
               seed=seed, **kw).fit(X, y)
