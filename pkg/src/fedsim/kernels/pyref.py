"""Numpy reference implementations of the loss/gradient kernels.

This backend defines the semantics; fedsim.kernels._speedups is a compiled
mirror of the same math. Parameter layouts (all row-major, biases after the
weights of each layer):

  linear regression:     w (d,), b (1,)
  multinomial logistic:  W (C, d), b (C,)
  one-hidden-layer MLP:  W1 (h, d), b1 (h,), W2 (C, h), b2 (C,)

Losses are means over the batch: squared error for regression,
cross-entropy with natural log for classification. Softmax is computed via
the log-sum-exp shift for overflow safety.
"""

from __future__ import annotations

import numpy as np

ACT_TANH = 0
ACT_RELU = 1


def linreg_loss_grad(params, X, y):
    n, d = X.shape
    w = params[:d]
    b = params[d]
    r = X @ w + b - y
    loss = float(np.mean(r * r))
    scale = 2.0 / n
    grad = np.empty(d + 1)
    grad[:d] = scale * (X.T @ r)
    grad[d] = scale * np.sum(r)
    return loss, grad


def _softmax_ce(Z, y, n):
    """Shared cross-entropy tail: returns (loss, dZ) for logits Z."""
    Zs = Z - Z.max(axis=1, keepdims=True)
    expZ = np.exp(Zs)
    sumexp = expZ.sum(axis=1)
    rows = np.arange(n)
    loss = float(np.mean(np.log(sumexp) - Zs[rows, y]))
    P = expZ / sumexp[:, None]
    P[rows, y] -= 1.0
    dZ = P / n
    return loss, dZ


def logistic_loss_grad(params, X, y, n_classes):
    n, d = X.shape
    C = n_classes
    W = params[: C * d].reshape(C, d)
    b = params[C * d :]
    Z = X @ W.T + b
    loss, dZ = _softmax_ce(Z, y, n)
    grad = np.empty(C * d + C)
    grad[: C * d] = (dZ.T @ X).reshape(-1)
    grad[C * d :] = dZ.sum(axis=0)
    return loss, grad


def _unpack_mlp(params, d, h, C):
    o = 0
    W1 = params[o : o + h * d].reshape(h, d)
    o += h * d
    b1 = params[o : o + h]
    o += h
    W2 = params[o : o + C * h].reshape(C, h)
    o += C * h
    b2 = params[o : o + C]
    return W1, b1, W2, b2


def _mlp_forward(X, W1, b1, activation):
    Zh = X @ W1.T + b1
    if activation == ACT_TANH:
        H = np.tanh(Zh)
        dact = 1.0 - H * H
    else:
        H = np.maximum(Zh, 0.0)
        # subgradient at 0 is 0 by convention
        dact = (Zh > 0.0).astype(np.float64)
    return H, dact


def _mlp_backward(X, H, dact, W1, W2, dZ):
    h, d = W1.shape
    C = W2.shape[0]
    dW2 = dZ.T @ H
    db2 = dZ.sum(axis=0)
    dZh = (dZ @ W2) * dact
    dW1 = dZh.T @ X
    db1 = dZh.sum(axis=0)
    grad = np.empty(h * d + h + C * h + C)
    o = 0
    grad[o : o + h * d] = dW1.reshape(-1)
    o += h * d
    grad[o : o + h] = db1
    o += h
    grad[o : o + C * h] = dW2.reshape(-1)
    o += C * h
    grad[o : o + C] = db2
    return grad


def mlp_ce_loss_grad(params, X, y, hidden, n_classes, activation):
    n, d = X.shape
    W1, b1, W2, b2 = _unpack_mlp(params, d, hidden, n_classes)
    H, dact = _mlp_forward(X, W1, b1, activation)
    Z = H @ W2.T + b2
    loss, dZ = _softmax_ce(Z, y, n)
    return loss, _mlp_backward(X, H, dact, W1, W2, dZ)


def mlp_mse_loss_grad(params, X, y, hidden, activation):
    n, d = X.shape
    W1, b1, W2, b2 = _unpack_mlp(params, d, hidden, 1)
    H, dact = _mlp_forward(X, W1, b1, activation)
    r = H @ W2[0] + b2[0] - y
    loss = float(np.mean(r * r))
    dZ = (2.0 / n) * r[:, None]
    return loss, _mlp_backward(X, H, dact, W1, W2, dZ)
