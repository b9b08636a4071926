"""Closed-form model families: loss, exact gradient, prediction, init.

Three families cover the regimes the simulator needs: linear regression
(mean squared error), multinomial logistic regression (softmax
cross-entropy, natural log), and a one-hidden-layer MLP with tanh or ReLU.
Parameters live in a single flat float64 vector; the layout is
layer-by-layer, weights row-major, then biases:

    LINEAR_REGRESSION:      [w (d_in), b (1)]
    MULTINOMIAL_LOGISTIC:   [W (C, d_in) row-major, b (C)]
    MLP_ONE_HIDDEN:         [W1 (hidden, d_in), b1 (hidden),
                             W2 (C, hidden), b2 (C)]      (C == 1 -> MSE head)

Heavy lifting (loss + gradient) is delegated to the kernels package, which
dispatches to the compiled backend when available.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np

from . import kernels
from .errors import DimensionMismatchError
from .numkit import INIT_TAG, ParamVector, RngStream, as_params


class Family(str, Enum):
    LINEAR_REGRESSION = "linear_regression"
    MULTINOMIAL_LOGISTIC = "multinomial_logistic"
    MLP_ONE_HIDDEN = "mlp_one_hidden"


class Activation(IntEnum):
    """Hidden-layer nonlinearity codes (shared with the kernel backends)."""

    TANH = kernels.ACT_TANH
    RELU = kernels.ACT_RELU


@dataclass(frozen=True)
class Batch:
    """A fixed mini-batch: features (n, d) and aligned labels/targets (n,).

    Labels are kept as int64 for classification and float64 for regression
    targets; features are always C-contiguous float64 so they can be handed
    to the compiled kernels without copies.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        X = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        if X.ndim != 2:
            raise DimensionMismatchError(
                f"features must be 2-D (n, d); got shape {X.shape}"
            )
        y = np.asarray(self.labels)
        if np.issubdtype(y.dtype, np.integer) or y.dtype == np.bool_:
            y = np.ascontiguousarray(y, dtype=np.int64)
        else:
            y = np.ascontiguousarray(y, dtype=np.float64)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise DimensionMismatchError(
                f"labels must be 1-D with length {X.shape[0]}; got shape {y.shape}"
            )
        if X.shape[0] == 0:
            raise ValueError("empty batch")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class Model:
    """Immutable model description; all state lives in the flat param vector."""

    family: Family
    d_in: int
    n_classes: int = 1
    hidden: int = 0
    activation: Activation = Activation.TANH

    def __post_init__(self) -> None:
        if self.d_in < 1:
            raise ValueError(f"d_in must be >= 1, got {self.d_in}")
        if self.family is Family.LINEAR_REGRESSION and self.n_classes != 1:
            raise ValueError("linear regression has a single real output")
        if self.family is Family.MULTINOMIAL_LOGISTIC and self.n_classes < 2:
            raise ValueError(
                f"logistic regression needs n_classes >= 2, got {self.n_classes}"
            )
        if self.family is Family.MLP_ONE_HIDDEN:
            if self.hidden < 1:
                raise ValueError(f"MLP needs hidden >= 1, got {self.hidden}")
            if self.n_classes < 1:
                raise ValueError(f"n_classes must be >= 1, got {self.n_classes}")

    @property
    def param_dim(self) -> int:
        if self.family is Family.LINEAR_REGRESSION:
            return self.d_in + 1
        if self.family is Family.MULTINOMIAL_LOGISTIC:
            return self.n_classes * self.d_in + self.n_classes
        h, C = self.hidden, self.n_classes
        return h * self.d_in + h + C * h + C


def _check_params(model: Model, params: ParamVector) -> np.ndarray:
    params = as_params(params)
    if params.shape[0] != model.param_dim:
        raise DimensionMismatchError(
            f"params dim {params.shape[0]} != model.param_dim {model.param_dim}"
        )
    return params


def _check_batch(model: Model, batch: Batch) -> None:
    if batch.features.shape[1] != model.d_in:
        raise DimensionMismatchError(
            f"batch feature dim {batch.features.shape[1]} != d_in {model.d_in}"
        )
    if model.family is not Family.LINEAR_REGRESSION and model.n_classes > 1:
        if batch.labels.dtype != np.int64:
            raise ValueError("classification batch needs integer labels")
        if batch.labels.size and (
            batch.labels.min() < 0 or batch.labels.max() >= model.n_classes
        ):
            raise ValueError(
                f"labels must lie in [0, {model.n_classes}); "
                f"got range [{batch.labels.min()}, {batch.labels.max()}]"
            )


def loss_and_grad(
    model: Model, params: ParamVector, batch: Batch
) -> tuple[float, ParamVector]:
    """Mean batch loss and its exact gradient, in one pass."""
    params = _check_params(model, params)
    _check_batch(model, batch)
    X = batch.features
    if model.family is Family.LINEAR_REGRESSION:
        y = np.ascontiguousarray(batch.labels, dtype=np.float64)
        val, g = kernels.linreg_loss_grad(params, X, y)
    elif model.family is Family.MULTINOMIAL_LOGISTIC:
        val, g = kernels.logistic_loss_grad(params, X, batch.labels, model.n_classes)
    elif model.n_classes == 1:
        y = np.ascontiguousarray(batch.labels, dtype=np.float64)
        val, g = kernels.mlp_mse_loss_grad(
            params, X, y, model.hidden, int(model.activation)
        )
    else:
        val, g = kernels.mlp_ce_loss_grad(
            params, X, batch.labels, model.hidden, model.n_classes, int(model.activation)
        )
    return float(val), np.asarray(g)


def loss(model: Model, params: ParamVector, batch: Batch) -> float:
    return loss_and_grad(model, params, batch)[0]


def grad(model: Model, params: ParamVector, batch: Batch) -> ParamVector:
    return loss_and_grad(model, params, batch)[1]


def logits(model: Model, params: ParamVector, X: np.ndarray) -> np.ndarray:
    """Raw outputs for a feature matrix (n, d_in): (n, C) scores, or (n,)
    real predictions for regression-style heads."""
    params = _check_params(model, params)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d_in:
        raise DimensionMismatchError(
            f"feature matrix must be (n, {model.d_in}); got shape {X.shape}"
        )
    d = model.d_in
    if model.family is Family.LINEAR_REGRESSION:
        return X @ params[:d] + params[d]
    if model.family is Family.MULTINOMIAL_LOGISTIC:
        C = model.n_classes
        W = params[: C * d].reshape(C, d)
        return X @ W.T + params[C * d :]
    h, C = model.hidden, model.n_classes
    W1 = params[: h * d].reshape(h, d)
    b1 = params[h * d : h * d + h]
    W2 = params[h * d + h : h * d + h + C * h].reshape(C, h)
    b2 = params[h * d + h + C * h :]
    Z = X @ W1.T + b1
    H = np.tanh(Z) if model.activation is Activation.TANH else np.maximum(Z, 0.0)
    out = H @ W2.T + b2
    return out[:, 0] if C == 1 else out


def predict(model: Model, params: ParamVector, features):
    """Predicted class index (argmax of logits, ties to the lowest index)
    or real output for a single feature row."""
    row = np.asarray(features, dtype=np.float64)
    if row.ndim != 1 or row.shape[0] != model.d_in:
        raise DimensionMismatchError(
            f"feature row must have dim {model.d_in}; got shape {row.shape}"
        )
    out = logits(model, params, row[None, :])
    if out.ndim == 1:  # regression head
        return float(out[0])
    return int(np.argmax(out[0]))


def hidden_preactivations(
    model: Model, params: ParamVector, X: np.ndarray
) -> np.ndarray:
    """MLP hidden-layer pre-activations (n, hidden); used to keep
    finite-difference probes away from ReLU kinks."""
    if model.family is not Family.MLP_ONE_HIDDEN:
        raise ValueError("pre-activations are defined for the MLP family only")
    params = _check_params(model, params)
    X = np.asarray(X, dtype=np.float64)
    h, d = model.hidden, model.d_in
    W1 = params[: h * d].reshape(h, d)
    b1 = params[h * d : h * d + h]
    return X @ W1.T + b1


def init_params(model: Model, rng: RngStream) -> ParamVector:
    """Initial parameter vector.

    Linear and logistic models start at zero (convex problems; also makes
    the uniform-softmax baseline exact).  The MLP draws every layer —
    weights and biases — uniformly from [-s, s] with s = 1/sqrt(fan_in),
    from the stream's dedicated init path.
    """
    if model.family is not Family.MLP_ONE_HIDDEN:
        return np.zeros(model.param_dim)
    gen = rng.child(INIT_TAG).generator()
    h, d, C = model.hidden, model.d_in, model.n_classes
    s1 = 1.0 / np.sqrt(d)
    s2 = 1.0 / np.sqrt(h)
    parts = [
        gen.uniform(-s1, s1, size=h * d + h),
        gen.uniform(-s2, s2, size=C * h + C),
    ]
    return np.concatenate(parts)
