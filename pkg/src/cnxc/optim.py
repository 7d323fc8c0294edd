"""Binary cross-entropy, Adam, and reduce-on-plateau scheduling with early stop.

Defaults mirror the training recipe: lr 1e-4, Adam (0.9, 0.999, 1e-8),
plateau patience 3 with factor 0.1, early stop after 6 cumulative
non-improving epochs (two patience windows, so one LR reduction can take
effect before stopping), min_delta 1e-4.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ParameterError

BCE_CLAMP = 1e-7


def bce_loss(y: np.ndarray, yhat: np.ndarray):
    """Mean binary cross-entropy and its gradient with respect to yhat.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs; the gradient
    is the analytic derivative of the clamped expression (zero where the
    clamp is active).
    """
    y = np.asarray(y, dtype=yhat.dtype)
    if y.shape != yhat.shape:
        raise ParameterError(f"label shape {y.shape} != prediction shape {yhat.shape}")
    n = y.size
    if n == 0:
        raise ParameterError("empty batch")
    lo, hi = BCE_CLAMP, 1.0 - BCE_CLAMP
    yc = np.clip(yhat, lo, hi)
    loss = -float(np.mean(y * np.log(yc) + (1.0 - y) * np.log(1.0 - yc)))
    inside = (yhat > lo) & (yhat < hi)
    grad = np.where(inside, -(y / yc - (1.0 - y) / (1.0 - yc)) / n, 0.0).astype(yhat.dtype)
    return loss, grad


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads: dict, state: AdamState) -> AdamState:
    """One Adam update over (name, tensor) pairs, in place.

    Moments are bias-corrected with the step counter incremented first:
    theta <- theta - lr * mhat / (sqrt(vhat) + eps).
    """
    for name, _ in params:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter '{name}'")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, theta in params:
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        theta -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)).astype(theta.dtype)
    return state


@dataclass
class PlateauState:
    patience: int = 3
    factor: float = 0.1
    min_delta: float = 1e-4
    stop_patience: int = 6
    best_val_loss: float = float("inf")
    epochs_since_improve: int = 0  # cumulative since last improvement
    lr_wait: int = 0               # epochs since last improvement or LR cut


def plateau_check(state: PlateauState, val_loss: float, lr: float):
    """Reduce-on-plateau step: returns (new_lr, stop, state).

    Improvement means val_loss < best - min_delta. After `patience`
    consecutive non-improving epochs the learning rate is multiplied by
    `factor` and the patience window restarts; after `stop_patience`
    cumulative non-improving epochs `stop` is signalled.
    """
    if not np.isfinite(val_loss):
        raise ParameterError(f"validation loss must be finite, got {val_loss}")
    if val_loss < state.best_val_loss - state.min_delta:
        state.best_val_loss = val_loss
        state.epochs_since_improve = 0
        state.lr_wait = 0
        return lr, False, state
    state.epochs_since_improve = min(state.epochs_since_improve + 1, state.stop_patience)
    state.lr_wait += 1
    new_lr = lr
    if state.lr_wait >= state.patience:
        new_lr = lr * state.factor
        state.lr_wait = 0
    stop = state.epochs_since_improve >= state.stop_patience
    return new_lr, stop, state
