"""Adam with bias correction and a reduce-on-plateau learning-rate rule."""

from __future__ import annotations

import math

import numpy as np


def adam_init(params) -> dict:
    return {
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
        "t": 0,
    }


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update, in place; returns (params, state)."""
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for k, p in params.items():
        g = grads[k]
        m = state["m"][k]
        v = state["v"][k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


class PlateauScheduler:
    """Cut the learning rate by ``factor`` after ``patience`` consecutive
    epochs without a strict improvement of the best validation loss; the
    stall counter resets after each cut."""

    def __init__(self, initial_lr, patience=3, factor=0.5, min_lr=1e-6):
        if patience < 1:
            raise ValueError(f"patience must be >= 1, got {patience}")
        if not 0.0 < factor < 1.0:
            raise ValueError(f"factor must be in (0,1), got {factor}")
        self.lr = initial_lr
        self.patience = patience
        self.factor = factor
        self.min_lr = min_lr
        self.best = math.inf
        self.wait = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.wait = 0
        return self.lr


def plateau_schedule(history, patience, factor, min_lr, current_lr) -> float:
    """Stateless form: replay ``history`` (one validation loss per epoch)
    and return the learning rate after the final epoch, given the rate in
    effect before it."""
    best = math.inf
    wait = 0
    reduce_now = False
    for loss in history:
        reduce_now = False
        if loss < best:
            best = loss
            wait = 0
        else:
            wait += 1
            if wait >= patience:
                reduce_now = True
                wait = 0
    if reduce_now:
        return max(current_lr * factor, min_lr)
    return current_lr
