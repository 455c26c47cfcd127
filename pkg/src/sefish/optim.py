"""Adam optimizer and the categorical cross-entropy training objective."""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .errors import TrainingError
from .layers import ParameterStore
from .tensor import Tensor


class Adam:
    """Adam with bias correction: lr 0.001, betas (0.9, 0.999), eps 1e-8, no decay.

    ``step()`` mutates parameters in place and clears their gradients.
    Optimizer state belongs to a single training loop.
    """

    def __init__(self, params: ParameterStore, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8, decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.decay = decay
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.trainable()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.trainable()}

    def step(self) -> None:
        for name, p in self.params.trainable():
            if p.grad is None:
                raise TrainingError(f"missing gradient for trainable parameter {name!r}")
        lr = self.lr / (1.0 + self.decay * self.t) if self.decay else self.lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.trainable():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (lr / bc1) * m / (np.sqrt(v / bc2) + self.epsilon)
            p.data -= update.astype(p.data.dtype, copy=False)
            p.grad = None


def loss_and_grad(model, batch, labels: np.ndarray,
                  rng: Optional[np.random.Generator] = None,
                  return_probs: bool = False):
    """Mean cross-entropy of a training-mode forward pass, plus gradients.

    Gradients land on the model's trainable tensors (``.grad``); the grads
    dict is returned alongside for inspection. Labels must be valid class
    indices for the model's class count.
    """
    num_classes = model.spec.num_classes
    targets = T.one_hot(labels, num_classes, dtype=model.dtype)
    model.zero_grad()
    probs = model.forward(batch, training=True, rng=rng)
    loss = T.cross_entropy(probs, Tensor(targets))
    loss.backward()
    grads = {name: p.grad for name, p in model.params.trainable()}
    if return_probs:
        return float(loss.data), grads, probs.data
    return float(loss.data), grads
