"""Optimizers and gradient utilities for numcore tensors."""

from __future__ import annotations

import math

import numpy as np


def global_grad_norm(params):
    """L2 norm over all parameter gradients taken as one flat vector."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.dot(p.grad.reshape(-1), p.grad.reshape(-1)))
    return math.sqrt(total)


def clip_grad_norm(params, max_norm):
    """Scale gradients in place so the global norm is at most ``max_norm``.

    Returns the pre-clip norm so callers can log it.
    """
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


class AdamW:
    """Adam with decoupled weight decay.

    Decay multiplies the parameter by (1 - lr*wd) before the Adam update,
    so it never flows through the moment estimates. Parameters listed in
    ``no_decay`` (by identity) are updated without decay — biases, norm
    gains, and embeddings usually go there.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0, no_decay=()):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self._no_decay = {id(p) for p in no_decay}
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay and id(p) not in self._no_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            mhat = self.m[i] / bc1
            vhat = self.v[i] / bc2
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_blocks(self):
        """Flat name->array mapping of optimizer state for checkpointing."""
        blocks = {"adamw.t": np.asarray([float(self.t)])}
        for i in range(len(self.params)):
            blocks[f"adamw.m.{i}"] = self.m[i]
            blocks[f"adamw.v.{i}"] = self.v[i]
        return blocks

    def load_state_blocks(self, blocks):
        self.t = int(blocks["adamw.t"][0])
        for i in range(len(self.params)):
            self.m[i] = np.array(blocks[f"adamw.m.{i}"], dtype=np.float64)
            self.v[i] = np.array(blocks[f"adamw.v.{i}"], dtype=np.float64)
