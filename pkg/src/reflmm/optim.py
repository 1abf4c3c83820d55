import math

import numpy as np


class Adam:
    """Adam over a dict of float arrays, updated in place.

    ``lr`` may be reassigned between steps to follow a schedule. ``step``
    returns the per-element effective step ``lr_t / (sqrt(v_hat) + eps)``
    so callers can apply a proximal operator in the same diagonal metric.
    """

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        scales = {}
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            scale = self.lr / (np.sqrt(v / bc2) + self.eps)
            params[k] -= scale * (m / bc1)
            scales[k] = scale
        return scales


def cosine_lr(base, it, total, final_fraction=0.01):
    """Cosine decay from ``base`` to ``base * final_fraction``."""
    if total <= 1:
        return base
    c = 0.5 * (1.0 + math.cos(math.pi * min(it, total - 1) / (total - 1)))
    return base * (final_fraction + (1.0 - final_fraction) * c)
