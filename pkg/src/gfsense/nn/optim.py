"""AdamW: bias-corrected Adam with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from ..errors import TrainingDivergenceError


class AdamW:
    """Updates a dict of named parameter arrays in place.

    The decay term lr * wd * theta is subtracted from the parameter directly
    (decoupled from the adaptive step), so moments only ever see the gradient.
    """

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, theta in params.items():
            g = grads[name]
            if not np.isfinite(g).all():
                raise TrainingDivergenceError(
                    f"non-finite gradient for parameter '{name}'"
                )
            if name not in self._m:
                self._m[name] = np.zeros_like(theta)
                self._v[name] = np.zeros_like(theta)
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.weight_decay:
                theta -= self.lr * self.weight_decay * theta
            theta -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params
