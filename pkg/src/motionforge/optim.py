"""Adam with optional global gradient-norm clipping."""

from __future__ import annotations

import numpy as np


class Adam:
    """Updates a fixed-order list of parameter arrays in place."""

    def __init__(self, lr: float = 1e-3, betas: tuple = (0.9, 0.999),
                 eps: float = 1e-8, max_grad_norm: "float | None" = None):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.t = 0
        self._m: "list[np.ndarray] | None" = None
        self._v: "list[np.ndarray] | None" = None

    def step(self, params: list, grads: list) -> None:
        if len(params) != len(grads):
            raise ValueError("parameter and gradient lists differ in length")
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        if self.max_grad_norm is not None:
            total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if total > self.max_grad_norm:
                scale = self.max_grad_norm / (total + 1e-12)
                grads = [g * scale for g in grads]
        self.t += 1
        correct1 = 1.0 - self.beta1 ** self.t
        correct2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / correct1
            v_hat = v / correct2
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_tensors(self) -> list:
        """Optimizer state in a fixed order for checkpointing."""
        if self._m is None:
            return []
        return list(self._m) + list(self._v)

    def load_state(self, tensors: list, t: int) -> None:
        if tensors:
            half = len(tensors) // 2
            self._m = [np.asarray(x) for x in tensors[:half]]
            self._v = [np.asarray(x) for x in tensors[half:]]
        self.t = t
