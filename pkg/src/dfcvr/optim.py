"""Adam optimizer and shuffling helpers over flat parameter vectors."""

from __future__ import annotations

import numpy as np


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    """Deterministic shuffle keyed by (seed, epoch).

    Counter-based bit generator: the permutation depends only on the key,
    never on how many draws happened elsewhere.
    """
    key = (np.uint64(seed) << np.uint64(32)) + np.uint64(epoch)
    return np.random.Generator(np.random.Philox(key=key)).permutation(n)


class Adam:
    """Adam with bias-corrected moment estimates.

    State arrays match the parameter vector; ``step`` mutates the given
    parameters in place. The update sequence is deterministic given the
    gradient sequence.
    """

    def __init__(
        self,
        dim: int,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValueError("betas must lie in [0, 1)")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        params -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
