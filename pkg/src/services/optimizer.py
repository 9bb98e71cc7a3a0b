"""
Adam Optimizer Service
Bias-corrected Adam updates over a graph's parameter table
"""
from typing import Dict, Iterable, List

import numpy as np

from ..autodiff.tensor import Param
from ..config.constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, LEARNING_RATE


class OptimizerStateError(RuntimeError):
    """Raised when a step is requested before any gradient was accumulated"""
    pass


class AdamOptimizer:
    """
    Adam with per-parameter first/second moments

    Moments are kept in float64 and the update is cast back to each
    parameter's dtype. Gradients are zeroed after every step.
    """

    def __init__(
        self,
        params: Iterable[Param],
        lr: float = LEARNING_RATE,
        beta1: float = ADAM_BETA1,
        beta2: float = ADAM_BETA2,
        eps: float = ADAM_EPS,
    ):
        self.params: List[Param] = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {p.name: np.zeros(p.shape, dtype=np.float64) for p in self.params}
        self.v: Dict[str, np.ndarray] = {p.name: np.zeros(p.shape, dtype=np.float64) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        """
        Apply one update to every parameter

        Raises:
            OptimizerStateError: If no parameter has received a gradient
        """
        if not any(p.has_grad for p in self.params):
            raise OptimizerStateError("Adam step requested before any backward pass")

        self.step_count += 1
        t = self.step_count
        correction1 = 1.0 - self.beta1**t
        correction2 = 1.0 - self.beta2**t

        for p in self.params:
            g = p.grad.astype(np.float64)
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            p.value -= update.astype(p.value.dtype)

        self.zero_grad()
