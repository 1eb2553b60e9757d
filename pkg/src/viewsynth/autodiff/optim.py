"""Adam with a two-phase step-indexed learning-rate schedule.

beta1 = 0.5 for adversarial-training stability; parameters with grad=None
(off the loss path) are left untouched, moments included.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class LrSchedule:
    base: float = 1e-4
    after: float = 1e-5
    drop_step: int = 10_000

    def at(self, step: int) -> float:
        return self.base if step < self.drop_step else self.after


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              step: int, lr: float, beta1: float = 0.5, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One in-place Adam update; `step` is 1-based for bias correction."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    def __init__(self, params: dict[str, Tensor], schedule: LrSchedule,
                 beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.schedule = schedule
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> float:
        self.step_count += 1
        lr = self.schedule.at(self.step_count)
        for name, p in self.params.items():
            if p.grad is None:
                continue
            adam_step(p.data, p.grad, self.m[name], self.v[name],
                      self.step_count, lr, self.beta1, self.beta2, self.eps)
        return lr

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- checkpoint support -------------------------------------------------
    def state_tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"{prefix}.m.{k}"] = self.m[k]
            out[f"{prefix}.v.{k}"] = self.v[k]
        return out

    def load_state(self, prefix: str, entries: dict[str, np.ndarray],
                   step_count: int) -> None:
        for k in self.params:
            self.m[k] = entries[f"{prefix}.m.{k}"].astype(np.float32).reshape(self.m[k].shape)
            self.v[k] = entries[f"{prefix}.v.{k}"].astype(np.float32).reshape(self.v[k].shape)
        self.step_count = int(step_count)
