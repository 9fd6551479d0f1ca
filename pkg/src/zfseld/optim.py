"""Adam optimizer and the warm-up/decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Param


@dataclass
class LrSchedule:
    """Linear warm-up to ``peak_lr`` followed by stepped multiplicative decay."""

    peak_lr: float = 1e-3
    warmup_iters: int = 250
    decay_factor: float = 0.9
    decay_every: int = 1000

    def lr(self, iteration: int) -> float:
        """Learning rate for a 1-based iteration index."""
        if iteration <= self.warmup_iters:
            return self.peak_lr * iteration / max(self.warmup_iters, 1)
        steps = (iteration - self.warmup_iters) // self.decay_every
        return self.peak_lr * self.decay_factor**steps


class Adam:
    """Adam with (coupled) L2 weight decay added to the gradient."""

    def __init__(
        self,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 1e-6,
    ):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Param], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in params.items():
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            if name not in self.m:
                self.m[name] = np.zeros_like(p.value)
                self.v[name] = np.zeros_like(p.value)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if lr != 0.0:
                update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                p.value -= (lr * update).astype(p.value.dtype)

    # ---- checkpoint (de)serialization ---------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"__t__": np.array(self.t, dtype=np.int64)}
        for name, m in self.m.items():
            out[f"m/{name}"] = m
            out[f"v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays.get("__t__", 0))
        self.m = {}
        self.v = {}
        for key, arr in arrays.items():
            if key.startswith("m/"):
                self.m[key[2:]] = arr.copy()
            elif key.startswith("v/"):
                self.v[key[2:]] = arr.copy()
