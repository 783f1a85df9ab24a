"""Adam and LAMB over named tensors, a warmup/decay schedule and global-norm clipping."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .numerics import Tensor

ALGORITHMS = ("adam", "lamb")


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    steps: int = 1000
    epochs: int | None = None
    warmup_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-6
    weight_decay: float = 0.0
    clip_norm: float | None = 1.0

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"optimizer algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if self.steps < 1 and not self.epochs:
            raise ConfigError("steps must be positive")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError("warmup fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "OptimizerConfig":
        return cls(**dict(d))


FINETUNE_DEFAULTS = OptimizerConfig(learning_rate=2e-5, batch_size=32, epochs=2, steps=1)


def lr_at(step: int, total: int, base: float, warmup_fraction: float) -> float:
    """Linear warmup then linear decay to zero; ``step`` counts from 0."""
    warm = int(total * warmup_fraction)
    if warm and step < warm:
        return base * (step + 1) / warm
    rest = max(total - warm, 1)
    return base * max(0.0, 1.0 - (step - warm) / rest)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = (p.grad * scale).astype(p.grad.dtype)
    return total


class Optimizer:
    """Updates only tensors that are trainable and received a gradient."""

    def __init__(self, config: OptimizerConfig, total_steps: int | None = None):
        self.config = config
        self.total_steps = total_steps or config.steps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def current_lr(self) -> float:
        c = self.config
        return lr_at(self.t, self.total_steps, c.learning_rate, c.warmup_fraction)

    def step(self, named: Sequence[tuple[str, Tensor]]) -> float:
        c = self.config
        live = [(n, p) for n, p in named if p.requires_grad and p.grad is not None]
        norm = clip_grad_norm([p for _, p in live], c.clip_norm)
        lr = self.current_lr()
        self.t += 1
        b1, b2 = c.beta1, c.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for name, p in live:
            g = p.grad
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = (m / corr1) / (np.sqrt(v / corr2) + c.eps)
            if c.weight_decay:
                update = update + c.weight_decay * p.data
            if c.algorithm == "lamb":
                wn = float(np.linalg.norm(p.data))
                un = float(np.linalg.norm(update))
                trust = wn / un if wn > 0 and un > 0 else 1.0
                update = update * trust
            p.data -= (lr * update).astype(p.data.dtype)
        return norm

    def state_dict(self) -> dict:
        return {"t": self.t, "total_steps": self.total_steps, "m": dict(self.m), "v": dict(self.v)}

    def load_state_dict(self, state: Mapping) -> None:
        self.t = int(state["t"])
        self.total_steps = int(state["total_steps"])
        self.m = {k: np.array(a) for k, a in state["m"].items()}
        self.v = {k: np.array(a) for k, a in state["v"].items()}
