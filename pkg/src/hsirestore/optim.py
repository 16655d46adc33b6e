"""Adam optimizer and the step-decay learning-rate schedule."""

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ShapeError, ValidationError


class Adam:
    """Adam with bias correction, bound to a fixed list of parameter arrays.

    update: m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g*g
            p -= lr * (m / (1 - b1**t)) / (sqrt(v / (1 - b2**t)) + eps)

    Parameters are updated in place so the owning model sees every step.
    """

    def __init__(self, params: list, names: list = None,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValidationError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        if eps <= 0:
            raise ValidationError(f"eps must be positive, got {eps}")
        if names is not None and len(names) != len(params):
            raise ValidationError("names and params must have equal length")
        self.params = list(params)
        self.names = list(names) if names is not None else [f"param{i}" for i in range(len(params))]
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: list, lr: float) -> None:
        if len(grads) != len(self.params):
            raise ShapeError(
                f"expected {len(self.params)} gradient arrays, got {len(grads)}"
            )
        if lr < 0:
            raise ValidationError(f"learning rate must be >= 0, got {lr}")
        for name, p, g in zip(self.names, self.params, grads):
            if g.shape != p.shape:
                raise ShapeError(
                    f"gradient for {name} has shape {g.shape}, parameter has {p.shape}"
                )
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {name}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g.astype(p.dtype, copy=False)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class LrSchedule:
    """Step decay: lr(epoch) = max(floor, initial * 2**-(epoch // halve_every))."""

    initial: float = 0.01
    halve_every: int = 50
    floor: float = 1e-5

    def __post_init__(self):
        if self.initial <= 0 or self.floor < 0:
            raise ValidationError("initial learning rate must be > 0 and floor >= 0")
        if self.halve_every < 1:
            raise ValidationError(f"halve_every must be >= 1, got {self.halve_every}")

    def lr_at(self, epoch: int) -> float:
        if epoch < 0:
            raise ValidationError(f"epoch must be >= 0, got {epoch}")
        return max(self.floor, self.initial * 2.0 ** -(epoch // self.halve_every))
