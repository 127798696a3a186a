"""AdamW with decoupled weight decay and per-group learning rates."""

from __future__ import annotations

import numpy as np

from .errors import SedlabError, ShapeError
from .gradcore import Tensor


class AdamW:
    """Decoupled-weight-decay Adam.

    Parameters are grouped so the fine-tuning schedule can give the encoder,
    context network, and heads their own learning rates. Weight decay acts
    directly on the parameter (not through the moment estimates), so a step
    with zero gradient and decay ``d`` multiplies the parameter by
    ``1 - lr * d``.
    """

    def __init__(
        self,
        groups: list[tuple[list[Tensor], float]],
        weight_decay: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        if not groups or not any(params for params, _ in groups):
            raise SedlabError("AdamW created with no parameters")
        self.groups = [(list(params), float(lr)) for params, lr in groups]
        self.weight_decay = float(weight_decay)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.step_count = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}
        for params, _ in self.groups:
            for p in params:
                self._m[id(p)] = np.zeros_like(p.data)
                self._v[id(p)] = np.zeros_like(p.data)

    @classmethod
    def single(cls, params: list[Tensor], lr: float, **kwargs) -> "AdamW":
        return cls([(params, lr)], **kwargs)

    def zero_grad(self) -> None:
        for params, _ in self.groups:
            for p in params:
                p.grad = None

    def step(self) -> None:
        """Apply one update to every parameter that received a gradient."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for params, lr in self.groups:
            for p in params:
                g = p.grad
                if g is None:
                    g = np.zeros_like(p.data)
                if g.shape != p.data.shape:
                    raise ShapeError(f"grad shape {g.shape} != param shape {p.data.shape}")
                m = self._m[id(p)]
                v = self._v[id(p)]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
                m_hat = m / bc1
                v_hat = v / bc2
                p.data -= lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data)
