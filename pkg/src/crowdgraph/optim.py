"""Adam with per-group learning rates."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import UsageError
from .tensor import Tensor


@dataclass
class ParamGroup:
    params: list[Tensor]
    lr: float


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


class Adam:
    """Bias-corrected Adam.  ``step`` leaves gradients in place; call ``zero_grad``."""

    def __init__(self, groups: Sequence[ParamGroup], beta1=0.9, beta2=0.999, eps=1e-8):
        self.groups = list(groups)
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)

    @classmethod
    def single(cls, params: Sequence[Tensor], lr: float, **kw) -> "Adam":
        return cls([ParamGroup(list(params), lr)], **kw)

    def step(self) -> None:
        for group in self.groups:
            for p in group.params:
                if p.grad is None:
                    raise UsageError(f"Adam step: parameter {p!r} has no gradient")
        st = self.state
        st.step += 1
        b1, b2 = st.beta1, st.beta2
        c1 = 1.0 - b1**st.step
        c2 = 1.0 - b2**st.step
        for group in self.groups:
            for p in group.params:
                key = id(p)
                g = p.grad
                m = st.m.get(key)
                if m is None:
                    m = st.m[key] = np.zeros_like(p.data)
                    st.v[key] = np.zeros_like(p.data)
                v = st.v[key]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                p.data -= group.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)

    def zero_grad(self) -> None:
        for group in self.groups:
            for p in group.params:
                p.grad = None
