"""Parameter containers: a tiny module system over :mod:`crowdgraph.functional`."""
from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import functional as fn
from .tensor import Tensor


class Module:
    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, state in self._bn_states(prefix):
            yield f"{name}.running_mean", state.running_mean
            yield f"{name}.running_var", state.running_var

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.named_parameters()}
        out.update(self.named_buffers())
        return out

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        missing = sorted(set(expected) - set(arrays))
        unexpected = sorted(set(arrays) - set(expected))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing}, unexpected={unexpected}")
        for name, p in self.named_parameters():
            if arrays[name].shape != p.shape:
                raise ValueError(f"{name}: shape {arrays[name].shape} != {p.shape}")
            p.data = np.array(arrays[name], dtype=np.float64)
        for name, state in self._bn_states():
            state.running_mean = np.array(arrays[f"{name}.running_mean"], dtype=np.float64)
            state.running_var = np.array(arrays[f"{name}.running_var"], dtype=np.float64)

    def _bn_states(self, prefix: str = "") -> Iterator[tuple[str, fn.BatchNormState]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, fn.BatchNormState):
                yield full, value
            elif isinstance(value, Module):
                yield from value._bn_states(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._bn_states(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)


def uniform_fan_in(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, gain: float = 1.0) -> Tensor:
    """He-style uniform init, bound sqrt(6 / fan_in)."""
    bound = gain * np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Conv2d(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        c_in: int,
        c_out: int,
        kernel: int = 3,
        stride: int = 1,
        bias: bool = True,
        zero_init: bool = False,
    ):
        self.stride = stride
        self.pad = kernel // 2
        shape = (c_out, c_in, kernel, kernel)
        if zero_init:
            self.weight = Tensor(np.zeros(shape), requires_grad=True)
        else:
            self.weight = uniform_fan_in(rng, shape, c_in * kernel * kernel)
        self.bias: Optional[Tensor] = Tensor(np.zeros(c_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return fn.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class BatchNorm2d(Module):
    def __init__(self, channels: int):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.state = fn.BatchNormState(channels)

    def __call__(self, x: Tensor) -> Tensor:
        return fn.batchnorm2d(x, self.gamma, self.beta, self.state, self.training)


class ConvBNReLU(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int):
        self.conv = Conv2d(rng, c_in, c_out, 3, bias=False)
        self.bn = BatchNorm2d(c_out)

    def __call__(self, x: Tensor) -> Tensor:
        return fn.relu(self.bn(self.conv(x)))


class ConvReLU(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int):
        self.conv = Conv2d(rng, c_in, c_out, 3)

    def __call__(self, x: Tensor) -> Tensor:
        return fn.relu(self.conv(x))
