"""Small module system: named parameters, buffers, train/eval switching."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor

INIT_STD = 0.02


class Module:
    """Base class; parameters and submodules are discovered from attributes
    in assignment order, which fixes the checkpoint layout."""

    training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if isinstance(value, (Module, Parameter)):
                yield key, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in self._children():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            else:
                yield from value.named_parameters(path + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, buf in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{key}", buf
        for key, value in self._children():
            if not isinstance(value, Parameter):
                yield from value.named_buffers(f"{prefix}{key}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if not isinstance(value, Parameter):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def name_parameters(self, prefix: str = "") -> "Module":
        """Stamp dotted paths onto parameters; names must be unique."""
        seen = set()
        for name, p in self.named_parameters(prefix):
            if name in seen:
                raise ValueError(f"duplicate parameter name {name}")
            seen.add(name)
            p.name = name
        return self

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, p in self.named_parameters():
            out[name] = p.data
        for name, buf in self.named_buffers():
            out[name] = buf
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        if set(arrays) != expected:
            missing = sorted(expected - set(arrays))
            extra = sorted(set(arrays) - expected)
            raise KeyError(f"state mismatch; missing={missing[:5]} unexpected={extra[:5]}")
        for name, arr in arrays.items():
            target = params[name].data if name in params else buffers[name]
            if target.shape != arr.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {target.shape}")
            target[...] = arr

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class ModuleList(Module):
    def __init__(self, modules=()):
        self._items: list[Module] = list(modules)

    def _children(self):
        for i, m in enumerate(self._items):
            yield str(i), m

    def append(self, m: Module) -> None:
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Sequential(ModuleList):
    def forward(self, x):
        for m in self._items:
            x = m(x)
        return x


def _normal(rng: np.random.Generator, shape, std: float, mean: float = 0.0) -> np.ndarray:
    return (mean + std * rng.standard_normal(shape)).astype(np.float32)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1, padding: int | None = None,
                 bias: bool = True, rng: np.random.Generator | None = None, std: float | None = None):
        rng = rng or np.random.default_rng(0)
        std = INIT_STD if std is None else std
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.weight = Parameter(_normal(rng, (cout, cin, k, k), std))
        self.bias = Parameter(np.zeros(cout, np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int,
                 rng: np.random.Generator | None = None, std: float | None = None):
        rng = rng or np.random.default_rng(0)
        std = INIT_STD if std is None else std
        self.stride = stride
        self.weight = Parameter(_normal(rng, (cin, cout, k, k), std))
        self.bias = Parameter(np.zeros(cout, np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d_transpose(x, self.weight, self.bias, self.stride)


class BatchNorm2d(Module):
    def __init__(self, c: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.weight = Parameter(_normal(rng, (c,), INIT_STD, mean=1.0))
        self.bias = Parameter(np.zeros(c, np.float32))
        self._buffers = OrderedDict(
            running_mean=np.zeros(c, np.float32), running_var=np.ones(c, np.float32)
        )

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(x, self.weight, self.bias, self._buffers["running_mean"],
                            self._buffers["running_var"], self.training)


class PReLU(Module):
    def __init__(self, c: int, init: float = 0.25):
        self.weight = Parameter(np.full(c, init, np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return F.prelu(x, self.weight)


class LeakyReLU(Module):
    def __init__(self, slope: float):
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        return F.leaky_relu(x, self.slope)


class ReLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return F.relu(x)


class Sigmoid(Module):
    def forward(self, x: Tensor) -> Tensor:
        return F.sigmoid(x)


class Linear(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator | None = None,
                 std: float | None = None):
        rng = rng or np.random.default_rng(0)
        std = INIT_STD if std is None else std
        self.weight = Parameter(_normal(rng, (fout, fin), std))
        self.bias = Parameter(np.zeros(fout, np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return F.dense(x, self.weight, self.bias)


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        self.p = p
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return F.dropout(x, self.p, self.rng, self.training)
