"""Layer building blocks on top of the autodiff core.

A tiny Module system: parameters and submodules auto-register through
attribute assignment, state dicts are flat name->array maps (parameters
plus batch-norm running statistics) in registration order.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

INIT_STD = 0.1  # zero-mean Gaussian with variance 1e-2 for new weights


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, arr: np.ndarray) -> None:
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)

    def named_parameters(self, prefix: str = ""):
        for k, p in self._params.items():
            yield prefix + k, p
        for k, m in self._modules.items():
            yield from m.named_parameters(prefix + k + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for k, b in self._buffers.items():
            yield prefix + k, b
        for k, m in self._modules.items():
            yield from m.named_buffers(prefix + k + ".")

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.tensor.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.tensor.data for name, p in self.named_parameters()}
        for name, b in self.named_buffers():
            out[name] = b
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"checkpoint missing entries: {sorted(missing)}")
        for name, p in self.named_parameters():
            if state[name].shape != p.tensor.data.shape:
                raise ValueError(f"{name}: shape {state[name].shape} vs {p.tensor.data.shape}")
            p.tensor.data = state[name].astype(p.tensor.data.dtype).copy()
            p.velocity = np.zeros_like(p.tensor.data)
        for name, b in self.named_buffers():
            b[...] = state[name].astype(b.dtype)

    def astype(self, dtype) -> "Module":
        """Cast all parameters/buffers (float64 is used for gradcheck)."""
        for _, p in self.named_parameters():
            p.tensor.data = p.tensor.data.astype(dtype)
            p.velocity = p.velocity.astype(dtype)
        for k, m in self._modules.items():
            m.astype(dtype)
        for k in list(self._buffers):
            cast = self._buffers[k].astype(dtype)
            self.register_buffer(k, cast)
        return self


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(len(self._items)), m)
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Conv2d(Module):
    def __init__(self, cin, cout, k, stride=1, pad=0, rng=None,
                 zero_init=False, lr_mult=1.0):
        super().__init__()
        self.stride, self.pad = stride, pad
        if zero_init:
            w = np.zeros((cout, cin, k, k), dtype=np.float32)
        else:
            w = (rng.standard_normal((cout, cin, k, k)) * INIT_STD).astype(np.float32)
        self.weight = Parameter(w, lr_mult=lr_mult)
        self.bias = Parameter(np.zeros(cout, dtype=np.float32), lr_mult=lr_mult)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight.tensor, self.bias.tensor, self.stride, self.pad)


class Linear(Module):
    def __init__(self, din, dout, rng, lr_mult=1.0):
        super().__init__()
        w = (rng.standard_normal((din, dout)) * INIT_STD).astype(np.float32)
        self.weight = Parameter(w, lr_mult=lr_mult)
        self.bias = Parameter(np.zeros(dout, dtype=np.float32), lr_mult=lr_mult)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weight.tensor, self.bias.tensor)


class BatchNorm(Module):
    def __init__(self, c, lr_mult=1.0):
        super().__init__()
        self.gamma = Parameter(np.ones(c, dtype=np.float32), lr_mult=lr_mult)
        self.beta = Parameter(np.zeros(c, dtype=np.float32), lr_mult=lr_mult)
        self.register_buffer("running_mean", np.zeros(c, dtype=np.float32))
        self.register_buffer("running_var", np.ones(c, dtype=np.float32))

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return ad.batchnorm(x, self.gamma.tensor, self.beta.tensor,
                            self.running_mean, self.running_var, train)


class ConvBNReLU(Module):
    """The Conv+BN+ReLU stack both branches are built from."""

    def __init__(self, cin, cout, k, stride=1, pad=0, rng=None, lr_mult=1.0):
        super().__init__()
        self.conv = Conv2d(cin, cout, k, stride, pad, rng, lr_mult=lr_mult)
        self.bn = BatchNorm(cout, lr_mult=lr_mult)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return ad.relu(self.bn(self.conv(x), train))


class LinearBNReLU(Module):
    """Shared-weight per-point perceptron layer (1x1 conv equivalent)."""

    def __init__(self, din, dout, rng, lr_mult=1.0):
        super().__init__()
        self.fc = Linear(din, dout, rng, lr_mult=lr_mult)
        self.bn = BatchNorm(dout, lr_mult=lr_mult)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return ad.relu(self.bn(self.fc(x), train))
