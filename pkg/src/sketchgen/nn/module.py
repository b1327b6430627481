"""Parameter containers and initialization helpers."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Module:
    """Base class: walks its attributes to find parameters and submodules.

    Parameter names are dotted paths ("encoder.conv1.w"), stable across runs
    because they follow attribute definition order.  Checkpoints are plain
    name -> ndarray mappings.
    """

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            yield from _walk(f"{prefix}{key}", value)

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def state_dict(self):
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(
                f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}"
            )
        for name, tensor in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {tensor.data.shape}")
            tensor.data = arr.copy()

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _walk(name, value):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(f"{name}.")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(f"{name}.{i}", item)
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk(f"{name}.{key}", item)


def param(rng, *shape, fan_in=None, gain=1.0):
    """He-style normal init; fan_in defaults to the product of all but the
    last axis."""
    if fan_in is None:
        fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
    std = gain * np.sqrt(2.0 / max(fan_in, 1))
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def zeros_param(*shape):
    return Tensor(np.zeros(shape), requires_grad=True)
