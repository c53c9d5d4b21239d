"""Parameter containers shared by the networks."""
from __future__ import annotations

import numpy as np

from .tensor import DimensionError, Tensor, linear


class Module:
    """Holds named parameters and child modules.

    Names are dot-separated paths, e.g. ``ain.gru.w_ih``, which is also how
    they appear in checkpoint files.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self._params.items()}
        for cname, child in self._children.items():
            out.update(child.named_parameters(f"{prefix}{cname}."))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = self.named_parameters()
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise KeyError(f"parameter names differ: missing={missing} unexpected={extra}")
        for name, arr in state.items():
            if name not in own:
                continue
            if own[name].shape != tuple(np.shape(arr)):
                raise DimensionError(f"{name}: checkpoint shape {np.shape(arr)} vs model {own[name].shape}")
            own[name].data[...] = arr

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None


class Linear(Module):
    """``y = x W^T + b`` over rows, with ``W`` stored as ``[out x in]``."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / np.sqrt(n_in)
        self.weight = self.add_param("weight", rng.uniform(-bound, bound, (n_out, n_in)))
        self.bias = self.add_param("bias", rng.uniform(-bound, bound, (1, n_out)))
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)
