"""AdamW with decoupled weight decay over named parameter tensors."""

from dataclasses import dataclass, field

import numpy as np

from adstext import kernels
from adstext.errors import NumericsError


@dataclass
class AdamW:
    """Holds per-parameter moments and applies fused update steps.

    Defaults are standard transformer fine-tuning values. `params` maps
    name -> Tensor; each tensor's .grad is consumed (and cleared) by step().
    """

    params: dict
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    _m: dict = field(default_factory=dict, repr=False)
    _v: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for name, p in self.params.items():
            self._m[name] = np.zeros_like(p.data)
            self._v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        """Update every parameter that accumulated a gradient."""
        self.t += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise NumericsError(
                    f"gradient shape {p.grad.shape} does not match parameter "
                    f"{name!r} of shape {p.data.shape}"
                )
            kernels.adamw_update(
                p.data,
                p.grad,
                self._m[name],
                self._v[name],
                self.t,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                self.weight_decay,
            )
        self.zero_grad()
