"""First-order optimizers over flat float64 parameter vectors.

Every optimizer exposes ``step(params, grad, direction)`` returning the new
parameter vector; ``direction="ascent"`` flips the sign of the applied
step. Learning rates can be changed mid-run (pacing) without touching the
accumulated state.
"""
from __future__ import annotations

from typing import Any, Dict, Optional

import numpy as np

from core.exceptions import ContractError, DimensionError, NonFiniteError

DIRECTIONS = {"descent": -1.0, "ascent": 1.0}


class Optimizer:
    """Shared bookkeeping: learning rate, step counter, input checks."""

    name = "base"

    def __init__(self, lr: float):
        if not lr > 0.0:
            raise ContractError(f"learning rate must be positive, got {lr}")
        self.lr = float(lr)
        self.t = 0

    def set_lr(self, lr: float) -> None:
        if not lr > 0.0:
            raise ContractError(f"learning rate must be positive, got {lr}")
        self.lr = float(lr)

    def _check(self, params: np.ndarray, grad: np.ndarray, direction: str):
        params = np.asarray(params, dtype=np.float64)
        grad = np.asarray(grad, dtype=np.float64)
        if params.shape != grad.shape:
            raise DimensionError(f"params {params.shape} and grad {grad.shape} differ")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"{self.name}: non-finite gradient")
        if direction not in DIRECTIONS:
            raise ContractError(f"direction must be ascent or descent, got {direction!r}")
        return params, grad, DIRECTIONS[direction]

    def step(self, params: np.ndarray, grad: np.ndarray, direction: str = "descent") -> np.ndarray:
        raise NotImplementedError

    def state_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "lr": self.lr, "t": self.t}

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        self.lr = float(state["lr"])
        self.t = int(state["t"])


class Sgd(Optimizer):
    name = "sgd"

    def step(self, params, grad, direction="descent"):
        params, grad, sign = self._check(params, grad, direction)
        self.t += 1
        return params + sign * self.lr * grad


class AdaGrad(Optimizer):
    """Per-coordinate step ``lr * g / (sqrt(sum g^2) + eps)``."""

    name = "adagrad"

    def __init__(self, lr: float, eps: float = 1e-8):
        super().__init__(lr)
        self.eps = eps
        self.accum: Optional[np.ndarray] = None

    def step(self, params, grad, direction="descent"):
        params, grad, sign = self._check(params, grad, direction)
        if self.accum is None:
            self.accum = np.zeros_like(params)
        self.t += 1
        self.accum = self.accum + grad ** 2
        return params + sign * self.lr * grad / (np.sqrt(self.accum) + self.eps)

    def state_dict(self):
        state = super().state_dict()
        state.update(eps=self.eps, accum=None if self.accum is None else self.accum.tolist())
        return state

    def load_state_dict(self, state):
        super().load_state_dict(state)
        self.eps = float(state["eps"])
        self.accum = None if state.get("accum") is None else np.asarray(state["accum"], dtype=np.float64)


class Adam(Optimizer):
    """Adam with bias correction."""

    name = "adam"

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None

    def step(self, params, grad, direction="descent"):
        params, grad, sign = self._check(params, grad, direction)
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad ** 2
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params + sign * self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self):
        state = super().state_dict()
        state.update(
            beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            m=None if self.m is None else self.m.tolist(),
            v=None if self.v is None else self.v.tolist(),
        )
        return state

    def load_state_dict(self, state):
        super().load_state_dict(state)
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        self.m = None if state.get("m") is None else np.asarray(state["m"], dtype=np.float64)
        self.v = None if state.get("v") is None else np.asarray(state["v"], dtype=np.float64)


_REGISTRY = {"sgd": Sgd, "adagrad": AdaGrad, "adam": Adam}


def make_optimizer(name: str, lr: float, **kwargs) -> Optimizer:
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise ContractError(f"unknown optimizer {name!r}; choose from {sorted(_REGISTRY)}") from None
    return cls(lr, **kwargs)


def optimizer_from_state(state: Dict[str, Any]) -> Optimizer:
    opt = make_optimizer(state["name"], state["lr"])
    opt.load_state_dict(state)
    return opt
