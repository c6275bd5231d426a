"""AdamW with decoupled weight decay and a linear learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .tensor import Tensor


def linear_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Learning rate for 0-based optimizer step ``step``, decaying to zero.

    The first step runs at the full base rate; the rate after
    ``total_steps`` steps is zero.
    """
    if total_steps <= 0:
        raise ContractError("total_steps must be positive")
    return base_lr * max(0.0, (total_steps - step) / total_steps)


class AdamW:
    """Bias-corrected Adam with weight decay applied directly to parameters.

    Each step first shrinks every parameter by ``(1 - lr * weight_decay)``
    and then applies the moment-based update. A zero gradient with zero
    weight decay therefore leaves parameters untouched.
    """

    def __init__(self, params: dict, lr=1e-4, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01):
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.exp_avg = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.exp_avg_sq = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - b1 ** t
        bias2 = 1.0 - b2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ContractError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name} with shape {p.data.shape}")
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            m = self.exp_avg[name]
            v = self.exp_avg_sq[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.data -= (lr * update).astype(p.data.dtype, copy=False)

    # -- persistence -----------------------------------------------------

    def state_arrays(self):
        """Moment buffers and step count, for checkpointing."""
        return {
            "step": self.step_count,
            "exp_avg": self.exp_avg,
            "exp_avg_sq": self.exp_avg_sq,
        }

    def load_state_arrays(self, state):
        self.step_count = int(state["step"])
        for name, p in self.params.items():
            for key, target in (("exp_avg", self.exp_avg),
                                ("exp_avg_sq", self.exp_avg_sq)):
                buf = np.asarray(state[key][name])
                if buf.shape != p.data.shape:
                    raise ContractError(
                        f"optimizer state for {name} has shape {buf.shape}, "
                        f"expected {p.data.shape}")
                target[name] = buf.astype(p.data.dtype, copy=True)


def adamw_step(param: Tensor, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
               step: int, lr: float, betas=(0.9, 0.999), eps=1e-8,
               weight_decay=0.0):
    """Single-tensor AdamW update, exposed for direct testing.

    ``step`` is the 1-based count after this update. Mutates param.data,
    m, and v in place.
    """
    if grad.shape != param.data.shape:
        raise ContractError(f"grad shape {grad.shape} vs param {param.data.shape}")
    b1, b2 = betas
    if weight_decay:
        param.data *= 1.0 - lr * weight_decay
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * (grad * grad)
    mhat = m / (1.0 - b1 ** step)
    vhat = v / (1.0 - b2 ** step)
    param.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(param.data.dtype,
                                                             copy=False)
