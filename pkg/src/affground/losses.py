"""Training objective: focal + dice on the map, cross-entropy on the label.

Continuous ground-truth heatmaps are binarized at y > 0 for the overlap
losses; metric code keeps the soft values where they matter. Focal and
dice are mean/ratio formulations so the balancing weights do not depend
on cloud size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import Tensor, clip, exp, log, slice_cols, tsum

SCORE_EPS = 1e-7


@dataclass
class LossWeights:
    lambda_txt: float = 1.0
    lambda_aff: float = 2.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    dice_eps: float = 1.0

    def __post_init__(self):
        if self.lambda_txt < 0 or self.lambda_aff < 0:
            raise ConfigError("loss weights must be non-negative")
        if not 0 < self.focal_alpha < 1:
            raise ConfigError("focal alpha must lie in (0, 1)")
        if self.focal_gamma < 0:
            raise ConfigError("focal gamma must be non-negative")
        if self.dice_eps <= 0:
            raise ConfigError("dice epsilon must be positive")


def binarize_targets(y: np.ndarray) -> np.ndarray:
    return (np.asarray(y) > 0).astype(np.float64)


def _as_column(p: Tensor) -> Tensor:
    if p.ndim == 1:
        return p.reshape(-1, 1)
    if p.ndim == 2 and p.shape[1] == 1:
        return p
    raise ContractError(f"scores must be (N,) or (N, 1), got {p.shape}")


def _validate_scores(p: Tensor):
    if p.data.min() < 0.0 or p.data.max() > 1.0:
        raise ContractError("predicted scores must lie in [0, 1]")


def focal_loss(p: Tensor, y: np.ndarray, alpha: float = 0.25,
               gamma: float = 2.0) -> Tensor:
    """Mean focal term; y is binarized at y > 0."""
    p = _as_column(p)
    yb = binarize_targets(y).reshape(-1, 1)
    if yb.shape[0] != p.shape[0]:
        raise ContractError(f"{yb.shape[0]} targets for {p.shape[0]} scores")
    _validate_scores(p)
    p = clip(p, SCORE_EPS, 1.0 - SCORE_EPS)
    y_t = Tensor(yb.astype(p.dtype))
    p_t = p * y_t + (1.0 - p) * (1.0 - y_t)
    alpha_t = Tensor((alpha * yb + (1.0 - alpha) * (1.0 - yb)).astype(p.dtype))
    return (-(alpha_t * (1.0 - p_t) ** gamma * log(p_t))).mean()


def dice_loss(p: Tensor, y: np.ndarray, eps: float = 1.0) -> Tensor:
    """1 - smoothed overlap ratio between scores and binarized targets."""
    p = _as_column(p)
    yb = binarize_targets(y).reshape(-1, 1)
    if yb.shape[0] != p.shape[0]:
        raise ContractError(f"{yb.shape[0]} targets for {p.shape[0]} scores")
    _validate_scores(p)
    y_t = Tensor(yb.astype(p.dtype))
    overlap = 2.0 * tsum(p * y_t) + eps
    total = tsum(p) + float(yb.sum()) + eps
    return 1.0 - overlap / total


def affordance_loss(p: Tensor, y: np.ndarray, weights: LossWeights | None = None) -> Tensor:
    w = weights or LossWeights()
    return focal_loss(p, y, w.focal_alpha, w.focal_gamma) + \
        dice_loss(p, y, w.dice_eps)


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """Scalar cross-entropy of a (1, K) logit row against an integer label."""
    if logits.ndim != 2 or logits.shape[0] != 1:
        raise ContractError(f"logits must be (1, K), got {logits.shape}")
    k = logits.shape[1]
    if not 0 <= target < k:
        raise ContractError(f"target {target} out of range for {k} classes")
    # shift by the (constant) max so exp never overflows; the gradient of
    # logsumexp is unchanged by the shift
    shift = float(logits.data.max())
    lse = log(tsum(exp(logits - shift))) + shift
    return lse - tsum(slice_cols(logits, target, target + 1))


def total_loss(l_txt: Tensor, l_aff: Tensor, weights: LossWeights) -> Tensor:
    """Weighted sum of the auxiliary text loss and the affordance loss."""
    if weights.lambda_txt < 0 or weights.lambda_aff < 0:
        raise ConfigError("loss weights must be non-negative")
    return weights.lambda_txt * l_txt + weights.lambda_aff * l_aff
