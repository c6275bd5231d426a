"""Multi-scale geometry lifting of the intention embedding.

Each stage lets the single-row embedding attend over one scale of point
features (query from the embedding, keys/values from the points, scaled
by sqrt(d), no output projection), adds the result residually, and then
applies a residual feed-forward block. Stages run coarse to fine by
default. Two reduced strategies are available for ablations: a single
stage on the finest scale, and mean-pool-plus-concat projection.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .nn import make_linear, make_mlp
from .tensor import Tensor, concat, matmul, softmax_lastdim, tmean, transpose

LIFT_MODES = ("multi", "single", "concat")


class LiftStage:
    """One residual attention + feed-forward update of the embedding."""

    def __init__(self, params: dict, prefix: str, rng, d: int, dtype=np.float32):
        self.d = d
        self.wq = make_linear(params, f"{prefix}.q", rng, d, d, dtype, bias=False)
        self.wk = make_linear(params, f"{prefix}.k", rng, d, d, dtype, bias=False)
        self.wv = make_linear(params, f"{prefix}.v", rng, d, d, dtype, bias=False)
        self.ffn = make_mlp(params, f"{prefix}.ffn", rng, [d, 4 * d, d], dtype)

    def __call__(self, embedding: Tensor, point_feats: Tensor) -> Tensor:
        if embedding.shape != (1, self.d):
            raise ShapeError(f"embedding must be (1, {self.d}), got {embedding.shape}")
        if point_feats.shape[1] != self.d or point_feats.shape[0] < 1:
            raise ShapeError(f"point features must be (N, {self.d}), "
                             f"got {point_feats.shape}")
        q = self.wq(embedding)
        k = self.wk(point_feats)
        v = self.wv(point_feats)
        attn = softmax_lastdim(matmul(q, transpose(k)) * (1.0 / np.sqrt(self.d)))
        updated = embedding + matmul(attn, v)
        return updated + self.ffn(updated)


class GeometryLifting:
    """Applies the configured lifting strategy over the feature pyramid."""

    def __init__(self, params: dict, prefix: str, rng, d: int, n_scales: int = 3,
                 mode: str = "multi", share_weights: bool = False,
                 coarse_to_fine: bool = True, dtype=np.float32):
        if mode not in LIFT_MODES:
            raise ConfigError(f"lifting mode must be one of {LIFT_MODES}, got {mode!r}")
        self.d = d
        self.n_scales = n_scales
        self.mode = mode
        self.share_weights = share_weights
        self.coarse_to_fine = coarse_to_fine
        n_stage_params = 1 if share_weights else n_scales
        self.stages = [LiftStage(params, f"{prefix}.stage{i + 1}", rng, d, dtype)
                       for i in range(n_stage_params)]
        self.concat_proj = make_linear(params, f"{prefix}.concat", rng,
                                       2 * d, d, dtype)

    def _stage(self, i: int) -> LiftStage:
        return self.stages[0] if self.share_weights else self.stages[i]

    def lift_all(self, embedding: Tensor, scales) -> Tensor:
        """Lift a (1, d) embedding over [(coords, feats)] listed coarse->fine."""
        if self.mode == "multi" and len(scales) != self.n_scales:
            raise ContractError(
                f"multi mode expects {self.n_scales} scales, got {len(scales)}")
        if not scales:
            raise ContractError("need at least one feature scale")
        if self.mode == "multi":
            order = range(len(scales)) if self.coarse_to_fine \
                else reversed(range(len(scales)))
            out = embedding
            for i in order:
                out = self._stage(i)(out, scales[i][1])
            return out
        finest = scales[-1][1]
        if self.mode == "single":
            return self._stage(self.n_scales - 1)(embedding, finest)
        pooled = tmean(finest, axis=0, keepdims=True)
        return self.concat_proj(concat([embedding, pooled], axis=1))
