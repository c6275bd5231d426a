"""Full pipeline assembly: intention -> integration -> lifting -> decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import BackbonePlan, MultiScaleFeatures, PointBackbone, PointCloud
from .config import RunConfig
from .decoder import AffordanceDecoder
from .fusion import FusionModule, integrate
from .intention import HiddenStates, IntentionHead
from .lifting import GeometryLifting
from .losses import affordance_loss, cross_entropy, total_loss
from .rng import rng_for
from .tensor import Tensor


@dataclass
class ForwardResult:
    scores: Tensor          # (N, 1), strictly inside (0, 1)
    aux_logits: Tensor      # (1, K)
    fused: Tensor           # (N, d) integrated point features
    embedding: Tensor       # (1, d) lifted intention embedding
    multi_scale: MultiScaleFeatures


class AffordanceModel:
    """Owns every trainable tensor and runs the per-sample forward pass."""

    def __init__(self, config: RunConfig, dtype=np.float32):
        config.validate()
        self.config = config
        m = config.model
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        rng = rng_for(config.seed, "init")
        self.backbone = PointBackbone(
            self.params, "backbone", rng, d=m.d,
            stage_points=m.resolved_stage_points(), radii=m.radii,
            k_max=m.k_max, include_bottleneck_scale=m.include_bottleneck_scale,
            dtype=dtype)
        self.intention = IntentionHead(
            self.params, "intention", rng, d_h=m.d_h, d=m.d,
            n_affordances=m.n_affordances, cont_width=m.cont_width, dtype=dtype)
        self.fusion = FusionModule(
            self.params, "fusion", rng, d=m.d, n_heads=config.fusion.n_heads,
            residual=config.fusion.residual, dtype=dtype)
        self.lifting = GeometryLifting(
            self.params, "lifting", rng, d=m.d, n_scales=m.n_scales,
            mode=config.lifting.mode, share_weights=config.lifting.share_weights,
            coarse_to_fine=config.lifting.coarse_to_fine, dtype=dtype)
        self.decoder = AffordanceDecoder(self.params, "decoder", rng, d=m.d,
                                         dtype=dtype)

    def build_plan(self, cloud: PointCloud) -> BackbonePlan:
        return self.backbone.build_plan(cloud.coords)

    def forward(self, cloud: PointCloud, hidden: HiddenStates,
                plan: BackbonePlan | None = None) -> ForwardResult:
        if plan is None:
            plan = self.build_plan(cloud)
        token_feats = self.intention.project_hidden(hidden)
        fused, ms = integrate(self.backbone, self.fusion, plan, token_feats,
                              stage1=self.config.fusion.stage1,
                              stage2=self.config.fusion.stage2)
        raw = self.intention.project_cont(hidden)
        lifted = self.lifting.lift_all(raw.vector, ms.scales)
        feats = self.decoder.point_to_intention(fused, lifted)
        scores = self.decoder.predict_map(feats)
        logits = self.intention.aux_affordance_logits(hidden)
        return ForwardResult(scores=scores, aux_logits=logits, fused=fused,
                             embedding=lifted, multi_scale=ms)

    def loss(self, result: ForwardResult, cloud: PointCloud,
             hidden: HiddenStates):
        """(total, l_txt, l_aff) for one sample."""
        w = self.config.losses
        l_txt = cross_entropy(result.aux_logits, hidden.affordance_id)
        l_aff = affordance_loss(result.scores, cloud.labels, w)
        return total_loss(l_txt, l_aff, w), l_txt, l_aff

    def predict(self, cloud: PointCloud, hidden: HiddenStates,
                plan: BackbonePlan | None = None) -> np.ndarray:
        """Per-point scores as a flat array (no graph recorded)."""
        from .tensor import no_grad

        with no_grad():
            result = self.forward(cloud, hidden, plan)
        return result.scores.data.reshape(-1).copy()
