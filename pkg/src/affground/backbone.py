"""Point-cloud encoder/decoder backbone.

The encoder stacks three set-abstraction stages (sample centers, group
neighbors in a ball, run a shared per-point MLP, max-pool per group); the
decoder runs three feature-propagation stages (inverse-distance 3-NN
interpolation plus skip connection and a unit MLP) back to full
resolution. All geometry (sampling indices, groupings, interpolation
neighbors) is computed once per cloud into a :class:`BackbonePlan` and is
not differentiated; gradients flow only through feature MLPs.

Clouds are expected centered at their centroid with max norm 1 (see
:func:`normalize_unit_sphere`); normalization is applied when data is
generated, never re-applied here, so perturbation magnitudes stay
meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .nn import MLP, make_mlp
from .tensor import Tensor, concat, gather_rows, max_reduce, tsum

EPS_INTERP = 1e-8


@dataclass
class PointCloud:
    """N x 3 coordinates plus optional per-point affordance scores."""

    coords: np.ndarray
    labels: np.ndarray | None = None
    id: str = ""
    class_name: str = ""
    affordance_name: str = ""

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float32)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise ContractError(f"coords must be (N, 3), got {self.coords.shape}")
        if self.coords.shape[0] < 4:
            raise ContractError(f"need at least 4 points, got {self.coords.shape[0]}")
        if not np.isfinite(self.coords).all():
            raise ContractError("coords contain non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float32).reshape(-1)
            if self.labels.shape[0] != self.coords.shape[0]:
                raise ContractError(
                    f"{self.labels.shape[0]} labels for {self.coords.shape[0]} points")
            if self.labels.min() < 0.0 or self.labels.max() > 1.0:
                raise ContractError("labels must lie in [0, 1]")

    @property
    def n_points(self) -> int:
        return self.coords.shape[0]


def normalize_unit_sphere(coords: np.ndarray) -> np.ndarray:
    """Center at the centroid and scale the max norm to 1."""
    coords = np.asarray(coords, dtype=np.float32)
    centered = coords - coords.mean(axis=0, keepdims=True)
    scale = np.linalg.norm(centered, axis=1).max()
    if scale > 0:
        centered = centered / scale
    return centered.astype(np.float32)


def farthest_point_sample(coords: np.ndarray, m: int) -> np.ndarray:
    """Greedy max-min selection of m distinct point indices.

    The first pick is the point farthest from the centroid; every tie
    (including later max-min ties) is broken toward the lowest index.
    """
    n = coords.shape[0]
    if not 1 <= m <= n:
        raise ContractError(f"cannot sample {m} points from {n}")
    coords = np.asarray(coords, dtype=np.float64)
    centroid = coords.mean(axis=0)
    dist = np.square(coords - centroid).sum(axis=1)
    selected = np.empty(m, dtype=np.int64)
    selected[0] = int(np.argmax(dist))  # argmax returns the first max index
    min_dist = np.square(coords - coords[selected[0]]).sum(axis=1)
    min_dist[selected[0]] = -1.0  # never re-pick
    for i in range(1, m):
        nxt = int(np.argmax(min_dist))
        selected[i] = nxt
        d = np.square(coords - coords[nxt]).sum(axis=1)
        np.minimum(min_dist, d, out=min_dist)
        min_dist[nxt] = -1.0
    return selected


def ball_query(centers: np.ndarray, coords: np.ndarray, radius: float,
               k_max: int) -> list:
    """Indices within ``radius`` of each center, nearest first, up to k_max.

    A center with no point in range gets the globally nearest point so no
    group is ever empty.
    """
    if radius <= 0:
        raise ContractError("radius must be positive")
    if k_max < 1:
        raise ContractError("k_max must be at least 1")
    centers = np.asarray(centers, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    d2 = np.square(centers[:, None, :] - coords[None, :, :]).sum(axis=2)
    r2 = float(radius) ** 2
    groups = []
    for row in d2:
        inside = np.flatnonzero(row <= r2)
        if inside.size == 0:
            groups.append(np.array([int(np.argmin(row))], dtype=np.int64))
            continue
        order = np.argsort(row[inside], kind="stable")  # ties keep index order
        groups.append(inside[order][:k_max].astype(np.int64))
    return groups


def interpolation_neighbors(src_coords: np.ndarray, dst_coords: np.ndarray,
                            k: int = 3):
    """Nearest-source indices and normalized inverse-distance weights."""
    if src_coords.shape[0] == 0:
        raise ContractError("interpolation needs a non-empty source set")
    src = np.asarray(src_coords, dtype=np.float64)
    dst = np.asarray(dst_coords, dtype=np.float64)
    k = min(k, src.shape[0])
    d2 = np.square(dst[:, None, :] - src[None, :, :]).sum(axis=2)
    idx = np.argsort(d2, axis=1, kind="stable")[:, :k]
    dist = np.sqrt(np.take_along_axis(d2, idx, axis=1))
    w = 1.0 / (dist + EPS_INTERP)
    w /= w.sum(axis=1, keepdims=True)
    return idx.astype(np.int64), w.astype(np.float64)


@dataclass
class SAPlan:
    sample_idx: np.ndarray      # (m,) into the previous level
    group_idx: np.ndarray       # (m, k) padded with each group's first entry
    rel_coords: np.ndarray      # (m, k, 3) member minus center
    centers: np.ndarray         # (m, 3)


@dataclass
class FPPlan:
    nn_idx: np.ndarray          # (n_dst, k) into the source level
    weights: np.ndarray         # (n_dst, k)


@dataclass
class BackbonePlan:
    """All per-cloud geometry the backbone needs, computed once."""

    level_coords: list          # [0]=input cloud, then one entry per SA stage
    sa: list = field(default_factory=list)
    fp: list = field(default_factory=list)


class SetAbstraction:
    """Sample/group/encode/pool stage producing coarser features."""

    def __init__(self, params, prefix, rng, in_dim, hidden, out, dtype=np.float32):
        self.mlp = make_mlp(params, prefix, rng, [in_dim + 3, hidden, out], dtype)
        self.out_dim = out
        self.dtype = dtype

    def __call__(self, feats: Tensor | None, plan: SAPlan) -> Tensor:
        m, k, _ = plan.rel_coords.shape
        rel = Tensor(plan.rel_coords.reshape(m * k, 3).astype(self.dtype))
        if feats is None:
            x = rel
        else:
            member = gather_rows(feats, plan.group_idx.reshape(-1))
            x = concat([rel, member], axis=1)
        encoded = self.mlp(x).reshape(m, k, self.out_dim)
        return max_reduce(encoded, axis=1)


class FeaturePropagation:
    """Interpolate coarse features to finer points, merge skip, run unit MLP."""

    def __init__(self, params, prefix, rng, in_dim, out, dtype=np.float32):
        self.mlp = make_mlp(params, prefix, rng, [in_dim, out, out], dtype)
        self.dtype = dtype

    def __call__(self, src_feats: Tensor, plan: FPPlan,
                 skip_feats: Tensor | None) -> Tensor:
        n_dst, k = plan.nn_idx.shape
        d = src_feats.shape[1]
        neighbor = gather_rows(src_feats, plan.nn_idx.reshape(-1))
        w = Tensor(plan.weights.reshape(n_dst * k, 1).astype(self.dtype))
        mixed = tsum((neighbor * w).reshape(n_dst, k, d), axis=1)
        if skip_feats is not None:
            mixed = concat([mixed, skip_feats], axis=1)
        return self.mlp(mixed)


@dataclass
class MultiScaleFeatures:
    """Decoder outputs: per-scale features (coarse to fine) plus full map."""

    bottleneck: Tensor
    bottleneck_coords: np.ndarray
    scales: list                # [(coords, Tensor)] coarse -> fine
    full_res: Tensor


def default_stage_points(n: int) -> list:
    return [n // 4, n // 16, n // 64]


class PointBackbone:
    """Three-stage set-abstraction encoder and feature-propagation decoder."""

    def __init__(self, params: dict, prefix: str, rng, d: int,
                 stage_points, radii=(0.1, 0.2, 0.4), k_max=(32, 32, 32),
                 include_bottleneck_scale: bool = True, dtype=np.float32):
        if len(stage_points) != 3 or len(radii) != 3 or len(k_max) != 3:
            raise ContractError("backbone expects exactly three stages")
        if any(a <= b for a, b in zip(stage_points, stage_points[1:])):
            raise ContractError(f"stage points must strictly decrease: {stage_points}")
        self.d = d
        self.stage_points = list(stage_points)
        self.radii = list(radii)
        self.k_max = list(k_max)
        self.include_bottleneck_scale = include_bottleneck_scale
        self.dtype = dtype

        widths = [max(1, d // 4), max(1, d // 2), d]
        self.sa_stages = []
        in_dim = 3  # absolute coordinates double as the initial features
        for i, w in enumerate(widths):
            stage = SetAbstraction(params, f"{prefix}.sa{i + 1}", rng,
                                   in_dim, w, w, dtype)
            self.sa_stages.append(stage)
            in_dim = w
        # decoder skips: the two finer encoder stages, then the raw coords
        skip_dims = [widths[1], widths[0], 3]
        self.fp_stages = [
            FeaturePropagation(params, f"{prefix}.fp{i + 1}", rng,
                               d + skip_dims[i], d, dtype)
            for i in range(3)
        ]

    # -- geometry ------------------------------------------------------

    def build_plan(self, coords: np.ndarray) -> BackbonePlan:
        coords = np.asarray(coords, dtype=np.float32)
        n = coords.shape[0]
        if n < self.stage_points[0]:
            raise ContractError(
                f"cloud has {n} points but the first stage samples "
                f"{self.stage_points[0]}")
        plan = BackbonePlan(level_coords=[coords])
        level = coords
        for m, r, k in zip(self.stage_points, self.radii, self.k_max):
            idx = farthest_point_sample(level, m)
            centers = level[idx]
            groups = ball_query(centers, level, r, k)
            group_idx = np.empty((m, k), dtype=np.int64)
            for g, members in enumerate(groups):
                padded = np.full(k, members[0], dtype=np.int64)
                padded[: len(members)] = members[:k]
                group_idx[g] = padded
            rel = level[group_idx] - centers[:, None, :]
            plan.sa.append(SAPlan(idx, group_idx, rel.astype(np.float32), centers))
            plan.level_coords.append(centers)
            level = centers
        # propagation runs bottleneck -> ... -> full resolution
        for i in range(3):
            src = plan.level_coords[3 - i]
            dst = plan.level_coords[2 - i]
            nn_idx, w = interpolation_neighbors(src, dst)
            plan.fp.append(FPPlan(nn_idx, w))
        return plan

    # -- features ------------------------------------------------------

    def encode(self, plan: BackbonePlan):
        """Run the SA stack; returns (bottleneck, skip features fine->coarse).

        skips[0] is the raw full-resolution coordinate features, then one
        entry per abstraction stage except the bottleneck itself.
        """
        feats = Tensor(plan.level_coords[0].astype(self.dtype))
        skips = [feats]
        for stage, sa_plan in zip(self.sa_stages, plan.sa):
            feats = stage(feats, sa_plan)
            skips.append(feats)
        return feats, skips[:-1]

    def decode(self, bottleneck: Tensor, skips, plan: BackbonePlan) -> MultiScaleFeatures:
        if bottleneck.shape != (self.stage_points[-1], self.d):
            raise ShapeError(
                f"bottleneck shape {bottleneck.shape} does not match "
                f"({self.stage_points[-1]}, {self.d})")
        scales = []
        if self.include_bottleneck_scale:
            scales.append((plan.level_coords[3], bottleneck))
        feats = bottleneck
        for i, fp in enumerate(self.fp_stages):
            feats = fp(feats, plan.fp[i], skips[2 - i])
            if i < 2:
                scales.append((plan.level_coords[2 - i], feats))
        if not self.include_bottleneck_scale:
            scales.append((plan.level_coords[0], feats))
        return MultiScaleFeatures(
            bottleneck=bottleneck,
            bottleneck_coords=plan.level_coords[3],
            scales=scales,
            full_res=feats,
        )
