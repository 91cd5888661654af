"""Instance features, memory banks, EMA targets, and the contrastive loss.

The learning side works on BEV feature maps produced by a deliberately
small encoder: each cell's feature is tanh(W u + b) of that cell's
inputs u = (normalized x, normalized y, log1p(density)).  Foreground
points sampled on instance footprints pull their bilinear features
toward the temporal average of the same instance's target-network
features (stored raw in a per-track memory bank, normalized at use), and
away from other instances and background points, through a temperature-
scaled softmax over dot products.  The loss gradient is analytic,
including the chain rule through L2 normalization, and is verified
against central finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bev import (BevGrid, CameraModel, DepthBins, FeatureMap,
                  bilinear_coefficients, dropout_probs, lift_splat,
                  merge_depth_probs, occupancy_mask, sample_bilinear_many)
from .cluster import Cluster, ClusteringResult
from .errors import (BadTemperature, NoHistory, NormalizationDegenerate,
                     NoSamples, NotNormalized, SkippedFrame)
from .geom import Frame
from .rng import substream

UNIT_NORM_TOL = 1e-6        # loss inputs may deviate this far from unit norm
DEGENERATE_NORM = 1e-12     # below this, a vector cannot be normalized


# -------------------------------------------------------------- toy encoder

@dataclass(frozen=True)
class EncoderParams:
    """Affine-plus-tanh map from per-cell inputs to C-dim cell features."""

    weight: np.ndarray          # (C, 3)
    bias: np.ndarray            # (C,)

    def __post_init__(self) -> None:
        if self.weight.ndim != 2 or self.weight.shape[1] != 3:
            raise ValueError(f"weight must be (C, 3), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError("bias shape must match weight rows")
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise ValueError("parameters must be finite")

    @property
    def channels(self) -> int:
        return self.weight.shape[0]

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.weight.ravel(), self.bias])

    @staticmethod
    def unflatten(vec: np.ndarray, channels: int) -> "EncoderParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (channels * 3 + channels,):
            raise ValueError(f"expected {channels * 4} values, got {vec.shape}")
        return EncoderParams(weight=vec[: channels * 3].reshape(channels, 3),
                             bias=vec[channels * 3:].copy())


def init_encoder(seed: int, channels: int = 16) -> EncoderParams:
    rng = substream(seed, "encoder")
    return EncoderParams(weight=rng.normal(0.0, 1.0, size=(channels, 3)),
                         bias=rng.normal(0.0, 0.1, size=channels))


def _cell_inputs(grid: BevGrid, density: np.ndarray) -> np.ndarray:
    """(H, W, 3) per-cell encoder inputs: centered/scaled x, y, log1p(mass)."""
    if density.shape != (grid.height, grid.width):
        raise ValueError(
            f"density shape {density.shape} does not match grid "
            f"{grid.height}x{grid.width}")
    if (density < 0).any():
        raise ValueError("density must be non-negative")
    cols = grid.x_min + (np.arange(grid.width) + 0.5) * grid.cell
    rows = grid.y_min + (np.arange(grid.height) + 0.5) * grid.cell
    x_mid, x_half = (grid.x_max + grid.x_min) / 2, (grid.x_max - grid.x_min) / 2
    y_mid, y_half = (grid.y_max + grid.y_min) / 2, (grid.y_max - grid.y_min) / 2
    u = np.empty((grid.height, grid.width, 3))
    u[..., 0] = ((cols - x_mid) / x_half)[None, :]
    u[..., 1] = ((rows - y_mid) / y_half)[:, None]
    u[..., 2] = np.log1p(density)
    return u


def encode_bev(params: EncoderParams, grid: BevGrid,
               density: np.ndarray) -> FeatureMap:
    """Cell features tanh(W u + b) over the whole grid."""
    u = _cell_inputs(grid, density)
    feats = np.tanh(u @ params.weight.T + params.bias)
    return FeatureMap(grid=grid, features=feats)


def encoder_backprop(params: EncoderParams, grid: BevGrid, density: np.ndarray,
                     grad_features: np.ndarray) -> EncoderParams:
    """Parameter gradient given the loss gradient at every cell feature.

    Returns an EncoderParams holding (dL/dW, dL/db) -- same container,
    gradient contents.
    """
    u = _cell_inputs(grid, density)
    y = np.tanh(u @ params.weight.T + params.bias)
    delta = (1.0 - y * y) * grad_features            # (H, W, C)
    d_weight = np.einsum("hwc,hwk->ck", delta, u)
    d_bias = delta.sum(axis=(0, 1))
    return EncoderParams(weight=d_weight, bias=d_bias)


def ema_update(target: EncoderParams, online: EncoderParams,
               momentum: float) -> EncoderParams:
    """target' = momentum * target + (1 - momentum) * online, elementwise."""
    if not 0.0 <= momentum <= 1.0:
        raise ValueError(f"momentum must be in [0, 1], got {momentum}")
    if target.weight.shape != online.weight.shape:
        raise ValueError("parameter shapes disagree")
    return EncoderParams(
        weight=momentum * target.weight + (1.0 - momentum) * online.weight,
        bias=momentum * target.bias + (1.0 - momentum) * online.bias)


# -------------------------------------------------------------- sample plans

@dataclass(frozen=True)
class SamplePlan:
    """Where to read features: foreground points tagged by instance,
    plus background points on unoccupied cells.

    instance_ids index the cluster list the plan was built from; counts[m]
    foreground samples lie inside cluster m's own footprint cells.
    """

    points: np.ndarray              # (n_foreground, 2) metric xy
    instance_ids: np.ndarray        # (n_foreground,) ints in [0, M)
    background_points: np.ndarray   # (n_background, 2) metric xy
    counts: np.ndarray              # (M,) samples per instance

    def __post_init__(self) -> None:
        if len(self.points) != len(self.instance_ids):
            raise ValueError("points and instance_ids must align")
        if self.counts.sum() != len(self.points):
            raise ValueError("counts must sum to the number of samples")


def _allocate(weights: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder split of `total` over weights, one guaranteed each."""
    m = len(weights)
    if total < m:
        raise NoSamples(f"{total} samples cannot cover {m} instances")
    spare = total - m
    w = np.asarray(weights, dtype=np.float64)
    quota = spare * w / w.sum() if w.sum() > 0 else np.zeros(m)
    counts = np.floor(quota).astype(np.int64)
    remainder = quota - counts
    short = spare - counts.sum()
    for k in np.argsort(-remainder, kind="stable")[:short]:
        counts[k] += 1
    return counts + 1


def _clamp_to_domain(grid: BevGrid, pts: np.ndarray) -> np.ndarray:
    half = grid.cell / 2
    pts[:, 0] = np.clip(pts[:, 0], grid.x_min + half, grid.x_max - half)
    pts[:, 1] = np.clip(pts[:, 1], grid.y_min + half, grid.y_max - half)
    return pts


def _uniform_in_cells(grid: BevGrid, cells: np.ndarray,
                      rng: np.random.Generator) -> np.ndarray:
    """One uniform point inside each (row, col) cell, clamped into the
    bilinear domain (border cells lose their outer half)."""
    offsets = rng.uniform(0.0, grid.cell, size=(len(cells), 2))
    xy = np.c_[grid.x_min + cells[:, 1] * grid.cell + offsets[:, 0],
               grid.y_min + cells[:, 0] * grid.cell + offsets[:, 1]]
    return _clamp_to_domain(grid, xy)


def build_sample_plan(grid: BevGrid, frame: Frame, clusters: list[Cluster],
                      occupancy: np.ndarray, n_foreground: int,
                      n_background: int, rng: np.random.Generator) -> SamplePlan:
    """Allocate foreground samples over instance footprints, background
    samples over cells the (dilated) occupancy mask left free.

    Foreground counts are proportional to each cluster's footprint cell
    count with at least one sample each; positions are cell-uniform within
    a uniformly chosen footprint cell.  A cluster with no in-grid
    footprint, or an occupancy mask with no free cell, is NoSamples.
    """
    if not clusters:
        raise NoSamples("no instances to sample")
    footprints = []
    for c in clusters:
        cells = grid.cell_of(frame.merged_points[c.indices][:, :2])
        cells = cells[grid.in_grid(cells)]
        if len(cells) == 0:
            raise NoSamples(
                f"cluster {c.cluster_id} has no footprint inside the grid")
        footprints.append(np.unique(cells, axis=0))

    counts = _allocate(np.array([len(f) for f in footprints]), n_foreground)
    points = []
    ids = []
    for m, (cells, k) in enumerate(zip(footprints, counts)):
        chosen = cells[rng.integers(0, len(cells), size=int(k))]
        points.append(_uniform_in_cells(grid, chosen, rng))
        ids.append(np.full(int(k), m, dtype=np.int64))

    free = np.argwhere(~occupancy)
    if len(free) == 0 and n_background > 0:
        raise NoSamples("occupancy mask covers the whole grid")
    if n_background > 0:
        chosen = free[rng.integers(0, len(free), size=n_background)]
        background = _uniform_in_cells(grid, chosen, rng)
    else:
        background = np.empty((0, 2))
    return SamplePlan(points=np.concatenate(points),
                      instance_ids=np.concatenate(ids),
                      background_points=background, counts=counts)


# --------------------------------------------------------- instance features

@dataclass(frozen=True)
class InstanceFeature:
    """Mean of an instance's sampled point features, with a unit copy."""

    vector: np.ndarray

    @property
    def normalized(self) -> np.ndarray:
        norm = float(np.linalg.norm(self.vector))
        if norm < DEGENERATE_NORM:
            raise NormalizationDegenerate(
                "instance feature has (near-)zero norm")
        return self.vector / norm


def instance_feature(fmap: FeatureMap, plan: SamplePlan,
                     instance_id: int) -> InstanceFeature:
    """Average the bilinear point features of one instance's samples."""
    mask = plan.instance_ids == instance_id
    if not mask.any():
        raise NoSamples(f"plan holds no samples for instance {instance_id}")
    feats = sample_bilinear_many(fmap, plan.points[mask])
    return InstanceFeature(vector=feats.mean(axis=0))


# ---------------------------------------------------------------- memory bank

class MemoryBank:
    """Per-track ring buffers of raw instance features, newest last.

    Each track keeps at most history_length + 1 entries with strictly
    increasing frame indices.  Averages are taken over raw features and
    normalized once at read time.
    """

    def __init__(self, history_length: int = 16):
        if history_length < 0:
            raise ValueError("history_length must be non-negative")
        self.history_length = history_length
        self._frames: dict[int, list[int]] = {}
        self._feats: dict[int, list[np.ndarray]] = {}
        self._created: dict[int, int] = {}

    def __contains__(self, track_id: int) -> bool:
        return track_id in self._frames

    @property
    def track_ids(self) -> list[int]:
        return sorted(self._frames)

    def update(self, track_id: int, frame_index: int,
               feature: np.ndarray) -> None:
        feature = np.asarray(feature, dtype=np.float64)
        if not np.isfinite(feature).all():
            raise ValueError("feature must be finite")
        frames = self._frames.setdefault(track_id, [])
        feats = self._feats.setdefault(track_id, [])
        self._created.setdefault(track_id, frame_index)
        if frames and frame_index <= frames[-1]:
            raise ValueError(
                f"frame {frame_index} not after {frames[-1]} "
                f"for track {track_id}")
        frames.append(frame_index)
        feats.append(feature.copy())
        keep = self.history_length + 1
        if len(frames) > keep:
            del frames[:-keep], feats[:-keep]

    def drop(self, track_id: int) -> None:
        self._frames.pop(track_id, None)
        self._feats.pop(track_id, None)
        self._created.pop(track_id, None)

    def reset(self) -> None:
        self._frames.clear()
        self._feats.clear()
        self._created.clear()

    def frames_of(self, track_id: int) -> list[int]:
        if track_id not in self._frames:
            raise NoHistory(f"no bank for track {track_id}")
        return list(self._frames[track_id])

    def raw_average(self, track_id: int) -> np.ndarray:
        if track_id not in self._frames or not self._frames[track_id]:
            raise NoHistory(f"no stored features for track {track_id}")
        return np.mean(self._feats[track_id], axis=0)

    def temporal_average(self, track_id: int) -> np.ndarray:
        """Unit-normalized mean of the stored raw features."""
        avg = self.raw_average(track_id)
        norm = float(np.linalg.norm(avg))
        if norm < DEGENERATE_NORM:
            raise NormalizationDegenerate(
                f"temporal average for track {track_id} has zero norm")
        return avg / norm

    def to_json_obj(self) -> dict:
        return {
            "history_length": self.history_length,
            "tracks": [
                {
                    "track_id": tid,
                    "created": self._created[tid],
                    "frames": list(self._frames[tid]),
                    "features": [[float(v) for v in f]
                                 for f in self._feats[tid]],
                }
                for tid in self.track_ids
            ],
        }


# ------------------------------------------------------------ contrastive loss

def _check_unit(name: str, vecs: np.ndarray) -> None:
    norms = np.linalg.norm(vecs, axis=-1)
    dev = np.abs(norms - 1.0)
    if dev.size and dev.max() > UNIT_NORM_TOL:
        k = int(dev.argmax())
        raise NotNormalized(
            f"{name}[{k}] has norm {norms.ravel()[k]!r}, "
            f"more than {UNIT_NORM_TOL} from 1")


def contrastive_loss(online_feats: np.ndarray, sample_instances: np.ndarray,
                     instance_targets: np.ndarray,
                     background_targets: np.ndarray,
                     temperature: float = 0.1) -> tuple[float, np.ndarray]:
    """Point-to-instance softmax loss and its analytic gradient.

    Every foreground sample's (re-normalized) feature is scored against
    all instance temporal averages plus all background target features;
    the loss is the mean negative log softmax probability of the sample's
    own instance.  The returned gradient is with respect to the features
    exactly as given -- the chain rule runs through the internal L2
    normalization -- while all targets are constants (stop-gradient).
    Inputs must already be unit vectors up to 1e-6.
    """
    if temperature <= 0:
        raise BadTemperature(f"temperature must be positive, got {temperature}")
    online = np.atleast_2d(np.asarray(online_feats, dtype=np.float64))
    targets_i = np.atleast_2d(np.asarray(instance_targets, dtype=np.float64))
    targets_b = np.asarray(background_targets, dtype=np.float64)
    if targets_b.size == 0:
        targets_b = np.empty((0, online.shape[1]))
    targets_b = np.atleast_2d(targets_b)
    ids = np.asarray(sample_instances, dtype=np.int64)
    n, c = online.shape
    m = len(targets_i)
    if m < 1:
        raise ValueError("need at least one instance target")
    if ids.shape != (n,) or ((ids < 0) | (ids >= m)).any():
        raise ValueError("sample_instances must map every sample into 0..M-1")
    _check_unit("online_feats", online)
    _check_unit("instance_targets", targets_i)
    _check_unit("background_targets", targets_b)

    norms = np.linalg.norm(online, axis=1, keepdims=True)
    if (norms < DEGENERATE_NORM).any():
        raise NormalizationDegenerate("online feature with zero norm")
    unit = online / norms
    targets = np.vstack([targets_i, targets_b])       # (M + N_B, C)

    logits = unit @ targets.T / temperature           # (N, M + N_B)
    shift = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shift).sum(axis=1)) + logits.max(axis=1)
    pos = logits[np.arange(n), ids]
    loss = float((log_z - pos).mean())

    q = np.exp(shift)
    q /= q.sum(axis=1, keepdims=True)
    d_logits = q
    d_logits[np.arange(n), ids] -= 1.0
    d_unit = d_logits @ targets / (temperature * n)   # dL/d(unit features)
    # chain through f = x / ||x||:  (I - f f^T) / ||x||
    radial = (unit * d_unit).sum(axis=1, keepdims=True)
    grad = (d_unit - unit * radial) / norms
    return loss, grad


def finite_difference_gradient(loss_fn, feats: np.ndarray,
                               step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of loss_fn at feats (oracle-grade)."""
    feats = np.asarray(feats, dtype=np.float64)
    grad = np.zeros_like(feats)
    it = np.nditer(feats, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        bumped = feats.copy()
        bumped[idx] = feats[idx] + step
        hi = loss_fn(bumped)
        bumped[idx] = feats[idx] - step
        lo = loss_fn(bumped)
        grad[idx] = (hi - lo) / (2.0 * step)
        it.iternext()
    return grad


# -------------------------------------------------------------- pretrain step

@dataclass(frozen=True)
class PretrainConfig:
    """Knobs of one simulated pretraining step."""

    temperature: float = 0.1
    momentum: float = 0.99
    dropout_rate: float = 0.3
    learning_rate: float = 1e-2
    n_foreground: int = 1000
    n_background: int = 1000
    history_length: int = 16
    occupancy_dilation: int = 1
    channels: int = 16

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise BadTemperature(f"temperature must be positive, "
                                 f"got {self.temperature}")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError("dropout_rate must be in [0, 1]")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must be in [0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if min(self.n_foreground, self.n_background) < 0:
            raise ValueError("sample counts must be non-negative")


@dataclass(frozen=True)
class CameraFrame:
    """One camera's view of one frame: its model, the per-pixel estimated
    depth distribution, and the 1-based ground-truth depth bin per pixel."""

    cam: CameraModel
    depth_probs: np.ndarray     # (rows, cols, D), normalized per pixel
    gt_bins: np.ndarray         # (rows, cols) ints in 1..D
    bins: DepthBins


@dataclass(frozen=True)
class StepResult:
    loss: float
    grad_norm: float
    params: EncoderParams
    target_params: EncoderParams
    n_instances: int


def _splat_density(cameras: list[CameraFrame], grid: BevGrid,
                   per_camera_probs: list[np.ndarray]) -> np.ndarray:
    """Total splatted scalar mass per BEV cell, summed over cameras."""
    density = np.zeros((grid.height, grid.width))
    for cam_frame, probs in zip(cameras, per_camera_probs):
        ones = np.ones(probs.shape[:2] + (1,))
        fmap = lift_splat(ones, probs, cam_frame.cam, grid, cam_frame.bins)
        density += fmap.features[..., 0]
    return density


def _normalize_rows(feats: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(feats, axis=1, keepdims=True)
    if (norms < DEGENERATE_NORM).any():
        raise NormalizationDegenerate(f"{what} with zero norm")
    return feats / norms, norms


def pretrain_step(frame: Frame, result: ClusteringResult,
                  track_of_cluster: dict[int, int],
                  cameras: list[CameraFrame], banks: MemoryBank,
                  params: EncoderParams, target_params: EncoderParams,
                  grid: BevGrid, config: PretrainConfig,
                  sample_rng: np.random.Generator,
                  dropout_seed: int) -> StepResult:
    """One online/target contrastive step on a single frame.

    The online path sees dropout-degraded estimated depth distributions;
    the target path sees ground-truth-merged ones.  Both densities go
    through their own encoder.  Target instance features (raw means) are
    appended to the memory banks first, so the temporal average always
    includes the current frame; the loss gradient then flows through
    bilinear sampling and the tanh encoder into one gradient-descent
    update of the online parameters, followed by the EMA update of the
    target parameters.  Frames without any tracked instance raise
    SkippedFrame and must leave all state untouched.
    """
    tracked = [c for c in result.clusters if c.cluster_id in track_of_cluster]
    if not tracked:
        raise SkippedFrame(f"frame {frame.index} has no tracked instances")
    if not cameras:
        raise ValueError("need at least one camera")

    online_probs = [
        dropout_probs(cf.depth_probs, config.dropout_rate, dropout_seed + k)
        for k, cf in enumerate(cameras)
    ]
    target_probs = [
        merge_depth_probs(cf.depth_probs, cf.gt_bins) for cf in cameras
    ]
    online_density = _splat_density(cameras, grid, online_probs)
    target_density = _splat_density(cameras, grid, target_probs)
    online_map = encode_bev(params, grid, online_density)
    target_map = encode_bev(target_params, grid, target_density)

    occupied = occupancy_mask(grid, frame, result,
                              dilation=config.occupancy_dilation)
    plan = build_sample_plan(grid, frame, tracked, occupied,
                             config.n_foreground, config.n_background,
                             sample_rng)

    # target side: bank update with raw instance means, then averages
    averages = np.empty((len(tracked), target_params.channels))
    for m, cluster in enumerate(tracked):
        raw = instance_feature(target_map, plan, m).vector
        track_id = track_of_cluster[cluster.cluster_id]
        banks.update(track_id, frame.index, raw)
        averages[m] = banks.temporal_average(track_id)
    backgrounds = sample_bilinear_many(target_map, plan.background_points) \
        if len(plan.background_points) else np.empty((0, target_params.channels))
    if len(backgrounds):
        backgrounds, _ = _normalize_rows(backgrounds, "background feature")

    # online side: sampled point features, loss, gradient back to params
    raw_online = sample_bilinear_many(online_map, plan.points)
    unit_online, online_norms = _normalize_rows(raw_online, "online feature")
    loss, grad_unit_input = contrastive_loss(
        unit_online, plan.instance_ids, averages, backgrounds,
        temperature=config.temperature)
    # chain back through the explicit normalization done here: the loss
    # already projected its gradient tangent to the sphere at unit_online,
    # so only the 1/norm scale of raw -> unit remains
    radial = (unit_online * grad_unit_input).sum(axis=1, keepdims=True)
    grad_samples = (grad_unit_input - unit_online * radial) / online_norms

    rows0, cols0, w = bilinear_coefficients(grid, plan.points)
    grad_cells = np.zeros_like(online_map.features)
    np.add.at(grad_cells, (rows0, cols0), w[:, 0, None] * grad_samples)
    np.add.at(grad_cells, (rows0, cols0 + 1), w[:, 1, None] * grad_samples)
    np.add.at(grad_cells, (rows0 + 1, cols0), w[:, 2, None] * grad_samples)
    np.add.at(grad_cells, (rows0 + 1, cols0 + 1), w[:, 3, None] * grad_samples)

    grads = encoder_backprop(params, grid, online_density, grad_cells)
    grad_norm = float(np.linalg.norm(grads.flatten()))
    new_params = EncoderParams(
        weight=params.weight - config.learning_rate * grads.weight,
        bias=params.bias - config.learning_rate * grads.bias)
    new_target = ema_update(target_params, new_params, config.momentum)
    return StepResult(loss=loss, grad_norm=grad_norm, params=new_params,
                      target_params=new_target, n_instances=len(tracked))
