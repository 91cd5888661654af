"""Simulated contrastive-pretraining driver over synthetic scenes.

Runs the full chain on generated data: scene -> ground removal ->
clustering -> track assembly -> repeated pretraining steps against a
synthetic two-camera rig.  Camera depth estimates are fabricated from the
scene geometry (smeared ground truth plus a noise floor), fixed per frame,
so every run is a pure function of (scene spec, config, seed).
"""

from dataclasses import dataclass

import numpy as np

from .assoc import DEFAULT_MATCH_RADIUS, TrackSet, assemble_tracks
from .bev import BevGrid, CameraModel, DepthBins
from .cluster import ClusterParams, ClusteringResult, identify_instances
from .errors import EmptyInput
from .geom import Frame, Pose
from .ground import GroundParams, segment_ground
from .learn import (CameraFrame, EncoderParams, MemoryBank, PretrainConfig,
                    contrastive_loss, finite_difference_gradient,
                    init_encoder, pretrain_step)
from .rng import substream
from .synth import BoxSpec, EgoSpec, Scene, SceneSpec, generate

# camera z axis -> ego +x (forward); image right -> ego -y; image down -> -z
_FORWARD = np.array([[0.0, 0.0, 1.0],
                     [-1.0, 0.0, 0.0],
                     [0.0, -1.0, 0.0]])
# rear view: camera z -> ego -x, keeping a right-handed frame
_REARWARD = _FORWARD @ np.diag([-1.0, 1.0, -1.0])


@dataclass(frozen=True)
class RigSpec:
    """Synthetic two-camera rig (forward + rearward) with fake depth heads."""

    image_rows: int = 8
    image_cols: int = 16
    focal: float = 5.0
    height: float = 1.8
    depth_start: float = 1.0
    depth_step: float = 1.0
    depth_count: int = 30
    depth_smear: float = 1.5   # stddev of the fake estimate, in bin units
    noise_floor: float = 0.05  # uniform clutter mixed into every estimate

    def __post_init__(self) -> None:
        if self.image_rows < 2 or self.image_cols < 2:
            raise ValueError("image must be at least 2x2 pixels")
        if self.focal <= 0 or self.height <= 0:
            raise ValueError("focal length and height must be positive")
        if self.depth_start <= 0 or self.depth_step <= 0 or self.depth_count < 1:
            raise ValueError("bad depth bin layout")
        if self.depth_smear <= 0 or not 0.0 <= self.noise_floor:
            raise ValueError("bad depth estimate parameters")

    @property
    def bins(self) -> DepthBins:
        return DepthBins(start=self.depth_start, step=self.depth_step,
                         count=self.depth_count)

    def cameras(self) -> list[CameraModel]:
        center_col = (self.image_cols - 1) / 2.0
        center_row = (self.image_rows - 1) / 2.0
        t = np.array([0.0, 0.0, self.height])
        return [
            CameraModel(focal_x=self.focal, focal_y=self.focal,
                        center_col=center_col, center_row=center_row,
                        pose=Pose(rotation=_FORWARD, translation=t)),
            CameraModel(focal_x=self.focal, focal_y=self.focal,
                        center_col=center_col, center_row=center_row,
                        pose=Pose(rotation=_REARWARD, translation=t)),
        ]


def ground_truth_bins(frame: Frame, cam: CameraModel, rig: RigSpec) -> np.ndarray:
    """Per-pixel true depth bin: nearest scene point, else the ground plane.

    Depth is measured along the camera z axis (the lift-splat ray
    parameter).  Pixels whose ray sees no point and never reaches the
    ground get the farthest bin.
    """
    rows, cols = rig.image_rows, rig.image_cols
    max_depth = rig.depth_start + rig.depth_step * rig.depth_count
    depth = np.full((rows, cols), max_depth)

    # ground-plane intersection per pixel ray
    dirs = cam.pixel_rays(rows, cols)                    # camera frame, z=1
    dirs_ego = dirs @ cam.pose.rotation.T
    down = dirs_ego[:, :, 2] < -1e-9
    reach = np.where(down, -cam.pose.translation[2] / np.where(down, dirs_ego[:, :, 2], -1.0), np.inf)
    depth = np.minimum(depth, np.where(down, reach, np.inf))

    # nearest surface point per pixel
    pts_cam = (frame.merged_points - cam.pose.translation) @ cam.pose.rotation
    z = pts_cam[:, 2]
    front = z > rig.depth_start * 0.5
    if front.any():
        p = pts_cam[front]
        col = np.rint(cam.focal_x * p[:, 0] / p[:, 2] + cam.center_col).astype(np.int64)
        row = np.rint(cam.focal_y * p[:, 1] / p[:, 2] + cam.center_row).astype(np.int64)
        ok = (row >= 0) & (row < rows) & (col >= 0) & (col < cols)
        np.minimum.at(depth, (row[ok], col[ok]), p[ok][:, 2])

    bins = np.rint((depth - rig.depth_start) / rig.depth_step)
    return np.clip(bins, 1, rig.depth_count).astype(np.int64)


def estimated_depth_probs(gt_bins: np.ndarray, rig: RigSpec,
                          rng: np.random.Generator) -> np.ndarray:
    """Fake depth head: Gaussian smear around the true bin plus clutter."""
    centers = np.arange(1, rig.depth_count + 1, dtype=np.float64)
    offset = (centers - gt_bins[:, :, None]) / rig.depth_smear
    probs = np.exp(-0.5 * offset ** 2)
    probs += rig.noise_floor * rng.uniform(size=probs.shape)
    return probs / probs.sum(axis=-1, keepdims=True)


def build_camera_frames(frame: Frame, rig: RigSpec, seed: int) -> list[CameraFrame]:
    out = []
    for k, cam in enumerate(rig.cameras()):
        gt = ground_truth_bins(frame, cam, rig)
        rng = substream(seed, "depth-estimate", frame.index, k)
        probs = estimated_depth_probs(gt, rig, rng)
        out.append(CameraFrame(cam=cam, depth_probs=probs, gt_bins=gt,
                               bins=rig.bins))
    return out


def default_sim_spec(seed: int = 7) -> SceneSpec:
    """Small three-object scene kept inside both camera view cones."""
    return SceneSpec(
        seed=seed,
        frames=6,
        sweeps_per_frame=10,
        sweep_interval=0.05,
        ego=EgoSpec(start=(0.0, 0.0, 0.0), velocity=(1.0, 0.0, 0.0)),
        objects=(
            BoxSpec(size=(1.8, 1.4, 1.2), center=(6.0, 0.0, 1.0),
                    velocity=(0.5, 0.0, 0.0)),
            BoxSpec(size=(1.4, 2.0, 1.4), center=(10.0, 3.0, 1.2), yaw=0.6),
            BoxSpec(size=(2.0, 1.2, 1.2), center=(-7.0, -2.0, 1.1),
                    velocity=(0.0, -0.4, 0.0)),
        ),
        points_per_object=25,
        ground_points=400,
        noise_sigma=0.02,
    )


@dataclass(frozen=True)
class SimResult:
    """Everything a pretraining run produces, ready for serialization."""

    rows: list[tuple[int, float, float]]   # (step, loss, grad norm)
    params: EncoderParams
    target_params: EncoderParams
    banks: MemoryBank
    tracks: TrackSet
    scene: Scene
    usable_frames: list[int]

    @property
    def losses(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])


def loss_csv(rows: list[tuple[int, float, float]]) -> str:
    lines = ["step,loss,grad_norm"]
    for step, loss, grad_norm in rows:
        lines.append(f"{step},{loss!r},{grad_norm!r}")
    return "\n".join(lines) + "\n"


def parse_loss_csv(text: str) -> list[tuple[int, float, float]]:
    lines = text.splitlines()
    if not lines or lines[0] != "step,loss,grad_norm":
        raise ValueError("missing loss CSV header")
    rows = []
    for line in lines[1:]:
        step, loss, grad_norm = line.split(",")
        rows.append((int(step), float(loss), float(grad_norm)))
    return rows


def cluster_track_maps(tracks: TrackSet, n_frames: int) -> list[dict[int, int]]:
    """Per frame, the cluster id -> track id mapping the tracker produced."""
    maps: list[dict[int, int]] = [dict() for _ in range(n_frames)]
    for track in tracks.tracks:
        for entry in track.entries:
            maps[entry.frame][entry.cluster] = track.track_id
    return maps


def run_pretrain_sim(spec: SceneSpec, steps: int, seed: int,
                     config: PretrainConfig = None,
                     grid: BevGrid = None,
                     rig: RigSpec = None,
                     ground_params: GroundParams = None,
                     cluster_params: ClusterParams = None,
                     match_radius: float = DEFAULT_MATCH_RADIUS) -> SimResult:
    """Generate a scene, assemble tracks, then take `steps` gradient steps.

    Steps cycle over the frames that carry at least one tracked instance;
    memory banks reset at each epoch boundary so bank frame indices stay
    strictly increasing within an epoch.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    config = config or PretrainConfig()
    grid = grid or BevGrid()
    rig = rig or RigSpec()

    scene = generate(spec)
    results: list[ClusteringResult] = []
    staged: list[tuple[int, ClusteringResult, Pose]] = []
    for frame in scene.frames:
        labeling = segment_ground(frame, ground_params or GroundParams())
        result = identify_instances(frame, labeling,
                                    cluster_params or ClusterParams())
        results.append(result)
        staged.append((frame.index, result, frame.frame_pose))
    tracks = assemble_tracks(staged, history_length=config.history_length,
                             match_radius=match_radius)
    track_maps = cluster_track_maps(tracks, len(scene.frames))

    usable = [i for i, m in enumerate(track_maps) if m]
    if not usable:
        raise EmptyInput("no tracked instances in any frame")

    params = init_encoder(seed, channels=config.channels)
    target = EncoderParams(weight=params.weight.copy(),
                           bias=params.bias.copy())
    banks = MemoryBank(history_length=config.history_length)
    camera_frames = {i: build_camera_frames(scene.frames[i], rig, seed)
                     for i in usable}
    dropout_seeds = substream(seed, "dropout-seeds").integers(
        0, 2 ** 62, size=max(steps, 1))

    rows: list[tuple[int, float, float]] = []
    for step in range(steps):
        position = step % len(usable)
        if step > 0 and position == 0:
            banks.reset()
        idx = usable[position]
        out = pretrain_step(scene.frames[idx], results[idx], track_maps[idx],
                            camera_frames[idx], banks, params, target, grid,
                            config, substream(seed, "plan", step),
                            dropout_seed=int(dropout_seeds[step]))
        params, target = out.params, out.target_params
        rows.append((step, out.loss, out.grad_norm))

    return SimResult(rows=rows, params=params, target_params=target,
                     banks=banks, tracks=tracks, scene=scene,
                     usable_frames=usable)


@dataclass(frozen=True)
class GradCheckResult:
    trial: int
    n_instances: int
    n_background: int
    n_foreground: int
    channels: int
    temperature: float
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def run_gradient_checks(seed: int, trials: int = 50, max_instances: int = 8,
                        max_background: int = 16, channels: int = 16,
                        fd_step: float = 1e-6,
                        tolerance: float = 1e-5) -> list[GradCheckResult]:
    """Analytic loss gradient vs central finite differences, random configs."""
    out = []
    for trial in range(trials):
        rng = substream(seed, "gradcheck", trial)
        m = int(rng.integers(1, max_instances + 1))
        n_b = int(rng.integers(0, max_background + 1))
        n_f = int(rng.integers(1, 25))
        tau = float(rng.uniform(0.05, 0.5))

        def unit(n):
            v = rng.normal(size=(n, channels))
            return v / np.linalg.norm(v, axis=1, keepdims=True)

        feats = unit(n_f)
        ids = rng.integers(0, m, size=n_f)
        inst = unit(m)
        bg = unit(n_b) if n_b else np.empty((0, channels))
        _, grad = contrastive_loss(feats, ids, inst, bg, temperature=tau)

        def loss_of(x):
            return contrastive_loss(x, ids, inst, bg, temperature=tau)[0]

        fd = finite_difference_gradient(loss_of, feats, step=fd_step)
        scale = max(float(np.abs(fd).max()), 1e-12)
        err = float(np.abs(grad - fd).max()) / scale
        out.append(GradCheckResult(trial=trial, n_instances=m,
                                   n_background=n_b, n_foreground=n_f,
                                   channels=channels, temperature=tau,
                                   max_rel_error=err, tolerance=tolerance))
    return out
