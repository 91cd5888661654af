"""Rigid transforms, multi-sweep frames, and ego-motion center transfer.

A sweep is one LiDAR revolution expressed in the ego frame at its own
timestamp.  A frame merges consecutive sweeps into the ego frame of the
last sweep, keeping a per-point tag that remembers which sweep each point
came from.  Instance centers estimated in one frame are carried into the
next frame's coordinates through the relative ego motion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadPose, FrameUnderfilled

ORTHONORMAL_TOL = 1e-9
QUAT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class Point3:
    """A single 3D point with an optional reflectance intensity in [0, 1]."""

    x: float
    y: float
    z: float
    intensity: float | None = None

    def __post_init__(self):
        for v in (self.x, self.y, self.z):
            if not np.isfinite(v):
                raise ValueError("point coordinates must be finite")
        if self.intensity is not None and not (0.0 <= self.intensity <= 1.0):
            raise ValueError(f"intensity {self.intensity} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping local coordinates into a parent frame.

    x_parent = rotation @ x_local + translation
    """

    rotation: np.ndarray     # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise BadPose(f"bad shapes: rotation {r.shape}, translation {t.shape}")
        if not (np.isfinite(r).all() and np.isfinite(t).all()):
            raise BadPose("pose contains non-finite entries")
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > ORTHONORMAL_TOL:
            raise BadPose(f"rotation not orthonormal: |R^T R - I|_inf = {err:.3e}")
        det = np.linalg.det(r)
        if abs(det - 1.0) > ORTHONORMAL_TOL:
            raise BadPose(f"rotation determinant {det!r} not within 1e-9 of 1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_quaternion(q: np.ndarray, translation: np.ndarray) -> "Pose":
        """Build a pose from a unit quaternion in (w, x, y, z) order.

        Quaternions whose norm deviates from 1 by more than 1e-6 are
        rejected rather than silently renormalized.
        """
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (4,):
            raise BadPose(f"quaternion must have 4 components, got shape {q.shape}")
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            raise BadPose(f"quaternion norm {norm!r} deviates from 1 beyond 1e-6")
        w, x, y, z = q / norm
        r = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])
        return Pose(r, np.asarray(translation, dtype=np.float64))

    def to_quaternion(self) -> np.ndarray:
        """Rotation as a unit quaternion (w, x, y, z) with w >= 0."""
        r = self.rotation
        t = np.trace(r)
        if t > 0:
            s = np.sqrt(t + 1.0) * 2
            q = np.array([0.25 * s,
                          (r[2, 1] - r[1, 2]) / s,
                          (r[0, 2] - r[2, 0]) / s,
                          (r[1, 0] - r[0, 1]) / s])
        else:
            i = int(np.argmax(np.diag(r)))
            j, k = (i + 1) % 3, (i + 2) % 3
            s = np.sqrt(1.0 + r[i, i] - r[j, j] - r[k, k]) * 2
            q = np.empty(4)
            q[0] = (r[k, j] - r[j, k]) / s
            q[1 + i] = 0.25 * s
            q[1 + j] = (r[j, i] + r[i, j]) / s
            q[1 + k] = (r[k, i] + r[i, k]) / s
        if q[0] < 0:
            q = -q
        return q / np.linalg.norm(q)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self * other)(x) = self(other(x))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (n, 3) cloud."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            return self.rotation @ pts + self.translation
        return pts @ self.rotation.T + self.translation


@dataclass(frozen=True)
class Sweep:
    """One LiDAR revolution in its own ego frame.

    points is (n, 3) or (n, 4) with an intensity column; pose maps
    sweep-ego coordinates into the world frame.
    """

    timestamp: float
    points: np.ndarray
    pose: Pose

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] not in (3, 4) or pts.shape[0] == 0:
            raise ValueError(f"points must be non-empty (n, 3) or (n, 4), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("sweep contains non-finite points")
        object.__setattr__(self, "points", pts)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]


@dataclass(frozen=True)
class Frame:
    """Sweeps merged into the ego frame of the last sweep.

    merged_points is (N, 3); point_sweep tags each merged point with the
    index of the sweep it came from (0 = first scan, len(sweeps)-1 = last).
    """

    index: int
    sweeps: tuple[Sweep, ...]
    frame_pose: Pose
    merged_points: np.ndarray
    point_sweep: np.ndarray = field(repr=False)

    @property
    def n_sweeps(self) -> int:
        return len(self.sweeps)

    def points_from_sweep(self, s: int) -> np.ndarray:
        return self.merged_points[self.point_sweep == s]


def compose_frame(sweeps: list[Sweep] | tuple[Sweep, ...], index: int = 0) -> Frame:
    """Merge sweeps into the ego frame of the last sweep.

    Each point goes through its own sweep pose into the world and back
    through the inverse of the last sweep's pose.  Raises FrameUnderfilled
    for fewer than two sweeps.
    """
    sweeps = tuple(sweeps)
    if len(sweeps) < 2:
        raise FrameUnderfilled(f"need at least 2 sweeps, got {len(sweeps)}")
    anchor_inv = sweeps[-1].pose.inverse()
    chunks = []
    tags = []
    for s, sweep in enumerate(sweeps):
        rel = anchor_inv.compose(sweep.pose)
        chunks.append(rel.apply(sweep.xyz))
        tags.append(np.full(len(sweep.points), s, dtype=np.int32))
    return Frame(
        index=index,
        sweeps=sweeps,
        frame_pose=sweeps[-1].pose,
        merged_points=np.concatenate(chunks, axis=0),
        point_sweep=np.concatenate(tags),
    )


def relative_motion(pose_prev: Pose, pose_curr: Pose) -> Pose:
    """Pose of the current ego frame expressed in the previous ego frame."""
    return pose_prev.inverse().compose(pose_curr)


def transfer_center(center: np.ndarray, pose_prev: Pose, pose_curr: Pose) -> np.ndarray:
    """Carry a world-static center from previous-frame into current-frame coordinates.

    With (R, p) the relative ego motion between the two frames, the
    compensated center is R^T c - R^T p.
    """
    c = np.asarray(center, dtype=np.float64)
    rel = relative_motion(pose_prev, pose_curr)
    rt = rel.rotation.T
    return rt @ c - rt @ rel.translation
