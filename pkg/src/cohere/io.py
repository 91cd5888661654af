"""On-disk formats: sweep binaries, pose manifests, ground truth, feature maps.

A scene directory holds one binary file per sweep plus a JSON-lines pose
manifest:

    sweep_{frame:04d}_{sweep:02d}.bin   little-endian: magic "CHR3",
                                        u32 point count, then 4 x f32
                                        (x, y, z, intensity) per point
    poses.jsonl                         one object per sweep:
                                        {frame, sweep, t, q:[w,x,y,z],
                                         p:[x,y,z]}

All malformed-input errors are ParseError and name the offending file and
byte offset (binary) or line number (manifest).
"""

import json
import struct
from pathlib import Path

import numpy as np

from .bev import FeatureMap, feature_map_from_bytes, feature_map_to_bytes
from .errors import ParseError
from .geom import Frame, Pose, Sweep, compose_frame
from .synth import GroundTruth

MAGIC = b"CHR3"
_COUNT = struct.Struct("<I")


def sweep_to_bytes(points: np.ndarray) -> bytes:
    """Encode an (n, 3) or (n, 4) point array; missing intensity becomes 0."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] not in (3, 4):
        raise ValueError(f"points must be (n, 3) or (n, 4), got {pts.shape}")
    if pts.shape[1] == 3:
        pts = np.hstack([pts, np.zeros((len(pts), 1))])
    payload = pts.astype("<f4").tobytes(order="C")
    return MAGIC + _COUNT.pack(len(pts)) + payload


def sweep_from_bytes(data: bytes, name: str = "sweep") -> np.ndarray:
    """Decode to an (n, 4) float array of (x, y, z, intensity)."""
    if len(data) < 8:
        raise ParseError(f"{name}: truncated header, file ends at byte {len(data)}")
    if data[:4] != MAGIC:
        raise ParseError(f"{name}: bad magic at byte 0, "
                         f"expected {MAGIC!r} got {data[:4]!r}")
    (count,) = _COUNT.unpack_from(data, 4)
    expected = 8 + 16 * count
    if len(data) != expected:
        raise ParseError(f"{name}: header promises {count} points "
                         f"({expected} bytes) but file ends at byte {len(data)}")
    pts = np.frombuffer(data, dtype="<f4", offset=8).reshape(count, 4)
    return pts.astype(np.float64)


def _sweep_filename(frame: int, sweep: int) -> str:
    return f"sweep_{frame:04d}_{sweep:02d}.bin"


def write_scene_dir(out_dir, frames: list[Frame]) -> None:
    """Write every sweep binary plus the pose manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for frame in frames:
        for s, sweep in enumerate(frame.sweeps):
            (out / _sweep_filename(frame.index, s)).write_bytes(
                sweep_to_bytes(sweep.points))
            record = {"frame": frame.index, "sweep": s, "t": sweep.timestamp,
                      "q": [float(v) for v in sweep.pose.to_quaternion()],
                      "p": [float(v) for v in sweep.pose.translation]}
            lines.append(json.dumps(record, separators=(",", ":")))
    (out / "poses.jsonl").write_text("\n".join(lines) + "\n" if lines else "",
                                     encoding="utf-8")


def _parse_pose_record(line: str, lineno: int, name: str) -> tuple:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{name}:{lineno}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict) or set(obj) != {"frame", "sweep", "t", "q", "p"}:
        raise ParseError(f"{name}:{lineno}: pose record must have exactly "
                         "the keys frame, sweep, t, q, p")
    try:
        frame = int(obj["frame"])
        sweep = int(obj["sweep"])
        t = float(obj["t"])
        q = np.asarray([float(v) for v in obj["q"]], dtype=np.float64)
        p = np.asarray([float(v) for v in obj["p"]], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{name}:{lineno}: malformed field: {exc}") from exc
    if q.shape != (4,) or p.shape != (3,):
        raise ParseError(f"{name}:{lineno}: q must have 4 and p 3 components")
    if frame < 0 or sweep < 0:
        raise ParseError(f"{name}:{lineno}: negative frame or sweep index")
    return frame, sweep, t, q, p


def read_frames_dir(in_dir) -> list[Frame]:
    """Load a scene directory back into composed frames.

    Frames come back ordered by frame index; sweeps within a frame by
    sweep index.  Raises ParseError("no frames found") for an empty or
    missing manifest.
    """
    root = Path(in_dir)
    manifest = root / "poses.jsonl"
    if not manifest.is_file():
        raise ParseError(f"{root}: no frames found (missing poses.jsonl)")
    by_frame: dict[int, dict[int, tuple]] = {}
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8")
                                  .splitlines(), start=1):
        if not line.strip():
            continue
        frame, sweep, t, q, p = _parse_pose_record(line, lineno, str(manifest))
        if sweep in by_frame.setdefault(frame, {}):
            raise ParseError(f"{manifest}:{lineno}: duplicate record for "
                             f"frame {frame} sweep {sweep}")
        by_frame[frame][sweep] = (t, q, p)
    if not by_frame:
        raise ParseError(f"{root}: no frames found (empty poses.jsonl)")

    frames = []
    for frame_index in sorted(by_frame):
        sweeps = []
        for sweep_index in sorted(by_frame[frame_index]):
            t, q, p = by_frame[frame_index][sweep_index]
            path = root / _sweep_filename(frame_index, sweep_index)
            if not path.is_file():
                raise ParseError(f"{path}: listed in manifest but missing")
            points = sweep_from_bytes(path.read_bytes(), name=str(path))
            sweeps.append(Sweep(timestamp=t, points=points,
                                pose=Pose.from_quaternion(q, p)))
        frames.append(compose_frame(sweeps, index=frame_index))
    return frames


# ----------------------------------------------------------------- JSON files

def write_ground_truth(path, gt: GroundTruth) -> None:
    Path(path).write_text(
        json.dumps(gt.to_json_obj(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8")


def read_ground_truth(path) -> GroundTruth:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return GroundTruth.from_json_obj(obj)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: bad ground-truth file: {exc}") from exc


def save_feature_map(path, fmap: FeatureMap) -> None:
    Path(path).write_bytes(feature_map_to_bytes(fmap))


def load_feature_map(path) -> FeatureMap:
    try:
        return feature_map_from_bytes(Path(path).read_bytes())
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc
