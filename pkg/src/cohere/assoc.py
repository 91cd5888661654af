"""Frame-to-frame instance association and long-term track assembly.

Instances persist across frames by matching each previous frame's
last-scan centers -- carried into the current frame through the relative
ego motion -- against the current frame's first-scan centers.  A
minimum-cost assignment (Jonker-Volgenant style shortest augmenting
paths, O(n^3)) pairs them; pairs farther apart than the match radius are
discarded.  Unmatched current instances open new tracks, unmatched
previous instances close theirs permanently: a track that misses a frame
never resumes, so every track is one unbroken chain of frame-adjacent
matches.  Only the most recent ``history_length + 1`` entries per track
are retained.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .cluster import ClusteringResult
from .errors import ParseError
from .geom import Pose, transfer_center

DEFAULT_MATCH_RADIUS = 0.5
DEFAULT_HISTORY = 16


# ------------------------------------------------------------ assignment core

def hungarian(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimum-total-cost perfect assignment of a square cost matrix.

    Returns (assignment, total) where assignment[row] = column.  Shortest
    augmenting paths with potentials; rows are introduced in ascending
    order and column scans break ties toward the lowest index, so equal
    costs resolve deterministically toward low (row, column) pairs.
    """
    a = np.asarray(cost, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {a.shape}")
    if a.size == 0:
        return np.empty(0, dtype=np.int64), 0.0
    if not np.isfinite(a).all():
        raise ValueError("cost matrix must be finite")
    if (a < 0).any():
        raise ValueError("cost matrix must be non-negative")

    n = len(a)
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match_row = np.zeros(n + 1, dtype=np.int64)   # per column (1-based), 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match_row[0] = i
        j0 = 0
        minv = np.full(n, np.inf)    # per real column: cheapest reduced path cost
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match_row[j0]
            reduced = a[i0 - 1] - u[i0] - v[1:]
            better = ~used[1:] & (reduced < minv)
            minv[better] = reduced[better]
            way[1:][better] = j0
            open_cols = np.where(used[1:], np.inf, minv)
            j1 = int(np.argmin(open_cols)) + 1
            delta = open_cols[j1 - 1]
            u[match_row[used]] += delta
            v[used] -= delta
            minv[~used[1:]] -= delta
            j0 = j1
            if match_row[j0] == 0:
                break
        while j0:
            j1 = int(way[j0])
            match_row[j0] = match_row[j1]
            j0 = j1

    assignment = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        assignment[match_row[j] - 1] = j - 1
    total = float(a[np.arange(n), assignment].sum())
    return assignment, total


def build_cost(prev_centers: np.ndarray, curr_centers: np.ndarray,
               pad_cost: float) -> np.ndarray:
    """Square (n+m) x (n+m) center-distance matrix with dummy padding.

    Real-vs-dummy entries carry pad_cost; dummy-vs-dummy entries are free,
    so the assignment only pairs real instances when doing so is cheaper
    than leaving both unmatched.
    """
    n = len(prev_centers)
    m = len(curr_centers)
    out = np.zeros((n + m, n + m))
    if n and m:
        diff = prev_centers[:, None, :] - curr_centers[None, :, :]
        out[:n, :m] = np.sqrt((diff * diff).sum(-1))
    out[:n, m:] = pad_cost
    out[n:, :m] = pad_cost
    return out


# --------------------------------------------------------------- frame match

@dataclass(frozen=True)
class FrameMatch:
    """Pairing of one frame's instances with the next frame's.

    matches holds (previous cluster id, current cluster id) pairs; births
    are current ids with no acceptable partner, deaths previous ids whose
    instance found none.
    """

    matches: tuple[tuple[int, int], ...]
    births: tuple[int, ...]
    deaths: tuple[int, ...]


def match_frames(prev: ClusteringResult, prev_pose: Pose,
                 curr: ClusteringResult, curr_pose: Pose,
                 match_radius: float = DEFAULT_MATCH_RADIUS) -> FrameMatch:
    """Associate instances across two neighboring frames.

    The previous frame's last-scan centers are expressed in the current
    frame via the relative ego motion, then matched against the current
    first-scan centers by minimum total distance.  Matches farther than
    match_radius are dropped (the dummy padding costs 2 * match_radius, so
    no acceptable pair is ever displaced by padding).  Empty frames are
    fine: everything becomes a birth or a death.
    """
    prev_ids = [c.cluster_id for c in prev.clusters]
    curr_ids = [c.cluster_id for c in curr.clusters]
    n, m = len(prev_ids), len(curr_ids)
    if n == 0 or m == 0:
        return FrameMatch(matches=(), births=tuple(curr_ids), deaths=tuple(prev_ids))

    transferred = np.array([
        transfer_center(c.center_last, prev_pose, curr_pose)
        for c in prev.clusters
    ])
    curr_centers = np.array([c.center_first for c in curr.clusters])
    cost = build_cost(transferred, curr_centers, pad_cost=2.0 * match_radius)
    assignment, _ = hungarian(cost)

    matches = []
    deaths = []
    matched_curr = set()
    for i in range(n):
        j = int(assignment[i])
        if j < m and cost[i, j] <= match_radius:
            matches.append((prev_ids[i], curr_ids[j]))
            matched_curr.add(j)
        else:
            deaths.append(prev_ids[i])
    births = tuple(curr_ids[j] for j in range(m) if j not in matched_curr)
    return FrameMatch(matches=tuple(matches), births=births, deaths=tuple(deaths))


# -------------------------------------------------------------------- tracks

@dataclass(frozen=True)
class TrackEntry:
    """One observation of a tracked instance: which cluster, where."""

    frame: int
    cluster: int
    center: np.ndarray          # first-scan center in that frame's coordinates


@dataclass
class Track:
    """An unbroken chain of frame-adjacent instance observations."""

    track_id: int
    entries: list[TrackEntry] = field(default_factory=list)
    birth_frame: int = 0
    alive: bool = True

    @property
    def last_frame(self) -> int:
        return self.entries[-1].frame

    def append(self, entry: TrackEntry, history_length: int) -> None:
        self.entries.append(entry)
        # keep only the most recent history_length + 1 observations
        if len(self.entries) > history_length + 1:
            del self.entries[: len(self.entries) - (history_length + 1)]


@dataclass(frozen=True)
class TrackSet:
    tracks: tuple[Track, ...]

    @property
    def n_tracks(self) -> int:
        return len(self.tracks)

    def to_jsonl(self) -> str:
        lines = []
        for t in self.tracks:
            rec = {
                "track_id": t.track_id,
                "entries": [
                    [e.frame, e.cluster, float(e.center[0]),
                     float(e.center[1]), float(e.center[2])]
                    for e in t.entries
                ],
            }
            lines.append(json.dumps(rec, separators=(",", ":")))
        return "\n".join(lines) + ("\n" if lines else "")

    @staticmethod
    def from_jsonl(text: str) -> "TrackSet":
        tracks = []
        for ln, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                entries = [
                    TrackEntry(frame=int(row[0]), cluster=int(row[1]),
                               center=np.array(row[2:5], dtype=np.float64))
                    for row in rec["entries"]
                ]
                track = Track(track_id=int(rec["track_id"]), entries=entries,
                              birth_frame=entries[0].frame if entries else 0,
                              alive=False)
            except (KeyError, ValueError, TypeError, IndexError,
                    json.JSONDecodeError) as exc:
                raise ParseError(f"track record on line {ln}: {exc}") from exc
            tracks.append(track)
        return TrackSet(tracks=tuple(tracks))


class Tracker:
    """Streaming track assembly: feed frames in order, read tracks any time.

    Feeding one frame at a time and feeding the full list to
    assemble_tracks produce identical track sets.
    """

    def __init__(self, match_radius: float = DEFAULT_MATCH_RADIUS,
                 history_length: int = DEFAULT_HISTORY):
        if history_length < 0:
            raise ValueError("history_length must be non-negative")
        self.match_radius = match_radius
        self.history_length = history_length
        self._tracks: list[Track] = []
        self._prev: tuple[ClusteringResult, Pose] | None = None
        self._prev_frame = -1
        self._track_of: dict[int, int] = {}   # prev cluster id -> track index

    def step(self, frame_index: int, result: ClusteringResult, pose: Pose) -> None:
        if frame_index <= self._prev_frame and self._prev is not None:
            raise ValueError(
                f"frames must arrive in increasing order "
                f"({frame_index} after {self._prev_frame})")

        def open_track(cluster) -> int:
            track = Track(track_id=len(self._tracks), birth_frame=frame_index)
            track.append(TrackEntry(frame_index, cluster.cluster_id,
                                    np.array(cluster.center_first)),
                         self.history_length)
            self._tracks.append(track)
            return len(self._tracks) - 1

        by_id = {c.cluster_id: c for c in result.clusters}
        next_track_of: dict[int, int] = {}
        if self._prev is None:
            for c in result.clusters:
                next_track_of[c.cluster_id] = open_track(c)
        else:
            prev_result, prev_pose = self._prev
            fm = match_frames(prev_result, prev_pose, result, pose,
                              self.match_radius)
            for prev_id, curr_id in fm.matches:
                idx = self._track_of[prev_id]
                c = by_id[curr_id]
                self._tracks[idx].append(
                    TrackEntry(frame_index, curr_id, np.array(c.center_first)),
                    self.history_length)
                next_track_of[curr_id] = idx
            for prev_id in fm.deaths:
                self._tracks[self._track_of[prev_id]].alive = False
            for curr_id in fm.births:
                next_track_of[curr_id] = open_track(by_id[curr_id])
        self._prev = (result, pose)
        self._prev_frame = frame_index
        self._track_of = next_track_of

    def result(self) -> TrackSet:
        return TrackSet(tracks=tuple(self._tracks))


def assemble_tracks(frames: list[tuple[int, ClusteringResult, Pose]],
                    history_length: int = DEFAULT_HISTORY,
                    match_radius: float = DEFAULT_MATCH_RADIUS) -> TrackSet:
    """Fold an ordered frame sequence into a TrackSet (batch = streaming)."""
    tracker = Tracker(match_radius=match_radius, history_length=history_length)
    for frame_index, result, pose in frames:
        tracker.step(frame_index, result, pose)
    return tracker.result()
