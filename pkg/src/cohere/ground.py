"""Polar-grid ground segmentation with incremental line fitting.

The cloud is split into angular segments around the sensor; each segment
is cut into range bins, and the lowest point of each bin serves as a
ground prototype.  Prototypes are swept outward and greedily joined into
2D line segments in (range, height).  A line keeps absorbing the next
prototype while the refit stays flat (|slope| <= max_slope) and tight
(RMSE <= line_rmse); otherwise it is closed and a new line starts.  A
closed line only counts as ground if its height at r = 0 stays within
max_intercept, which keeps lines fitted across elevated structures (box
roofs, walls) from being mistaken for ground.  A point is ground when its
vertical distance to the nearest line of its segment is at most d_ground.
Segments with fewer than two prototypes, or with no valid ground line,
fall back to testing height against the z = 0 plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput
from .geom import Frame


@dataclass(frozen=True)
class GroundParams:
    n_segments: int = 180
    bin_width: float = 1.0
    max_range: float = 60.0
    max_slope: float = 0.15
    line_rmse: float = 0.05
    max_intercept: float = 0.3
    d_ground: float = 0.3


@dataclass
class GroundLabeling:
    """Per-point ground mask plus the range filter used downstream.

    ground[i] is True for ground points; in_range[i] is False for points
    beyond max_range (those are always labeled non-ground and are excluded
    from clustering).
    """

    ground: np.ndarray    # (N,) bool
    in_range: np.ndarray  # (N,) bool


class _LineFit:
    """Incremental least-squares line z = m*r + c over (r, z) prototypes."""

    __slots__ = ("n", "sr", "sz", "srr", "srz", "szz", "r_lo", "r_hi", "z_last")

    def __init__(self, r: float, z: float):
        self.n = 1
        self.sr, self.sz = r, z
        self.srr, self.srz, self.szz = r * r, r * z, z * z
        self.r_lo = self.r_hi = r
        self.z_last = z

    def extended(self, r: float, z: float) -> tuple[float, float, float] | None:
        """Slope, intercept, RMSE if (r, z) were added; None if degenerate."""
        n = self.n + 1
        sr, sz = self.sr + r, self.sz + z
        srr, srz, szz = self.srr + r * r, self.srz + r * z, self.szz + z * z
        denom = n * srr - sr * sr
        if denom <= 1e-12:
            return None
        m = (n * srz - sr * sz) / denom
        c = (sz - m * sr) / n
        sse = szz + m * m * srr + n * c * c - 2 * m * srz - 2 * c * sz + 2 * m * c * sr
        return m, c, np.sqrt(max(sse, 0.0) / n)

    def absorb(self, r: float, z: float) -> None:
        self.n += 1
        self.sr += r
        self.sz += z
        self.srr += r * r
        self.srz += r * z
        self.szz += z * z
        self.r_hi = r
        self.z_last = z

    def model(self) -> tuple[float, float]:
        if self.n == 1:
            return 0.0, self.z_last  # flat line through a lone prototype
        denom = self.n * self.srr - self.sr * self.sr
        m = (self.n * self.srz - self.sr * self.sz) / denom
        return m, (self.sz - m * self.sr) / self.n


def _fit_segment_lines(proto_r: np.ndarray, proto_z: np.ndarray,
                       params: GroundParams) -> list[tuple[float, float, float, float]]:
    """Greedy outward pass over prototypes; returns valid ground lines as
    (r_lo, r_hi, slope, intercept)."""
    lines = []

    def close(fit: _LineFit) -> None:
        m, c = fit.model()
        if abs(m) <= params.max_slope and abs(c) <= params.max_intercept:
            lines.append((fit.r_lo, fit.r_hi, m, c))

    fit = _LineFit(proto_r[0], proto_z[0])
    for r, z in zip(proto_r[1:], proto_z[1:]):
        trial = fit.extended(r, z)
        if trial is not None and abs(trial[0]) <= params.max_slope \
                and trial[2] <= params.line_rmse:
            fit.absorb(r, z)
        else:
            close(fit)
            fit = _LineFit(r, z)
    close(fit)
    return lines


def segment_ground(frame: Frame, params: GroundParams = GroundParams()) -> GroundLabeling:
    """Label each merged point of the frame as ground or not.

    Deterministic: depends only on point coordinates and parameters.
    Raises EmptyInput when the frame has no points.
    """
    pts = frame.merged_points
    n = len(pts)
    if n == 0:
        raise EmptyInput("cannot segment an empty frame")
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    r = np.hypot(x, y)
    in_range = r <= params.max_range
    ground = np.zeros(n, dtype=bool)

    theta = np.arctan2(y, x)  # [-pi, pi]
    seg = ((theta + np.pi) / (2 * np.pi) * params.n_segments).astype(np.int64)
    np.clip(seg, 0, params.n_segments - 1, out=seg)
    n_bins = int(np.ceil(params.max_range / params.bin_width))
    rbin = np.minimum((r / params.bin_width).astype(np.int64), n_bins - 1)

    idx = np.flatnonzero(in_range)
    if idx.size == 0:
        return GroundLabeling(ground=ground, in_range=in_range)

    # Lowest-z prototype per (segment, bin): stable lexsort puts the lowest z
    # (ties: lowest original index) first within each group.
    key = seg[idx] * n_bins + rbin[idx]
    order = np.lexsort((z[idx], key))
    sorted_key = key[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_key[1:] != sorted_key[:-1]
    proto_idx = idx[order[first]]
    proto_key = sorted_key[first]
    proto_seg = proto_key // n_bins

    seg_order = np.argsort(seg[idx], kind="stable")
    seg_sorted = idx[seg_order]
    seg_bounds = np.searchsorted(seg[seg_sorted], np.arange(params.n_segments + 1))
    proto_bounds = np.searchsorted(proto_seg, np.arange(params.n_segments + 1))

    for s in range(params.n_segments):
        members = seg_sorted[seg_bounds[s]:seg_bounds[s + 1]]
        if members.size == 0:
            continue
        protos = proto_idx[proto_bounds[s]:proto_bounds[s + 1]]
        lines = []
        if protos.size >= 2:
            lines = _fit_segment_lines(r[protos], z[protos], params)
        if not lines:
            ground[members] = np.abs(z[members]) <= params.d_ground
            continue
        # Assign each point to the line whose range interval is nearest.
        cuts = [0.5 * (lines[k][1] + lines[k + 1][0]) for k in range(len(lines) - 1)]
        which = np.searchsorted(np.asarray(cuts), r[members])
        slopes = np.array([ln[2] for ln in lines])
        icepts = np.array([ln[3] for ln in lines])
        dist = np.abs(z[members] - (slopes[which] * r[members] + icepts[which]))
        ground[members] = dist <= params.d_ground

    ground &= in_range
    return GroundLabeling(ground=ground, in_range=in_range)
