"""Bird's-eye-view feature grids and the camera-to-BEV projection path.

The grid covers a rectangular metric extent split into square cells; a
feature map attaches a C-vector to every cell.  Continuous points sample
the map bilinearly between the four surrounding cell centers.  Camera
features enter the grid by lift-splat: every pixel's feature is spread
along its viewing ray according to a per-pixel discrete depth
distribution, and each depth hypothesis scatter-adds its share into the
BEV cell it lands in.  Depth distributions can be corrected with a
ground-truth bin (set to 1, renormalize) and degraded with a per-bin
dropout mask that deliberately leaves the distribution unnormalized.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .cluster import ClusteringResult
from .errors import BadIndex, OutOfBounds, ParseError
from .geom import Frame, Pose
from .rng import substream

GRID_ALIGN_TOL = 1e-3   # meters: extent must be a whole number of cells


# ------------------------------------------------------------------ geometry

@dataclass(frozen=True)
class BevGrid:
    """Square-cell BEV lattice: rows step along y, columns along x.

    The cell (row, col) spans [x_min + col*cell, x_min + (col+1)*cell) x
    [y_min + row*cell, y_min + (row+1)*cell); its center sits half a cell
    further in.  The extent must divide evenly into cells.
    """

    x_min: float = -51.2
    x_max: float = 51.2
    y_min: float = -51.2
    y_max: float = 51.2
    cell: float = 0.8

    def __post_init__(self) -> None:
        if self.cell <= 0:
            raise ValueError("cell size must be positive")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError("extent must be non-empty")
        for span in (self.x_max - self.x_min, self.y_max - self.y_min):
            n = round(span / self.cell)
            if n < 2 or abs(n * self.cell - span) > GRID_ALIGN_TOL:
                raise ValueError(
                    f"extent span {span} is not a whole number (>= 2) of "
                    f"{self.cell} m cells")

    @property
    def width(self) -> int:
        return round((self.x_max - self.x_min) / self.cell)

    @property
    def height(self) -> int:
        return round((self.y_max - self.y_min) / self.cell)

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (self.x_min + (col + 0.5) * self.cell,
                self.y_min + (row + 0.5) * self.cell)

    def cell_of(self, xy: np.ndarray) -> np.ndarray:
        """Containing (row, col) per point; may fall outside the grid."""
        xy = np.asarray(xy, dtype=np.float64)
        cols = np.floor((xy[..., 0] - self.x_min) / self.cell).astype(np.int64)
        rows = np.floor((xy[..., 1] - self.y_min) / self.cell).astype(np.int64)
        return np.stack([rows, cols], axis=-1)

    def in_grid(self, cells: np.ndarray) -> np.ndarray:
        rows, cols = cells[..., 0], cells[..., 1]
        return ((rows >= 0) & (rows < self.height)
                & (cols >= 0) & (cols < self.width))


@dataclass(frozen=True)
class FeatureMap:
    """H x W grid of C-dim features over a BevGrid extent."""

    grid: BevGrid
    features: np.ndarray        # (H, W, C) float64

    def __post_init__(self) -> None:
        f = self.features
        if f.ndim != 3 or f.shape[:2] != (self.grid.height, self.grid.width):
            raise ValueError(
                f"features shape {f.shape} does not match grid "
                f"{self.grid.height}x{self.grid.width}")
        if not np.isfinite(f).all():
            raise ValueError("features must be finite")

    @property
    def channels(self) -> int:
        return self.features.shape[2]


def zero_feature_map(grid: BevGrid, channels: int) -> FeatureMap:
    return FeatureMap(grid=grid,
                      features=np.zeros((grid.height, grid.width, channels)))


# ----------------------------------------------------------- bilinear sampling

def bilinear_coefficients(grid: BevGrid, pts: np.ndarray
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cell anchors and weights for bilinear interpolation at metric points.

    Returns (rows0, cols0, weights) with weights columns ordered
    [(r0,c0), (r0,c1), (r1,c0), (r1,c1)]; each row of weights sums to 1.
    Points must lie inside the interpolation domain -- the grid minus its
    outer half-cell border -- else OutOfBounds.  At the domain's far edge
    the anchor clamps down one cell and the fractional offset becomes 1.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
    u = (pts[:, 0] - grid.x_min) / grid.cell - 0.5     # continuous column
    v = (pts[:, 1] - grid.y_min) / grid.cell - 0.5     # continuous row
    w, h = grid.width, grid.height
    # closed domain membership, tolerant of boundary representation error
    eps = 1e-9
    bad = (u < -eps) | (u > w - 1 + eps) | (v < -eps) | (v > h - 1 + eps) \
        | ~np.isfinite(u + v)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise OutOfBounds(
            f"point {tuple(pts[k])} outside the bilinear domain of the grid")
    u = np.clip(u, 0.0, w - 1)
    v = np.clip(v, 0.0, h - 1)
    cols0 = np.minimum(np.floor(u).astype(np.int64), w - 2)
    rows0 = np.minimum(np.floor(v).astype(np.int64), h - 2)
    fx = u - cols0
    fy = v - rows0
    weights = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy),
                        (1 - fx) * fy, fx * fy], axis=1)
    return rows0, cols0, weights


def sample_bilinear(fmap: FeatureMap, pt: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of the four cell centers around one point."""
    return sample_bilinear_many(fmap, np.atleast_2d(pt))[0]


def sample_bilinear_many(fmap: FeatureMap, pts: np.ndarray) -> np.ndarray:
    """(n, C) bilinear samples at n metric points."""
    rows0, cols0, w = bilinear_coefficients(fmap.grid, pts)
    f = fmap.features
    return (w[:, 0, None] * f[rows0, cols0]
            + w[:, 1, None] * f[rows0, cols0 + 1]
            + w[:, 2, None] * f[rows0 + 1, cols0]
            + w[:, 3, None] * f[rows0 + 1, cols0 + 1])


# ------------------------------------------------------- depth distributions

@dataclass(frozen=True)
class DepthBins:
    """Discrete depth hypotheses start + step*(1..count), in meters."""

    start: float = 1.0
    step: float = 1.0
    count: int = 60

    def __post_init__(self) -> None:
        if self.step <= 0 or self.count < 1:
            raise ValueError("depth bins need positive step and count >= 1")

    @property
    def values(self) -> np.ndarray:
        return self.start + self.step * np.arange(1, self.count + 1)


@dataclass(frozen=True)
class DepthDistribution:
    """One pixel's probabilities over depth bins, optionally with the
    1-based ground-truth bin attached.  Sum-to-one is checked where an
    operation requires it, not here: dropout output is intentionally
    subnormalized."""

    probs: np.ndarray
    gt_bin: int | None = None

    def __post_init__(self) -> None:
        p = self.probs
        if p.ndim != 1 or len(p) == 0:
            raise ValueError("probs must be a non-empty vector")
        if not np.isfinite(p).all() or (p < 0).any():
            raise ValueError("probs must be finite and non-negative")
        if self.gt_bin is not None and not 1 <= self.gt_bin <= len(p):
            raise BadIndex(f"gt_bin {self.gt_bin} outside 1..{len(p)}")

    @property
    def is_normalized(self) -> bool:
        return abs(float(self.probs.sum()) - 1.0) <= 1e-9


def merge_depth_probs(probs: np.ndarray, gt_bins: np.ndarray) -> np.ndarray:
    """Vectorized ground-truth merge over (..., D) distributions.

    gt_bins is 1-based, aligned with the leading axes of probs.
    """
    probs = np.asarray(probs, dtype=np.float64)
    gt = np.asarray(gt_bins)
    d = probs.shape[-1]
    if ((gt < 1) | (gt > d)).any():
        raise BadIndex(f"ground-truth bins must lie in 1..{d}")
    out = probs.copy()
    idx = np.indices(gt.shape, sparse=True)
    out[(*idx, gt - 1)] = 1.0
    return out / out.sum(axis=-1, keepdims=True)


def merge_depth(dist: DepthDistribution, gt_bin: int | None = None
                ) -> DepthDistribution:
    """Force the ground-truth bin to weight 1, then renormalize.

    The input must be normalized (within 1e-9).  The output is normalized
    and its ground-truth component is >= every other component.
    """
    if gt_bin is None:
        gt_bin = dist.gt_bin
    if gt_bin is None:
        raise BadIndex("no ground-truth bin given or attached")
    if not 1 <= gt_bin <= len(dist.probs):
        raise BadIndex(f"gt_bin {gt_bin} outside 1..{len(dist.probs)}")
    if not dist.is_normalized:
        raise ValueError(f"input not normalized: sum = {dist.probs.sum()!r}")
    return DepthDistribution(probs=merge_depth_probs(dist.probs, gt_bin),
                             gt_bin=gt_bin)


def dropout_probs(probs: np.ndarray, rate: float, seed: int) -> np.ndarray:
    """Zero each depth bin independently with probability rate.

    Deliberately not renormalized: the zeroed mass models projection rays
    the view transform drops.  Bitwise reproducible for a fixed seed.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    probs = np.asarray(probs, dtype=np.float64)
    rng = substream(seed, "depth-dropout")
    keep = rng.uniform(size=probs.shape) >= rate
    return probs * keep


# ------------------------------------------------------------------ lift-splat

@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: pixel (row, col) maps to the camera-space ray
    ((col - center_col)/focal_x, (row - center_row)/focal_y, 1); the pose
    carries camera coordinates into ego coordinates."""

    focal_x: float
    focal_y: float
    center_col: float
    center_row: float
    pose: Pose

    def __post_init__(self) -> None:
        if self.focal_x <= 0 or self.focal_y <= 0:
            raise ValueError("focal lengths must be positive")

    def pixel_rays(self, n_rows: int, n_cols: int) -> np.ndarray:
        """(n_rows, n_cols, 3) camera-space direction per pixel, z = 1."""
        cols = np.arange(n_cols, dtype=np.float64)
        rows = np.arange(n_rows, dtype=np.float64)
        x = (cols[None, :] - self.center_col) / self.focal_x
        y = (rows[:, None] - self.center_row) / self.focal_y
        dirs = np.empty((n_rows, n_cols, 3))
        dirs[..., 0] = x
        dirs[..., 1] = y
        dirs[..., 2] = 1.0
        return dirs


def lift_splat(image_features: np.ndarray, depth_probs: np.ndarray,
               cam: CameraModel, grid: BevGrid,
               bins: DepthBins | None = None) -> FeatureMap:
    """Project pixel features into the BEV grid through depth hypotheses.

    For every pixel and depth bin, the 3D point along the pixel ray at
    that depth (in ego coordinates, z dropped) selects a BEV cell, which
    accumulates probability * feature.  Out-of-extent hypotheses are
    discarded.  Accumulation order is fixed, so the result is independent
    of any caller-side parallelism.
    """
    feats = np.asarray(image_features, dtype=np.float64)
    probs = np.asarray(depth_probs, dtype=np.float64)
    if feats.ndim != 3 or probs.ndim != 3 or feats.shape[:2] != probs.shape[:2]:
        raise ValueError(
            f"pixel grids disagree: features {feats.shape}, depth {probs.shape}")
    if bins is None:
        bins = DepthBins(count=probs.shape[2])
    if bins.count != probs.shape[2]:
        raise ValueError(
            f"depth axis {probs.shape[2]} != bins.count {bins.count}")

    n_rows, n_cols, channels = feats.shape
    dirs = cam.pixel_rays(n_rows, n_cols)                     # (Hp, Wp, 3)
    pts_cam = dirs[:, :, None, :] * bins.values[None, None, :, None]
    pts_ego = pts_cam @ cam.pose.rotation.T + cam.pose.translation
    cells = grid.cell_of(pts_ego[..., :2])                    # (Hp, Wp, D, 2)
    ok = grid.in_grid(cells)

    flat_cell = cells[..., 0] * grid.width + cells[..., 1]
    weights = probs[ok]
    targets = flat_cell[ok]
    pixel_feats = np.broadcast_to(feats[:, :, None, :], pts_cam.shape[:3] + (channels,))[ok]

    out = np.zeros((grid.height * grid.width, channels))
    np.add.at(out, targets, weights[:, None] * pixel_feats)
    return FeatureMap(grid=grid,
                      features=out.reshape(grid.height, grid.width, channels))


# ------------------------------------------------------------ occupancy mask

def occupancy_mask(grid: BevGrid, frame: Frame, result: ClusteringResult,
                   dilation: int = 1) -> np.ndarray:
    """True for BEV cells holding (or, after dilation, near) instance points.

    Every merged point of every valid cluster marks its containing cell;
    the marked set is then grown by `dilation` rings of 8-neighborhoods.
    Background samples must come from unmarked cells only.
    """
    if dilation < 0:
        raise ValueError("dilation must be non-negative")
    mask = np.zeros((grid.height, grid.width), dtype=bool)
    for cluster in result.clusters:
        pts = frame.merged_points[cluster.indices]
        cells = grid.cell_of(pts[:, :2])
        ok = grid.in_grid(cells)
        mask[cells[ok, 0], cells[ok, 1]] = True
    if dilation > 0 and mask.any():
        mask = ndimage.binary_dilation(
            mask, structure=np.ones((3, 3), dtype=bool), iterations=dilation)
    return mask


# -------------------------------------------------------------------- file IO

_HEADER = struct.Struct("<3I5f")     # H, W, C, x_min, x_max, y_min, y_max, cell


def feature_map_to_bytes(fmap: FeatureMap) -> bytes:
    g = fmap.grid
    header = _HEADER.pack(g.height, g.width, fmap.channels,
                          g.x_min, g.x_max, g.y_min, g.y_max, g.cell)
    payload = fmap.features.astype("<f4").tobytes(order="C")
    return header + payload


def feature_map_from_bytes(blob: bytes) -> FeatureMap:
    if len(blob) < _HEADER.size:
        raise ParseError(
            f"feature map header needs {_HEADER.size} bytes, got {len(blob)}")
    h, w, c, x_min, x_max, y_min, y_max, cell = _HEADER.unpack_from(blob)
    expected = _HEADER.size + 4 * h * w * c
    if len(blob) != expected:
        raise ParseError(
            f"feature map payload: expected {expected} bytes total "
            f"(H={h} W={w} C={c}), got {len(blob)} (offset {_HEADER.size})")
    grid = BevGrid(x_min=x_min, x_max=x_max, y_min=y_min, y_max=y_max,
                   cell=cell)
    if (grid.height, grid.width) != (h, w):
        raise ParseError(
            f"header dims {h}x{w} disagree with extent/cell "
            f"({grid.height}x{grid.width})")
    features = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    return FeatureMap(grid=grid,
                      features=features.reshape(h, w, c).astype(np.float64))
