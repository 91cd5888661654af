"""Per-frame instance identification.

Non-ground, in-range points of a merged frame are clustered with the
density hierarchy in :mod:`cohere.hdbscan`; each surviving cluster is one
instance.  A cluster only counts as an instance when it is seen in both
end scans of the frame: its points are split by sweep tag into a
first-scan subset (tag 0) and a last-scan subset (tag n_sweeps - 1), and
clusters where either subset is smaller than ``min_end_scan_points`` are
discarded to noise.  Survivors carry the centroid of each end-scan
subset, which downstream frame matching compares across time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput
from .geom import Frame
from .ground import GroundLabeling
from .hdbscan import hdbscan


@dataclass(frozen=True)
class ClusterParams:
    """Knobs for instance identification.

    min_end_scan_points is the per-end-scan support floor: a cluster with
    fewer points than this in either the first or the last sweep of the
    frame is discarded.
    """

    min_cluster_size: int = 10
    min_samples: int = 10
    min_end_scan_points: int = 5

    def __post_init__(self) -> None:
        if self.min_cluster_size < 2:
            raise ValueError("min_cluster_size must be at least 2")
        if self.min_samples < 1:
            raise ValueError("min_samples must be at least 1")
        if self.min_end_scan_points < 1:
            raise ValueError("min_end_scan_points must be at least 1")


@dataclass(frozen=True)
class Cluster:
    """One instance: a cluster of merged-frame points seen in both end scans.

    All index arrays point into Frame.merged_points.  first_scan and
    last_scan are the (disjoint) subsets of indices with sweep tag 0 and
    n_sweeps - 1; center_first / center_last are their coordinate means.
    """

    cluster_id: int
    indices: np.ndarray = field(repr=False)
    first_scan: np.ndarray = field(repr=False)
    last_scan: np.ndarray = field(repr=False)
    center_first: np.ndarray
    center_last: np.ndarray

    @property
    def size(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class ClusteringResult:
    """Valid clusters plus everything that did not make the cut.

    Together, cluster memberships and the noise list cover each candidate
    (non-ground, in-range) point exactly once.  discarded counts clusters
    dropped by the end-scan support rule, whose points moved to noise.
    """

    clusters: tuple[Cluster, ...]
    noise: np.ndarray = field(repr=False)
    discarded: int = 0

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


def identify_instances(frame: Frame, ground: GroundLabeling,
                       params: ClusterParams | None = None) -> ClusteringResult:
    """Cluster a frame's non-ground points into per-frame instances.

    Candidates are in-range, non-ground points.  No candidates at all is
    an empty result, not an error.  Valid clusters are relabeled 0..k-1
    by their lowest member index so the numbering is stable under any
    internal tie shuffling.
    """
    if params is None:
        params = ClusterParams()
    if len(ground.ground) != len(frame.merged_points):
        raise EmptyInput(
            f"ground labeling covers {len(ground.ground)} points, "
            f"frame has {len(frame.merged_points)}")
    candidates = np.flatnonzero(~ground.ground & ground.in_range)
    if len(candidates) == 0:
        return ClusteringResult(clusters=(), noise=candidates, discarded=0)

    labels = hdbscan(frame.merged_points[candidates],
                     min_cluster_size=params.min_cluster_size,
                     min_samples=params.min_samples)
    tags = frame.point_sweep[candidates]
    last_tag = frame.n_sweeps - 1

    kept: list[tuple[int, np.ndarray, np.ndarray, np.ndarray]] = []
    noise_chunks = [candidates[labels < 0]]
    discarded = 0
    for lab in range(labels.max() + 1 if labels.size else 0):
        member_mask = labels == lab
        members = candidates[member_mask]
        first = members[tags[member_mask] == 0]
        last = members[tags[member_mask] == last_tag]
        if len(first) < params.min_end_scan_points or \
                len(last) < params.min_end_scan_points:
            noise_chunks.append(members)
            discarded += 1
            continue
        kept.append((int(members.min()), members, first, last))

    kept.sort(key=lambda item: item[0])
    clusters = tuple(
        Cluster(
            cluster_id=new_id,
            indices=members,
            first_scan=first,
            last_scan=last,
            center_first=frame.merged_points[first].mean(axis=0),
            center_last=frame.merged_points[last].mean(axis=0),
        )
        for new_id, (_, members, first, last) in enumerate(kept)
    )
    noise = np.sort(np.concatenate(noise_chunks))
    return ClusteringResult(clusters=clusters, noise=noise, discarded=discarded)
