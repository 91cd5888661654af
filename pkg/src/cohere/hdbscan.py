"""Hierarchical density clustering over mutual-reachability distances.

The pipeline is:

1. core distance per point: distance to its min_samples-th nearest other
   point (clamped to the farthest point when fewer exist);
2. mutual reachability between a and b: max(core_a, core_b, |a - b|);
3. exact minimum spanning tree of the complete mutual-reachability graph,
   built by Prim's algorithm with distances formed on the fly;
4. single-linkage dendrogram from the tree edges, where all edges of one
   exact weight merge as a single multiway level;
5. condensed cluster tree: walking the dendrogram top-down, a level whose
   merge joins two or more components of at least min_cluster_size points
   starts that many new clusters, while smaller components fall out of the
   running cluster as individual points at the level's lambda = 1/distance;
6. cluster selection maximizing total stability, where the stability of a
   cluster is the sum over its departures (points falling out, or child
   clusters splitting off) of (lambda_departure - lambda_birth) * size.

Selection compares each cluster against the best total of its children,
bottom-up, keeping the parent on ties; the tree root is a legitimate
candidate, so a dataset with no internal splits can still come back as a
single cluster.  Because equal-weight edges merge as one level, the
hierarchy depends only on the connected components of each distance
threshold, which every minimum spanning tree induces identically: the
partition is therefore invariant to permutations of the input (up to
label renaming), with remaining scan-order ties resolved toward the
lowest point index.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

BRUTE_FORCE_LIMIT = 512  # below this, core distances use the dense matrix
DENSE_MST_LIMIT = 3000   # below this, Prim runs on a materialized matrix


# ------------------------------------------------------------- core distances

def core_distances(points: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance from each point to its min_samples-th nearest other point.

    With n - 1 < min_samples the farthest other point is used; a single
    point has core distance 0.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n == 1:
        return np.zeros(1)
    k = min(int(min_samples), n - 1)
    if n < BRUTE_FORCE_LIMIT:
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt((diff * diff).sum(-1))
        return np.partition(dist, k, axis=1)[:, k]
    tree = cKDTree(pts)
    dist, _ = tree.query(pts, k=k + 1)
    return dist[:, k]


# ----------------------------------------------------------------------- MST

def _reachability_rows(pts: np.ndarray, core: np.ndarray,
                       start: int, stop: int) -> np.ndarray:
    """Mutual-reachability weights for rows start..stop of the full matrix.

    cdist evaluates sqrt(dx^2 + dy^2 + dz^2) with the same summation
    order as the broadcast formula, so the weights are bit-identical to a
    hand-materialized matrix.
    """
    d = cdist(pts[start:stop], pts)
    np.maximum(d, core[None, :], out=d)
    np.maximum(d, core[start:stop, None], out=d)
    return d


def mutual_reachability_mst(points: np.ndarray, core: np.ndarray) -> np.ndarray:
    """Exact MST of the complete mutual-reachability graph.

    Returns (n-1, 3) rows (u, v, weight) in the order Prim's algorithm
    attaches vertices, starting from vertex 0.  Ties in the next-vertex
    choice go to the lowest index.  Small inputs materialize the whole
    weight matrix so the scan loop only indexes it; larger inputs fall
    back to one row at a time (identical arithmetic either way).
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    mr = _reachability_rows(pts, core, 0, n) if n <= DENSE_MST_LIMIT else None

    edges = np.empty((n - 1, 3))
    attached = np.zeros(n, dtype=bool)
    best_w = np.full(n, np.inf)
    best_src = np.zeros(n, dtype=np.int64)
    current = 0
    attached[0] = True
    for step in range(n - 1):
        if mr is not None:
            w = mr[current]
        else:
            w = _reachability_rows(pts, core, current, current + 1)[0]
        better = (w < best_w) & ~attached
        best_w[better] = w[better]
        best_src[better] = current
        best_w[current] = np.inf
        nxt = int(np.argmin(best_w))
        edges[step] = (best_src[nxt], nxt, best_w[nxt])
        attached[nxt] = True
        current = nxt
    return edges


# ------------------------------------------------------------- single linkage

@dataclass
class Dendrogram:
    """Level-merged single-linkage hierarchy.

    Nodes 0..n-1 are points; each merge level appends one node per newly
    formed component, whose children are the components it absorbed (two or
    more).  All edges sharing one exact weight belong to the same level, so
    the hierarchy is a function of the threshold components alone and does
    not depend on edge order or on which minimum spanning tree produced
    the edges.
    """

    n_points: int
    children: list[list[int]]   # per internal node, >= 2 entries
    heights: list[float]        # per internal node
    sizes: list[int]            # per node, points first

    @property
    def root(self) -> int:
        return self.n_points + len(self.children) - 1


def single_linkage(edges: np.ndarray, n: int) -> Dendrogram:
    """Agglomerate MST edges into a dendrogram, one level per distinct weight."""
    order = np.argsort(edges[:, 2], kind="stable")
    uf = np.arange(n, dtype=np.int64)
    node_of: dict[int, int] = {i: i for i in range(n)}
    children: list[list[int]] = []
    heights: list[float] = []
    sizes: list[int] = [1] * n

    def find(a: int) -> int:
        root = a
        while uf[root] != root:
            root = uf[root]
        while uf[a] != root:
            uf[a], a = root, uf[a]
        return root

    weights = edges[order, 2]
    lo = 0
    while lo < len(order):
        hi = lo
        while hi < len(order) and weights[hi] == weights[lo]:
            hi += 1
        # One level: merge every component touched by an edge of this weight.
        merged: dict[int, list[int]] = {}
        for e in order[lo:hi]:
            u, v = int(edges[e, 0]), int(edges[e, 1])
            ru, rv = find(u), find(v)
            if ru == rv:
                continue  # cannot happen for tree edges; kept for safety
            parts = merged.pop(ru, [node_of[ru]]) + merged.pop(rv, [node_of[rv]])
            uf[rv] = ru
            merged[find(ru)] = parts
        for root, parts in sorted(merged.items(), key=lambda kv: min(kv[1])):
            node = n + len(children)
            parts.sort()
            children.append(parts)
            heights.append(float(weights[lo]))
            sizes.append(sum(sizes[p] for p in parts))
            node_of[root] = node
        lo = hi
    return Dendrogram(n_points=n, children=children, heights=heights, sizes=sizes)


# ------------------------------------------------------------- condensed tree

@dataclass
class CondensedTree:
    """Clusters surviving the min_cluster_size filter, plus point falls.

    point_parent[p] / point_lam[p]: the cluster each point fell out of and
    the lambda at which it did.  cluster_parent[c] is -1 for the root.
    cluster_birth[c] is the lambda at which the cluster split off (for the
    root: the lambda of its first recorded departure).  cluster_size[c] is
    the point count at birth.
    """

    n_points: int
    point_parent: np.ndarray
    point_lam: np.ndarray
    cluster_parent: np.ndarray
    cluster_birth: np.ndarray
    cluster_size: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_parent)


def _subtree_leaves(dend: Dendrogram, node: int) -> list[int]:
    out = []
    stack = [node]
    while stack:
        v = stack.pop()
        if v < dend.n_points:
            out.append(v)
        else:
            stack.extend(dend.children[v - dend.n_points])
    return out


def condense_tree(dend: Dendrogram, min_cluster_size: int) -> CondensedTree:
    n = dend.n_points
    point_parent = np.zeros(n, dtype=np.int64)
    point_lam = np.zeros(n)
    cluster_parent = [-1]
    cluster_birth = [np.inf]
    cluster_size = [n]

    def drop_points(node: int, cluster: int, lam: float) -> None:
        for p in _subtree_leaves(dend, node):
            point_parent[p] = cluster
            point_lam[p] = lam

    cluster_of = {dend.root: 0}
    queue = deque([dend.root])
    while queue:
        node = queue.popleft()
        cluster = cluster_of.pop(node)
        kids = dend.children[node - n]
        h = dend.heights[node - n]
        lam = np.inf if h <= 0.0 else 1.0 / h
        big = [k for k in kids if dend.sizes[k] >= min_cluster_size]
        if len(big) >= 2:
            # True split: each large component becomes a cluster of its own.
            for ch in big:  # internal nodes: a large component cannot be a leaf
                new = len(cluster_parent)
                cluster_parent.append(cluster)
                cluster_birth.append(lam)
                cluster_size.append(int(dend.sizes[ch]))
                cluster_of[ch] = new
                queue.append(ch)
        elif len(big) == 1:
            cluster_of[big[0]] = cluster
            queue.append(big[0])
        for ch in kids:
            if ch not in cluster_of:
                drop_points(ch, cluster, lam)

    # The root has no parent row; date its birth to its first departure.
    root_lams = [point_lam[point_parent == 0].min()] if (point_parent == 0).any() else []
    root_lams += [cluster_birth[c] for c in range(1, len(cluster_parent))
                  if cluster_parent[c] == 0]
    cluster_birth[0] = min(root_lams)
    return CondensedTree(
        n_points=n,
        point_parent=point_parent,
        point_lam=point_lam,
        cluster_parent=np.asarray(cluster_parent, dtype=np.int64),
        cluster_birth=np.asarray(cluster_birth),
        cluster_size=np.asarray(cluster_size, dtype=np.int64),
    )


# ------------------------------------------------------ stability + selection

def cluster_stability(tree: CondensedTree) -> np.ndarray:
    """Excess-of-mass stability per condensed cluster.

    Departures at the same (infinite) lambda as the birth contribute zero
    rather than nan, which covers groups of exactly coincident points.
    """
    stability = np.zeros(tree.n_clusters)
    birth = tree.cluster_birth

    def add(cluster: int, lam: float, weight: float) -> None:
        if np.isinf(lam) and np.isinf(birth[cluster]):
            return
        stability[cluster] += (lam - birth[cluster]) * weight

    for p in range(tree.n_points):
        add(int(tree.point_parent[p]), tree.point_lam[p], 1.0)
    for c in range(1, tree.n_clusters):
        add(int(tree.cluster_parent[c]), tree.cluster_birth[c], float(tree.cluster_size[c]))
    return stability


def select_clusters(tree: CondensedTree, stability: np.ndarray) -> set[int]:
    """Antichain of clusters maximizing total stability (ties keep the parent).

    Children carry higher ids than their parent, so one descending pass
    resolves every subtree before it is compared against its parent.
    """
    kids: list[list[int]] = [[] for _ in range(tree.n_clusters)]
    for c in range(1, tree.n_clusters):
        kids[tree.cluster_parent[c]].append(c)
    best = stability.astype(np.float64).copy()
    chosen: list[set[int]] = [{c} for c in range(tree.n_clusters)]
    for c in range(tree.n_clusters - 1, -1, -1):
        if not kids[c]:
            continue
        child_total = sum(best[k] for k in kids[c])
        if child_total > stability[c]:
            best[c] = child_total
            chosen[c] = set().union(*(chosen[k] for k in kids[c]))
    return chosen[0]


def labels_from_selection(tree: CondensedTree, selected: set[int]) -> np.ndarray:
    """Per-point labels: each point joins the selected ancestor (or self) of
    the cluster it fell from, else noise (-1).  Labels are renumbered
    0..k-1 by each cluster's lowest member point index."""
    ancestor = np.full(tree.n_clusters, -1, dtype=np.int64)
    for c in range(tree.n_clusters):
        if c in selected:
            ancestor[c] = c
        elif tree.cluster_parent[c] >= 0:
            ancestor[c] = ancestor[tree.cluster_parent[c]]
    raw = ancestor[tree.point_parent]

    labels = np.full(tree.n_points, -1, dtype=np.int64)
    seen: dict[int, int] = {}
    for p in range(tree.n_points):
        c = raw[p]
        if c < 0:
            continue
        if c not in seen:
            seen[c] = len(seen)
        labels[p] = seen[c]
    return labels


# ------------------------------------------------------------------ top level

def hdbscan(points: np.ndarray, min_cluster_size: int = 10,
            min_samples: int = 10) -> np.ndarray:
    """Cluster a point cloud; returns per-point labels with -1 for noise.

    Fewer than min_cluster_size points come back as all noise.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError(f"points must be 2D, got shape {pts.shape}")
    if min_cluster_size < 2:
        raise ValueError("min_cluster_size must be at least 2")
    if min_samples < 1:
        raise ValueError("min_samples must be at least 1")
    if not np.isfinite(pts).all():
        raise ValueError("points must be finite")
    n = len(pts)
    if n < max(min_cluster_size, 2):
        return np.full(n, -1, dtype=np.int64)
    core = core_distances(pts, min_samples)
    edges = mutual_reachability_mst(pts, core)
    dendro = single_linkage(edges, n)
    tree = condense_tree(dendro, min_cluster_size)
    stability = cluster_stability(tree)
    selected = select_clusters(tree, stability)
    return labels_from_selection(tree, selected)
