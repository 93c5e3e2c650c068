"""Exact nearest-neighbour search: brute force and a kd-tree.

Both backends evaluate squared distances with the same expression,
``(dx*dx + dy*dy) + dz*dz`` in float64, so they agree bit for bit.
Ties resolve to the lowest target index.
"""
from __future__ import annotations

import numpy as np

from ..errors import DimensionError, EmptyInputError, NonFiniteError

BRUTE_FORCE = "brute"
SPATIAL_INDEX = "kdtree"
BACKENDS = (BRUTE_FORCE, SPATIAL_INDEX)

_CHUNK = 1024


def as_cloud(points, name="cloud"):
    """Validate an ``[N, 3]`` array and return it as float64."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DimensionError(f"{name} must have shape [N, 3], got {list(arr.shape)}")
    if arr.shape[0] == 0:
        raise EmptyInputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} has non-finite coordinates")
    return arr


def sq_dist_block(a, b):
    """Squared distances between every row of ``a`` and every row of ``b``."""
    dx = a[:, 0, None] - b[None, :, 0]
    d = dx * dx
    dy = a[:, 1, None] - b[None, :, 1]
    d += dy * dy
    dz = a[:, 2, None] - b[None, :, 2]
    d += dz * dz
    return d


def brute_force_nn(queries, targets):
    """Return ``(sq_dists, indices)`` of the nearest target for each query."""
    n = queries.shape[0]
    dist = np.empty(n, dtype=np.float64)
    idx = np.empty(n, dtype=np.int64)
    for s in range(0, n, _CHUNK):
        d = sq_dist_block(queries[s:s + _CHUNK], targets)
        j = np.argmin(d, axis=1)
        idx[s:s + _CHUNK] = j
        dist[s:s + _CHUNK] = d[np.arange(d.shape[0]), j]
    return dist, idx


class KDTree:
    """Exact kd-tree over a fixed set of 3-D points.

    Nodes split at the median of their widest axis; leaves hold at most
    ``leaf_size`` points and store axis-aligned bounding boxes used for
    pruning.
    """

    def __init__(self, points, leaf_size=16):
        self.points = as_cloud(points, "targets")
        self.leaf_size = max(1, int(leaf_size))
        self.order = np.arange(self.points.shape[0])
        self.lo, self.hi, self.left, self.right = [], [], [], []
        self.box_min, self.box_max = [], []
        self._build(0, self.points.shape[0])
        self.lo = np.asarray(self.lo)
        self.hi = np.asarray(self.hi)
        self.left = np.asarray(self.left)
        self.right = np.asarray(self.right)
        self.box_min = np.asarray(self.box_min)
        self.box_max = np.asarray(self.box_max)
        # leaf payloads reordered so each leaf is a contiguous block
        self.sorted_points = self.points[self.order]

    def _build(self, lo, hi):
        node = len(self.lo)
        pts = self.points[self.order[lo:hi]]
        self.lo.append(lo)
        self.hi.append(hi)
        self.left.append(-1)
        self.right.append(-1)
        self.box_min.append(pts.min(axis=0))
        self.box_max.append(pts.max(axis=0))
        if hi - lo <= self.leaf_size:
            return node
        axis = int(np.argmax(self.box_max[node] - self.box_min[node]))
        mid = (lo + hi) // 2
        seg = self.order[lo:hi]
        # stable ordering keeps the build deterministic under duplicate coordinates
        seg = seg[np.argsort(self.points[seg, axis], kind="stable")]
        self.order[lo:hi] = seg
        self.left[node] = self._build(lo, mid)
        self.right[node] = self._build(mid, hi)
        return node

    def _box_lower_bound(self, q, node):
        gap = np.maximum(self.box_min[node] - q, 0.0) + np.maximum(q - self.box_max[node], 0.0)
        return (gap[0] * gap[0] + gap[1] * gap[1]) + gap[2] * gap[2]

    def query_one(self, q):
        best_d, best_i = np.inf, -1
        stack = [0]
        while stack:
            node = stack.pop()
            if self._box_lower_bound(q, node) > best_d:
                continue
            left = self.left[node]
            if left < 0:
                lo, hi = self.lo[node], self.hi[node]
                d = sq_dist_block(q[None, :], self.sorted_points[lo:hi])[0]
                dmin = d.min()
                if dmin <= best_d:
                    cand = self.order[lo:hi][d == dmin].min()
                    if dmin < best_d or cand < best_i:
                        best_d, best_i = dmin, int(cand)
                continue
            right = self.right[node]
            dl = self._box_lower_bound(q, left)
            dr = self._box_lower_bound(q, right)
            # visit the nearer child first (pushed last)
            if dl <= dr:
                stack.append(right)
                stack.append(left)
            else:
                stack.append(left)
                stack.append(right)
        return best_d, best_i

    def query(self, queries):
        queries = as_cloud(queries, "queries")
        dist = np.empty(queries.shape[0], dtype=np.float64)
        idx = np.empty(queries.shape[0], dtype=np.int64)
        for k, q in enumerate(queries):
            dist[k], idx[k] = self.query_one(q)
        return dist, idx


def nearest_neighbors(queries, targets, backend=BRUTE_FORCE):
    """Squared distance and index of each query's nearest target."""
    queries = as_cloud(queries, "queries")
    if isinstance(backend, KDTree):
        return backend.query(queries)
    targets = as_cloud(targets, "targets")
    if backend == BRUTE_FORCE:
        return brute_force_nn(queries, targets)
    if backend == SPATIAL_INDEX:
        return KDTree(targets).query(queries)
    raise ValueError(f"unknown nearest-neighbour backend {backend!r}")


def nn_distances(queries, targets, backend=BRUTE_FORCE):
    """Exact nearest-neighbour squared distance for every query point."""
    return nearest_neighbors(queries, targets, backend)[0]
