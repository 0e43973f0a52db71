"""Spatial index and graph construction.

Distances are compared as squared Euclidean distances computed the same way
everywhere (``dx*dx + dy*dy``) so the tree and the brute-force oracles agree
exactly, including on ties. Ties are broken by ascending point index.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mesh import MeshCase


def _sqdist(pts: np.ndarray, q) -> np.ndarray:
    dx = pts[:, 0] - q[0]
    dy = pts[:, 1] - q[1]
    return dx * dx + dy * dy


class KdTree2:
    """Balanced 2-d tree with leaf buckets.

    Nodes live in flat arrays; a node ``i`` is a leaf when ``left[i] < 0``
    and then owns ``order[start[i]:stop[i]]``.
    """

    def __init__(self, points, leaf_size: int = 16):
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 1:
            raise ValueError("need at least one 2-d point")
        self.points = pts
        self.leaf_size = max(1, int(leaf_size))
        self.order = np.arange(len(pts))
        self._start: list[int] = []
        self._stop: list[int] = []
        self._left: list[int] = []
        self._right: list[int] = []
        self._lo: list[np.ndarray] = []
        self._hi: list[np.ndarray] = []
        self._build(0, len(pts))
        self.start = np.array(self._start)
        self.stop = np.array(self._stop)
        self.left = np.array(self._left)
        self.right = np.array(self._right)
        self.lo = np.array(self._lo)
        self.hi = np.array(self._hi)
        # per-leaf point blocks in tree order, for vectorized scans
        self.tree_points = pts[self.order]

    def __len__(self):
        return len(self.points)

    def _build(self, start: int, stop: int) -> int:
        node = len(self._start)
        idx = self.order[start:stop]
        sub = self.points[idx]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        self._start.append(start)
        self._stop.append(stop)
        self._left.append(-1)
        self._right.append(-1)
        self._lo.append(lo)
        self._hi.append(hi)
        if stop - start <= self.leaf_size or np.all(lo == hi):
            return node
        axis = int(np.argmax(hi - lo))
        mid = (stop - start) // 2
        part = np.argpartition(sub[:, axis], mid, kind="introselect")
        self.order[start:stop] = idx[part]
        self._left[node] = self._build(start, start + mid)
        self._right[node] = self._build(start + mid, stop)
        return node

    def _box_sqdist(self, node: int, q) -> float:
        lo, hi = self.lo[node], self.hi[node]
        dx = max(lo[0] - q[0], 0.0, q[0] - hi[0])
        dy = max(lo[1] - q[1], 0.0, q[1] - hi[1])
        return dx * dx + dy * dy

    def query_radius(self, q, r: float) -> np.ndarray:
        """Sorted indices of all points with distance <= r."""
        q = (float(q[0]), float(q[1]))
        r2 = float(r) * float(r)
        hits = []
        stack = [0]
        while stack:
            node = stack.pop()
            if self._box_sqdist(node, q) > r2:
                continue
            if self.left[node] < 0:
                s, e = self.start[node], self.stop[node]
                d2 = _sqdist(self.tree_points[s:e], q)
                hits.append(self.order[s:e][d2 <= r2])
            else:
                stack.append(self.left[node])
                stack.append(self.right[node])
        if not hits:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(hits))

    def query_knn(self, q, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices and squared distances of the k nearest points, nearest first."""
        k = min(int(k), len(self.points))
        q = (float(q[0]), float(q[1]))
        # max-heap on (d2, idx) via negation
        heap: list[tuple[float, int]] = []
        stack = [(0.0, 0)]
        while stack:
            bd, node = stack.pop()
            if len(heap) == k and bd > -heap[0][0]:
                continue
            if self.left[node] < 0:
                s, e = self.start[node], self.stop[node]
                d2 = _sqdist(self.tree_points[s:e], q)
                for dist, idx in zip(d2.tolist(), self.order[s:e].tolist()):
                    item = (-dist, -idx)
                    if len(heap) < k:
                        heapq.heappush(heap, item)
                    elif item > heap[0]:
                        heapq.heapreplace(heap, item)
            else:
                a, b = self.left[node], self.right[node]
                da, db = self._box_sqdist(a, q), self._box_sqdist(b, q)
                # push farther child first so the nearer one is visited next
                if da <= db:
                    stack.append((db, b))
                    stack.append((da, a))
                else:
                    stack.append((da, a))
                    stack.append((db, b))
        res = sorted((-d, -i) for d, i in heap)
        return np.array([i for _, i in res], dtype=np.int64), np.array([d for d, _ in res])


def build_kdtree(points, leaf_size: int = 16) -> KdTree2:
    return KdTree2(points, leaf_size=leaf_size)


def brute_radius(points, q, r: float) -> np.ndarray:
    d2 = _sqdist(np.asarray(points, dtype=np.float64), (float(q[0]), float(q[1])))
    return np.flatnonzero(d2 <= float(r) * float(r))


def brute_knn(points, q, k: int) -> np.ndarray:
    d2 = _sqdist(np.asarray(points, dtype=np.float64), (float(q[0]), float(q[1])))
    order = np.lexsort((np.arange(len(d2)), d2))
    return order[: min(k, len(d2))]


def edge_geometry(y, x) -> np.ndarray:
    """[y - x, |y - x|] for single points or row-aligned arrays."""
    diff = np.asarray(y, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    dist = np.hypot(diff[..., 0], diff[..., 1])
    return np.concatenate([diff, dist[..., None]], axis=-1)


@dataclass
class NeighborGraph:
    """Directed edges ``src -> dst``, sorted by (dst, src)."""

    n_nodes: int
    src: np.ndarray
    dst: np.ndarray
    features: Optional[np.ndarray] = None

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n_nodes)


def radius_neighbors(points, r: float, tree: Optional[KdTree2] = None) -> list[np.ndarray]:
    """Sorted in-radius neighbors of every point, self excluded."""
    pts = np.asarray(points, dtype=np.float64)
    tree = tree if tree is not None else KdTree2(pts)
    out = []
    for i in range(len(pts)):
        nb = tree.query_radius(pts[i], r)
        out.append(nb[nb != i])
    return out


def cap_neighbors(neighbors: list[np.ndarray], M: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Keep at most M neighbors per node, sampled uniformly without replacement.

    The stream for node ``i`` is ``default_rng([*seed, i])``: reproducible per
    node and independent of the others. ``seed`` is an int or a sequence of ints
    (e.g. ``(run_seed, epoch)``). Returns ``(src, dst)`` sorted by (dst, src).
    """
    seed_key = [int(s) for s in np.atleast_1d(seed)]
    srcs, dsts = [], []
    for i, nb in enumerate(neighbors):
        if len(nb) > M:
            rng = np.random.default_rng(seed_key + [i])
            nb = np.sort(rng.choice(nb, size=M, replace=False))
        srcs.append(nb)
        dsts.append(np.full(len(nb), i, dtype=np.int64))
    if not srcs:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(srcs).astype(np.int64), np.concatenate(dsts)


def radius_graph(points, r: float, M: int, seed, tree: Optional[KdTree2] = None) -> NeighborGraph:
    """Radius graph without self-loops; neighborhoods larger than M are sampled down to M."""
    if r <= 0 or M < 1:
        raise ValueError("need r > 0 and M >= 1")
    pts = np.asarray(points, dtype=np.float64)
    src, dst = cap_neighbors(radius_neighbors(pts, r, tree), M, seed)
    return NeighborGraph(len(pts), src, dst, edge_geometry(pts[src], pts[dst]))


@dataclass
class BipartiteGraph:
    """Surface -> volume edges; ``neighbors[j]`` are the k surface sources of volume node j.

    ``neighbors`` holds indices into the case's points (global indices).
    Flattened edges are dst-major: edge ``j*k + t`` is ``neighbors[j, t] -> volume_idx[j]``.
    """

    surface_idx: np.ndarray
    volume_idx: np.ndarray
    neighbors: np.ndarray

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]

    @property
    def src(self) -> np.ndarray:
        return self.neighbors.reshape(-1)

    @property
    def dst(self) -> np.ndarray:
        return np.repeat(self.volume_idx, self.k)

    def in_degree(self, n_points: int) -> np.ndarray:
        return np.bincount(self.dst, minlength=n_points)

    def restrict(self, keep: np.ndarray) -> "BipartiteGraph":
        """Graph for the case ``take(case, keep)``, in that case's local indices."""
        remap = np.full(int(max(keep.max(), self.neighbors.max(), self.volume_idx.max())) + 1, -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        pos = np.full(len(remap), -1, dtype=np.int64)
        pos[self.volume_idx] = np.arange(len(self.volume_idx))
        rows = pos[keep]
        if np.any(rows < 0):
            raise ValueError("keep contains points without Surf2Vol edges")
        return BipartiteGraph(remap[self.surface_idx], np.arange(len(keep)), remap[self.neighbors[rows]])


def surf2vol_graph(case: MeshCase, k: int, tree: Optional[KdTree2] = None) -> BipartiteGraph:
    """k nearest surface points for every mesh point (surface points included)."""
    sidx = case.surface_idx
    if len(sidx) < k:
        raise ValueError(f"surface has {len(sidx)} points, fewer than k={k}")
    tree = tree if tree is not None else KdTree2(case.points[sidx])
    nbrs = np.empty((case.n_points, k), dtype=np.int64)
    for j, p in enumerate(case.points):
        local, _ = tree.query_knn(p, k)
        nbrs[j] = sidx[local]
    return BipartiteGraph(sidx.copy(), np.arange(case.n_points), nbrs)


def write_edge_list(path, src, dst, features=None) -> None:
    """Debug dump, one ``src dst f1 f2 ...`` line per edge."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in range(len(src)):
            cols = [str(int(src[e])), str(int(dst[e]))]
            if features is not None:
                cols.extend(repr(float(v)) for v in features[e])
            fh.write(" ".join(cols) + "\n")
