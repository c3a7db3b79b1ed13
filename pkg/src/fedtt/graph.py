"""Road networks and all-pairs shortest sensor distances."""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class RoadNetwork:
    """Undirected weighted sensor graph.

    Each edge is stored once as ``(src, dst, weight)``; the dense ``adjacency``
    holds the weight in both directions and 0 where no edge exists.  Repeated
    edges between the same pair keep the smallest weight.
    """

    sensor_count: int
    edges: tuple[tuple[int, int, float], ...] = ()
    adjacency: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(a), int(b), float(w)) for a, b, w in self.edges))
        validate_network(self)
        adj = np.zeros((self.sensor_count, self.sensor_count))
        seen = np.zeros_like(adj, dtype=bool)
        for a, b, w in self.edges:
            if seen[a, b]:
                w = min(w, adj[a, b])
            adj[a, b] = adj[b, a] = w
            seen[a, b] = seen[b, a] = True
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @classmethod
    def from_adjacency(cls, adjacency) -> "RoadNetwork":
        adj = np.asarray(adjacency, dtype=float)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise NetworkError(f"adjacency must be square, got shape {adj.shape}")
        sym = np.maximum(adj, adj.T)
        src, dst = np.nonzero(np.triu(sym, k=1))
        return cls(adj.shape[0], tuple((int(a), int(b), float(sym[a, b])) for a, b in zip(src, dst)))

    def with_edge(self, src: int, dst: int, weight: float) -> "RoadNetwork":
        return RoadNetwork(self.sensor_count, self.edges + ((src, dst, weight),))

    def neighbours(self) -> list[list[tuple[int, float]]]:
        out: list[list[tuple[int, float]]] = [[] for _ in range(self.sensor_count)]
        for a, b, w in self.edges:
            out[a].append((b, w))
            out[b].append((a, w))
        return out


def validate_network(net: RoadNetwork) -> RoadNetwork:
    """Return ``net`` unchanged, or raise :class:`NetworkError` naming the broken invariant."""
    if not isinstance(net.sensor_count, (int, np.integer)) or net.sensor_count < 1:
        raise NetworkError(f"sensor_count must be a positive integer, got {net.sensor_count!r}")
    n = net.sensor_count
    for a, b, w in net.edges:
        if not (0 <= a < n and 0 <= b < n):
            raise NetworkError(f"edge ({a},{b}) index out of range for {n} sensors")
        if not np.isfinite(w):
            raise NetworkError(f"edge ({a},{b}) has non-finite weight {w}")
        if w < 0:
            raise NetworkError(f"edge ({a},{b}) has negative weight {w}")
    adj = getattr(net, "adjacency", None)
    if adj is not None and adj.shape != (n, n):
        raise NetworkError(f"adjacency is not square with side {n}: {adj.shape}")
    return net


@dataclass(frozen=True)
class DistanceMatrix:
    """Shortest path lengths; unreachable pairs hold the finite ``unreachable`` sentinel."""

    dist: np.ndarray
    unreachable: float

    @property
    def size(self) -> int:
        return self.dist.shape[0]

    def reachable(self) -> np.ndarray:
        return self.dist < self.unreachable

    def normalized(self) -> np.ndarray:
        """Distances divided by the largest finite entry (sentinel pairs map to 10)."""
        finite = self.dist[self.reachable()]
        top = finite.max() if finite.size else 0.0
        if top <= 0:
            return np.where(self.reachable(), 0.0, 10.0)
        return self.dist / top


def shortest_distance_matrix(net: RoadNetwork) -> DistanceMatrix:
    """All-pairs Dijkstra over the undirected network."""
    validate_network(net)
    n = net.sensor_count
    nbrs = net.neighbours()
    dist = np.full((n, n), np.inf)
    for s in range(n):
        row = dist[s]
        row[s] = 0.0
        heap = [(0.0, s)]
        done = np.zeros(n, dtype=bool)
        while heap:
            d, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            for v, w in nbrs[u]:
                nd = d + w
                if nd < row[v]:
                    row[v] = nd
                    heapq.heappush(heap, (nd, v))
    # the two directions can differ in the last bit from summation order
    dist = np.minimum(dist, dist.T)
    finite = dist[np.isfinite(dist)]
    sentinel = 10.0 * max(float(finite.max()), 1.0)
    dist[~np.isfinite(dist)] = sentinel
    dist.setflags(write=False)
    return DistanceMatrix(dist, sentinel)


def read_adjacency_csv(path, sensor_count: int | None = None) -> RoadNetwork:
    """Parse ``src,dst,weight`` rows (0-based sensor indices, one undirected edge per row)."""
    edges = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["src", "dst", "weight"]:
            raise NetworkError(f"{path}: expected header src,dst,weight, got {reader.fieldnames}")
        for row in reader:
            edges.append((int(row["src"]), int(row["dst"]), float(row["weight"])))
    if sensor_count is None:
        sensor_count = 1 + max((max(a, b) for a, b, _ in edges), default=0)
    return RoadNetwork(sensor_count, tuple(edges))


def write_adjacency_csv(net: RoadNetwork, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "weight"])
        for a, b, wt in net.edges:
            w.writerow([a, b, repr(wt)])
