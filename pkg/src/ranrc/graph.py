"""Directed communication topologies.

A graph is a fixed set of ordered pairs ``(i, j)`` meaning node ``j`` can hear
node ``i``.  Geometric graphs are bidirected and carry node coordinates in the
unit square so a topology can be written out and plotted later.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

__all__ = [
    "DirectedGraph",
    "generate_random_geometric",
    "generate_connected_geometric",
    "is_strongly_connected",
    "read_edgelist",
    "write_edgelist",
    "DisconnectedGraphError",
]


class DisconnectedGraphError(ValueError):
    """Raised when a strongly connected topology is required but not available."""


@dataclass(frozen=True)
class DirectedGraph:
    """Immutable directed graph on nodes ``0..n-1``.

    Attributes:
        n: Number of nodes.
        edges: Sorted tuple of ``(source, target)`` pairs, no self-loops.
        positions: Optional ``(n, 2)`` array of node coordinates.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    positions: np.ndarray | None = field(default=None, compare=False)
    _out: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _in: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _edge_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"graph needs at least one node, got n={self.n}")
        edges = tuple(sorted({(int(i), int(j)) for i, j in self.edges}))
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) out of range for n={self.n}")
        out: list[list[int]] = [[] for _ in range(self.n)]
        inn: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in edges:
            out[i].append(j)
            inn[j].append(i)
        if self.positions is not None:
            pos = np.asarray(self.positions, dtype=float)
            if pos.shape != (self.n, 2):
                raise ValueError(f"positions must have shape ({self.n}, 2), got {pos.shape}")
            pos.setflags(write=False)
            object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_out", tuple(tuple(o) for o in out))
        object.__setattr__(self, "_in", tuple(tuple(o) for o in inn))
        object.__setattr__(self, "_edge_index", {e: k for k, e in enumerate(edges)})

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], positions=None) -> "DirectedGraph":
        return cls(n=n, edges=tuple(edges), positions=positions)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def out_neighbors(self, i: int) -> tuple[int, ...]:
        """Nodes that receive the broadcasts of ``i``, ascending."""
        return self._out[i]

    def in_neighbors(self, i: int) -> tuple[int, ...]:
        """Nodes that ``i`` can hear, ascending."""
        return self._in[i]

    def out_degree(self, i: int) -> int:
        return len(self._out[i])

    def edge_index(self, edge: tuple[int, int]) -> int:
        """Position of ``edge`` in :attr:`edges` (the augmented-state ordering)."""
        return self._edge_index[edge]

    def has_edge(self, i: int, j: int) -> bool:
        return (i, j) in self._edge_index

    def is_symmetric(self) -> bool:
        return all((j, i) in self._edge_index for i, j in self.edges)


def _reachable(adjacency: tuple[tuple[int, ...], ...], start: int) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def is_strongly_connected(g: DirectedGraph) -> bool:
    """True iff every node reaches every other node along directed edges.

    One forward and one backward search from node 0 suffice: everything must
    be reachable from 0, and 0 must be reachable from everything.
    """
    if g.n == 1:
        return True
    return len(_reachable(g._out, 0)) == g.n and len(_reachable(g._in, 0)) == g.n


def _geometric_from_positions(pos: np.ndarray, radius: float) -> DirectedGraph:
    n = len(pos)
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    ii, jj = np.nonzero(dist <= radius)
    edges = [(int(i), int(j)) for i, j in zip(ii, jj) if i != j]
    return DirectedGraph(n=n, edges=tuple(edges), positions=pos)


def generate_random_geometric(n: int, radius: float, seed: int | None) -> DirectedGraph:
    """Random geometric graph with ``n`` nodes uniform in the unit square.

    Both ``(i, j)`` and ``(j, i)`` are present iff the points are within
    ``radius`` of each other.  Connectivity is not enforced; see
    :func:`generate_connected_geometric`.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    rng = np.random.default_rng(seed)
    return _geometric_from_positions(rng.random((n, 2)), radius)


def generate_connected_geometric(
    n: int, radius: float, seed: int | None, max_attempts: int = 1000
) -> DirectedGraph:
    """Resample node positions from one seeded stream until strongly connected."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        g = _geometric_from_positions(rng.random((n, 2)), radius)
        if is_strongly_connected(g):
            return g
    raise DisconnectedGraphError(
        f"no strongly connected geometric graph with n={n}, radius={radius} "
        f"after {max_attempts} attempts"
    )


def write_edgelist(g: DirectedGraph, path: str | Path) -> None:
    """Write ``n``, then ``i j`` per edge, then ``i x y`` per positioned node."""
    lines = [str(g.n)]
    lines += [f"{i} {j}" for i, j in g.edges]
    if g.positions is not None:
        lines += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(g.positions.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edgelist(path: str | Path) -> DirectedGraph:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 1:
        raise ValueError(f"{path}: first line must hold the node count")
    n = int(rows[0][0])
    edges = []
    positions = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) == 2:
            edges.append((int(row[0]), int(row[1])))
        elif len(row) == 3:
            positions[int(row[0])] = (float(row[1]), float(row[2]))
        else:
            raise ValueError(f"{path}:{lineno}: expected 'i j' or 'i x y'")
    pos = None
    if positions:
        if sorted(positions) != list(range(n)):
            raise ValueError(f"{path}: positions given for some nodes but not all")
        pos = np.array([positions[i] for i in range(n)])
    return DirectedGraph(n=n, edges=tuple(edges), positions=pos)
