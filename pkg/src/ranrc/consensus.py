"""Push-sum and loss-robust ratio consensus, plus the augmented matrix form.

Node quantities may be scalars, vectors or matrices: arrays are stacked along
axis 0 (one slice per node) and every linear map acts on that axis only.

The augmented state appends one "edge node" per directed edge holding the mass
that was sent along the edge but never delivered, ``nu = sigma_src - rho_dst``.
Edges are ordered as in :attr:`DirectedGraph.edges`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .graph import DirectedGraph

__all__ = [
    "RatioState",
    "AugmentedState",
    "StepMatrices",
    "pushsum_step",
    "robust_ratio_step",
    "build_step_matrices",
    "mass_residual",
    "ratios",
]


@dataclass(frozen=True, eq=False)
class RatioState:
    """Network-wide state of a ratio consensus run.

    ``rho_y[e]`` is held by the receiver of edge ``e``; ``sigma_y[i]`` by node ``i``.
    """

    graph: DirectedGraph
    y: np.ndarray
    z: np.ndarray
    sigma_y: np.ndarray
    sigma_z: np.ndarray
    rho_y: np.ndarray
    rho_z: np.ndarray

    @classmethod
    def initial(cls, graph: DirectedGraph, y0, z0) -> "RatioState":
        """Start from per-node masses ``y0``, ``z0`` with all counters at zero."""
        y0 = np.array(y0, dtype=float)
        z0 = np.array(z0, dtype=float)
        if y0.shape[0] != graph.n or z0.shape[0] != graph.n:
            raise ValueError(f"need one mass per node ({graph.n})")
        ne = graph.n_edges
        return cls(
            graph=graph,
            y=y0,
            z=z0,
            sigma_y=np.zeros_like(y0),
            sigma_z=np.zeros_like(z0),
            rho_y=np.zeros((ne,) + y0.shape[1:]),
            rho_z=np.zeros((ne,) + z0.shape[1:]),
        )

    def copy(self) -> "RatioState":
        return replace(
            self,
            y=self.y.copy(),
            z=self.z.copy(),
            sigma_y=self.sigma_y.copy(),
            sigma_z=self.sigma_z.copy(),
            rho_y=self.rho_y.copy(),
            rho_z=self.rho_z.copy(),
        )

    def _sources(self) -> np.ndarray:
        return np.array([i for i, _ in self.graph.edges], dtype=int)

    @property
    def nu_y(self) -> np.ndarray:
        return self.sigma_y[self._sources()] - self.rho_y

    @property
    def nu_z(self) -> np.ndarray:
        return self.sigma_z[self._sources()] - self.rho_z

    def augmented(self) -> "AugmentedState":
        return AugmentedState(
            self.graph,
            np.concatenate([self.y, self.nu_y]),
            np.concatenate([self.z, self.nu_z]),
        )

    def ratios(self) -> np.ndarray:
        return ratios(self.y, self.z)


@dataclass(frozen=True, eq=False)
class AugmentedState:
    """Node masses stacked on top of edge masses: shape ``(N + N_E, ...)``."""

    graph: DirectedGraph
    y_a: np.ndarray
    z_a: np.ndarray

    @property
    def y(self) -> np.ndarray:
        return self.y_a[: self.graph.n]

    @property
    def nu_y(self) -> np.ndarray:
        return self.y_a[self.graph.n:]

    @property
    def z(self) -> np.ndarray:
        return self.z_a[: self.graph.n]

    @property
    def nu_z(self) -> np.ndarray:
        return self.z_a[self.graph.n:]


def ratios(y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Per-node ``z_i^{-1} y_i`` (plain division for scalar nodes)."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        return y / z
    if z.ndim == 3 and y.ndim == 2:
        return np.linalg.solve(z, y[..., None])[..., 0]
    raise ValueError(f"incompatible shapes y{y.shape}, z{z.shape}")


def _check_step(graph: DirectedGraph, active: int, reliable) -> tuple[int, ...]:
    if not 0 <= active < graph.n:
        raise IndexError(f"active node {active} out of range for n={graph.n}")
    outs = graph.out_neighbors(active)
    if reliable is None:
        return outs
    rel = tuple(sorted(set(int(j) for j in reliable)))
    extra = set(rel) - set(outs)
    if extra:
        raise ValueError(f"nodes {sorted(extra)} are not out-neighbours of {active}")
    return rel


def pushsum_step(state: RatioState, active: int, reliable: Iterable[int] | None = None,
                 lossless: bool = False) -> RatioState:
    """One asynchronous push-sum broadcast with no loss protection.

    The active node keeps ``1/(d+1)`` of its mass and every receiver adds that
    same share.  Shares sent to unreliable receivers are simply lost.  Mass
    counters are left untouched.
    """
    rel = _check_step(state.graph, active, None if lossless else reliable)
    s = state.copy()
    share = 1.0 / (state.graph.out_degree(active) + 1)
    s.y[active] *= share
    s.z[active] *= share
    for j in rel:
        s.y[j] += s.y[active]
        s.z[j] += s.z[active]
    return s


def robust_ratio_step(state: RatioState, active: int, reliable: Iterable[int] | None = None) -> RatioState:
    """One asynchronous broadcast with mass counters.

    Undelivered mass stays parked on the edge as ``sigma - rho`` and is handed
    over in full at the next successful delivery.
    """
    g = state.graph
    rel = _check_step(g, active, reliable)
    s = state.copy()
    share = 1.0 / (g.out_degree(active) + 1)
    s.y[active] *= share
    s.z[active] *= share
    s.sigma_y[active] += s.y[active]
    s.sigma_z[active] += s.z[active]
    for j in rel:
        e = g.edge_index((active, j))
        s.y[j] += s.sigma_y[active] - s.rho_y[e]
        s.z[j] += s.sigma_z[active] - s.rho_z[e]
        s.rho_y[e] = s.sigma_y[active]
        s.rho_z[e] = s.sigma_z[active]
    return s


@dataclass(frozen=True)
class StepMatrices:
    """Linear maps of one broadcast round on the augmented state.

    ``S`` selects the nodes that run an estimate update, ``M`` moves mass
    (column stochastic) and ``T`` injects the local drive ``g - g_old``.
    """

    S: np.ndarray
    T: np.ndarray
    M: np.ndarray

    def apply(self, state_a: np.ndarray, drive: np.ndarray | None = None) -> np.ndarray:
        out = np.tensordot(self.M, state_a, axes=(1, 0))
        if drive is not None:
            out = out + np.tensordot(self.T, drive, axes=(1, 0))
        return out


def build_step_matrices(g: DirectedGraph, active: int, reliable: Iterable[int]) -> StepMatrices:
    """Matrices of one asymmetric broadcast by ``active`` delivered to ``reliable``.

    Block layout (nodes first, then edges in graph order):

    * node-node: column ``active`` holds ``1/(d+1)`` at ``active`` and at each
      receiver, every other node keeps its own mass;
    * edge-node: each delivered edge ``(active, j)`` empties into ``j``;
    * node-edge: each lost edge ``(active, j)`` gains ``1/(d+1)`` of the active mass;
    * edge-edge: lost edges of ``active`` and all edges of other nodes persist.
    """
    rel = set(_check_step(g, active, reliable))
    n, ne = g.n, g.n_edges
    i = active
    share = 1.0 / (g.out_degree(i) + 1)
    lost = [j for j in g.out_neighbors(i) if j not in rel]

    S = np.zeros((n, n))
    S[i, i] = 1.0
    for j in rel:
        S[j, j] = 1.0

    M = np.zeros((n + ne, n + ne))
    for h in range(n):
        if h != i:
            M[h, h] = 1.0
    M[i, i] = share
    for j in rel:
        M[j, i] = share
        M[j, n + g.edge_index((i, j))] = 1.0
    for j in lost:
        M[n + g.edge_index((i, j)), i] = share
    for e, (r, _s) in enumerate(g.edges):
        if r != i or _s in lost:
            M[n + e, n + e] = 1.0

    T = np.zeros((n + ne, n))
    T[i, i] = share
    for j in rel:
        T[j, i] = share
        T[j, j] = 1.0
    for j in lost:
        T[n + g.edge_index((i, j)), i] = share
    return StepMatrices(S=S, T=T, M=M)


def mass_residual(state: RatioState | AugmentedState, g_sum, h_sum) -> float:
    """Largest entry of ``|sum(y) + sum(nu_y) - g_sum|`` and the ``z``/``h`` analogue."""
    aug = state if isinstance(state, AugmentedState) else state.augmented()
    ry = np.abs(aug.y_a.sum(axis=0) - np.asarray(g_sum, dtype=float))
    rz = np.abs(aug.z_a.sum(axis=0) - np.asarray(h_sum, dtype=float))
    return float(max(np.max(ry, initial=0.0), np.max(rz, initial=0.0)))
