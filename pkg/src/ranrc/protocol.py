"""Per-node state machine of robust asynchronous Newton-Raphson consensus.

Each node runs three atomic blocks on its own :class:`NodeState`:

* ``estimate_update``: move ``x`` toward the local ratio estimate and refresh
  the shared ``g``/``h`` ingredients, feeding their change into ``y``/``z``;
* ``data_transmission``: keep ``1/(d+1)`` of ``y``/``z``, add it to the running
  sent-mass counters and broadcast those counters;
* ``data_reception``: absorb everything a neighbour sent since the last
  successful delivery (``sigma - rho``).

:func:`broadcast_round` chains them for one activation with packet loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg.lapack import dposv, dpotrf

from .consensus import AugmentedState
from .costs import CostModel, DescentVariant, local_gh
from .graph import DirectedGraph

__all__ = [
    "NodeState",
    "Message",
    "ProtocolError",
    "cmax",
    "estimate_update",
    "data_transmission",
    "data_reception",
    "broadcast_round",
    "initial_network",
    "network_mass",
    "network_mass_residual",
    "stack_network",
    "ratio_estimates",
    "consensus_error",
]


class ProtocolError(RuntimeError):
    """A message arrived over an edge that does not exist."""


@dataclass(eq=False)
class NodeState:
    node_id: int
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    g: np.ndarray
    g_old: np.ndarray
    h: np.ndarray
    h_old: np.ndarray
    sigma_y: np.ndarray
    sigma_z: np.ndarray
    rho_y: dict[int, np.ndarray] = field(default_factory=dict)
    rho_z: dict[int, np.ndarray] = field(default_factory=dict)
    flag_trans: int = 1
    flag_rec: int = 0
    flag_update: int = 0

    @classmethod
    def initial(cls, node_id: int, x0, in_neighbors: Iterable[int]) -> "NodeState":
        """Start-up values: ``y = g = 0``, ``z = h = I``, counters at zero."""
        x0 = np.array(x0, dtype=float, ndmin=1)
        n = x0.size
        return cls(
            node_id=node_id,
            x=x0.copy(),
            y=np.zeros(n),
            z=np.eye(n),
            g=np.zeros(n),
            g_old=np.zeros(n),
            h=np.eye(n),
            h_old=np.eye(n),
            sigma_y=np.zeros(n),
            sigma_z=np.zeros((n, n)),
            rho_y={j: np.zeros(n) for j in in_neighbors},
            rho_z={j: np.zeros((n, n)) for j in in_neighbors},
        )

    @property
    def dim(self) -> int:
        return self.x.size


@dataclass(frozen=True, eq=False)
class Message:
    transmitter_node_id: int
    sigma_y: np.ndarray
    sigma_z: np.ndarray


def cmax(z: np.ndarray, c: float) -> np.ndarray:
    """``z`` if ``z >= c I`` in the Loewner order, otherwise ``c I``.

    The whole matrix is replaced, eigenvalues are not clipped individually.
    """
    if not c > 0:
        raise ValueError(f"floor c must be positive, got {c}")
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[0] != z.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {z.shape}")
    scale = max(1.0, float(np.abs(z).max(initial=0.0)))
    if np.abs(z - z.T).max(initial=0.0) > 1e-10 * scale:
        raise ValueError("cmax requires a symmetric matrix")
    return _guard(z, c)


def _guard(z: np.ndarray, c: float) -> np.ndarray:
    eye = np.eye(z.shape[0])
    # a successful Cholesky of z - cI settles the common case cheaply;
    # eigvalsh decides the rest, including the z = cI boundary
    if dpotrf(z - c * eye)[1] == 0 or np.linalg.eigvalsh(z)[0] >= c:
        return z
    return c * eye


def _spd_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # a is symmetric with a >= cI > 0, so a Cholesky solve always succeeds
    _, p, info = dposv(a, b)
    if info != 0:
        raise np.linalg.LinAlgError(f"guarded matrix not positive definite (info={info})")
    return p


def estimate_update(
    s: NodeState,
    model: CostModel,
    eps: float,
    c: float,
    variant: DescentVariant | str = DescentVariant.NEWTON_RAPHSON,
) -> NodeState:
    """Newton-like step on ``x`` followed by the ``g``/``h`` refresh (in place)."""
    if eps < 0:
        raise ValueError(f"step size must be non-negative, got {eps}")
    if not c > 0:
        raise ValueError(f"floor c must be positive, got {c}")
    # z is symmetric by construction, so skip the public validation
    p = _spd_solve(_guard(s.z, c), s.y)
    s.x = (1.0 - eps) * s.x + eps * p
    s.g_old = s.g
    s.h_old = s.h
    s.g, s.h = local_gh(model, s.x, variant)
    s.y = s.y + s.g - s.g_old
    s.z = s.z + s.h - s.h_old
    s.flag_update = 0
    return s


def data_transmission(s: NodeState, out_degree: int) -> tuple[NodeState, Message]:
    share = 1.0 / (out_degree + 1)
    s.y = s.y * share
    s.z = s.z * share
    s.sigma_y = s.sigma_y + s.y
    s.sigma_z = s.sigma_z + s.z
    s.flag_trans = 0
    return s, Message(s.node_id, s.sigma_y.copy(), s.sigma_z.copy())


def data_reception(s: NodeState, m: Message) -> NodeState:
    j = m.transmitter_node_id
    if j not in s.rho_y:
        raise ProtocolError(f"node {s.node_id} received from {j}, which is not an in-neighbour")
    s.y = s.y + m.sigma_y - s.rho_y[j]
    s.z = s.z + m.sigma_z - s.rho_z[j]
    s.rho_y[j] = m.sigma_y.copy()
    s.rho_z[j] = m.sigma_z.copy()
    s.flag_rec = 0
    s.flag_update = 1
    return s


def broadcast_round(
    net: Sequence[NodeState],
    g: DirectedGraph,
    active: int,
    reliable: Iterable[int],
    models: Sequence[CostModel],
    eps: float,
    c: float,
    variant: DescentVariant | str = DescentVariant.NEWTON_RAPHSON,
) -> Sequence[NodeState]:
    """One iteration: ``active`` updates and broadcasts, each reliable receiver
    absorbs the packet and updates.  Receivers run in ascending order."""
    if not 0 <= active < g.n:
        raise IndexError(f"active node {active} out of range for n={g.n}")
    outs = set(g.out_neighbors(active))
    rel = sorted(set(int(j) for j in reliable))
    if not outs.issuperset(rel):
        raise ValueError(f"{sorted(set(rel) - outs)} are not out-neighbours of {active}")
    variant = DescentVariant.parse(variant)
    s = net[active]
    estimate_update(s, models[active], eps, c, variant)
    _, msg = data_transmission(s, g.out_degree(active))
    for j in rel:
        data_reception(net[j], msg)
        estimate_update(net[j], models[j], eps, c, variant)
    return net


def initial_network(g: DirectedGraph, x0) -> list[NodeState]:
    """Fresh states for every node; ``x0`` is shared or given per node as rows."""
    x0 = np.asarray(x0, dtype=float)
    rows = x0 if x0.ndim == 2 else np.broadcast_to(np.atleast_1d(x0), (g.n, np.atleast_1d(x0).size))
    if rows.shape[0] != g.n:
        raise ValueError(f"need {g.n} initial estimates, got {rows.shape[0]}")
    return [NodeState.initial(i, rows[i], g.in_neighbors(i)) for i in range(g.n)]


def network_mass(net: Sequence[NodeState], g: DirectedGraph):
    """Total ``y`` and ``z`` mass on nodes and edges, and the stored ``sum g``, ``sum h``."""
    # edge mass sum_(i,j) sigma_i - rho_j^(i), with sigma_i counted once per out-edge
    deg = np.array([g.out_degree(s.node_id) for s in net], dtype=float)
    y_tot = np.sum([s.y for s in net], axis=0) + deg @ np.array([s.sigma_y for s in net])
    z_tot = np.sum([s.z for s in net], axis=0) + np.einsum("i,ijk->jk", deg, [s.sigma_z for s in net])
    if g.n_edges:
        y_tot = y_tot - np.sum([r for s in net for r in s.rho_y.values()], axis=0)
        z_tot = z_tot - np.sum([r for s in net for r in s.rho_z.values()], axis=0)
    return y_tot, z_tot, np.sum([s.g for s in net], axis=0), np.sum([s.h for s in net], axis=0)


def network_mass_residual(net: Sequence[NodeState], g: DirectedGraph) -> tuple[float, float]:
    """Max-abs violation of ``y``-mass = ``sum g`` and ``z``-mass = ``sum h``."""
    y_tot, z_tot, g_sum, h_sum = network_mass(net, g)
    return float(np.max(np.abs(y_tot - g_sum))), float(np.max(np.abs(z_tot - h_sum)))


def stack_network(net: Sequence[NodeState], g: DirectedGraph) -> AugmentedState:
    """Augmented ``(y, nu_y)`` and ``(z, nu_z)`` with edges in graph order."""
    nu_y = [net[i].sigma_y - net[j].rho_y[i] for i, j in g.edges]
    nu_z = [net[i].sigma_z - net[j].rho_z[i] for i, j in g.edges]
    y_a = np.array([s.y for s in net] + nu_y)
    z_a = np.array([s.z for s in net] + nu_z)
    return AugmentedState(g, y_a, z_a)


def ratio_estimates(net: Sequence[NodeState]) -> np.ndarray:
    """Unguarded ``z_i^{-1} y_i`` per node; rows are NaN where ``z_i`` is singular."""
    out = np.empty((len(net), net[0].dim))
    for k, s in enumerate(net):
        try:
            out[k] = np.linalg.solve(s.z, s.y)
        except np.linalg.LinAlgError:
            out[k] = np.nan
    return out


def consensus_error(net: Sequence[NodeState]) -> float:
    """``max_i ||p_i - (sum h)^{-1} sum g||`` over the stored ``g``, ``h``."""
    target = np.linalg.solve(sum(s.h for s in net), sum(s.g for s in net))
    return float(np.max(np.linalg.norm(ratio_estimates(net) - target, axis=1)))
