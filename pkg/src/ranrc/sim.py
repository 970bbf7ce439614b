"""Seeded discrete-event runs of the asymmetric broadcast protocol.

One iteration activates one node, draws which of its out-edges deliver, and
executes :func:`ranrc.protocol.broadcast_round`.  Everything random comes
from generators derived from ``SimConfig.seed`` (or the explicit per-stream
seeds), so a run is a pure function of its configuration.
"""

from __future__ import annotations

import dataclasses
import functools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .costs import BinomialDevianceCost, CostModel, DescentVariant, QuadraticCost
from .graph import DirectedGraph, DisconnectedGraphError, generate_connected_geometric, is_strongly_connected, read_edgelist
from .ingest import SPAMBASE_FEATURES, load_spambase, partition_dataset, resolve_dataset_path
from .protocol import broadcast_round, consensus_error, initial_network, network_mass

__all__ = [
    "SimConfig",
    "Problem",
    "Trace",
    "SimulationDiverged",
    "NewtonDidNotConverge",
    "build_problem",
    "run_simulation",
    "centralized_newton",
    "assumption_monitors",
    "mse",
    "estimate_rate",
    "log_slope",
    "iterations_to_threshold",
    "random_quadratics",
    "BernoulliLoss",
    "BurstLoss",
]

log = logging.getLogger(__name__)

# stream ids for np.random.default_rng([seed, stream])
_GRAPH, _COST, _PARTITION, _ACTIVATION, _LOSS = range(5)

CSV_HEADER = "iteration,active_node,mse,mass_residual_y,mass_residual_z"


class SimulationDiverged(RuntimeError):
    """MSE blew past the divergence threshold; ``trace`` holds the run so far."""

    def __init__(self, message: str, trace: "Trace"):
        super().__init__(message)
        self.trace = trace


class NewtonDidNotConverge(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    # network
    n_nodes: int = 10
    radius: float = 0.5
    graph_file: str | None = None
    # costs
    cost: str = "quadratic"
    dim: int = 3
    cond: float = 100.0
    gamma: float = 1e-2
    dataset: str | None = None
    features: tuple[int, ...] = SPAMBASE_FEATURES
    balanced: bool = False
    standardize: bool = False
    # algorithm
    epsilon: float = 0.01
    c: float = 1e-4
    variant: DescentVariant = DescentVariant.NEWTON_RAPHSON
    x0: tuple[float, ...] | float = 0.0
    # schedule and losses
    activation: str = "uniform"
    loss_model: str = "bernoulli"
    loss_p: float = 0.1
    burst_length: int = 5
    max_iters: int = 2000
    # seeds: one master seed, optional per-stream overrides
    seed: int = 0
    graph_seed: int | None = None
    cost_seed: int | None = None
    partition_seed: int | None = None
    activation_seed: int | None = None
    loss_seed: int | None = None
    # recording
    record_residuals: bool = True
    record_consensus: bool = False
    snapshot_stride: int = 0
    stop_mse: float | None = None
    freeze_after: int | None = None
    divergence_threshold: float = 1e12

    def __post_init__(self):
        object.__setattr__(self, "variant", DescentVariant.parse(self.variant))
        object.__setattr__(self, "features", tuple(int(f) for f in self.features))
        if isinstance(self.x0, (list, np.ndarray)):
            object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if not 0.0 <= self.loss_p <= 1.0:
            raise ValueError(f"loss probability must be in [0, 1], got {self.loss_p}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.n_nodes < 1:
            raise ValueError(f"n_nodes must be >= 1, got {self.n_nodes}")
        if self.cost not in ("quadratic", "binomial"):
            raise ValueError(f"cost must be 'quadratic' or 'binomial', got {self.cost!r}")
        if self.activation not in ("uniform", "round-robin"):
            raise ValueError(f"activation must be 'uniform' or 'round-robin', got {self.activation!r}")
        if self.loss_model not in ("bernoulli", "burst"):
            raise ValueError(f"loss_model must be 'bernoulli' or 'burst', got {self.loss_model!r}")
        if self.burst_length < 0:
            raise ValueError("burst_length must be >= 0")

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def stream_seed(self, stream: int) -> list[int] | int:
        explicit = (self.graph_seed, self.cost_seed, self.partition_seed,
                    self.activation_seed, self.loss_seed)[stream]
        return explicit if explicit is not None else [self.seed, stream]


@dataclass(frozen=True, eq=False)
class Problem:
    graph: DirectedGraph
    models: tuple[CostModel, ...]
    x_star: np.ndarray

    @property
    def dim(self) -> int:
        return self.models[0].dim


class BernoulliLoss:
    """Each packet on each edge is dropped independently with probability ``p``."""

    def __init__(self, p: float):
        self.p = p

    def delivered(self, rng: np.random.Generator, source: int, targets: Sequence[int]) -> list[int]:
        draws = rng.random(len(targets))
        return [j for j, u in zip(targets, draws) if u >= self.p]


class BurstLoss:
    """Drops with probability ``p`` but never more than ``length`` times in a row per edge.

    With ``p = 1`` every edge fails exactly ``length`` times between deliveries.
    """

    def __init__(self, length: int, p: float = 1.0):
        self.length = length
        self.p = p
        self._streak: dict[tuple[int, int], int] = {}

    def delivered(self, rng: np.random.Generator, source: int, targets: Sequence[int]) -> list[int]:
        draws = rng.random(len(targets))
        out = []
        for j, u in zip(targets, draws):
            streak = self._streak.get((source, j), 0)
            if streak >= self.length or u >= self.p:
                out.append(j)
                self._streak[(source, j)] = 0
            else:
                self._streak[(source, j)] = streak + 1
        return out


def random_quadratics(n_nodes: int, dim: int, cond: float, seed) -> list[QuadraticCost]:
    """Random SPD quadratics ``1/2 (x - a)^T A (x - a)`` with ``cond(A) <= cond``.

    Eigenvalues are log-uniform in ``[1, cond]`` and the centres ``a`` are
    standard normal, so the joint optimum is of order one.
    """
    if cond < 1:
        raise ValueError(f"condition bound must be >= 1, got {cond}")
    rng = np.random.default_rng(seed)
    models = []
    for _ in range(n_nodes):
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        eig = np.exp(rng.uniform(0.0, math.log(cond), size=dim))
        A = (q * eig) @ q.T
        models.append(QuadraticCost.centered(0.5 * (A + A.T), rng.standard_normal(dim)))
    return models


@functools.lru_cache(maxsize=8)
def _cached_dataset(path: str, features: tuple[int, ...]):
    return load_spambase(path, features)


def build_problem(cfg: SimConfig) -> Problem:
    """Graph, local costs and reference optimum described by ``cfg``."""
    if cfg.graph_file:
        graph = read_edgelist(cfg.graph_file)
    else:
        graph = generate_connected_geometric(cfg.n_nodes, cfg.radius, cfg.stream_seed(_GRAPH))
    if cfg.cost == "quadratic":
        models = random_quadratics(graph.n, cfg.dim, cfg.cond, cfg.stream_seed(_COST))
    else:
        data = _cached_dataset(str(resolve_dataset_path(cfg.dataset)), cfg.features)
        if cfg.standardize:
            data = data.standardized()
        parts = partition_dataset(data, graph.n, cfg.stream_seed(_PARTITION), balanced=cfg.balanced)
        models = [BinomialDevianceCost(data.features[p], data.labels[p], cfg.gamma) for p in parts]
    x_star = centralized_newton(models, np.zeros(models[0].dim))
    return Problem(graph, tuple(models), x_star)


def centralized_newton(models: Sequence[CostModel], x0, tol: float = 1e-9, max_iter: int = 100) -> np.ndarray:
    """Minimise ``sum f_i`` with undamped Newton steps until ``||sum grad|| <= tol``."""
    x = np.array(x0, dtype=float, ndmin=1)
    for _ in range(max_iter):
        grad = sum(m.gradient(x) for m in models)
        if np.linalg.norm(grad) <= tol:
            return x
        x = x - np.linalg.solve(sum(m.hessian(x) for m in models), grad)
    grad = sum(m.gradient(x) for m in models)
    if np.linalg.norm(grad) <= tol:
        return x
    raise NewtonDidNotConverge(
        f"gradient norm {np.linalg.norm(grad):.3e} > {tol:.1e} after {max_iter} Newton steps"
    )


def mse(xs, x_star) -> float:
    """``(1/N) sum_i ||x_i - x*||^2``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    x_star = np.asarray(x_star, dtype=float).ravel()
    if xs.shape[1] != x_star.size:
        raise ValueError(f"estimates have dimension {xs.shape[1]}, optimum has {x_star.size}")
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.mean(np.sum((xs - x_star) ** 2, axis=1)))


@dataclass(eq=False)
class Trace:
    """Per-iteration record of one run plus summary statistics."""

    config: SimConfig
    graph: DirectedGraph
    x_star: np.ndarray
    iteration: np.ndarray
    active: np.ndarray
    reliable: list[tuple[int, ...]]
    mse: np.ndarray
    mass_residual_y: np.ndarray
    mass_residual_z: np.ndarray
    consensus_error: np.ndarray | None
    g_sum_norm: np.ndarray | None = None
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    final_x: np.ndarray | None = None
    status: str = "completed"
    tau_hat: float = math.nan
    L_hat: float = math.nan
    tail_slope: float = math.nan

    def __len__(self) -> int:
        return len(self.iteration)

    @property
    def final_mse(self) -> float:
        return float(self.mse[-1]) if len(self) else math.nan

    def max_mass_residual(self) -> tuple[float, float]:
        return float(np.max(self.mass_residual_y)), float(np.max(self.mass_residual_z))

    def relative_mass_residual(self) -> float:
        """``max_k max(res_y, res_z) / (1 + ||sum g||)`` over the recorded rounds."""
        if self.g_sum_norm is None:
            raise ValueError("mass residuals were not recorded")
        res = np.maximum(self.mass_residual_y, self.mass_residual_z)
        return float(np.max(res / (1.0 + self.g_sum_norm)))

    def csv_text(self) -> str:
        rows = [CSV_HEADER]
        for k, a, m, ry, rz in zip(self.iteration.tolist(), self.active.tolist(), self.mse.tolist(),
                                   self.mass_residual_y.tolist(), self.mass_residual_z.tolist()):
            rows.append(f"{k},{a},{m!r},{ry!r},{rz!r}")
        return "\n".join(rows) + "\n"

    def to_csv(self, path) -> None:
        Path(path).write_text(self.csv_text())

    def summary(self) -> dict:
        cfg = self.config
        return {
            "status": self.status,
            "iterations": len(self),
            "final_mse": self.final_mse,
            "tail_slope": self.tail_slope,
            "tau_hat": self.tau_hat,
            "L_hat": self.L_hat,
            "max_mass_residual_y": self.max_mass_residual()[0] if len(self) else math.nan,
            "max_mass_residual_z": self.max_mass_residual()[1] if len(self) else math.nan,
            "epsilon": cfg.epsilon,
            "loss_p": cfg.loss_p,
            "seed": cfg.seed,
            "graph_seed": cfg.stream_seed(_GRAPH),
            "activation_seed": cfg.stream_seed(_ACTIVATION),
            "loss_seed": cfg.stream_seed(_LOSS),
            "x_star": " ".join(repr(v) for v in self.x_star.tolist()),
        }

    def summary_text(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in self.summary().items()) + "\n"


def assumption_monitors(t: Trace) -> tuple[float, float]:
    """Observed activation-gap bound and consecutive-loss bound.

    ``tau_hat`` is the longest stretch of iterations between activations of the
    same node, counting virtual activations just before the first and just
    after the last iteration.  ``L_hat`` is the longest run of lost packets on
    any edge, counted over the source's transmissions.  Either is ``inf`` when a
    node never fires or an edge that carried traffic never delivered.
    """
    if len(t) == 0:
        raise ValueError("empty trace")
    g = t.graph
    T = len(t)
    last = [-1] * g.n
    tau = 0
    streak = {e: 0 for e in g.edges}
    longest = {e: 0 for e in g.edges}
    sent = {e: 0 for e in g.edges}
    delivered_once = {e: False for e in g.edges}
    for k, (a, rel) in enumerate(zip(t.active.tolist(), t.reliable)):
        tau = max(tau, k - last[a])
        last[a] = k
        rel = set(rel)
        for j in g.out_neighbors(a):
            e = (a, j)
            sent[e] += 1
            if j in rel:
                delivered_once[e] = True
                streak[e] = 0
            else:
                streak[e] += 1
                longest[e] = max(longest[e], streak[e])
    if any(v < 0 for v in last):
        tau_hat = math.inf
    else:
        tau_hat = float(max(tau, max(T - v for v in last)))
    if any(sent[e] and not delivered_once[e] for e in g.edges):
        L_hat = math.inf
    else:
        L_hat = float(max(longest.values(), default=0))
    return tau_hat, L_hat


def log_slope(k, values) -> float:
    """Least-squares slope of ``log10(values)`` against ``k``.

    Values are floored at 1e-300 so an underflowed sample does not produce
    ``-inf``; at least 10 positive samples are required.
    """
    k = np.asarray(k, dtype=float)
    values = np.asarray(values, dtype=float)
    ok = values > 0
    if ok.sum() < 10:
        raise ValueError(f"need at least 10 positive samples, got {int(ok.sum())}")
    logs = np.log10(np.maximum(values[ok], 1e-300))
    return float(np.polyfit(k[ok], logs, 1)[0])


def estimate_rate(t: Trace | np.ndarray, tail_fraction: float = 0.5) -> float:
    """Fitted ``log10 MSE`` slope per iteration over the trailing ``tail_fraction``."""
    if isinstance(t, Trace):
        k, values = t.iteration, t.mse
    else:
        values = np.asarray(t, dtype=float)
        k = np.arange(1, values.size + 1)
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must be in (0, 1]")
    start = int(math.floor(len(values) * (1 - tail_fraction)))
    return log_slope(k[start:], values[start:])


def iterations_to_threshold(t: Trace, threshold: float) -> int | None:
    """First iteration whose MSE is below ``threshold`` (``None`` if never)."""
    hits = np.flatnonzero(t.mse < threshold)
    return int(t.iteration[hits[0]]) if hits.size else None


def _x0_rows(cfg: SimConfig, n: int, dim: int) -> np.ndarray:
    x0 = np.atleast_1d(np.asarray(cfg.x0, dtype=float))
    if x0.size == 1:
        x0 = np.full(dim, x0[0])
    if x0.size != dim:
        raise ValueError(f"x0 has {x0.size} entries, problem dimension is {dim}")
    return np.tile(x0, (n, 1))


def run_simulation(cfg: SimConfig, problem: Problem | None = None) -> Trace:
    """Execute ``cfg.max_iters`` broadcast rounds and record the metrics.

    ``problem`` overrides the graph and costs that ``cfg`` would build.
    Raises :class:`DisconnectedGraphError` for a graph that is not strongly
    connected and :class:`SimulationDiverged` when the MSE passes
    ``cfg.divergence_threshold`` or stops being finite.
    """
    problem = problem or build_problem(cfg)
    graph, models, x_star = problem.graph, problem.models, problem.x_star
    if not is_strongly_connected(graph):
        raise DisconnectedGraphError("communication graph is not strongly connected")
    if len(models) != graph.n:
        raise ValueError(f"{len(models)} cost models for {graph.n} nodes")
    dim = models[0].dim
    if any(m.dim != dim for m in models) or x_star.size != dim:
        raise ValueError("cost models and optimum must share one dimension")

    net = initial_network(graph, _x0_rows(cfg, graph.n, dim))
    act_rng = np.random.default_rng(cfg.stream_seed(_ACTIVATION))
    loss_rng = np.random.default_rng(cfg.stream_seed(_LOSS))
    loss = BernoulliLoss(cfg.loss_p) if cfg.loss_model == "bernoulli" else BurstLoss(cfg.burst_length, cfg.loss_p)

    ks, actives, reliables, mses, rys, rzs, gns, cerrs = [], [], [], [], [], [], [], []
    snapshots = {}
    status = "completed"
    diverged_msg = None

    for k in range(cfg.max_iters):
        if cfg.activation == "uniform":
            i = int(act_rng.integers(graph.n))
        else:
            i = k % graph.n
        rel = tuple(loss.delivered(loss_rng, i, graph.out_neighbors(i)))
        eps = 0.0 if cfg.freeze_after is not None and k >= cfg.freeze_after else cfg.epsilon
        broadcast_round(net, graph, i, rel, models, eps, cfg.c, cfg.variant)

        xs = np.array([s.x for s in net])
        m = mse(xs, x_star)
        ks.append(k + 1)
        actives.append(i)
        reliables.append(rel)
        mses.append(m)
        if cfg.record_residuals:
            y_tot, z_tot, g_sum, h_sum = network_mass(net, graph)
            rys.append(float(np.abs(y_tot - g_sum).max()))
            rzs.append(float(np.abs(z_tot - h_sum).max()))
            gns.append(float(np.linalg.norm(g_sum)))
        else:
            rys.append(math.nan)
            rzs.append(math.nan)
        if cfg.record_consensus:
            cerrs.append(consensus_error(net))
        if cfg.snapshot_stride and (k + 1) % cfg.snapshot_stride == 0:
            snapshots[k + 1] = xs
        if not math.isfinite(m) or m > cfg.divergence_threshold:
            status = "diverged"
            diverged_msg = f"MSE {m:.3e} exceeded {cfg.divergence_threshold:.1e} at iteration {k + 1}"
            break
        if cfg.stop_mse is not None and m < cfg.stop_mse:
            status = "stopped"
            break

    trace = Trace(
        config=cfg,
        graph=graph,
        x_star=np.asarray(x_star, dtype=float),
        iteration=np.array(ks, dtype=int),
        active=np.array(actives, dtype=int),
        reliable=reliables,
        mse=np.array(mses),
        mass_residual_y=np.array(rys),
        mass_residual_z=np.array(rzs),
        consensus_error=np.array(cerrs) if cfg.record_consensus else None,
        g_sum_norm=np.array(gns) if cfg.record_residuals else None,
        snapshots=snapshots,
        final_x=np.array([s.x for s in net]),
        status=status,
    )
    trace.tau_hat, trace.L_hat = assumption_monitors(trace)
    try:
        trace.tail_slope = estimate_rate(trace)
    except ValueError:
        trace.tail_slope = math.nan
    if diverged_msg:
        log.warning("run diverged: %s", diverged_msg)
        raise SimulationDiverged(diverged_msg, trace)
    return trace
