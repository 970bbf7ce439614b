"""Cross-checks between the node state machine and the augmented matrix form.

Used by the test-suite and by ``ranrc check``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .consensus import build_step_matrices
from .costs import BinomialDevianceCost, CostModel, DescentVariant, check_derivatives
from .graph import DirectedGraph, generate_connected_geometric
from .ingest import SPAMBASE_FEATURES, load_spambase, partition_dataset
from .protocol import NodeState, broadcast_round, initial_network, network_mass, stack_network

__all__ = ["MatrixGap", "matrix_form_gap", "reliable_subsets", "CheckResult", "run_invariant_suite"]


@dataclass(frozen=True)
class MatrixGap:
    y: float
    z: float
    column_sum: float

    @property
    def worst(self) -> float:
        return max(self.y, self.z, self.column_sum)


def reliable_subsets(g: DirectedGraph, active: int):
    """Every subset of ``active``'s out-neighbours, smallest first."""
    outs = g.out_neighbors(active)
    for r in range(len(outs) + 1):
        yield from itertools.combinations(outs, r)


def matrix_form_gap(
    net: Sequence[NodeState],
    g: DirectedGraph,
    active: int,
    reliable,
    models: Sequence[CostModel],
    eps: float,
    c: float,
    variant: DescentVariant | str = DescentVariant.NEWTON_RAPHSON,
) -> MatrixGap:
    """Run one round in place and compare it with ``M s + T (g - g_prev)``.

    The drive is measured from the states themselves: every node updates at
    most once per round, so ``g`` after minus ``g`` before is exactly the
    injected increment.
    """
    before = stack_network(net, g)
    g_prev = np.array([s.g for s in net])
    h_prev = np.array([s.h for s in net])
    broadcast_round(net, g, active, reliable, models, eps, c, variant)
    after = stack_network(net, g)
    dg = np.array([s.g for s in net]) - g_prev
    dh = np.array([s.h for s in net]) - h_prev
    mats = build_step_matrices(g, active, reliable)
    want_y = mats.apply(before.y_a, dg)
    want_z = mats.apply(before.z_a, dh)
    scale_y = 1.0 + np.abs(after.y_a).max(initial=0.0)
    scale_z = 1.0 + np.abs(after.z_a).max(initial=0.0)
    return MatrixGap(
        y=float(np.abs(after.y_a - want_y).max(initial=0.0) / scale_y),
        z=float(np.abs(after.z_a - want_z).max(initial=0.0) / scale_z),
        column_sum=float(np.abs(mats.M.sum(axis=0) - 1.0).max(initial=0.0)),
    )


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _small_problem(seed: int, n_nodes: int = 4):
    g = generate_connected_geometric(n_nodes, 0.8, seed)
    data = load_spambase(None, SPAMBASE_FEATURES)
    parts = partition_dataset(data, n_nodes, seed)
    models = [BinomialDevianceCost(data.features[p[:200]], data.labels[p[:200]]) for p in parts]
    return g, models


def run_invariant_suite(seed: int = 0, rounds: int = 300, loss_p: float = 0.3) -> list[CheckResult]:
    """Conservation, matrix-form equivalence, derivative and determinism checks
    on a small random binomial-deviance instance."""
    from .sim import SimConfig, run_simulation

    g, models = _small_problem(seed)
    rng = np.random.default_rng(seed)
    results = []

    net = initial_network(g, np.zeros(models[0].dim))
    worst_mass = worst_gap = 0.0
    for _ in range(rounds):
        i = int(rng.integers(g.n))
        rel = [j for j in g.out_neighbors(i) if rng.random() >= loss_p]
        gap = matrix_form_gap(net, g, i, rel, models, 0.01, 1e-4)
        worst_gap = max(worst_gap, gap.worst)
        y_tot, z_tot, g_sum, h_sum = network_mass(net, g)
        res = max(np.abs(y_tot - g_sum).max(), np.abs(z_tot - h_sum).max())
        worst_mass = max(worst_mass, res / (1.0 + np.linalg.norm(g_sum)))
    results.append(CheckResult("mass conservation", worst_mass <= 1e-9, f"max relative residual {worst_mass:.2e}"))
    results.append(CheckResult("matrix form", worst_gap <= 1e-12, f"max gap {worst_gap:.2e}"))

    exhaustive = 0.0
    for i in range(g.n):
        for rel in reliable_subsets(g, i):
            probe = initial_network(g, rng.standard_normal(models[0].dim) * 0.1)
            exhaustive = max(exhaustive, matrix_form_gap(probe, g, i, rel, models, 0.01, 1e-4).worst)
    results.append(CheckResult("matrix form, all loss patterns", exhaustive <= 1e-12, f"max gap {exhaustive:.2e}"))

    worst_d = 0.0
    for m in models:
        rep = check_derivatives(m, rng.standard_normal(m.dim) * 0.5)
        worst_d = max(worst_d, rep.max_grad_err, rep.max_hess_err)
    results.append(CheckResult("derivatives", worst_d <= 1e-5, f"max relative error {worst_d:.2e}"))

    cfg = SimConfig(n_nodes=6, cost="quadratic", max_iters=200, seed=seed, loss_p=loss_p)
    same = run_simulation(cfg).csv_text() == run_simulation(cfg).csv_text()
    results.append(CheckResult("determinism", same, "identical traces" if same else "traces differ"))
    return results
