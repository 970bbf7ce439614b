import math

import numpy as np
import pytest
from scipy.optimize import minimize

from ranrc.costs import BinomialDevianceCost, QuadraticCost
from ranrc.graph import DirectedGraph, DisconnectedGraphError
from ranrc.sim import (
    CSV_HEADER,
    BurstLoss,
    NewtonDidNotConverge,
    Problem,
    SimConfig,
    SimulationDiverged,
    build_problem,
    centralized_newton,
    estimate_rate,
    iterations_to_threshold,
    log_slope,
    mse,
    random_quadratics,
    run_simulation,
)

FAST = dict(n_nodes=5, radius=0.8, max_iters=300)


# centralised reference


def test_newton_two_scalar_quadratics_one_step():
    models = [QuadraticCost.centered([[1.0]], [1.0]), QuadraticCost.centered([[1.0]], [3.0])]
    assert centralized_newton(models, [0.0], max_iter=1) == pytest.approx([2.0], abs=1e-14)


def test_newton_toy_binomial_matches_scipy(toy_emails):
    X, y = toy_emails
    models = [BinomialDevianceCost(X[:3], y[:3], 0.1), BinomialDevianceCost(X[3:], y[3:], 0.1)]
    x = centralized_newton(models, np.zeros(3), tol=1e-12)
    assert np.linalg.norm(sum(m.gradient(x) for m in models)) <= 1e-12
    ref = minimize(lambda v: sum(m.eval(v) for m in models), np.zeros(3),
                   jac=lambda v: sum(m.gradient(v) for m in models), method="BFGS", options={"gtol": 1e-10})
    np.testing.assert_allclose(x, ref.x, atol=1e-7)


def test_newton_budget_exhausted(toy_emails):
    X, y = toy_emails
    with pytest.raises(NewtonDidNotConverge):
        centralized_newton([BinomialDevianceCost(X, y, 0.1)], np.zeros(3), tol=1e-12, max_iter=1)


# metrics


def test_mse_examples():
    assert mse([[1.0, 1.0], [0.0, 0.0]], [0.0, 0.0]) == pytest.approx(1.0)
    assert mse([[2.0]], [2.0]) == 0.0
    with pytest.raises(ValueError):
        mse([[1.0, 2.0]], [1.0])


def test_mse_overflow_is_inf_without_warning():
    with np.errstate(all="raise"):
        assert mse([[1e200]], [0.0]) == math.inf


def test_estimate_rate_geometric_sequence():
    values = 0.9 ** np.arange(1, 201)
    assert estimate_rate(values) == pytest.approx(math.log10(0.9), rel=1e-10)
    assert estimate_rate(np.full(100, 3.0)) == pytest.approx(0.0, abs=1e-12)


def test_log_slope_needs_samples():
    with pytest.raises(ValueError):
        log_slope(np.arange(5), np.ones(5))
    with pytest.raises(ValueError):
        estimate_rate(np.ones(100), tail_fraction=0.0)


def test_random_quadratics_condition_bound():
    for m in random_quadratics(8, 4, 50.0, 3):
        assert np.linalg.cond(m.A) <= 50.0 * (1 + 1e-9)
        assert np.all(np.linalg.eigvalsh(m.A) >= 1.0 - 1e-9)
    with pytest.raises(ValueError):
        random_quadratics(2, 2, 0.5, 0)


# configuration


@pytest.mark.parametrize("bad", [
    dict(epsilon=0.0), dict(epsilon=-1.0), dict(c=0.0), dict(loss_p=1.5), dict(max_iters=0),
    dict(cost="hinge"), dict(activation="poisson"), dict(loss_model="gilbert"), dict(variant="bfgs"),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SimConfig(**bad)


def test_stream_seeds_default_and_override():
    cfg = SimConfig(seed=7)
    assert cfg.stream_seed(0) == [7, 0]
    assert cfg.replace(loss_seed=99).stream_seed(4) == 99


# runs


def test_run_is_deterministic():
    cfg = SimConfig(**FAST, seed=4, loss_p=0.3)
    a, b = run_simulation(cfg), run_simulation(cfg)
    assert a.csv_text() == b.csv_text()
    np.testing.assert_array_equal(a.final_x, b.final_x)


def test_different_seeds_differ():
    a = run_simulation(SimConfig(**FAST, seed=1))
    b = run_simulation(SimConfig(**FAST, seed=2))
    assert a.csv_text() != b.csv_text()


def test_loss_seed_only_changes_losses():
    base = SimConfig(**FAST, seed=1, loss_p=0.5)
    a, b = run_simulation(base), run_simulation(base.replace(loss_seed=123))
    np.testing.assert_array_equal(a.active, b.active)
    assert a.reliable != b.reliable


def test_quadratic_run_converges_and_conserves_mass():
    t = run_simulation(SimConfig(**FAST | dict(max_iters=500), seed=0, loss_p=0.1, epsilon=0.1))
    assert t.status == "completed"
    assert t.final_mse < 1e-3 * t.mse[0]
    assert t.tail_slope < 0
    assert t.relative_mass_residual() <= 1e-9


def test_total_loss_isolates_every_node():
    # with every packet lost a node only sees its own cost, so x_i contracts
    # towards its local minimiser by (1 - eps) per activation; the first
    # activation still uses the initial y = 0 and does not move
    cfg = SimConfig(n_nodes=6, radius=0.7, loss_p=1.0, epsilon=0.1, activation="round-robin",
                    max_iters=30, seed=2)
    prob = build_problem(cfg)
    t = run_simulation(cfg, prob)
    assert all(rel == () for rel in t.reliable)
    assert t.L_hat == math.inf
    for i, m in enumerate(prob.models):
        a = np.linalg.solve(m.A, m.b)
        np.testing.assert_allclose(t.final_x[i], a * (1 - 0.9 ** 4), atol=1e-8)


def test_round_robin_and_lossless_monitors():
    t = run_simulation(SimConfig(**FAST, activation="round-robin", loss_p=0.0))
    assert t.tau_hat == 5
    assert t.L_hat == 0
    assert all(set(rel) == set(t.graph.out_neighbors(a)) for a, rel in zip(t.active, t.reliable))


def test_burst_loss_streak_bound():
    t = run_simulation(SimConfig(**FAST, loss_model="burst", burst_length=5, loss_p=1.0))
    assert t.L_hat == 5
    t = run_simulation(SimConfig(**FAST, loss_model="burst", burst_length=3, loss_p=0.7))
    assert t.L_hat <= 3


def test_burst_loss_pattern():
    rng = np.random.default_rng(0)
    loss = BurstLoss(2, 1.0)
    got = [loss.delivered(rng, 0, [1]) for _ in range(6)]
    assert got == [[], [], [1], [], [], [1]]


def test_bernoulli_monitor_finite():
    t = run_simulation(SimConfig(**FAST, loss_p=0.3))
    assert math.isfinite(t.L_hat) and t.L_hat >= 1
    assert math.isfinite(t.tau_hat)


def test_stop_mse_and_threshold():
    cfg = SimConfig(**FAST | dict(max_iters=5000), epsilon=0.1, loss_p=0.0, stop_mse=1e-6)
    t = run_simulation(cfg)
    assert t.status == "stopped"
    assert t.final_mse < 1e-6 <= t.mse[-2]
    assert iterations_to_threshold(t, 1e-6) == len(t)
    assert iterations_to_threshold(t, 0.0) is None


def test_freeze_after_keeps_estimates():
    t = run_simulation(SimConfig(**FAST, freeze_after=100, snapshot_stride=50, loss_p=0.0,
                                 record_consensus=True))
    np.testing.assert_array_equal(t.snapshots[150], t.snapshots[300])
    assert sorted(t.snapshots) == [50, 100, 150, 200, 250, 300]
    assert t.consensus_error.shape == (300,)


def test_disconnected_graph_rejected():
    g = DirectedGraph.from_edges(2, [(0, 1)])
    models = tuple(QuadraticCost.centered(np.eye(1), [v]) for v in (0.0, 1.0))
    with pytest.raises(DisconnectedGraphError):
        run_simulation(SimConfig(n_nodes=2), Problem(g, models, np.array([0.5])))


def test_dimension_mismatch_rejected(pair):
    models = (QuadraticCost.centered(np.eye(1), [0.0]), QuadraticCost.centered(np.eye(2), [0.0, 1.0]))
    with pytest.raises(ValueError):
        run_simulation(SimConfig(n_nodes=2), Problem(pair, models, np.zeros(1)))


def test_divergence_carries_partial_trace():
    cfg = SimConfig(**FAST, epsilon=2.5, loss_p=0.0, divergence_threshold=1e6)
    with pytest.raises(SimulationDiverged) as info:
        run_simulation(cfg)
    t = info.value.trace
    assert t.status == "diverged"
    assert 0 < len(t) < cfg.max_iters
    assert t.mse[-1] > 1e6


def test_csv_round_trip(tmp_path):
    t = run_simulation(SimConfig(**FAST, loss_p=0.2))
    path = tmp_path / "trace.csv"
    t.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 0], t.iteration)
    np.testing.assert_array_equal(data[:, 2], t.mse)
    np.testing.assert_array_equal(data[:, 3], t.mass_residual_y)


def test_summary_fields():
    t = run_simulation(SimConfig(**FAST))
    s = t.summary()
    assert s["iterations"] == 300 and s["status"] == "completed"
    assert s["final_mse"] == t.final_mse
    assert "x_star = " in t.summary_text()


def test_binomial_problem_builds():
    cfg = SimConfig(n_nodes=4, radius=0.8, cost="binomial", max_iters=50)
    prob = build_problem(cfg)
    assert prob.dim == 4 and len(prob.models) == 4
    assert np.linalg.norm(sum(m.gradient(prob.x_star) for m in prob.models)) <= 1e-9
