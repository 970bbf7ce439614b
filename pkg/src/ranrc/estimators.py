"""scikit-learn style wrappers that train a linear model by simulated ra-NRC.

The rows of ``X`` are scattered over a random geometric network, each node
owns the cost of its rows, and the fitted coefficients are the network
average of the node estimates after ``max_iter`` lossy broadcast rounds.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils import check_random_state
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._validation import check_choice, check_positive, check_probability
from .costs import BinomialDevianceCost, DescentVariant, QuadraticCost
from .graph import generate_connected_geometric
from .ingest import partition_dataset
from .sim import Problem, SimConfig, centralized_newton, run_simulation

__all__ = ["RaNRCClassifier", "RaNRCRegressor"]


class _RaNRCBase(BaseEstimator):
    def _check_params(self, n_samples: int):
        check_positive("n_nodes", self.n_nodes, integer=True)
        check_positive("radius", self.radius)
        check_positive("epsilon", self.epsilon)
        check_positive("c", self.c)
        check_positive("max_iter", self.max_iter, integer=True)
        check_probability("loss_probability", self.loss_probability)
        check_choice("activation", self.activation, {"uniform", "round-robin"})
        DescentVariant.parse(self.variant)
        if n_samples < self.n_nodes:
            raise ValueError(f"need at least one sample per node: {n_samples} samples, {self.n_nodes} nodes")

    def _simulate(self, models_for, n_samples: int, n_params: int):
        seed = int(check_random_state(self.random_state).randint(np.iinfo(np.int32).max))
        graph = generate_connected_geometric(self.n_nodes, self.radius, [seed, 0])
        parts = partition_dataset(n_samples, self.n_nodes, [seed, 2], balanced=self.balanced)
        if any(p.size == 0 for p in parts):
            parts = partition_dataset(n_samples, self.n_nodes, [seed, 2], balanced=True)
        models = tuple(models_for(p) for p in parts)
        x_star = centralized_newton(models, np.zeros(n_params))
        cfg = SimConfig(
            n_nodes=self.n_nodes, epsilon=self.epsilon, c=self.c, variant=self.variant,
            loss_p=self.loss_probability, activation=self.activation,
            max_iters=self.max_iter, seed=seed, stop_mse=self.tol, record_residuals=False,
        )
        trace = run_simulation(cfg, Problem(graph, models, x_star))
        self.graph_ = graph
        self.trace_ = trace
        self.n_iter_ = len(trace)
        self.node_estimates_ = trace.final_x
        self.centralized_solution_ = x_star
        return trace.final_x.mean(axis=0)


class RaNRCClassifier(ClassifierMixin, _RaNRCBase):
    """Binary logistic regression (L2 on the weights, free intercept) trained over a lossy network.

    Parameters
    ----------
    n_nodes, radius : network size and communication radius of the geometric graph.
    epsilon : step size of the local Newton-like update.
    c : floor of the curvature guard.
    gamma : L2 weight on the coefficients, summed over nodes.
    variant : "newton", "jacobi" or "gradient".
    loss_probability : Bernoulli packet-loss probability per edge and broadcast.
    max_iter : broadcast rounds to simulate.
    activation : "round-robin" (default) or "uniform".  Uniform random
        activation lets a node broadcast repeatedly before hearing back, which
        drains its curvature estimate and can destabilise the run.
    balanced : deal rows to nodes round-robin instead of i.i.d.
    tol : stop once the MSE to the centralized solution falls below this.
    random_state : seed for graph, partition, activation and losses.
    """

    def __init__(self, n_nodes=10, radius=0.5, epsilon=0.01, c=1e-4, gamma=1e-2, variant="newton",
                 loss_probability=0.1, max_iter=2000, activation="round-robin", balanced=False,
                 tol=None, random_state=None):
        self.n_nodes = n_nodes
        self.radius = radius
        self.epsilon = epsilon
        self.c = c
        self.gamma = gamma
        self.variant = variant
        self.loss_probability = loss_probability
        self.max_iter = max_iter
        self.activation = activation
        self.balanced = balanced
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        check_classification_targets(y)
        self.classes_ = np.unique(y)
        if self.classes_.size != 2:
            raise ValueError(f"RaNRCClassifier is binary; got {self.classes_.size} classes")
        self._check_params(X.shape[0])
        check_positive("gamma", self.gamma, allow_zero=True)
        signs = np.where(y == self.classes_[1], 1.0, -1.0)
        theta = self._simulate(lambda rows: BinomialDevianceCost(X[rows], signs[rows], self.gamma),
                               X.shape[0], X.shape[1] + 1)
        self.coef_ = theta[None, :-1]
        self.intercept_ = theta[-1:]
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_[0] + self.intercept_[0]

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]


class RaNRCRegressor(RegressorMixin, _RaNRCBase):
    """Ridge regression (free intercept) trained over a lossy network.

    Each node holds ``1/2 ||X_i w + b - y_i||^2 + alpha_i/2 ||w||^2`` where the
    ridge weight ``alpha`` is split evenly over nodes.  Other parameters are as
    in :class:`RaNRCClassifier`.
    """

    def __init__(self, n_nodes=10, radius=0.5, epsilon=0.01, c=1e-4, alpha=1.0, variant="newton",
                 loss_probability=0.1, max_iter=2000, activation="round-robin", balanced=False,
                 tol=None, random_state=None):
        self.n_nodes = n_nodes
        self.radius = radius
        self.epsilon = epsilon
        self.c = c
        self.alpha = alpha
        self.variant = variant
        self.loss_probability = loss_probability
        self.max_iter = max_iter
        self.activation = activation
        self.balanced = balanced
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        self._check_params(X.shape[0])
        check_positive("alpha", self.alpha, allow_zero=True)
        design = np.hstack([X, np.ones((X.shape[0], 1))])
        ridge = np.full(design.shape[1], self.alpha / self.n_nodes)
        ridge[-1] = 0.0

        def node_cost(rows):
            D, t = design[rows], y[rows]
            return QuadraticCost(D.T @ D + np.diag(ridge), D.T @ t, offset=0.5 * float(t @ t))

        theta = self._simulate(node_cost, X.shape[0], design.shape[1])
        self.coef_ = theta[:-1]
        self.intercept_ = float(theta[-1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_ + self.intercept_
