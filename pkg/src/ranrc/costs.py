"""Local cost functions and the Newton ingredients built from them.

Every node owns one :class:`CostModel`.  The consensus layer never looks at
the cost directly; it only consumes the pair ``(g, h)`` where ``h`` is the
(surrogate) Hessian and ``g = h x - grad f(x)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = [
    "CostModel",
    "QuadraticCost",
    "BinomialDevianceCost",
    "DescentVariant",
    "local_g",
    "local_h",
    "local_gh",
    "check_derivatives",
    "DerivativeReport",
]


class DescentVariant(str, enum.Enum):
    """Which curvature matrix a node shares with the network."""

    NEWTON_RAPHSON = "newton"
    JACOBI = "jacobi"
    GRADIENT = "gradient"

    @classmethod
    def parse(cls, value: "DescentVariant | str") -> "DescentVariant":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {"newton": cls.NEWTON_RAPHSON, "newtonraphson": cls.NEWTON_RAPHSON,
                   "nr": cls.NEWTON_RAPHSON, "jacobi": cls.JACOBI, "gradient": cls.GRADIENT}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown descent variant {value!r}") from None


class CostModel:
    """Smooth convex cost on ``R^dim``.

    Subclasses implement ``_value``, ``_gradient`` and ``_hessian`` on a
    validated 1-D float vector.
    """

    dim: int

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a vector of shape ({self.dim},), got {x.shape}")
        return x

    def eval(self, x) -> float:
        return float(self._value(self._check(x)))

    def gradient(self, x) -> np.ndarray:
        return self._gradient(self._check(x))

    def hessian(self, x) -> np.ndarray:
        return self._hessian(self._check(x))

    def gradient_hessian(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Both derivatives at once; subclasses may share work between them."""
        x = self._check(x)
        return self._gradient(x), self._hessian(x)

    __call__ = eval


@dataclass(frozen=True, eq=False)
class QuadraticCost(CostModel):
    """``f(x) = 1/2 x^T A x - b^T x + offset`` with symmetric positive definite ``A``."""

    A: np.ndarray
    b: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        A = np.array(self.A, dtype=float, ndmin=2)
        b = np.array(self.b, dtype=float, ndmin=1)
        if A.shape != (b.size, b.size):
            raise ValueError(f"A has shape {A.shape}, b has size {b.size}")
        if not np.allclose(A, A.T, rtol=1e-12, atol=1e-14):
            raise ValueError("A must be symmetric")
        A = 0.5 * (A + A.T)
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def centered(cls, A, a) -> "QuadraticCost":
        """``1/2 (x - a)^T A (x - a)``, minimised at ``a`` with value 0."""
        A = np.array(A, dtype=float, ndmin=2)
        a = np.array(a, dtype=float, ndmin=1)
        return cls(A, A @ a, offset=0.5 * float(a @ A @ a))

    @property
    def dim(self) -> int:
        return self.b.size

    def _value(self, x):
        return 0.5 * x @ self.A @ x - self.b @ x + self.offset

    def _gradient(self, x):
        return self.A @ x - self.b

    def _hessian(self, x):
        return self.A.copy()


@dataclass(frozen=True, eq=False)
class BinomialDevianceCost(CostModel):
    """Regularised logistic loss over one node's share of the emails.

    ``f(x) = sum_j log(1 + exp(-y_j (chi_j^T w + x0))) + gamma ||w||^2``
    where ``x = (w, x0)``: the feature weights come first and the intercept
    is the last coordinate.  The intercept is not regularised.
    """

    features: np.ndarray
    labels: np.ndarray
    gamma: float = 1e-2

    def __post_init__(self):
        X = np.array(self.features, dtype=float, ndmin=2)
        y = np.array(self.labels, dtype=float, ndmin=1)
        if X.shape[0] != y.size:
            raise ValueError(f"{X.shape[0]} feature rows but {y.size} labels")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        design = np.hstack([X, np.ones((X.shape[0], 1))])
        for arr in (X, y, design):
            arr.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "_design", design)
        reg = np.full(design.shape[1], 2.0 * self.gamma)
        reg[-1] = 0.0
        object.__setattr__(self, "_reg", reg)
        object.__setattr__(self, "_reg_matrix", np.diag(reg))

    @property
    def dim(self) -> int:
        return self.features.shape[1] + 1

    @property
    def n_samples(self) -> int:
        return self.labels.size

    def _margins(self, x):
        return self.labels * (self._design @ x)

    def _value(self, x):
        w = x[:-1]
        return np.logaddexp(0.0, -self._margins(x)).sum() + self.gamma * (w @ w)

    def _gradient(self, x):
        # d/dm log(1 + e^-m) = -sigmoid(-m)
        coef = -self.labels * expit(-self._margins(x))
        return self._design.T @ coef + self._reg * x

    def _hessian(self, x):
        return self._hessian_at(x, self._margins(x))

    def _hessian_at(self, x, m):
        s = expit(-m)
        weight = s * (1.0 - s)
        H = self._design.T @ (weight[:, None] * self._design)
        return 0.5 * (H + H.T) + self._reg_matrix

    def gradient_hessian(self, x):
        x = self._check(x)
        m = self._margins(x)
        s = expit(-m)
        grad = self._design.T @ (-self.labels * s) + self._reg * x
        weight = s * (1.0 - s)
        H = self._design.T @ (weight[:, None] * self._design)
        return grad, 0.5 * (H + H.T) + self._reg_matrix


def local_h(model: CostModel, x, variant: DescentVariant | str = DescentVariant.NEWTON_RAPHSON) -> np.ndarray:
    """Curvature matrix node ``i`` shares: full Hessian, its diagonal, or identity."""
    return _surrogate(model.hessian(x), DescentVariant.parse(variant))


def _surrogate(H: np.ndarray, variant: DescentVariant) -> np.ndarray:
    if variant is DescentVariant.GRADIENT:
        return np.eye(H.shape[0])
    if variant is DescentVariant.JACOBI:
        return np.diag(np.diag(H))
    return H


def local_gh(model: CostModel, x, variant: DescentVariant | str = DescentVariant.NEWTON_RAPHSON):
    """Return ``(g, h)`` with ``g = h x - grad f(x)`` for the chosen surrogate ``h``."""
    x = model._check(x)
    variant = DescentVariant.parse(variant)
    if variant is DescentVariant.GRADIENT:
        return x - model.gradient(x), np.eye(model.dim)
    grad, H = model.gradient_hessian(x)
    h = _surrogate(H, variant)
    return h @ x - grad, h


def local_g(model: CostModel, x, variant: DescentVariant | str = DescentVariant.NEWTON_RAPHSON) -> np.ndarray:
    return local_gh(model, x, variant)[0]


@dataclass(frozen=True)
class DerivativeReport:
    max_grad_err: float
    max_hess_err: float


def check_derivatives(model: CostModel, x, step: float = 1e-5) -> DerivativeReport:
    """Compare analytic derivatives with central differences.

    Errors are relative: ``max|analytic - numeric| / max(1, max|analytic|)``.
    """
    if not step > 0:
        raise ValueError(f"invalid step {step!r}: must be positive")
    x = model._check(x)
    n = model.dim
    grad = model.gradient(x)
    hess = model.hessian(x)
    num_grad = np.empty(n)
    num_hess = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = step
        num_grad[k] = (model.eval(x + e) - model.eval(x - e)) / (2 * step)
        num_hess[:, k] = (model.gradient(x + e) - model.gradient(x - e)) / (2 * step)
    g_err = np.max(np.abs(grad - num_grad)) / max(1.0, np.max(np.abs(grad)))
    h_err = np.max(np.abs(hess - num_hess)) / max(1.0, np.max(np.abs(hess)))
    return DerivativeReport(float(g_err), float(h_err))
