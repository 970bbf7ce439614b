import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ranrc.costs import (
    BinomialDevianceCost,
    DescentVariant,
    QuadraticCost,
    check_derivatives,
    local_g,
    local_gh,
    local_h,
)


def deviance_by_terms(X, y, gamma, x):
    """Plain loop over emails, written independently of the vectorised model."""
    w, x0 = x[:-1], x[-1]
    total = 0.0
    for chi, label in zip(X, y):
        total += math.log1p(math.exp(-label * (float(np.dot(chi, w)) + x0)))
    return total + gamma * float(np.dot(w, w))


def fd_gradient(f, x, step=1e-5):
    out = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        out[k] = (f(x + e) - f(x - e)) / (2 * step)
    return out


def test_single_zero_email_costs_log2():
    m = BinomialDevianceCost(np.zeros((1, 2)), [1.0], gamma=0.7)
    assert m.eval(np.zeros(3)) == pytest.approx(math.log(2), abs=1e-15)


def test_single_zero_email_gradient_and_hessian():
    gamma = 0.3
    m = BinomialDevianceCost(np.zeros((1, 2)), [1.0], gamma=gamma)
    assert np.allclose(m.gradient(np.zeros(3)), [0.0, 0.0, -0.5], atol=1e-15)
    H = m.hessian(np.zeros(3))
    assert H[-1, -1] == pytest.approx(0.25)
    assert np.allclose(H[:2, :2], 2 * gamma * np.eye(2))


def test_deviance_matches_term_by_term_sum(toy_emails):
    X, y = toy_emails
    m = BinomialDevianceCost(X, y, gamma=0.05)
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.normal(size=3)
        assert m.eval(x) == pytest.approx(deviance_by_terms(X, y, 0.05, x), rel=1e-13)


def test_deviance_gradient_matches_finite_differences(toy_emails):
    X, y = toy_emails
    m = BinomialDevianceCost(X, y, gamma=0.05)
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.normal(size=3)
        num = fd_gradient(lambda v: deviance_by_terms(X, y, 0.05, v), x)
        g = m.gradient(x)
        assert np.max(np.abs(g - num)) / max(1.0, np.max(np.abs(g))) < 1e-6


def test_deviance_hessian_matches_finite_differences(toy_emails):
    X, y = toy_emails
    m = BinomialDevianceCost(X, y, gamma=0.05)
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.normal(size=3)
        num = np.column_stack([fd_gradient(lambda v: m.gradient(v)[k], x) for k in range(3)]).T
        H = m.hessian(x)
        assert np.max(np.abs(H - num)) / max(1.0, np.max(np.abs(H))) < 1e-5


def test_gradient_hessian_pair_matches_separate_calls(toy_emails):
    m = BinomialDevianceCost(*toy_emails)
    x = np.array([0.3, -0.2, 0.1])
    g, H = m.gradient_hessian(x)
    assert np.allclose(g, m.gradient(x), rtol=1e-14, atol=1e-14)
    assert np.allclose(H, m.hessian(x), rtol=1e-14, atol=1e-14)


def test_intercept_is_not_regularised():
    m = BinomialDevianceCost(np.zeros((1, 1)), [1.0], gamma=5.0)
    # moving only the intercept leaves the penalty untouched
    assert m.eval(np.array([0.0, 3.0])) == pytest.approx(math.log1p(math.exp(-3.0)))


def test_quadratic_centred_at_a():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    a = np.array([1.0, -2.0])
    q = QuadraticCost.centered(A, a)
    assert q.eval(a) == pytest.approx(0.0, abs=1e-14)
    assert np.allclose(q.gradient(a), 0.0)
    assert np.array_equal(q.hessian(np.array([5.0, 7.0])), A)


def test_quadratic_rejects_asymmetric_matrix():
    with pytest.raises(ValueError):
        QuadraticCost(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2))


@pytest.mark.parametrize("x", [np.zeros(2), np.zeros(4), np.zeros((1, 3))])
def test_dimension_mismatch(x, toy_emails):
    m = BinomialDevianceCost(*toy_emails)
    for op in (m.eval, m.gradient, m.hessian, lambda v: local_g(m, v)):
        with pytest.raises(ValueError):
            op(x)


def test_labels_must_be_signs():
    with pytest.raises(ValueError):
        BinomialDevianceCost(np.zeros((2, 1)), [0.0, 1.0])


def test_newton_g_of_centred_quadratic_is_constant():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    a = np.array([0.5, -1.5])
    q = QuadraticCost.centered(A, a)
    for x in (np.zeros(2), np.array([4.0, 1.0]), np.array([-3.0, 9.0])):
        assert np.allclose(local_g(q, x), A @ a)


def test_gradient_variant_uses_identity(toy_emails):
    m = BinomialDevianceCost(*toy_emails)
    x = np.array([0.2, 0.1, -0.3])
    g, h = local_gh(m, x, "gradient")
    assert np.array_equal(h, np.eye(3))
    assert np.allclose(g, x - m.gradient(x))


def test_jacobi_variant_is_diagonal_of_hessian():
    X = np.array([[0.3, 1.0], [1.0, -0.5], [0.2, 0.2]])
    m = BinomialDevianceCost(X[:, :1], np.array([1.0, -1.0, 1.0]))
    x = np.array([0.4, -0.1])
    h = local_h(m, x, DescentVariant.JACOBI)
    assert np.array_equal(h, np.diag(np.diag(m.hessian(x))))
    g, _ = local_gh(m, x, "jacobi")
    assert np.allclose(g, h @ x - m.gradient(x))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_newton_pair_recovers_gradient(xs):
    X = np.array([[0.1, 1.2], [0.0, 0.3], [2.0, 0.0], [0.5, 0.5], [1.5, 2.5]])
    m = BinomialDevianceCost(X, [1.0, -1.0, 1.0, -1.0, -1.0], gamma=0.01)
    x = np.array(xs)
    g, h = local_gh(m, x)
    assert np.allclose(h @ x - g, m.gradient(x), atol=1e-12)
    H = m.hessian(x)
    assert np.array_equal(H, H.T)
    assert np.linalg.eigvalsh(H)[0] > 0


def test_check_derivatives_on_quadratic():
    rng = np.random.default_rng(0)
    B = rng.normal(size=(4, 4))
    q = QuadraticCost(B @ B.T + np.eye(4), rng.normal(size=4))
    rep = check_derivatives(q, rng.normal(size=4))
    assert rep.max_grad_err < 1e-8 and rep.max_hess_err < 1e-8


def test_check_derivatives_on_toy_deviance(toy_emails):
    rep = check_derivatives(BinomialDevianceCost(*toy_emails), np.array([0.5, -0.5, 0.2]))
    assert rep.max_grad_err < 1e-5 and rep.max_hess_err < 1e-5


def test_check_derivatives_rejects_zero_step(toy_emails):
    with pytest.raises(ValueError, match="invalid step"):
        check_derivatives(BinomialDevianceCost(*toy_emails), np.zeros(3), step=0)


def test_variant_parsing():
    assert DescentVariant.parse("Newton-Raphson") is DescentVariant.NEWTON_RAPHSON
    assert DescentVariant.parse("JACOBI") is DescentVariant.JACOBI
    with pytest.raises(ValueError):
        DescentVariant.parse("adam")
