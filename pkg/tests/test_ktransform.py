import math

import numpy as np
import pytest

from migrants import kernels as K
from migrants.configuration import Box, TorusWindow
from migrants.ktransform import (FiniteFunction, QuadratureGrid, ThetaFunction, check_duality,
                                 e_n_eval, e_n_function, e_series_function, f_theta_eval, k_transform,
                                 lebesgue_poisson_integral, lhat_apply, moment_identity_check)
from migrants.verify import random_finite_function, random_model

SUPPORT = Box((0.0, 0.0), (2.0, 2.0))


def recursive_k(G, pts):
    """KG by recursion on the last point: subsets without it plus subsets with it."""
    def rec(i, chosen):
        if i == len(pts):
            return G(np.array(chosen).reshape(-1, G.dimension))
        return rec(i + 1, chosen) + rec(i + 1, chosen + [pts[i]])
    return rec(0, [])


def test_k_transform_examples():
    G = FiniteFunction({0: 1.0}, SUPPORT)
    assert k_transform(G, np.random.default_rng(0).random((5, 2))) == 1.0
    count = FiniteFunction({1: lambda xs: np.ones(xs.shape[0])}, SUPPORT)
    gamma = np.array([[0.5, 0.5], [1.5, 0.2], [3.0, 0.1], [1.0, 1.9]])
    assert k_transform(count, gamma) == 3.0


@pytest.mark.parametrize("seed", range(5))
def test_k_transform_matches_recursive_oracle(seed):
    rng = np.random.default_rng(seed)
    G = random_finite_function(rng, SUPPORT, n_max=3)
    gamma = rng.uniform(-0.3, 2.3, size=(6, 2))
    assert k_transform(G, gamma) == pytest.approx(recursive_k(G, gamma), rel=1e-12, abs=1e-12)


def test_k_transform_cap():
    G = FiniteFunction({0: 1.0}, SUPPORT)
    with pytest.raises(ValueError):
        k_transform(G, np.zeros((30, 2)), cap=24)


def test_e_n():
    theta = ThetaFunction(SUPPORT, 0.5, "bump")
    assert e_n_eval(theta, 0, np.empty((0, 2))) == 1.0
    x = np.array([[0.3, 0.7], [1.2, 1.1]])
    assert e_n_eval(theta, 3, x) == 0.0
    assert e_n_eval(theta, 2, x) == pytest.approx(float(theta(x[0]) * theta(x[1])))


def test_f_theta_edge_cases():
    assert f_theta_eval(ThetaFunction(SUPPORT, 0.0), np.random.default_rng(1).random((4, 2))) == 1.0
    assert f_theta_eval(ThetaFunction(SUPPORT, 0.5), np.empty((0, 2))) == 1.0


def test_f_theta_poisson_average():
    rng = np.random.default_rng(2)
    kappa = 1.5
    theta = ThetaFunction(SUPPORT, 0.7, "bump")
    vals = []
    for _ in range(10_000):
        pts = rng.random((rng.poisson(kappa * 4.0), 2)) * 2.0
        vals.append(f_theta_eval(theta, pts))
    vals = np.array(vals)
    se = vals.std(ddof=1) / math.sqrt(len(vals))
    assert abs(vals.mean() - math.exp(kappa * theta.integral)) < 3 * se


@pytest.mark.parametrize("n", [1, 2, 3])
def test_lp_integral_of_e_n_constant_theta(n):
    c, C = 0.4, 1.3
    theta = ThetaFunction(SUPPORT, c, "constant")
    got = lebesgue_poisson_integral(e_n_function(theta, n), weight=C, nodes_per_axis=8)
    assert got == pytest.approx((-c * C * 4.0) ** n / math.factorial(n), rel=1e-12)


def test_lp_integral_of_series_matches_partial_exponential():
    c, C = 0.3, 0.8
    theta = ThetaFunction(SUPPORT, c, "constant")
    got = lebesgue_poisson_integral(e_series_function(theta, 3), weight=C, nodes_per_axis=8)
    z = -c * C * 4.0
    assert got == pytest.approx(sum(z ** k / math.factorial(k) for k in range(4)), rel=1e-12)


def test_lp_integral_constant_and_separable():
    assert lebesgue_poisson_integral(FiniteFunction({0: 5.0}, SUPPORT)) == 5.0

    def f(x):
        return np.exp(-np.sum((x - 1.0) ** 2, axis=-1))

    G = FiniteFunction({2: lambda xs: f(xs[:, 0]) * f(xs[:, 1])}, SUPPORT)
    C = 1.7
    got = lebesgue_poisson_integral(G, weight=C, nodes_per_axis=48)
    one_d = math.sqrt(math.pi) * math.erf(1.0)  # int_0^2 exp(-(t-1)^2) dt
    ref = C ** 2 / 2 * (one_d ** 2) ** 2
    assert got == pytest.approx(ref, rel=1e-3)
    # the midpoint rule converges at second order; tighten with a finer grid
    fine = lebesgue_poisson_integral(G, weight=C, nodes_per_axis=64)
    assert abs(fine - ref) < abs(got - ref)


def test_lp_integral_resource_error():
    G = FiniteFunction({3: lambda xs: np.ones(xs.shape[0])}, SUPPORT)
    with pytest.raises(MemoryError):
        lebesgue_poisson_integral(G, nodes_per_axis=64, max_points=10_000)


def lhat_oracle(G, eta, p, quad):
    """Term-by-term evaluation with explicit loops over nodes and points."""
    L = p.window.side_length
    eta = [np.asarray(x) for x in eta]
    n = len(eta)

    def dist(a, b):
        return float(np.linalg.norm(a - b))

    def Gset(points):
        return G(np.array(points).reshape(-1, 2))

    total = 0.0
    for x in quad.nodes:
        e_plus = float(p.b_plus.at(x, L)) + sum(p.a_plus(dist(x, y)) for y in eta)
        total += quad.weight * e_plus * Gset(eta + [x])
        for i in range(n):
            rest = eta[:i] + eta[i + 1:]
            total += quad.weight * p.a_plus(dist(x, eta[i])) * Gset(rest + [x])
    for i in range(n):
        rest = eta[:i] + eta[i + 1:]
        comp = sum(p.a_minus(dist(eta[i], y)) for y in rest)
        total -= (float(p.b_minus.at(eta[i], L)) + comp) * Gset(eta)
        total -= comp * Gset(rest)
    return total


@pytest.mark.parametrize("seed", range(4))
def test_lhat_matches_loop_oracle(seed):
    rng = np.random.default_rng(seed + 10)
    p = random_model(rng, 2)
    G = random_finite_function(rng, SUPPORT, n_max=3)
    quad = QuadratureGrid(SUPPORT, 6)
    eta = rng.uniform(0, 2, size=(int(rng.integers(0, 3)), 2))
    assert lhat_apply(G, eta, p, quad) == pytest.approx(lhat_oracle(G, list(eta), p, quad),
                                                        rel=1e-12, abs=1e-12)


def test_lhat_noninteracting_collapse():
    p = K.ModelParams(K.zero(), K.zero(), K.constant(0.7), K.constant(0.4), TorusWindow(10.0, 2))
    rng = np.random.default_rng(3)
    G = random_finite_function(rng, SUPPORT, n_max=3)
    quad = QuadratureGrid(SUPPORT, 10)
    eta = rng.uniform(0, 2, size=(2, 2))
    added = np.concatenate([np.broadcast_to(eta, (len(quad.nodes), 2, 2)), quad.nodes[:, None, :]], axis=1)
    ref = 0.7 * quad.weight * G.batch(added).sum() - 2 * 0.4 * G(eta)
    assert lhat_apply(G, eta, p, quad) == pytest.approx(ref, rel=1e-12)


def test_duality_trivial_cases():
    rng = np.random.default_rng(4)
    p = random_model(rng, 2)
    quad = QuadratureGrid(SUPPORT, 8)
    gamma = rng.uniform(0, 2, size=(3, 2))
    zero = FiniteFunction({}, SUPPORT)
    assert check_duality(zero, gamma, p, quad) == 0.0
    const = FiniteFunction({0: 2.5}, SUPPORT)
    assert check_duality(const, gamma, p, quad) == pytest.approx(0.0, abs=1e-14)


def test_duality_random_instances():
    rng = np.random.default_rng(5)
    for _ in range(20):
        d = int(rng.integers(1, 3))
        support = Box((0.0,) * d, (2.0,) * d)
        p = random_model(rng, d)
        G = random_finite_function(rng, support, n_max=3)
        gamma = rng.uniform(-0.5, 2.5, size=(int(rng.integers(0, 5)), d))
        quad = QuadratureGrid(support, 10 if d == 2 else 40)
        assert check_duality(G, gamma, p, quad) <= 1e-9


def test_moment_identity_examples():
    box = Box((0.0, 0.0), (1.0, 1.0))
    assert moment_identity_check(3, box, np.empty((0, 2))) == (0, 0)
    assert moment_identity_check(5, box, [[0.5, 0.5]]) == (1, 1)
    five = np.random.default_rng(6).random((5, 2))
    assert moment_identity_check(4, box, five) == (625, 625)
    with pytest.raises(ValueError):
        moment_identity_check(9, box, five)
