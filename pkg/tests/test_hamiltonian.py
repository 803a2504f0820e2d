import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pspin.constants import ModelParams
from pspin.hamiltonian import (
    BudgetExceededError,
    SpherePoint,
    chart_value,
    euclidean_grad_hess,
    evaluate,
    evaluate_many,
    householder_frame,
    covariance_targets,
    overlap,
    random_sphere_points,
    read_disorder,
    riemannian_grad_hess,
    sample_disorder,
    symmetrize,
    verify_covariance_structure,
    w_kernel,
    w_kernel_derivative,
    write_disorder,
)
from pspin.streams import stream


@pytest.fixture(scope="module")
def J35():
    return sample_disorder(ModelParams(3, 5), seed=11)


@pytest.fixture(scope="module")
def J44():
    return sample_disorder(ModelParams(4, 4), seed=12)


def test_sampling_is_deterministic():
    a = sample_disorder(ModelParams(3, 6), 5)
    b = sample_disorder(ModelParams(3, 6), 5)
    c = sample_disorder(ModelParams(3, 6), 6)
    assert np.array_equal(a.coefficients, b.coefficients)
    assert not np.array_equal(a.coefficients, c.coefficients)


def test_budget_guard():
    with pytest.raises(BudgetExceededError):
        sample_disorder(ModelParams(5, 200), 0, budget=10**6)


def test_couplings_are_read_only(J35):
    with pytest.raises(ValueError):
        J35.couplings[0, 0, 0] = 1.0


def test_symmetrize_is_symmetric():
    T = stream(0, "test").standard_normal((3, 3, 3))
    S = symmetrize(T)
    for perm in [(1, 0, 2), (2, 1, 0), (0, 2, 1)]:
        assert np.allclose(S, np.transpose(S, perm))


@pytest.mark.parametrize("fixture", ["J35", "J44"])
def test_symmetrized_and_raw_contractions_agree(fixture, request):
    J = request.getfixturevalue(fixture)
    X = random_sphere_points(stream(1, "pts"), 5, J.N)
    direct = np.array([evaluate(J, x) for x in X])
    assert np.allclose(evaluate_many(J, X), direct, rtol=1e-12, atol=1e-12)


def test_parity(J35, J44):
    x = random_sphere_points(stream(2, "pts"), 1, 5)[0]
    assert evaluate(J35, -x) == pytest.approx(-evaluate(J35, x), rel=1e-12)
    y = random_sphere_points(stream(2, "pts"), 1, 4)[0]
    assert evaluate(J44, -y) == pytest.approx(evaluate(J44, y), rel=1e-12)


def test_euler_identity(J35):
    # homogeneity of degree p: x . grad H = p H
    x = random_sphere_points(stream(3, "pts"), 1, 5)[0]
    G, _ = euclidean_grad_hess(J35, x)
    assert x @ G == pytest.approx(3 * evaluate(J35, x), rel=1e-12)


def test_gradient_and_hessian_by_finite_differences(J35):
    x = random_sphere_points(stream(4, "pts"), 1, 5)[0]
    G, Hs = euclidean_grad_hess(J35, x)
    h = 1e-5
    f = lambda y: evaluate_many(J35, y[None, :])[0]
    for i in range(5):
        e = np.zeros(5)
        e[i] = h
        assert G[i] == pytest.approx((f(x + e) - f(x - e)) / (2 * h), abs=1e-7)
        gp, _ = euclidean_grad_hess(J35, x + e)
        gm, _ = euclidean_grad_hess(J35, x - e)
        assert np.allclose(Hs[i], (gp - gm) / (2 * h), atol=1e-6)


def test_riemannian_hessian_matches_chart(J35):
    # the Riemannian Hessian at sigma equals the second derivative of the
    # value along unit-speed geodesics of the radius-sqrt(N) sphere
    x = random_sphere_points(stream(5, "pts"), 1, 5)[0]
    frame = householder_frame(x)
    g, R = riemannian_grad_hess(J35, x, frame)
    N = 5
    h = 1e-4
    for i in range(N - 1):
        e = frame.tangent_basis[:, i]
        geo = lambda t: evaluate(J35, math.cos(t / math.sqrt(N)) * x + math.sqrt(N) * math.sin(t / math.sqrt(N)) * e)
        assert g[i] == pytest.approx((geo(h) - geo(-h)) / (2 * h), abs=1e-7)
        second = (geo(h) - 2 * geo(0.0) + geo(-h)) / h**2
        assert R[i, i] == pytest.approx(second, abs=1e-4)


def test_frame_is_orthonormal_tangent():
    x = random_sphere_points(stream(6, "pts"), 1, 7)[0]
    E = householder_frame(x).tangent_basis
    assert np.allclose(E.T @ E, np.eye(6), atol=1e-12)
    assert np.allclose(E.T @ x, 0.0, atol=1e-12)


def test_chart_center_is_value(J35):
    x0 = np.zeros(4)
    north = np.zeros(5)
    north[-1] = math.sqrt(5)
    assert chart_value(J35, x0) == pytest.approx(evaluate(J35, north) / math.sqrt(5))


def test_sphere_point_renormalizes():
    s = SpherePoint(np.array([3.0, 4.0]))
    assert np.linalg.norm(s.coords) == pytest.approx(math.sqrt(2))
    assert overlap(s, -s) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        SpherePoint(np.zeros(3))


def test_combined_is_linear(J35):
    K = sample_disorder(ModelParams(3, 5), 99)
    C = J35.combined(K, 0.3)
    X = random_sphere_points(stream(7, "pts"), 4, 5)
    assert np.allclose(evaluate_many(C, X), evaluate_many(J35, X) + 0.3 * evaluate_many(K, X))


def test_disorder_round_trip(tmp_path, J44):
    path = tmp_path / "j.bin"
    write_disorder(J44, path)
    raw = path.read_bytes()
    assert raw[:4] == b"PSPN"
    assert len(raw) == 20 + 8 * 4**4
    back = read_disorder(path)
    assert back.params == J44.params and back.seed == J44.seed
    assert np.array_equal(back.coefficients, J44.coefficients)


def test_disorder_rejects_bad_magic(tmp_path, J44):
    path = tmp_path / "j.bin"
    write_disorder(J44, path)
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(ValueError):
        read_disorder(path)


def test_covariance_of_values_is_n_r_to_the_p():
    params = ModelParams(3, 6)
    rng = stream(8, "pts")
    X = random_sphere_points(rng, 2, 6)
    r = overlap(X[0], X[1])
    vals = np.array([evaluate_many(sample_disorder(params, k), X) for k in range(4000)])
    cov = np.mean(vals[:, 0] * vals[:, 1])
    se = np.std(vals[:, 0] * vals[:, 1]) / math.sqrt(4000)
    assert abs(cov - 6 * r**3) < 4 * se


@given(st.integers(3, 6), st.lists(st.integers(0, 3), max_size=2), st.lists(st.integers(0, 3), max_size=2))
@settings(max_examples=40, deadline=None)
def test_kernel_derivatives_match_targets(p, xi, yi):
    assert w_kernel_derivative(p, 4, tuple(xi), tuple(yi)) == pytest.approx(covariance_targets(p, tuple(xi), tuple(yi)), abs=1e-6)


def test_kernel_derivative_against_mpmath():
    # independent oracle: arbitrary-precision numerical differentiation
    p = 4

    def W(x0, x1, y0, y1):
        dot = x0 * y0 + x1 * y1
        return (dot + mpmath.sqrt(1 - x0**2 - x1**2) * mpmath.sqrt(1 - y0**2 - y1**2)) ** p

    mpmath.mp.dps = 30
    val = mpmath.diff(W, (0, 0, 0, 0), (2, 0, 2, 0))
    assert float(val) == pytest.approx(covariance_targets(p, (0, 0), (0, 0)), abs=1e-10)


def test_w_kernel_at_origin():
    assert w_kernel(np.zeros(3), np.zeros(3), 5) == 1.0


@pytest.mark.parametrize("p", [3, 4])
def test_covariance_structure(p):
    rep = verify_covariance_structure(ModelParams(p, 5), trials=10_000, seed=0)
    for e in rep["entries"]:
        assert abs(e["kernel_derivative"] - e["target"]) < 1e-6
    named = {(e["name"], tuple(e["x_indices"]), tuple(e["y_indices"])): e for e in rep["entries"]}
    assert named[("gradient variance", (0,), (0,))]["target"] == p
    assert named[("hessian diagonal variance", (0, 0), (0, 0))]["target"] == 3 * p * (p - 1) + p
    assert named[("value-hessian diagonal", (), (0, 0))]["target"] == -p
    # a handful of 3 SE excursions among 18 entries is expected by chance
    assert sum(abs(e["z"]) > 3 for e in rep["entries"]) <= 1
