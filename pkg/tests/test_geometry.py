import numpy as np
import pytest
from hypothesis import given, strategies as st

from sscl import geometry as geo

KINDS = [("circle", (64,), 0.4), ("flat_torus", (32, 32), 0.0), ("warped_torus", (32, 24), 0.4)]


def s_of(x, beta):
    return 1.0 + beta * np.cos(x)


@pytest.mark.parametrize("kind,sizes,beta", KINDS)
def test_normalized_volume(kind, sizes, beta):
    m = geo.build_manifold(kind, sizes, beta)
    assert m.node_weights.sum() == pytest.approx(1.0, abs=1e-14)
    # raw volume: int (1 + beta cos x) over each period, cos integrates to 0
    expected = (2 * np.pi) ** m.dim
    assert m.metric.volume_scale == pytest.approx(expected, rel=1e-13)


def test_circle_metric_formula():
    m = geo.build_manifold("circle", (16,), 0.3)
    x = m.mesh()[0]
    assert np.allclose(m.metric.diag[0], s_of(x, 0.3) ** 2, atol=1e-15)


def test_single_size_for_torus():
    m = geo.build_manifold("flat_torus", 16)
    assert m.shape == (16, 16)


@pytest.mark.parametrize("kwargs,match", [
    (dict(kind="sphere", sizes=(16,)), "unknown manifold"),
    (dict(kind="circle", sizes=(16,), beta=1.0), "beta"),
    (dict(kind="warped_torus", sizes=(16, 16), beta=-1.2), "beta"),
    (dict(kind="flat_torus", sizes=(16, 16), beta=0.1), "beta"),
    (dict(kind="circle", sizes=(4,)), ">= 8"),
])
def test_build_errors(kwargs, match):
    with pytest.raises(ValueError, match=match):
        geo.build_manifold(**kwargs)


def _lap_error(N, beta):
    m = geo.build_manifold("circle", (N,), beta)
    x = m.mesh()[0]
    exact = -np.sin(x) / s_of(x, beta) ** 3
    return np.max(np.abs(geo.laplace_beltrami(m, np.sin(x)) - exact))


def test_laplacian_circle_second_order():
    e1, e2 = _lap_error(64, 0.4), _lap_error(128, 0.4)
    assert geo.observed_order(e1, e2) == pytest.approx(2.0, abs=0.15)


def test_laplacian_warped_torus_analytic():
    errs = []
    for N in (32, 64):
        m = geo.build_manifold("warped_torus", (N, N), 0.4)
        x1, x2 = m.mesh()
        s = s_of(x1, 0.4)
        u = np.sin(x2) + np.cos(x1)
        exact = -np.sin(x2) / s**2 + (0.4 * np.sin(x1) ** 2 - s * np.cos(x1)) / s
        errs.append(np.max(np.abs(geo.laplace_beltrami(m, u) - exact)))
    assert geo.observed_order(*errs) == pytest.approx(2.0, abs=0.15)


def test_flat_laplacian_eigenfunction():
    m = geo.build_manifold("flat_torus", (32, 32))
    x1, x2 = m.mesh()
    u = np.sin(2 * x1) * np.cos(x2)
    d = m.grid.spacings[0]
    lam = (4 * np.sin(d) ** 2 + 4 * np.sin(d / 2) ** 2) / d**2
    assert np.allclose(geo.laplace_beltrami(m, u), -lam * u, atol=1e-12)


@pytest.mark.parametrize("kind,sizes,beta", KINDS)
def test_divergence_theorem_and_green(kind, sizes, beta):
    m = geo.build_manifold(kind, sizes, beta)
    rng = np.random.default_rng(0)
    u = rng.normal(size=m.shape)
    v = rng.normal(size=m.shape)
    X = rng.normal(size=(m.dim, *m.shape))
    assert abs(geo.integrate(m, geo.div_h(m, X))) < 1e-14
    assert abs(geo.integrate(m, geo.laplace_beltrami(m, u))) < 1e-13
    # symmetric and -<u, lap u> equals the integrated Dirichlet density
    assert geo.inner(m, u, geo.laplace_beltrami(m, v)) == pytest.approx(geo.inner(m, geo.laplace_beltrami(m, u), v), abs=1e-11)
    e = geo.dirichlet_density(m, u)
    assert np.all(e >= 0)
    assert geo.integrate(m, e) == pytest.approx(-geo.inner(m, u, geo.laplace_beltrami(m, u)), rel=1e-12)


@given(beta=st.floats(-0.9, 0.9), seed=st.integers(0, 2**32 - 1))
def test_property_integration_by_parts(beta, seed):
    m = geo.build_manifold("warped_torus", (12, 10), beta)
    rng = np.random.default_rng(seed)
    u = rng.normal(size=m.shape)
    assert geo.integrate(m, geo.dirichlet_density(m, u)) == pytest.approx(
        -geo.inner(m, u, geo.laplace_beltrami(m, u)), rel=1e-10, abs=1e-12)


@given(c=st.floats(-5, 5))
def test_property_constants_in_kernel(c):
    m = geo.build_manifold("warped_torus", (12, 12), 0.5)
    u = np.full(m.shape, c)
    assert np.max(np.abs(geo.laplace_beltrami(m, u))) <= 1e-12 * (1 + abs(c))
    assert np.max(np.abs(geo.grad_h(m, u))) <= 1e-12 * (1 + abs(c))


def test_gradient_convergence():
    errs = []
    for N in (32, 64):
        m = geo.build_manifold("warped_torus", (N, N), 0.3)
        x1, x2 = m.mesh()
        s = s_of(x1, 0.3)
        G = geo.grad_h(m, np.sin(x1) * np.sin(x2))
        exact = np.stack([np.cos(x1) * np.sin(x2), np.sin(x1) * np.cos(x2) / s**2])
        errs.append(np.max(np.abs(G - exact)))
    assert geo.observed_order(*errs) == pytest.approx(2.0, abs=0.15)


def test_batched_reductions_match_single():
    m = geo.build_manifold("warped_torus", (16, 16), 0.2)
    rng = np.random.default_rng(1)
    u = rng.normal(size=(3, *m.shape))
    batched = geo.integrate(m, u)
    for b in range(3):
        assert batched[b] == geo.integrate(m, u[b])


def test_axis_distance_exact_half_circle():
    # int_0^pi (1 + beta cos x) dx = pi; the trapezoid sum of cos cancels exactly
    m = geo.build_manifold("circle", (64,), 0.5)
    assert geo.axis_distance(m, (0,), (32,)) == pytest.approx(np.pi, abs=1e-13)
    f = geo.build_manifold("flat_torus", (16, 16))
    assert geo.axis_distance(f, (0, 3), (0, 7)) == pytest.approx(4 * 2 * np.pi / 16, abs=1e-14)
    # shorter arc across the periodic seam
    assert geo.axis_distance(f, (0, 1), (0, 15)) == pytest.approx(2 * 2 * np.pi / 16, abs=1e-14)
    with pytest.raises(ValueError):
        geo.axis_distance(f, (0, 0), (1, 1))


def test_metric_validation():
    g = geo.ChartGrid((8,))
    with pytest.raises(ValueError, match="positive"):
        geo.MetricField(g, np.zeros((8, 1, 1)), np.ones(8), np.ones((8, 1, 1)), 1.0)
    with pytest.raises(ValueError, match="diagonal"):
        g2 = geo.ChartGrid((8, 8))
        h = np.broadcast_to(np.array([[1.0, 0.2], [0.2, 1.0]]), (8, 8, 2, 2)).copy()
        geo.MetricField(g2, h, np.ones((8, 8)), h, 1.0)
    with pytest.raises(ValueError, match="does not match"):
        geo.MetricField(g, np.ones((1, 1, 8)), np.ones(8), np.ones((1, 1, 8)), 1.0)
