import numpy as np
import pytest
from hypothesis import given, strategies as st

from sscl import geometry as geo
from sscl import noise as nz

M1 = geo.build_manifold("circle", (32,), 0.3)


def model(seed=3):
    modes = (nz.NoiseMode(0.5, nz.SpatialProfile("const"), nz.XiProfile("linear")),
             nz.NoiseMode(0.25, nz.SpatialProfile("cos", 2), nz.XiProfile("sin")),
             nz.NoiseMode(0.1, nz.SpatialProfile("sin", 1), nz.XiProfile("const")))
    return nz.NoiseModel(modes, 1.0, 1.0, seed)


def test_g_eval_formula_and_index():
    nm = model()
    x = M1.mesh()[0]
    xi = 0.7
    assert np.allclose(nz.g_eval(nm, 2, M1, xi), 0.25 * np.cos(2 * x) * np.sin(xi), atol=1e-15)
    assert nz.g_eval(nm, 3, M1, xi, node=(5,)) == pytest.approx(0.1 * np.sin(x[5]))
    G2 = sum(nz.g_eval(nm, k, M1, xi) ** 2 for k in (1, 2, 3))
    assert np.allclose(nz.G2_eval(nm, M1, xi), G2)
    for k in (0, 4):
        with pytest.raises(IndexError):
            nz.g_eval(nm, k, M1, xi)


def test_coefficients_batched():
    nm = model()
    u = np.random.default_rng(0).normal(size=(4, 32))
    G = nm.coefficients(M1, u)
    assert G.shape == (3, 4, 32)
    for k in range(3):
        assert np.array_equal(G[k, 2], nz.g_eval(nm, k + 1, M1, u[2]))


def test_increments_reproducible_and_keyed():
    nm = model()
    a = nz.sample_increments(nm, 4, 10, 0.01).dB
    b = nz.sample_increments(nm, 4, 10, 0.01).dB
    assert np.array_equal(a, b)
    assert not np.array_equal(a, nz.sample_increments(nm, 5, 10, 0.01).dB)
    assert not np.array_equal(a, nz.sample_increments(nm, 4, 11, 0.01).dB)
    assert not np.array_equal(a, nz.sample_increments(model(seed=4), 4, 10, 0.01).dB)


def test_substeps_share_brownian_path():
    nm = model()
    dt = 0.02
    coarse = nz.sample_increments(nm, 1, 7, dt, substeps=2).dB
    fine = nz.sample_increments(nm, 1, 14, dt / 2).dB + nz.sample_increments(nm, 1, 15, dt / 2).dB
    assert np.allclose(coarse, fine, rtol=0, atol=1e-16)


def test_increment_moments_clt():
    nm = model()
    dt = 0.05
    z = np.array([nz.sample_increments(nm, p, n, dt).dB for p in range(40) for n in range(100)])
    M = z.shape[0]
    # mean within 4 standard errors, variance within 4 standard errors of dt
    assert np.all(np.abs(z.mean(axis=0)) <= 4 * np.sqrt(dt / M))
    assert np.all(np.abs(z.var(axis=0) - dt) <= 4 * dt * np.sqrt(2.0 / M))
    # modes independent: sample correlations small
    c = np.corrcoef(z.T)
    assert np.max(np.abs(c - np.eye(3))) <= 4 / np.sqrt(M)


def test_bad_dt():
    with pytest.raises(ValueError):
        nz.sample_increments(model(), 0, 0, 0.0)


def test_analytic_constants_are_certified():
    nm = model()
    d1, d2 = nm.analytic_constants(M1, 5.0)
    ok = nz.NoiseModel(nm.modes, d1 * 1.001, d2 * 1.001, 0)
    rep = nz.verify_conditions(ok, M1, (-5, 5))
    assert rep.passed, rep.failures
    assert rep.D1_hat <= d1 and rep.D2_hat <= d2


def test_linear_growth_constant_oracle():
    # single mode c * xi: G^2 / (1 + xi^2) = c^2 xi^2 / (1 + xi^2), sup at the range edge
    nm = nz.NoiseModel((nz.NoiseMode(0.5, nz.SpatialProfile("const"), nz.XiProfile("linear")),), 1.0, 1.0, 0)
    d1, d2 = nm.analytic_constants(M1, 3.0)
    assert d1 == pytest.approx(0.25 * 9 / 10, rel=1e-12)
    assert d2 == pytest.approx(0.25, rel=1e-12)
    rep = nz.verify_conditions(nm, M1, (-3, 3))
    assert rep.D1_hat == pytest.approx(0.25 * 9 / 10, rel=1e-12)


def test_understated_constants_fail():
    nm = model()
    d1, d2 = nm.analytic_constants(M1, 5.0)
    assert not nz.verify_conditions(nz.NoiseModel(nm.modes, 0.5 * d1, d2, 0), M1, (-5, 5)).passed
    bad = nz.NoiseModel(nm.modes, d1, 0.2 * d2, 0)
    rep = nz.verify_conditions(bad, M1, (-5, 5))
    assert not rep.passed and any("Lipschitz" in f for f in rep.failures)


def test_superlinear_phi_fails_growth():
    nm = nz.NoiseModel((nz.NoiseMode(1.0, nz.SpatialProfile("const"), nz.XiProfile("square")),), 5.0, 50.0, 0)
    rep = nz.verify_conditions(nm, M1, (-8, 8))
    assert any("growth" in f for f in rep.failures)


@given(c=st.floats(0.01, 2.0), m=st.integers(0, 4), beta=st.floats(-0.8, 0.8))
def test_property_declared_analytic_constants_pass(c, m, beta):
    man = geo.build_manifold("warped_torus", (12, 12), beta)
    modes = (nz.NoiseMode(c, nz.SpatialProfile("cos" if m else "const", m, 1), nz.XiProfile("linear")),)
    probe = nz.NoiseModel(modes, 1.0, 1.0, 0)
    d1, d2 = probe.analytic_constants(man, 4.0)
    rep = nz.verify_conditions(nz.NoiseModel(modes, d1 * 1.0001, d2 * 1.0001, 0), man, (-4, 4), n_pairs=500)
    assert rep.passed, rep.failures


def test_model_validation():
    with pytest.raises(ValueError):
        nz.NoiseModel((), 1.0, 1.0, 0)
    with pytest.raises(ValueError):
        nz.SpatialProfile("tan")
    with pytest.raises(ValueError):
        nz.XiProfile("cube")
