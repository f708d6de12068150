import numpy as np
import pytest
from hypothesis import given, strategies as st

from sscl import experiments as ex
from sscl import flux as fx
from sscl import geometry as geo

MANIFOLDS = [("circle", (64,), 0.4), ("flat_torus", (24, 24), 0.0), ("warped_torus", (24, 16), 0.5)]


@pytest.mark.parametrize("prof", [fx.BurgersLinearized(2.0), fx.CubicLinearized(1.5), fx.Linear(-0.7)])
def test_profile_derivative_matches_difference_quotient(prof):
    xi = np.linspace(-4, 4, 1601)
    h = 1e-6
    fd = (prof(xi + h) - prof(xi - h)) / (2 * h)
    assert np.allclose(fd, prof.prime(xi), atol=1e-5)
    # C^1 continuation: the profile is continuous across +-L
    if hasattr(prof, "L"):
        L = prof.L
        for s in (-1, 1):
            assert prof(s * L * (1 + 1e-12)) == pytest.approx(prof(s * L * (1 - 1e-12)), abs=1e-9)


@pytest.mark.parametrize("prof", [fx.BurgersLinearized(2.0), fx.CubicLinearized(1.5), fx.Linear(3.0)])
@given(bound=st.floats(0.01, 10))
def test_max_abs_prime_is_sup(prof, bound):
    xi = np.linspace(-bound, bound, 2001)
    assert prof.max_abs_prime(bound) == pytest.approx(np.max(np.abs(prof.prime(xi))), rel=1e-12)


def test_burgers_values():
    a = fx.BurgersLinearized(2.0)
    assert a(1.0) == 0.5
    assert a(3.0) == pytest.approx(2.0 * 3.0 - 2.0)
    assert a(-3.0) == a(3.0)
    with pytest.raises(ValueError):
        fx.BurgersLinearized(0.0)


def _streams(dim):
    out = [fx.StreamFunction("constant", c=(0.7,) * dim)]
    if dim == 2:
        out += [fx.StreamFunction("harmonic", amplitude=1.3, wavenumbers=(2,), axis=1, phase=0.4),
                fx.StreamFunction("product", amplitude=0.8, wavenumbers=(1, 3))]
    return out


@pytest.mark.parametrize("kind,sizes,beta", MANIFOLDS)
def test_divfree_fields_exact(kind, sizes, beta):
    m = geo.build_manifold(kind, sizes, beta)
    for s in _streams(m.dim):
        V = fx.build_divfree_field(m, s)
        rel = np.max(np.abs(geo.div_h(m, V))) / np.max(np.abs(V))
        assert rel <= 1e-12


@given(amp=st.floats(0.1, 10), k1=st.integers(0, 5), k2=st.integers(0, 5), beta=st.floats(-0.9, 0.9))
def test_property_product_stream_divfree(amp, k1, k2, beta):
    m = geo.build_manifold("warped_torus", (16, 12), beta)
    V = fx.build_divfree_field(m, fx.StreamFunction("product", amplitude=amp, wavenumbers=(k1, k2)))
    scale = max(np.max(np.abs(V)), 1e-300)
    assert np.max(np.abs(geo.div_h(m, V))) / scale <= 1e-12


def test_nondivfree_is_detected():
    m = geo.build_manifold("flat_torus", (16, 16))
    V = fx.build_divfree_field(m, fx.StreamFunction("nondivfree", amplitude=1.0))
    assert np.max(np.abs(geo.div_h(m, V))) > 0.1


def test_one_dimensional_constant_field():
    # the only divergence-free fields in 1D: conservative flux constant, V = c / |h|^{1/2}
    m = geo.build_manifold("circle", (32,), 0.5)
    V = fx.build_divfree_field(m, fx.StreamFunction("constant", c=(2.0,)))
    assert np.allclose(V[0] * m.raw_face_density[0], 2.0, rtol=1e-14)
    with pytest.raises(ValueError, match="1D"):
        fx.build_divfree_field(m, fx.StreamFunction("harmonic"))


def test_streamfunction_velocity_matches_analytic_flat():
    # flat torus: V = (d2 psi, -d1 psi) for psi = sin(x1) sin(2 x2), to second order
    errs = []
    for N in (32, 64):
        m = geo.build_manifold("flat_torus", (N, N))
        s = fx.StreamFunction("product", amplitude=1.0, wavenumbers=(1, 2))
        V = fx.build_divfree_field(m, s)
        xf = m.mesh(offsets=(0.5, 0.0))
        exact1 = -2 * np.cos(xf[0]) * np.sin(2 * xf[1])
        errs.append(np.max(np.abs(V[0] - exact1)))
    assert geo.observed_order(*errs) == pytest.approx(2.0, abs=0.2)


def test_wave_speed_bound_brute_force():
    m = geo.build_manifold("warped_torus", (16, 16), 0.6)
    pairs = [(fx.BurgersLinearized(3.0), fx.StreamFunction("harmonic", amplitude=1.0, wavenumbers=(1,), axis=0)),
             (fx.CubicLinearized(1.0), fx.StreamFunction("constant", c=(0.3, -0.4)))]
    fm = fx.FluxModel.build(m, pairs, ex.default_flux_certificate(m, pairs))
    bound = 2.0
    lam = fm.wave_speed_bound(bound)
    xi = np.linspace(-bound, bound, 401)
    brute = np.zeros_like(lam)
    for x in xi:
        # triangle inequality over modes, evaluated exhaustively on every face
        per = sum(np.abs(md.profile.prime(x)) * np.abs(m.face_density * md.field) for md in fm.modes)
        brute = np.maximum(brute, per)
    assert np.all(lam >= brute - 1e-14)
    assert np.allclose(lam, brute, rtol=1e-12)


@pytest.mark.parametrize("kind,sizes,beta", MANIFOLDS)
def test_builtin_models_certify(kind, sizes, beta):
    m = geo.build_manifold(kind, sizes, beta)
    for name, fm in ex.builtin_flux_models(m).items():
        rep = fx.check_growth(fm, (-25.0, 25.0), 801)
        assert rep.passed, (name, rep.failures)
        assert rep.divergence <= 1e-12


def test_growth_exponent_estimate():
    m = geo.build_manifold("circle", (16,), 0.0)
    for prof, r in ((fx.BurgersLinearized(50.0), 2.0), (fx.CubicLinearized(50.0), 3.0)):
        pairs = [(prof, fx.StreamFunction("constant", c=(1.0,)))]
        fm = fx.FluxModel.build(m, pairs, ex.default_flux_certificate(m, pairs))
        rep = fx.check_growth(fm, (-40.0, 40.0), 2001)
        assert rep.r_hat == pytest.approx(r - 1, abs=0.15) or rep.r_hat == pytest.approx(r, abs=0.15)


def test_negative_controls_fail():
    m = geo.build_manifold("warped_torus", (16, 16), 0.3)
    for name, fm in ex.negative_flux_controls(m).items():
        assert not fx.check_growth(fm, (-20.0, 20.0), 401).passed, name


def test_eval_flux_at_node():
    m = geo.build_manifold("flat_torus", (16, 16))
    pairs = [(fx.Linear(2.0), fx.StreamFunction("constant", c=(1.0, 0.5)))]
    fm = fx.FluxModel.build(m, pairs, ex.default_flux_certificate(m, pairs))
    v = fx.eval_flux_at(fm, (3, 4), 1.5)
    # unit raw density on the flat torus: V = c
    assert np.allclose(v, [3.0, 1.5], rtol=1e-13)
