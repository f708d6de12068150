"""
Acceptance criteria 1-10, each at its stated tolerance and runtime budget.

Every test prints one ``PASS``/``FAIL`` line (visible without ``-s``) and
then asserts.  Criteria sharing an ensemble (3 and 4, 5 and 6) reuse one
run through a module-scoped fixture, and the runtime of the shared run is
charged to the first criterion of the pair.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from sscl import experiments as ex
from sscl import geometry as geo
from sscl import kinetic as kin
from sscl.config import RunConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs" / "acceptance"

pytestmark = pytest.mark.slow


def load(name):
    return RunConfig.load(CONFIGS / f"{name}.toml")


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail, runtime, budget):
        ok = bool(ok) and runtime < budget
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {title}: {detail}; runtime {runtime:.1f}s < {budget:g}s"
        with capsys.disabled():
            print("\n" + line)
        return ok
    return emit


def checks(rep):
    return {c.name: c for c in rep.checks}


def failures(rep):
    return [c.name for c in rep.checks if not c.passed]


# {{{ 1: geometry compatibility

def test_c01_geometry_compatibility(verdict):
    t0 = time.perf_counter()
    xs = np.linspace(-12.0, 12.0, 32)
    worst = 0.0
    models = 0
    for kind, sizes, beta in (("circle", (256,), 0.5), ("flat_torus", (128, 128), 0.0),
                              ("warped_torus", (128, 128), 0.5)):
        m = geo.build_manifold(kind, sizes, beta)
        for fm in ex.builtin_flux_models(m).values():
            worst = max(worst, ex.geometry_compatibility(m, fm, xs))
            models += 1
    rt = time.perf_counter() - t0
    ok = verdict(1, "geometry compatibility", worst <= 1e-12,
                 f"max relative |div_h F| = {worst:.2e} <= 1e-12 over {models} models x 32 xi", rt, 10)
    assert ok

# }}}


# {{{ 2-4: contraction and martingale

@pytest.fixture(scope="module")
def contraction():
    rc = load("contraction")
    cfg = rc.sim_config()
    u2 = rc.initial_data(rc.experiment["u0_2"])
    t0 = time.perf_counter()
    rep = ex.contraction_suite(cfg, cfg.u0, u2, rc.experiment.get("seed_2"), rc.xi_grid())
    return rep, time.perf_counter() - t0, cfg, u2


def test_c02_deterministic_l1_contraction(verdict, contraction):
    rep, _, cfg, u2 = contraction
    steps = rep.series["deterministic_l1"][1]
    l1 = np.array([r[1] for r in steps])
    t0 = time.perf_counter()
    # rerun the B=0 pair alone to time it against its own budget
    det = cfg.replace(noise=None, paths=1)
    dist = ex._paired_l1(det, cfg.u0(cfg.manifold), u2(cfg.manifold), [0], set())[0][:, 0]
    rt = time.perf_counter() - t0
    inc = float(np.max(np.diff(dist)))
    ok = verdict(2, "deterministic L1 contraction", inc <= 1e-12 and len(l1) == 2001 and np.array_equal(dist, l1),
                 f"max per-step increase {inc:.2e} <= 1e-12 over {len(l1) - 1} steps", rt, 30)
    assert ok


def test_c03_stochastic_l1_contraction(verdict, contraction):
    rep, rt, _, _ = contraction
    c = checks(rep)
    names = ["l1_bound_excess", "l1_trend_excess", "aborted_paths", "kinetic_route_gap",
             "flux_certificate", "noise_certificate", "negative_control_fails"]
    ok = all(c[n].passed for n in names)
    ok = verdict(3, "stochastic L1 contraction", ok,
                 f"M={rep.meta['paths']}, max excess over initial+3se {c['l1_bound_excess'].value:.2e}, "
                 f"trend excess {c['l1_trend_excess'].value:.2e}", rt, 300)
    assert ok, failures(rep)


def test_c04_spatial_mean_martingale(verdict, contraction):
    rep, _, _, _ = contraction
    c = checks(rep)
    m, d = c["spatial_mean_drift"], c["deterministic_mean_conservation"]
    ok = verdict(4, "spatial-mean martingale", m.passed and d.passed,
                 f"|mean drift| {m.value:.2e} <= 3se {m.threshold:.2e}; B=0 drift {d.value:.1e} <= 1e-12", 0.0, 300)
    assert ok

# }}}


# {{{ 5-6: Lp bounds and kinetic measure

@pytest.fixture(scope="module")
def sweep():
    rc = load("lp_kinetic")
    cfg = rc.sim_config()
    exp = rc.experiment
    xi = rc.xi_grid()
    t0 = time.perf_counter()
    eps_list = [float(e) for e in exp["eps_list"]]
    pts = ex.viscosity_sweep(cfg, eps_list, [float(p) for p in exp["p_list"]], xi, float(exp["p"]))
    lp = ex.lp_bound_suite(cfg, [float(p) for p in exp["p_list"]], eps_list, float(exp["ceiling"]), sweep=pts,
                           control=ex.nondivfree_control(cfg, float(exp["control_amplitude"])))
    cx = exp["control_xi"]
    km = ex.kinetic_mass_suite(cfg, eps_list, float(exp["p"]), xi, sweep=pts,
                               control_xi=kin.XiGrid(float(cx[0]), float(cx[1]), 16))
    return lp, km, time.perf_counter() - t0, cfg


def test_c05_lp_bounds(verdict, sweep):
    lp, _, rt, cfg = sweep
    c = checks(lp)
    spreads = ", ".join(f"{n}={c[n].value:.3f}" for n in c if n.endswith("_spread"))
    kmax = max(c[n].value for n in c if n.startswith("K_p") and not n.endswith("_spread"))
    ok = verdict(5, "eps-uniform Lp bounds", lp.passed,
                 f"spread {spreads} < 0.25; max K_hat {kmax:.3f} < 10; floor {ex.diffusion_floor(cfg):.3g}",
                 rt, 900)
    assert ok, failures(lp)


def test_c06_kinetic_measure_bounds(verdict, sweep):
    _, km, _, _ = sweep
    c = checks(km)
    gaps = max(c[n].value for n in c if n.startswith("mass_ledger_gap"))
    over = sum(c[n].value for n in c if n.startswith("overflow"))
    ok = verdict(6, "kinetic-measure bounds", km.passed,
                 f"moment growth {c['moment_growth'].value:.3f} <= 4; overflow {over:g}; "
                 f"mass-ledger gap {gaps:.1e} <= 1e-12", 0.0, 900)
    assert ok, failures(km)

# }}}


def test_c07_ito_energy_identity(verdict):
    cfg = load("energy").sim_config()
    t0 = time.perf_counter()
    rep = ex.energy_identity_suite(cfg)
    rt = time.perf_counter() - t0
    c = checks(rep)
    ok = verdict(7, "Ito energy identity", rep.passed and cfg.paths >= 64,
                 f"|mean| coarse {c['residual_coarse'].value:.3g} <= {c['residual_coarse'].threshold:.3g}, "
                 f"halving ratio {c['halving_ratio'].value:.3f} >= 1.5, control fails "
                 f"{c['negative_control_fails'].passed}", rt, 300)
    assert ok, failures(rep)


def test_c08_vanishing_viscosity(verdict):
    rc = load("vanishing")
    cfg = rc.sim_config()
    t0 = time.perf_counter()
    rep = ex.vanishing_viscosity_suite(cfg, float(rc.experiment["eps0"]), int(rc.experiment["levels"]))
    rt = time.perf_counter() - t0
    c = checks(rep)
    ok = verdict(8, "vanishing-viscosity Cauchy trend", rep.passed,
                 f"max ratio {c['max_ratio'].value:.3f} <= 0.9 over {int(c['resolved_differences'].value)} "
                 f"resolved differences", rt, 600)
    assert ok, failures(rep)


def test_c09_kinetic_weak_residual(verdict):
    rc = load("weak_residual")
    cfg = rc.sim_config()
    t0 = time.perf_counter()
    rep = ex.weak_residual_suite(cfg, rc.test_function(), rc.xi_grid())
    rt = time.perf_counter() - t0
    c = checks(rep)
    ok = verdict(9, "kinetic weak residual", rep.passed,
                 f"refinement ratio {c['refinement_ratio'].value:.3f} >= 1.5, control fails "
                 f"{c['negative_control_fails'].passed}", rt, 600)
    assert ok, failures(rep)


def test_c10_condition_certificates(verdict):
    rc = load("conditions")
    t0 = time.perf_counter()
    rep = ex.conditions_suite(rc.manifold(), float(rc.experiment["xi_bound"]), rc.sim_config())
    m1 = geo.build_manifold("circle", (128,), 0.5)
    rep1 = ex.conditions_suite(m1, 8.0)
    rt = time.perf_counter() - t0
    n_ctrl = sum(c.name.startswith("control_") for c in rep.checks)
    ok = verdict(10, "condition certificates", rep.passed and rep1.passed and n_ctrl == 5,
                 f"{len(rep.checks) - n_ctrl} models certified, {n_ctrl} controls rejected, on 2 manifolds", rt, 10)
    assert ok, failures(rep) + failures(rep1)
