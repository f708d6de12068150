"""
Kinetic diagnostics: indicator functions rho = 1{u > xi}, the parabolic
kinetic measure eps |grad u|^2 delta_u, Young-measure moments, the weak
kinetic residual and the two-route L1 contraction functional.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .flux import FluxModel
from .noise import G2_eval
from .solver import PathResult, SimConfig


@dataclass(frozen=True)
class XiGrid:
    """Uniform bins on ``[xi_min, xi_max]``; values outside land in overflow."""

    xi_min: float
    xi_max: float
    n: int

    def __post_init__(self):
        if self.n < 16:
            raise ValueError(f"xi grid needs at least 16 bins, got {self.n}")
        if not self.xi_max > self.xi_min:
            raise ValueError("xi_max must exceed xi_min")

    @property
    def width(self) -> float:
        return (self.xi_max - self.xi_min) / self.n

    @property
    def centers(self) -> np.ndarray:
        return self.xi_min + (np.arange(self.n) + 0.5) * self.width

    @property
    def edges(self) -> np.ndarray:
        return self.xi_min + np.arange(self.n + 1) * self.width

    def bin_index(self, u) -> np.ndarray:
        """Containing bin, -1 below the grid and ``n`` above it."""
        idx = np.floor((np.asarray(u) - self.xi_min) / self.width).astype(np.int64)
        return np.clip(idx, -1, self.n)

    def refined(self) -> "XiGrid":
        return XiGrid(self.xi_min, self.xi_max, 2 * self.n)


def kinetic_function(u, xi: XiGrid) -> np.ndarray:
    """``1{u > xi}`` at bin centers, shape ``(*u.shape, n)`` of floats in {0, 1}."""
    return (np.asarray(u)[..., None] > xi.centers).astype(float)


def chi_integral(u, xi: XiGrid) -> np.ndarray:
    """Midpoint integral of ``rho - 1{0 > xi}`` over the bins; recovers u within one bin width."""
    rho = kinetic_function(u, xi)
    ref = (0.0 > xi.centers).astype(float)
    return np.sum(rho - ref, axis=-1) * xi.width


# {{{ kinetic measure

@dataclass
class KineticMeasure:
    """Histogram of deposited dissipation over (time bin, node, xi bin).

    ``overflow`` collects mass whose xi fell outside the grid, per time bin
    and node; it should stay exactly zero.
    """

    xi: XiGrid
    t_edges: np.ndarray
    mass: np.ndarray
    overflow: np.ndarray

    @classmethod
    def empty(cls, xi: XiGrid, T: float, n_nodes: int, t_bins: int = 1):
        return cls(xi, np.linspace(0.0, T, t_bins + 1),
                   np.zeros((t_bins, n_nodes, xi.n)), np.zeros((t_bins, n_nodes)))

    @property
    def total(self) -> float:
        return math.fsum(self.mass.ravel()) + math.fsum(self.overflow.ravel())

    @property
    def overflow_mass(self) -> float:
        return math.fsum(self.overflow.ravel())

    def deposit(self, t: float, u: np.ndarray, weights: np.ndarray):
        """Add ``weights`` (per node) to the xi bins holding ``u`` at time ``t``."""
        tb = min(int(np.searchsorted(self.t_edges, t, side="right")) - 1, len(self.t_edges) - 2)
        tb = max(tb, 0)
        u = np.asarray(u).ravel()
        w = np.asarray(weights).ravel()
        idx = self.xi.bin_index(u)
        inside = (idx >= 0) & (idx < self.xi.n)
        nodes = np.arange(u.size)
        np.add.at(self.mass[tb], (nodes[inside], idx[inside]), w[inside])
        self.overflow[tb, nodes[~inside]] += w[~inside]

    def moment(self, q: float) -> float:
        """``int |xi|^q dm`` using bin centers."""
        wts = np.abs(self.xi.centers) ** q
        return math.fsum((self.mass.sum(axis=(0, 1)) * wts).ravel())

    def merge(self, other: "KineticMeasure") -> "KineticMeasure":
        return KineticMeasure(self.xi, self.t_edges, self.mass + other.mass, self.overflow + other.overflow)

    def rows(self):
        """``(t_bin, x_index, xi_bin, mass)`` for every nonzero cell; overflow uses xi_bin = -1."""
        for tb, node, b in zip(*np.nonzero(self.mass)):
            yield int(tb), int(node), int(b), float(self.mass[tb, node, b])
        for tb, node in zip(*np.nonzero(self.overflow)):
            yield int(tb), int(node), -1, float(self.overflow[tb, node])


def step_deposits(m: geo.Manifold, u: np.ndarray, eps: float, dt: float) -> np.ndarray:
    """``eps |grad u|_h^2 sqrt_det prod(dx) dt`` per node."""
    return eps * geo.dirichlet_density(m, u) * m.node_weights * dt


def accumulate_kinetic_measure(path: PathResult, cfg: SimConfig, xi: XiGrid,
                               t_bins: int = 1) -> KineticMeasure:
    """Bin the path's dissipation into a kinetic measure.

    Needs the stored trajectory.  Deposits use the pre-step state, like the
    dissipation ledger, so the total mass equals the ledger sum.
    """
    if path.trajectory is None:
        raise ValueError("kinetic: path has no stored trajectory (run with keep_trajectory=True)")
    m = cfg.manifold
    km = KineticMeasure.empty(xi, float(path.times[-1]), m.grid.n_nodes, t_bins)
    if cfg.eps == 0:
        return km
    for n in range(path.n_steps):
        u = path.trajectory[n]
        km.deposit(path.times[n], u, step_deposits(m, u, cfg.eps, path.dt))
    return km

# }}}


def young_moment(m: geo.Manifold, u, p: float) -> float:
    """``int int |xi|^p delta_u(dxi) dV = int |u|^p dV`` evaluated exactly."""
    if p < 1:
        raise ValueError("moment order must be >= 1")
    return float(geo.lp_norm_p(m, u, p))


def binned_young_moment(m: geo.Manifold, u, p: float, xi: XiGrid) -> float:
    """Same moment with the Dirac mass read off ``-d rho / d xi`` on the bins."""
    rho = kinetic_function(u, xi)
    shape = rho.shape[:-1]
    ext = np.concatenate([np.ones(shape + (1,)), rho, np.zeros(shape + (1,))], axis=-1)
    # unit mass where rho drops; mass above the last center goes to the last center
    nu = ext[..., :-1] - ext[..., 1:]
    c = np.append(xi.centers, xi.centers[-1])
    per_node = np.sum(nu * np.abs(c) ** p, axis=-1)
    return float(geo.integrate(m, per_node))


# {{{ test functions

@dataclass(frozen=True)
class TimeFactor:
    """``cos^2(pi t / (2 T))``: smooth, equal to 1 at t=0 and 0 at t=T."""

    T: float

    def __call__(self, t):
        return np.cos(0.5 * np.pi * np.asarray(t) / self.T) ** 2

    def deriv(self, t):
        a = 0.5 * np.pi / self.T
        return -a * np.sin(2.0 * a * np.asarray(t))


@dataclass(frozen=True)
class SpaceFactor:
    """Periodic bump ``prod_l exp(kappa (cos(x_l - c_l) - 1))``."""

    centers: tuple[float, ...] = (np.pi,)
    kappa: float = 2.0

    def values(self, m: geo.Manifold) -> np.ndarray:
        x = m.mesh()
        c = list(self.centers) + [np.pi] * (m.dim - len(self.centers))
        return np.prod([np.exp(self.kappa * (np.cos(xx - cc) - 1.0)) for xx, cc in zip(x, c)], axis=0)

    def gradient(self, m: geo.Manifold) -> np.ndarray:
        """Covariant components ``d_l phi`` at the nodes, shape ``(dim, *shape)``."""
        x = m.mesh()
        c = list(self.centers) + [np.pi] * (m.dim - len(self.centers))
        v = self.values(m)
        return np.stack([-self.kappa * np.sin(xx - cc) * v for xx, cc in zip(x, c)])


@dataclass(frozen=True)
class XiFactor:
    """C-infinity bump ``exp(1 - 1/(1 - r^2))`` with ``r = (xi - center) / width``."""

    center: float = 0.0
    width: float = 1.0

    def __call__(self, xi):
        r = (np.asarray(xi, dtype=float) - self.center) / self.width
        out = np.zeros_like(r)
        inside = np.abs(r) < 1
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
        return out

    def deriv(self, xi):
        r = (np.asarray(xi, dtype=float) - self.center) / self.width
        out = np.zeros_like(r)
        inside = np.abs(r) < 1
        ri = r[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - ri**2)) * (-2.0 * ri / (1.0 - ri**2) ** 2) / self.width
        return out

    @property
    def support(self) -> tuple[float, float]:
        return self.center - self.width, self.center + self.width


@dataclass(frozen=True)
class TestFunction:
    time: TimeFactor
    space: SpaceFactor
    xi: XiFactor

# }}}


# {{{ weak residual

@dataclass
class WeakResidual:
    terms: dict[str, float] = field(default_factory=dict)

    @property
    def value(self) -> float:
        t = self.terms
        lhs = t["time"] + t["initial"] + t["transport"] + t["diffusion"]
        rhs = t["measure"] - t["stochastic"] - t["ito"]
        return lhs - rhs


def _prefix(weights: np.ndarray, xi: XiGrid) -> np.ndarray:
    """``P[b] = sum_{b' < b} w[b'] dxi``: integral of the bin-constant weight up to edge ``b``."""
    return np.concatenate([[0.0], np.cumsum(weights) * xi.width])


def _rho_integral(u: np.ndarray, prefix: np.ndarray, xi: XiGrid) -> np.ndarray:
    """``int rho w dxi`` with ``w`` constant per bin and ``rho`` exact, so continuous in ``u``."""
    pos = np.clip((np.asarray(u) - xi.xi_min) / xi.width, 0.0, xi.n)
    b = np.minimum(pos.astype(np.int64), xi.n - 1)
    return prefix[b] + (pos - b) * (prefix[b + 1] - prefix[b])


def weak_residual(path: PathResult, cfg: SimConfig, psi: TestFunction, xi: XiGrid,
                  drop_ito: bool = False, ito_quadrature: str = "increments") -> WeakResidual:
    """Evaluate every term of the weak kinetic identity on one path.

    xi integrals of ``rho`` use the bin centers of ``xi``; the stochastic
    integral uses left endpoints and the recorded increments; deterministic
    time integrals use the trapezoid average of the two step endpoints at
    the midpoint time.  ``drop_ito`` omits the Ito correction (negative
    control).

    With ``ito_quadrature="increments"`` the Ito correction is integrated
    against the realized quadratic variation ``(sum_k g_k dB_k)^2`` at the
    left endpoint; ``"dt"`` uses ``G^2 dt`` at the step midpoint instead.
    Both have the same expectation, but the ``"dt"`` form leaves a pathwise
    martingale error of order ``dt^{1/2}``.
    """
    if ito_quadrature not in ("increments", "dt"):
        raise ValueError(f"kinetic: unknown Ito quadrature {ito_quadrature!r}")
    if path.trajectory is None:
        raise ValueError("kinetic: path has no stored trajectory (run with keep_trajectory=True)")
    m = cfg.manifold
    lo, hi = psi.xi.support
    if lo < xi.xi_min or hi > xi.xi_max:
        raise ValueError("kinetic: test function xi-support exceeds the xi grid")
    w = m.node_weights
    phx = psi.space.values(m)
    dphx = psi.space.gradient(m)
    lap_phx = geo.laplace_beltrami(m, phx)
    c = xi.centers
    pxi = psi.xi(c)
    P_base = _prefix(pxi, xi)

    # transport: sum_l f'^l(x, xi) d_l phi_x, separable over flux modes
    transport_prefix = []
    fm: FluxModel | None = cfg.flux
    if fm is not None:
        for md in fm.modes:
            Vn = geo.to_nodes(m, md.field)
            pairing = np.sum(Vn * dphx, axis=0)
            transport_prefix.append((pairing, _prefix(md.profile.prime(c) * pxi, xi)))

    def A(u):
        return float(np.sum(_rho_integral(u, P_base, xi) * phx * w))

    def B(u):
        return float(sum(np.sum(_rho_integral(u, pre, xi) * pair * w) for pair, pre in transport_prefix))

    def D(u):
        return float(np.sum(_rho_integral(u, P_base, xi) * lap_phx * w))

    def I(u):
        if cfg.noise is None:
            return 0.0
        G2 = G2_eval(cfg.noise, m, u)
        return float(np.sum(psi.xi.deriv(u) * G2 * phx * w))

    traj = path.trajectory
    times = path.times
    dt = path.dt
    terms = dict(time=[], transport=[], diffusion=[], measure=[], stochastic=[], ito=[])
    prev = dict(A=A(traj[0]), B=B(traj[0]), D=D(traj[0]), I=I(traj[0]))
    initial = psi.time(0.0) * prev["A"]
    spatial = cfg.noise_spatial
    for n in range(path.n_steps):
        u = traj[n]
        un = traj[n + 1]
        cur = dict(A=A(un), B=B(un), D=D(un), I=I(un))
        tm = 0.5 * (times[n] + times[n + 1])
        terms["time"].append(dt * psi.time.deriv(tm) * 0.5 * (prev["A"] + cur["A"]))
        terms["transport"].append(dt * psi.time(tm) * 0.5 * (prev["B"] + cur["B"]))
        terms["diffusion"].append(cfg.eps * dt * psi.time(tm) * 0.5 * (prev["D"] + cur["D"]))
        if ito_quadrature == "dt":
            terms["ito"].append(0.5 * dt * psi.time(tm) * 0.5 * (prev["I"] + cur["I"]))
        if cfg.eps > 0:
            dep = step_deposits(m, u, cfg.eps, dt)
            terms["measure"].append(float(psi.time(times[n]) * np.sum(dep * phx * psi.xi.deriv(u))))
        if cfg.noise is not None:
            G = cfg.noise.coefficients(m, u, spatial)
            base = psi.time(times[n]) * phx * psi.xi(u) * w
            dB = path.increments[n]
            gdB = np.tensordot(dB, G, axes=1)
            terms["stochastic"].append(float(np.sum(gdB * base)))
            if ito_quadrature == "increments":
                qv = psi.time(times[n]) * phx * psi.xi.deriv(u) * gdB**2 * w
                terms["ito"].append(0.5 * float(np.sum(qv)))
        prev = cur
    out = {k: math.fsum(v) for k, v in terms.items()}
    out["initial"] = float(initial)
    if drop_ito:
        out["ito"] = 0.0
    return WeakResidual(out)

# }}}


def contraction_functional(m: geo.Manifold, u1, u2, xi: XiGrid) -> tuple[float, float]:
    """``int |u1 - u2| dV`` directly and as ``4 int int (rho - rho^2) dxi dV`` with averaged rho."""
    direct = geo.integrate(m, np.abs(np.asarray(u1) - np.asarray(u2)))
    rho = 0.5 * (kinetic_function(u1, xi) + kinetic_function(u2, xi))
    per_node = 4.0 * np.sum(rho - rho**2, axis=-1) * xi.width
    kinetic = geo.integrate(m, per_node)
    return float(direct), float(kinetic)


class KineticObserver:
    """Step observer accumulating one kinetic measure per batch entry during a run."""

    def __init__(self, cfg: SimConfig, xi: XiGrid, batch: int, dt: float, t_bins: int = 1):
        self.cfg = cfg
        self.dt = dt
        self.measures = [KineticMeasure.empty(xi, cfg.T, cfg.manifold.grid.n_nodes, t_bins)
                         for _ in range(batch)]

    def __call__(self, n, t_next, u_old, u_new):
        if self.cfg.eps == 0:
            return
        dep = step_deposits(self.cfg.manifold, u_old, self.cfg.eps, self.dt)
        t = t_next - self.dt
        for b, km in enumerate(self.measures):
            km.deposit(t, u_old[b], dep[b])
