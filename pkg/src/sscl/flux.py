"""
Geometry-compatible fluxes ``f_x(xi) = sum_j a_j(xi) V_j(x)``.

Every ``V_j`` is built from a stream function so that its conservative face
flux ``|h|^{1/2} V_j`` telescopes to an exactly zero discrete divergence.
Since the ``a_j`` carry all the xi dependence, ``div_h f_x(xi) = 0`` holds
at the discrete level for every xi at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo


# {{{ scalar profiles a(xi)

class Linear:
    """``a(xi) = slope * xi`` (linear transport along V)."""

    name = "linear"

    def __init__(self, slope: float = 1.0):
        self.slope = float(slope)

    def __call__(self, xi):
        return self.slope * np.asarray(xi, dtype=float)

    def prime(self, xi):
        return np.full_like(np.asarray(xi, dtype=float), self.slope)

    def max_abs_prime(self, bound: float) -> float:
        return abs(self.slope)

    def params(self):
        return {"a": self.name, "slope": self.slope}


class BurgersLinearized:
    """``xi^2/2`` on ``|xi| <= L``, continued linearly (C^1) beyond."""

    name = "burgers"

    def __init__(self, L: float):
        if not L > 0:
            raise ValueError(f"linearization threshold L must be positive, got {L}")
        self.L = float(L)

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        L = self.L
        ax = np.abs(xi)
        return np.where(ax <= L, 0.5 * xi**2, L * ax - 0.5 * L**2)

    def prime(self, xi):
        return np.clip(np.asarray(xi, dtype=float), -self.L, self.L)

    def max_abs_prime(self, bound: float) -> float:
        return min(abs(bound), self.L)

    def params(self):
        return {"a": self.name, "L": self.L}


class CubicLinearized:
    """``xi^3/3`` on ``|xi| <= L``, continued linearly (C^1) beyond."""

    name = "cubic"

    def __init__(self, L: float):
        if not L > 0:
            raise ValueError(f"linearization threshold L must be positive, got {L}")
        self.L = float(L)

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        L = self.L
        inner = xi**3 / 3.0
        outer = np.sign(xi) * (L**3 / 3.0) + L**2 * (xi - np.sign(xi) * L)
        return np.where(np.abs(xi) <= L, inner, outer)

    def prime(self, xi):
        return np.minimum(np.asarray(xi, dtype=float) ** 2, self.L**2)

    def max_abs_prime(self, bound: float) -> float:
        return min(bound, self.L) ** 2

    def params(self):
        return {"a": self.name, "L": self.L}


PROFILES = {"linear": Linear, "burgers": BurgersLinearized, "cubic": CubicLinearized}

# }}}


# {{{ stream functions

@dataclass(frozen=True)
class StreamFunction:
    """Generator of a divergence-free field.

    kind ``constant``: uniform conservative flux ``c`` per axis (in 1D the
    only divergence-free family, ``V = c |h|^{-1/2}``).
    kind ``harmonic``: ``psi = amplitude * sin(m x_axis + phase)``.
    kind ``product``: ``psi = amplitude * cos(m1 x1) cos(m2 x2)``.
    """

    kind: str
    amplitude: float = 1.0
    c: tuple[float, ...] = (1.0,)
    wavenumbers: tuple[int, ...] = (1, 1)
    axis: int = 0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "harmonic", "product", "nondivfree"):
            raise ValueError(f"unknown stream function kind {self.kind!r}")

    def corner_values(self, grid: geo.ChartGrid) -> np.ndarray:
        """Sample psi on the dual lattice (cell corners at half-integer offsets)."""
        x = grid.mesh(offsets=(0.5,) * grid.dim)
        if self.kind == "harmonic":
            return self.amplitude * np.sin(self.wavenumbers[0] * x[self.axis] + self.phase)
        if self.kind == "product":
            m1, m2 = self.wavenumbers
            return self.amplitude * np.cos(m1 * x[0]) * np.cos(m2 * x[1])
        return np.zeros(grid.shape)

    def params(self):
        return {
            "stream": self.kind,
            "amplitude": self.amplitude,
            "c": list(self.c),
            "wavenumbers": list(self.wavenumbers),
            "axis": self.axis,
            "phase": self.phase,
        }


def build_divfree_field(m: geo.Manifold, psi: StreamFunction) -> np.ndarray:
    """Face field ``|h|^{-1/2} (d_2 psi, -d_1 psi)`` with exactly telescoping divergence.

    Returns contravariant components on faces, shape ``(dim, *shape)``.  The
    ``nondivfree`` kind is a deliberately broken field for negative controls:
    ``amplitude * sin(x_1)`` along the first axis, whose sink at ``x_1 = pi``
    concentrates mass.
    """
    g = m.grid
    raw = m.raw_face_density
    if psi.kind == "nondivfree":
        x = g.mesh(offsets=(0.5,) + (0.0,) * (g.dim - 1))
        comp = [psi.amplitude * np.sin(x[0])]
        comp += [np.zeros(g.shape)] * (g.dim - 1)
        return np.stack(comp) / raw
    if psi.kind == "constant":
        c = np.broadcast_to(np.asarray(psi.c, dtype=float), (g.dim,))
        flux = np.stack([np.full(g.shape, c[l]) for l in range(g.dim)])
        return flux / raw
    if g.dim == 1:
        raise ValueError("1D divergence-free fields are constant multiples of |h|^{-1/2}; use kind 'constant'")
    corners = psi.corner_values(g)
    d1, d2 = g.spacings
    # psi at (i+1/2, j+1/2); face 0 at (i+1/2, j), face 1 at (i, j+1/2)
    F1 = (corners - geo.shift(corners, g, 1, 1)) / d2
    F2 = -(corners - geo.shift(corners, g, 0, 1)) / d1
    return np.stack([F1, F2]) / raw

# }}}


# {{{ flux model

@dataclass(frozen=True)
class GrowthCertificate:
    """Declared constants for the polynomial growth and Lipschitz bounds."""

    C0: float
    r: float
    L: float
    C1: float


@dataclass(eq=False)
class FluxMode:
    profile: object
    stream: StreamFunction
    field: np.ndarray = field(repr=False)


@dataclass(eq=False)
class FluxModel:
    """Separable flux ``sum_j a_j(xi) V_j(x)`` on a fixed manifold."""

    manifold: geo.Manifold
    modes: list[FluxMode]
    certificate: GrowthCertificate

    @classmethod
    def build(cls, manifold, pairs, certificate):
        """``pairs`` is a sequence of ``(profile, StreamFunction)``."""
        modes = [FluxMode(a, s, build_divfree_field(manifold, s)) for a, s in pairs]
        return cls(manifold, modes, certificate)

    @property
    def conservative_fields(self) -> np.ndarray:
        """``sqrt_det * V_j`` on faces (normalized density), shape ``(J, dim, *shape)``."""
        try:
            return self._cons
        except AttributeError:
            self._cons = np.stack([self.manifold.face_density * md.field for md in self.modes])
            return self._cons

    def concat(self, other: "FluxModel") -> "FluxModel":
        return FluxModel(self.manifold, self.modes + other.modes, self.certificate)

    def max_divergence(self) -> tuple[float, float]:
        """Largest ``max|div_h V_j| / max|V_j|`` over modes, and the raw max."""
        worst_rel = 0.0
        worst = 0.0
        for md in self.modes:
            d = np.max(np.abs(geo.div_h(self.manifold, md.field)))
            scale = np.max(np.abs(md.field))
            worst = max(worst, d)
            if scale > 0:
                worst_rel = max(worst_rel, d / scale)
        return worst_rel, worst

    def wave_speed_bound(self, xi_bound: float) -> np.ndarray:
        """Per-face bound on ``|d/dxi (sqrt_det f)|`` for ``|xi| <= xi_bound``."""
        cons = np.abs(self.conservative_fields)
        amax = np.array([md.profile.max_abs_prime(xi_bound) for md in self.modes])
        return np.tensordot(amax, cons, axes=1)


def eval_flux(fm: FluxModel, xi) -> np.ndarray:
    """Face field ``sum_j a_j(xi) V_j``; ``xi`` scalar or node-shaped array."""
    xi = np.asarray(xi, dtype=float)
    return sum(md.profile(xi) * md.field for md in fm.modes)


def eval_flux_prime(fm: FluxModel, xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return sum(md.profile.prime(xi) * md.field for md in fm.modes)


def eval_flux_at(fm: FluxModel, node: tuple[int, ...], xi: float) -> np.ndarray:
    """Node vector ``f_x(xi)`` at one node (face values averaged onto the node)."""
    X = geo.to_nodes(fm.manifold, eval_flux(fm, xi))
    return X[(slice(None),) + tuple(node)]


@dataclass
class GrowthReport:
    C0_hat: float
    C0_prime_hat: float
    tail_hat: float
    r_hat: float
    C1_hat: float
    divergence: float
    declared: GrowthCertificate
    xi_range: tuple[float, float]
    tail_sampled: bool
    failures: list[str]

    @property
    def passed(self) -> bool:
        return not self.failures

    def as_dict(self):
        return {
            "C0_hat": self.C0_hat,
            "C0_prime_hat": self.C0_prime_hat,
            "tail_hat": self.tail_hat,
            "r_hat": self.r_hat,
            "C1_hat": self.C1_hat,
            "divergence": self.divergence,
            "C0": self.declared.C0,
            "r": self.declared.r,
            "L": self.declared.L,
            "C1": self.declared.C1,
            "passed": self.passed,
        }


DIVERGENCE_TOL = 1e-12


def check_growth(fm: FluxModel, xi_range, sample_count: int = 2001) -> GrowthReport:
    """Sample the flux on a dense xi set and compare against the declared certificate.

    Checks, with ``|.|_h`` measured at nodes:
    ``|f| <= C0 (1 + |xi|^r)`` and ``|f'| <= C0 (1 + |xi|^(r-1))`` on the sample;
    ``|f| <= C0 |xi|`` for ``|xi| > L``; ``|f(a) - f(b)| <= C1 |a - b|`` on
    consecutive samples.  Also checks discrete geometry compatibility of each
    mode, since every bound above presumes it.
    """
    lo, hi = float(xi_range[0]), float(xi_range[1])
    xi = np.linspace(lo, hi, int(sample_count))
    cert = fm.certificate
    m = fm.manifold

    mags = np.empty_like(xi)
    dmags = np.empty_like(xi)
    for i, x in enumerate(xi):
        mags[i] = np.max(geo.node_norm_h(m, geo.to_nodes(m, eval_flux(fm, x))))
        dmags[i] = np.max(geo.node_norm_h(m, geo.to_nodes(m, eval_flux_prime(fm, x))))

    ax = np.abs(xi)
    C0_hat = float(np.max(mags / (1.0 + ax**cert.r)))
    C0p_hat = float(np.max(dmags / (1.0 + ax ** (cert.r - 1.0))))
    tail = ax > cert.L
    tail_hat = float(np.max(mags[tail] / ax[tail])) if np.any(tail) else 0.0

    # Lipschitz constant from difference quotients of node vectors
    prev = None
    C1_hat = 0.0
    for i, x in enumerate(xi):
        cur = geo.to_nodes(m, eval_flux(fm, x))
        if prev is not None:
            q = np.max(geo.node_norm_h(m, cur - prev)) / (xi[i] - xi[i - 1])
            C1_hat = max(C1_hat, float(q))
        prev = cur

    big = ax >= max(1.0, 0.5 * ax.max())
    r_hat = float("nan")
    if np.count_nonzero(big) > 2 and np.all(mags[big] > 0):
        slope = np.polyfit(np.log(ax[big]), np.log(mags[big]), 1)[0]
        r_hat = float(slope)

    div_rel, _ = fm.max_divergence()

    failures = []
    if C0_hat > cert.C0:
        failures.append(f"|f| growth constant {C0_hat:.6g} exceeds C0={cert.C0:.6g}")
    if C0p_hat > cert.C0:
        failures.append(f"|f'| growth constant {C0p_hat:.6g} exceeds C0={cert.C0:.6g}")
    if tail_hat > cert.C0:
        failures.append(f"tail bound |f|/|xi| = {tail_hat:.6g} exceeds C0={cert.C0:.6g} beyond L={cert.L:.6g}")
    if C1_hat > cert.C1 * (1.0 + 1e-12):
        failures.append(f"Lipschitz constant {C1_hat:.6g} exceeds C1={cert.C1:.6g}")
    if div_rel > DIVERGENCE_TOL:
        failures.append(f"flux field not divergence-free: relative divergence {div_rel:.3e}")
    return GrowthReport(C0_hat, C0p_hat, tail_hat, r_hat, C1_hat, div_rel, cert,
                        (lo, hi), bool(np.any(tail)), failures)

# }}}
