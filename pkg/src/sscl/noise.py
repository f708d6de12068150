"""
Truncated cylindrical Wiener noise with separable coefficients.

Mode ``k`` acts on the solution as ``g_k(x, u(x)) dbeta_k`` with
``g_k(x, xi) = c_k * sigma_k(x) * phi_k(xi)``.  Brownian increments come
from a counter-based generator keyed by ``(seed, path_id, step)``, so any
increment can be regenerated without replaying a stream and two runs that
share ``(seed, path_id)`` see exactly the same noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo

_MASK64 = (1 << 64) - 1


# {{{ spatial profiles

@dataclass(frozen=True)
class SpatialProfile:
    """``sigma(x)``: ``const`` (1), ``cos`` or ``sin`` of ``m * x_axis``; all bounded by 1."""

    kind: str = "const"
    m: int = 0
    axis: int = 0

    def __post_init__(self):
        if self.kind not in ("const", "cos", "sin"):
            raise ValueError(f"unknown spatial profile {self.kind!r}")

    def values(self, m: geo.Manifold) -> np.ndarray:
        if self.kind == "const":
            return np.ones(m.shape)
        if self.axis >= m.dim:
            raise ValueError(f"spatial profile axis {self.axis} out of range for {m.dim}D manifold")
        x = m.mesh()[self.axis]
        return np.cos(self.m * x) if self.kind == "cos" else np.sin(self.m * x)

    def coordinate_lipschitz(self) -> float:
        return 0.0 if self.kind == "const" else float(abs(self.m))

# }}}


# {{{ xi profiles

@dataclass(frozen=True)
class XiProfile:
    """``phi(xi)``: ``const`` (1), ``linear`` (xi), ``sin`` (bounded) or ``square`` (xi^2, violates growth)."""

    kind: str = "const"

    def __post_init__(self):
        if self.kind not in ("const", "linear", "sin", "square"):
            raise ValueError(f"unknown xi profile {self.kind!r}")

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.kind == "const":
            return np.ones_like(xi)
        if self.kind == "linear":
            return xi
        if self.kind == "sin":
            return np.sin(xi)
        return xi**2

    def lipschitz(self, bound: float) -> float:
        return {"const": 0.0, "linear": 1.0, "sin": 1.0, "square": 2.0 * bound}[self.kind]

    def sup(self, bound: float) -> float:
        return {"const": 1.0, "linear": bound, "sin": min(1.0, bound), "square": bound**2}[self.kind]

# }}}


@dataclass(frozen=True)
class NoiseMode:
    c: float
    sigma: SpatialProfile
    phi: XiProfile


@dataclass(frozen=True)
class NoiseModel:
    """K-mode noise with declared growth (D1) and Lipschitz (D2) constants."""

    modes: tuple[NoiseMode, ...]
    D1: float
    D2: float
    seed: int

    def __post_init__(self):
        if len(self.modes) < 1:
            raise ValueError("noise model needs at least one mode")
        if not (0 <= int(self.seed) <= _MASK64):
            raise ValueError("seed must fit in 64 bits")
        object.__setattr__(self, "modes", tuple(self.modes))

    @property
    def K(self) -> int:
        return len(self.modes)

    def spatial(self, m: geo.Manifold) -> np.ndarray:
        """``c_k sigma_k(x)`` at the nodes, shape ``(K, *shape)``."""
        return np.stack([md.c * md.sigma.values(m) for md in self.modes])

    def coefficients(self, m: geo.Manifold, u: np.ndarray, spatial=None) -> np.ndarray:
        """All ``g_k(x, u(x))`` stacked on a leading mode axis."""
        if spatial is None:
            spatial = self.spatial(m)
        u = np.asarray(u, dtype=float)
        lead = (1,) * (u.ndim - m.dim)
        out = np.empty((self.K,) + u.shape)
        for k, md in enumerate(self.modes):
            out[k] = spatial[k].reshape(lead + m.shape) * md.phi(u)
        return out

    def truncated(self, K: int) -> "NoiseModel":
        return NoiseModel(self.modes[:K], self.D1, self.D2, self.seed)

    def analytic_constants(self, m: geo.Manifold, xi_bound: float) -> tuple[float, float]:
        """Upper bounds for D1 and D2 valid on ``|xi| <= xi_bound``.

        D1 sums ``sup_x sigma_k^2 * max_xi phi_k^2 / (1 + xi^2)`` over modes.
        D2 splits the increment into its xi and x parts and uses
        ``(a+b)^2 <= 2a^2 + 2b^2``; the x part measures distance with the
        smallest metric speed.
        """
        xi = np.linspace(-xi_bound, xi_bound, 4001)
        spatial = self.spatial(m)
        sup_sigma2 = np.max(spatial**2, axis=tuple(range(1, spatial.ndim)))
        d1 = 0.0
        for k, md in enumerate(self.modes):
            d1 += sup_sigma2[k] * float(np.max(md.phi(xi) ** 2 / (1.0 + xi**2)))
        min_speed = float(np.min(np.sqrt(m.metric.diag)))
        a = sum(sup_sigma2[k] * md.phi.lipschitz(xi_bound) ** 2 for k, md in enumerate(self.modes))
        b = sum((md.c * md.sigma.coordinate_lipschitz() / min_speed) ** 2 * md.phi.sup(xi_bound) ** 2
                for md in self.modes)
        d2 = a if b == 0.0 else 2.0 * max(a, b)
        return float(d1), float(d2)


def g_eval(nm: NoiseModel, k: int, m: geo.Manifold, xi, node=None):
    """``g_k(x, xi)`` for 1-based mode ``k``; all nodes unless ``node`` is given."""
    if not 1 <= k <= nm.K:
        raise IndexError(f"mode index {k} out of range 1..{nm.K}")
    md = nm.modes[k - 1]
    sig = md.c * md.sigma.values(m)
    if node is not None:
        sig = sig[tuple(node)]
    return sig * md.phi(xi)


def G2_eval(nm: NoiseModel, m: geo.Manifold, xi, node=None):
    """Truncated ``G^2 = sum_{k<=K} g_k^2``."""
    return sum(g_eval(nm, k, m, xi, node) ** 2 for k in range(1, nm.K + 1))


# {{{ condition certificates

@dataclass
class NoiseReport:
    D1_hat: float
    D2_hat: float
    g2_lipschitz_ratio: float
    declared: tuple[float, float]
    xi_range: tuple[float, float]
    n_pairs: int
    failures: list[str]

    @property
    def passed(self) -> bool:
        return not self.failures

    def as_dict(self):
        return {
            "D1_hat": self.D1_hat,
            "D2_hat": self.D2_hat,
            "g2_lipschitz_ratio": self.g2_lipschitz_ratio,
            "D1": self.declared[0],
            "D2": self.declared[1],
            "n_pairs": self.n_pairs,
            "passed": self.passed,
        }


def verify_conditions(nm: NoiseModel, m: geo.Manifold, xi_range, n_xi: int = 201,
                      n_pairs: int = 4000, rng_seed: int = 0) -> NoiseReport:
    """Observed growth/Lipschitz ratios on a dense sample, against declared D1, D2.

    Pairs are either same-node with different xi, or axis-aligned node pairs
    (distance measured along the grid line) with random xi.  The mixed bound
    on ``G^2`` is evaluated with the declared constants on the same pairs.
    """
    lo, hi = float(xi_range[0]), float(xi_range[1])
    xi = np.linspace(lo, hi, n_xi)
    spatial = nm.spatial(m)
    flat = spatial.reshape(nm.K, -1)

    def g_all(node_flat, z):
        return np.stack([flat[k, node_flat] * md.phi(z) for k, md in enumerate(nm.modes)])

    # growth: G^2 / (1 + xi^2) over all nodes and samples
    phis = np.stack([md.phi(xi) for md in nm.modes])       # (K, n_xi)
    G2 = np.einsum("kn,kx->nx", flat**2, phis**2)
    D1_hat = float(np.max(G2 / (1.0 + xi**2)))

    rng = np.random.default_rng(rng_seed)
    n_nodes = flat.shape[1]
    a_nodes = rng.integers(0, n_nodes, n_pairs)
    b_nodes = a_nodes.copy()
    dist = np.zeros(n_pairs)
    half = n_pairs // 2
    # second half: move along one axis
    idx = np.array(np.unravel_index(a_nodes, m.shape))
    for p in range(half, n_pairs):
        ax = int(rng.integers(0, m.dim))
        step = int(rng.integers(1, max(2, m.shape[ax] // 2)))
        other = idx[:, p].copy()
        other[ax] = (other[ax] + step) % m.shape[ax]
        b_nodes[p] = np.ravel_multi_index(tuple(other), m.shape)
        dist[p] = geo.axis_distance(m, tuple(idx[:, p]), tuple(other))
    za = rng.uniform(lo, hi, n_pairs)
    zb = rng.uniform(lo, hi, n_pairs)
    # include close xi pairs so local Lipschitz behaviour is probed
    close = rng.random(n_pairs) < 0.5
    zb[close] = np.clip(za[close] + rng.normal(0.0, 1e-3 * (hi - lo), np.count_nonzero(close)), lo, hi)

    ga = g_all(a_nodes, za)
    gb = g_all(b_nodes, zb)
    num = np.sum((ga - gb) ** 2, axis=0)
    den = dist**2 + (za - zb) ** 2
    ok = den > 0
    D2_hat = float(np.max(num[ok] / den[ok])) if np.any(ok) else 0.0

    G2a = np.sum(ga**2, axis=0)
    G2b = np.sum(gb**2, axis=0)
    bound = np.sqrt(nm.D1 * nm.D2) * (np.sqrt(1 + za**2) + np.sqrt(1 + zb**2)) * np.sqrt(den)
    lhs = np.abs(G2a - G2b)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(bound > 0, lhs / bound, np.where(lhs > 0, np.inf, 0.0))
    g2_lipschitz_ratio = float(np.max(ratios))

    failures = []
    if D1_hat > nm.D1:
        failures.append(f"growth: observed G^2/(1+xi^2) = {D1_hat:.6g} exceeds D1={nm.D1:.6g}")
    if D2_hat > nm.D2:
        failures.append(f"Lipschitz: observed ratio {D2_hat:.6g} exceeds D2={nm.D2:.6g}")
    if g2_lipschitz_ratio > 1.0:
        failures.append(f"G^2 local Lipschitz bound violated (ratio {g2_lipschitz_ratio:.6g})")
    return NoiseReport(D1_hat, D2_hat, g2_lipschitz_ratio, (nm.D1, nm.D2), (lo, hi), n_pairs, failures)

# }}}


# {{{ increments

@dataclass(frozen=True)
class NoiseIncrementBlock:
    path_id: int
    n: int
    dt: float
    dB: np.ndarray


def _generator(seed: int, path_id: int, n: int) -> np.random.Generator:
    key = (int(seed) & _MASK64) | ((int(path_id) & _MASK64) << 64)
    # step index in the top counter word: blocks never overlap
    return np.random.Generator(np.random.Philox(key=key, counter=int(n) << 192))


def sample_increments(nm: NoiseModel, path_id: int, n: int, dt: float, substeps: int = 1) -> NoiseIncrementBlock:
    """K independent ``N(0, dt)`` draws for step ``n`` of path ``path_id``.

    With ``substeps > 1`` the block is the sum of ``substeps`` keyed blocks at
    ``dt / substeps``; a run at step ``dt`` and one at ``dt / substeps`` then
    share one Brownian path.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if substeps == 1:
        z = _generator(nm.seed, path_id, n).standard_normal(nm.K)
        return NoiseIncrementBlock(path_id, n, dt, np.sqrt(dt) * z)
    sub = dt / substeps
    total = np.zeros(nm.K)
    for j in range(substeps):
        total += np.sqrt(sub) * _generator(nm.seed, path_id, n * substeps + j).standard_normal(nm.K)
    return NoiseIncrementBlock(path_id, n, dt, total)

# }}}
