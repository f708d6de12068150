"""
Discrete compact manifolds on periodic structured charts.

A manifold here is a single periodic chart (circle or 2-torus) carrying a
diagonal Riemannian metric sampled at the grid nodes.  All operators are
written in conservative (divergence) form,

    div_h X   = |h|^{-1/2} d_l (|h|^{1/2} X^l)
    Delta_h u = |h|^{-1/2} d_i (|h|^{1/2} h^{ij} d_j u)

so that the closed-manifold identities (divergence theorem, integration by
parts, self-adjointness of the Laplacian) hold to round-off on the grid.

The volume density is normalized so that the total volume is one.  The
metric itself is left unscaled: the differential operators are invariant
under a constant rescaling of the density, so only integrals see the
normalization.

Field layout: a scalar field is an array whose trailing ``dim`` axes are the
grid axes; any leading axes are batch axes (independent paths).  A face
field carries one extra axis of length ``dim`` in front of the grid axes;
component ``l`` lives on the face between node ``i`` and ``i+1`` along
axis ``l``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * np.pi

MANIFOLD_KINDS = ("circle", "flat_torus", "warped_torus")


@dataclass(frozen=True)
class ChartGrid:
    """Uniform periodic grid; node ``i`` sits at ``i * spacing``."""

    sizes: tuple[int, ...]
    period: float = TWO_PI

    def __post_init__(self):
        if len(self.sizes) not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {len(self.sizes)}")
        if any(int(n) < 8 for n in self.sizes):
            raise ValueError(f"grid sizes must be >= 8, got {self.sizes}")
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))

    @property
    def dim(self) -> int:
        return len(self.sizes)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.sizes

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(self.period / n for n in self.sizes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.sizes))

    def axes_coords(self, offset: float = 0.0) -> list[np.ndarray]:
        """1D coordinate arrays, optionally shifted by ``offset`` cells."""
        return [(np.arange(n) + offset) * d for n, d in zip(self.sizes, self.spacings)]

    def mesh(self, offsets=None) -> list[np.ndarray]:
        """Coordinate arrays of full grid shape (``ij`` indexing)."""
        if offsets is None:
            offsets = (0.0,) * self.dim
        axes = [(np.arange(n) + o) * d for n, d, o in zip(self.sizes, self.spacings, offsets)]
        return list(np.meshgrid(*axes, indexing="ij"))


@dataclass(frozen=True, eq=False)
class MetricField:
    """Nodewise diagonal metric with normalized volume density.

    ``h`` and ``h_inv`` have shape ``(*grid.shape, dim, dim)``.  ``sqrt_det``
    is the normalized density; ``raw_density`` is ``|h|^{1/2}`` before
    normalization and ``volume_scale`` the raw total volume.
    """

    grid: ChartGrid
    h: np.ndarray
    sqrt_det: np.ndarray
    h_inv: np.ndarray
    volume_scale: float

    def __post_init__(self):
        dim = self.grid.dim
        if self.h.shape != (*self.grid.shape, dim, dim):
            raise ValueError(f"metric shape {self.h.shape} does not match grid {self.grid.shape}")
        if not np.allclose(self.h, np.swapaxes(self.h, -1, -2), rtol=0, atol=0):
            raise ValueError("metric must be symmetric")
        off = self.h * (1.0 - np.eye(dim))
        if np.any(off != 0.0):
            raise ValueError("only diagonal metrics are supported")
        if np.any(np.diagonal(self.h, axis1=-2, axis2=-1) <= 0.0):
            raise ValueError("metric must be positive definite at every node")
        if np.any(self.sqrt_det <= 0.0) or not np.all(np.isfinite(self.sqrt_det)):
            raise ValueError("volume density must be positive and finite")

    @property
    def diag(self) -> np.ndarray:
        """Diagonal entries h_ll, shape ``(dim, *grid.shape)``."""
        return np.moveaxis(np.diagonal(self.h, axis1=-2, axis2=-1), -1, 0)

    @property
    def inv_diag(self) -> np.ndarray:
        return np.moveaxis(np.diagonal(self.h_inv, axis1=-2, axis2=-1), -1, 0)

    @property
    def raw_density(self) -> np.ndarray:
        return self.sqrt_det * self.volume_scale

    @property
    def total_volume(self) -> float:
        return float(np.sum(self.sqrt_det) * self.grid.cell_volume)


def _axis(grid: ChartGrid, l: int) -> int:
    # grid axis l counted from the end so leading batch axes are allowed
    return l - grid.dim


def shift(u: np.ndarray, grid: ChartGrid, l: int, k: int) -> np.ndarray:
    """Periodic shift: ``shift(u, l, -1)[i] == u[i+1]`` along grid axis ``l``."""
    return np.roll(u, k, axis=_axis(grid, l))


@dataclass(frozen=True, eq=False)
class Manifold:
    """Grid plus metric plus cached face coefficients."""

    grid: ChartGrid
    metric: MetricField
    kind: str = "custom"
    beta: float = 0.0

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.grid.shape

    @cached_property
    def face_density(self) -> np.ndarray:
        """Normalized density averaged onto faces, shape ``(dim, *shape)``."""
        s = self.metric.sqrt_det
        return np.stack([0.5 * (s + shift(s, self.grid, l, -1)) for l in range(self.dim)])

    @cached_property
    def raw_face_density(self) -> np.ndarray:
        return self.face_density * self.metric.volume_scale

    @cached_property
    def face_stiffness(self) -> np.ndarray:
        """Face average of ``sqrt_det * h^{ll}``, the Laplacian face coefficient."""
        coef = self.metric.sqrt_det * self.metric.inv_diag
        return np.stack([0.5 * (coef[l] + shift(coef[l], self.grid, l, -1)) for l in range(self.dim)])

    @cached_property
    def face_metric(self) -> np.ndarray:
        """Face average of h_ll, used for |X|_h of face fields."""
        d = self.metric.diag
        return np.stack([0.5 * (d[l] + shift(d[l], self.grid, l, -1)) for l in range(self.dim)])

    @cached_property
    def node_weights(self) -> np.ndarray:
        """Quadrature weights ``sqrt_det * prod(spacings)``."""
        return self.metric.sqrt_det * self.grid.cell_volume

    @cached_property
    def laplacian_diagonal(self) -> np.ndarray:
        """Magnitude of the diagonal entry of the Laplacian stencil per node."""
        g = self.grid
        tot = np.zeros(g.shape)
        for l, d in enumerate(g.spacings):
            a = self.face_stiffness[l]
            tot += (a + shift(a, g, l, 1)) / d**2
        return tot / self.metric.sqrt_det

    def mesh(self, offsets=None):
        return self.grid.mesh(offsets)


def build_manifold(kind: str, sizes, beta: float = 0.0, period: float = TWO_PI) -> Manifold:
    """Instantiate one of the supported manifolds with normalized volume.

    ``circle`` carries ``h = (1 + beta cos x)^2``; ``flat_torus`` the
    identity metric; ``warped_torus`` ``h = diag(1, (1 + beta cos x1)^2)``.
    """
    if kind not in MANIFOLD_KINDS:
        raise ValueError(f"unknown manifold kind {kind!r}; expected one of {MANIFOLD_KINDS}")
    sizes = tuple(np.atleast_1d(sizes).astype(int).tolist())
    expected_dim = 1 if kind == "circle" else 2
    if len(sizes) == 1 and expected_dim == 2:
        sizes = sizes * 2
    if len(sizes) != expected_dim:
        raise ValueError(f"{kind} needs {expected_dim} grid sizes, got {sizes}")
    if not np.isfinite(beta) or abs(beta) >= 1.0:
        raise ValueError(f"beta must satisfy |beta| < 1 (metric degenerates), got {beta}")
    if kind == "flat_torus" and beta != 0.0:
        raise ValueError("beta must be 0 for flat_torus")

    grid = ChartGrid(sizes, period)
    x = grid.mesh()
    dim = grid.dim
    h = np.zeros((*grid.shape, dim, dim))
    if kind == "circle":
        h[..., 0, 0] = (1.0 + beta * np.cos(x[0])) ** 2
    else:
        h[..., 0, 0] = 1.0
        h[..., 1, 1] = (1.0 + beta * np.cos(x[0])) ** 2
    diag = np.diagonal(h, axis1=-2, axis2=-1)
    raw = np.sqrt(np.prod(diag, axis=-1))
    h_inv = np.zeros_like(h)
    for l in range(dim):
        h_inv[..., l, l] = 1.0 / h[..., l, l]
    vol = float(np.sum(raw) * grid.cell_volume)
    metric = MetricField(grid, h, raw / vol, h_inv, vol)
    return Manifold(grid, metric, kind, float(beta))


def integrate(m: Manifold, u: np.ndarray) -> np.ndarray:
    """Midpoint rule ``sum u * sqrt_det * prod(spacings)`` over the grid axes."""
    w = np.asarray(u) * m.node_weights
    return _sum_grid(w, m.dim)


def _sum_grid(w: np.ndarray, dim: int) -> np.ndarray:
    # flatten grid axes so a batched reduction matches the unbatched one bit for bit
    lead = w.shape[: w.ndim - dim]
    return np.sum(w.reshape(*lead, -1), axis=-1)


def inner(m: Manifold, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return integrate(m, u * v)


def lp_norm_p(m: Manifold, u: np.ndarray, p: float) -> np.ndarray:
    """``||u||_p^p`` with respect to dV_h."""
    return integrate(m, np.abs(u) ** p)


def grad_h(m: Manifold, u: np.ndarray) -> np.ndarray:
    """Node gradient ``h^{ij} d_j u`` with centered differences.

    Returns contravariant components stacked on a new axis placed right
    before the grid axes.
    """
    g = m.grid
    comps = []
    for l, d in enumerate(g.spacings):
        du = (shift(u, g, l, -1) - shift(u, g, l, 1)) / (2.0 * d)
        comps.append(m.metric.inv_diag[l] * du)
    return np.stack(comps, axis=u.ndim - g.dim)


def face_gradient(m: Manifold, u: np.ndarray) -> np.ndarray:
    """Covariant one-sided differences ``(u[i+1] - u[i]) / dx_l`` on faces."""
    g = m.grid
    comps = [(shift(u, g, l, -1) - u) / d for l, d in enumerate(g.spacings)]
    return np.stack(comps, axis=u.ndim - g.dim)


def to_faces(m: Manifold, X: np.ndarray) -> np.ndarray:
    """Node vector field -> face field by arithmetic averaging."""
    g = m.grid
    ax = X.ndim - g.dim - 1
    comps = [np.take(X, l, axis=ax) for l in range(g.dim)]
    faces = [0.5 * (c + shift(c, g, l, -1)) for l, c in enumerate(comps)]
    return np.stack(faces, axis=ax)


def to_nodes(m: Manifold, F: np.ndarray) -> np.ndarray:
    """Face field -> node vector field by arithmetic averaging."""
    g = m.grid
    ax = F.ndim - g.dim - 1
    comps = [np.take(F, l, axis=ax) for l in range(g.dim)]
    nodes = [0.5 * (c + shift(c, g, l, 1)) for l, c in enumerate(comps)]
    return np.stack(nodes, axis=ax)


def div_conservative(m: Manifold, flux: np.ndarray) -> np.ndarray:
    """Divergence of a face field given directly as ``sqrt_det * X^l`` on faces."""
    g = m.grid
    ax = flux.ndim - g.dim - 1
    out = 0.0
    for l, d in enumerate(g.spacings):
        F = np.take(flux, l, axis=ax)
        out = out + (F - shift(F, g, l, 1)) / d
    return out / m.metric.sqrt_det


def div_h(m: Manifold, X: np.ndarray, on_faces: bool = True) -> np.ndarray:
    """Divergence ``|h|^{-1/2} d_l(|h|^{1/2} X^l)``.

    ``X`` holds contravariant components on faces (default) or on nodes; node
    fields are averaged onto faces first.
    """
    if not on_faces:
        X = to_faces(m, X)
    return div_conservative(m, m.face_density * X)


def laplace_beltrami(m: Manifold, u: np.ndarray) -> np.ndarray:
    """Conservative five-point (three-point in 1D) Laplace-Beltrami operator."""
    g = m.grid
    out = 0.0
    for l, d in enumerate(g.spacings):
        a = m.face_stiffness[l]
        flux = a * (shift(u, g, l, -1) - u)
        out = out + (flux - shift(flux, g, l, 1)) / d**2
    return out / m.metric.sqrt_det


def dirichlet_density(m: Manifold, u: np.ndarray) -> np.ndarray:
    """Nodewise |grad u|_h^2 consistent with the discrete Laplacian.

    Each face energy ``A (du)^2 / dx^2`` is split evenly between its two nodes,
    so ``integrate(dirichlet_density(u)) == -<u, laplace_beltrami(u)>`` up to
    round-off and every entry is nonnegative.
    """
    g = m.grid
    out = 0.0
    for l, d in enumerate(g.spacings):
        a = m.face_stiffness[l]
        e = a * (shift(u, g, l, -1) - u) ** 2 / d**2
        out = out + 0.5 * (e + shift(e, g, l, 1))
    return out / m.metric.sqrt_det


def face_pairing(m: Manifold, X: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Discrete ``int (X, grad v)_h dV`` with X on faces and one-sided grad v."""
    g = m.grid
    ax = X.ndim - g.dim - 1
    total = 0.0
    for l, d in enumerate(g.spacings):
        F = m.face_density[l] * np.take(X, l, axis=ax)
        total = total + F * (shift(v, g, l, -1) - v) / d
    return _sum_grid(total * g.cell_volume, g.dim)


def face_norm_h(m: Manifold, X: np.ndarray) -> np.ndarray:
    """Pointwise |X|_h of a face field, component by component on its own face.

    For diagonal metrics each face component is measured with the face
    metric coefficient; returns ``sqrt(h_ll X^l X^l)`` per face, shape like X.
    """
    return np.sqrt(m.face_metric * X**2)


def node_norm_h(m: Manifold, X: np.ndarray) -> np.ndarray:
    """|X|_h at nodes for a node vector field ``(..., dim, *shape)``."""
    ax = X.ndim - m.dim - 1
    d = m.metric.diag
    sq = sum(d[l] * np.take(X, l, axis=ax) ** 2 for l in range(m.dim))
    return np.sqrt(sq)


def axis_distance(m: Manifold, node_a: tuple[int, ...], node_b: tuple[int, ...]) -> float:
    """Length of the coordinate path between two nodes on one grid line.

    The nodes must differ along a single axis; the shorter way around the
    periodic line is taken.  Lengths use the trapezoid rule on ``sqrt(h_ll)``.
    """
    node_a = tuple(node_a)
    node_b = tuple(node_b)
    diff = [l for l in range(m.dim) if node_a[l] != node_b[l]]
    if not diff:
        return 0.0
    if len(diff) > 1:
        raise ValueError("axis_distance needs nodes on a common grid line")
    l = diff[0]
    n = m.shape[l]
    line_idx = list(node_a)
    line_idx[l] = slice(None)
    speed = np.sqrt(m.metric.diag[l][tuple(line_idx)])
    seg = 0.5 * (speed + np.roll(speed, -1)) * m.grid.spacings[l]
    i, j = node_a[l] % n, node_b[l] % n
    if i > j:
        i, j = j, i
    forward = float(np.sum(seg[i:j]))
    total = float(np.sum(seg))
    return min(forward, total - forward)


def observed_order(err_coarse: float, err_fine: float, ratio: float = 2.0) -> float:
    return float(np.log(err_coarse / err_fine) / np.log(ratio))

