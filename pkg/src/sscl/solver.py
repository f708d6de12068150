"""
Pathwise Euler-Maruyama integration of

    du + div_h f_x(u) dt = eps Delta_h u dt + sum_k g_k(x, u) dbeta_k

with a first-order Rusanov finite-volume flux on the conservative metric
form.  Several paths are advanced together as one batched array; each path
draws its own keyed increments, so results do not depend on how paths are
grouped into batches.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .flux import FluxModel
from .noise import NoiseModel, NoiseIncrementBlock, sample_increments

log = logging.getLogger(__name__)

GUARD_FACTOR = 1.0e3


class PathAborted(RuntimeError):
    """A path left the blow-up guard or produced non-finite values."""

    def __init__(self, path_id, step, message):
        super().__init__(f"solver: path {path_id} aborted at step {step}: {message}")
        self.path_id = path_id
        self.step = step


# {{{ configuration

@dataclass(frozen=True)
class InitialData:
    """Initial profile.

    ``sine``: ``offset + amplitude * sin(m . x + shift)``;
    ``product``: ``offset + amplitude * sin(m1 x1 + shift) cos(m2 x2)``;
    ``step``: ``offset + amplitude * sign(sin(m1 x1 + shift))``;
    ``constant``: ``offset``.
    """

    kind: str
    amplitude: float = 1.0
    wavenumbers: tuple[int, ...] = (1,)
    shift: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sine", "product", "step", "constant"):
            raise ValueError(f"unknown initial data kind {self.kind!r}")
        object.__setattr__(self, "wavenumbers", tuple(int(k) for k in self.wavenumbers))

    def __call__(self, m: geo.Manifold) -> np.ndarray:
        x = m.mesh()
        ks = list(self.wavenumbers) + [0] * (m.dim - len(self.wavenumbers))
        if self.kind == "constant":
            return np.full(m.shape, float(self.offset))
        if self.kind == "sine":
            phase = sum(k * xx for k, xx in zip(ks, x)) + self.shift
            return self.offset + self.amplitude * np.sin(phase)
        if self.kind == "step":
            return self.offset + self.amplitude * np.sign(np.sin(ks[0] * x[0] + self.shift))
        if m.dim != 2:
            raise ValueError("product initial data needs a 2D manifold")
        return self.offset + self.amplitude * np.sin(ks[0] * x[0] + self.shift) * np.cos(ks[1] * x[1])

    def sup(self, m: geo.Manifold) -> float:
        return float(np.max(np.abs(self(m))))


@dataclass(eq=False)
class SimConfig:
    """Everything a path needs: models, viscosity, horizon, step control, ledgers."""

    manifold: geo.Manifold
    flux: FluxModel | None
    noise: NoiseModel | None
    eps: float
    T: float
    theta: float
    u0: InitialData
    paths: int = 1
    dt: float | None = None
    snapshots: tuple[float, ...] = ()
    p_list: tuple[float, ...] = (2.0,)
    noise_substeps: int = 1
    dissipation_scale: float = 1.0
    guard: float | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if not 0 < self.theta <= 1:
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")
        if self.eps < 0:
            raise ValueError(f"eps must be nonnegative, got {self.eps}")
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if self.flux is not None and self.flux.manifold is not self.manifold:
            raise ValueError("flux model was built on a different manifold")
        self.snapshots = tuple(float(t) for t in self.snapshots)
        self.p_list = tuple(float(p) for p in self.p_list)
        if self.guard is None:
            self.guard = GUARD_FACTOR * (1.0 + self.u0.sup(self.manifold))

    def initial_field(self) -> np.ndarray:
        return self.u0(self.manifold)

    @property
    def noise_spatial(self):
        if self.noise is None:
            return None
        try:
            return self._noise_spatial
        except AttributeError:
            self._noise_spatial = self.noise.spatial(self.manifold)
            return self._noise_spatial

    def replace(self, **kw) -> "SimConfig":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if "u0" in kw and "guard" not in kw:
            fields["guard"] = None
        fields.update(kw)
        return SimConfig(**fields)

# }}}


# {{{ spatial operators

def cfl_dt(cfg: SimConfig) -> float:
    """``theta * min(hyperbolic limit, parabolic limit)``.

    The hyperbolic limit is ``1 / max_i sum_l lambda_l / (sqrt_det_i dx_l)``
    with ``lambda_l`` the larger of the two adjacent face wave-speed bounds
    over the guarded xi-range; the parabolic one ``1 / (eps * diag_i)`` with
    ``diag_i`` the Laplacian stencil's diagonal magnitude.  Both reduce to
    ``dx / |V|max|a'|`` and ``dx^2 / (2 eps)`` on the flat circle.
    """
    m = cfg.manifold
    g = m.grid
    s = m.metric.sqrt_det
    if not (np.all(np.isfinite(s)) and np.all(s > 0)):
        raise ValueError("solver: degenerate metric entries")
    limits = [np.inf]
    if cfg.flux is not None and cfg.flux.modes:
        lam = cfg.flux.wave_speed_bound(cfg.guard)
        rate = np.zeros(g.shape)
        for l, d in enumerate(g.spacings):
            rate += np.maximum(lam[l], geo.shift(lam[l], g, l, 1)) / (s * d)
        if np.max(rate) > 0:
            limits.append(1.0 / float(np.max(rate)))
    if cfg.eps > 0:
        limits.append(1.0 / (cfg.eps * float(np.max(m.laplacian_diagonal))))
    lim = min(limits)
    if not np.isfinite(lim):
        # no transport, no diffusion: the step is bounded by the horizon only
        return cfg.theta * cfg.T
    return cfg.theta * lim


def time_grid(cfg: SimConfig) -> tuple[float, int]:
    """Step size and count landing exactly on T."""
    limit = cfl_dt(cfg)
    if cfg.dt is not None:
        if cfg.dt > limit * (1 + 1e-12):
            raise ValueError(f"solver: dt={cfg.dt:.6g} exceeds the CFL limit {limit:.6g}")
        n = max(1, int(round(cfg.T / cfg.dt)))
        return cfg.T / n, n
    n = max(1, int(math.ceil(cfg.T / limit - 1e-12)))
    return cfg.T / n, n


def hyperbolic_rhs(m: geo.Manifold, fm: FluxModel | None, u: np.ndarray,
                   dissipation_scale: float = 1.0) -> np.ndarray:
    """``-div_h f_x(u)`` with the local Lax-Friedrichs (Rusanov) face flux.

    The face flux along axis ``l`` is
    ``1/2 (F(u_L) + F(u_R)) - 1/2 lam (u_R - u_L)`` with
    ``F(xi) = sum_j a_j(xi) sqrt_det V_j^l`` evaluated on the face and
    ``lam = max(|F'(u_L)|, |F'(u_R)|)``.
    """
    if fm is None or not fm.modes:
        return np.zeros_like(u)
    g = m.grid
    cons = fm.conservative_fields
    A = [md.profile(u) for md in fm.modes]
    P = [md.profile.prime(u) for md in fm.modes]
    out = 0.0
    for l, d in enumerate(g.spacings):
        uR = geo.shift(u, g, l, -1)
        fL = 0.0
        fR = 0.0
        sL = 0.0
        sR = 0.0
        for j in range(len(fm.modes)):
            phi = cons[j, l]
            fL = fL + A[j] * phi
            fR = fR + geo.shift(A[j], g, l, -1) * phi
            sL = sL + P[j] * phi
            sR = sR + geo.shift(P[j], g, l, -1) * phi
        lam = np.maximum(np.abs(sL), np.abs(sR))
        H = 0.5 * (fL + fR) - 0.5 * dissipation_scale * lam * (uR - u)
        out = out + (H - geo.shift(H, g, l, 1)) / d
    return -out / m.metric.sqrt_det


def viscous_rhs(m: geo.Manifold, u: np.ndarray, eps: float) -> np.ndarray:
    if eps == 0:
        return np.zeros_like(u)
    return eps * geo.laplace_beltrami(m, u)


def noise_term(cfg: SimConfig, u: np.ndarray, dB: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``sum_k g_k(x, u) dB_k`` and the coefficient stack ``g`` (mode axis first).

    ``dB`` has shape ``(*batch, K)`` matching the leading axes of ``u``.
    """
    m = cfg.manifold
    G = cfg.noise.coefficients(m, u, cfg.noise_spatial)
    dBk = np.moveaxis(np.asarray(dB), -1, 0).reshape((cfg.noise.K,) + np.shape(dB)[:-1] + (1,) * m.dim)
    return np.sum(G * dBk, axis=0), G


def em_step(cfg: SimConfig, u: np.ndarray, dt: float, block=None) -> np.ndarray:
    """One Euler-Maruyama step with Ito (pre-step) noise evaluation.

    ``block`` is a :class:`NoiseIncrementBlock`, a sequence of them (one per
    batch entry) or a raw ``(*batch, K)`` increment array.
    """
    m = cfg.manifold
    rhs = hyperbolic_rhs(m, cfg.flux, u, cfg.dissipation_scale) + viscous_rhs(m, u, cfg.eps)
    new = u + dt * rhs
    if cfg.noise is not None and block is not None:
        dB = _increment_array(block)
        new = new + noise_term(cfg, u, dB)[0]
    bad = ~np.isfinite(new) | (np.abs(new) > cfg.guard)
    if np.any(bad):
        pid = getattr(block, "path_id", None)
        raise PathAborted(pid, getattr(block, "n", None), "blow-up guard exceeded or non-finite value")
    return new


def _increment_array(block):
    if isinstance(block, NoiseIncrementBlock):
        return block.dB
    if isinstance(block, (list, tuple)) and block and isinstance(block[0], NoiseIncrementBlock):
        return np.stack([b.dB for b in block])
    return np.asarray(block)

# }}}


# {{{ path integration

@dataclass
class StateField:
    t: float
    u: np.ndarray


LEDGERS = ("dissipation", "energy_residual", "ito_correction", "hyperbolic_pairing",
           "drift_norm_sq", "spatial_mean")


@dataclass(eq=False)
class PathResult:
    path_id: int
    dt: float
    times: np.ndarray
    snapshots: list[StateField]
    ledgers: dict[str, np.ndarray]
    lp_series: dict[float, np.ndarray]
    lp_dissipation: dict[float, np.ndarray]
    lp0: dict[float, float]
    mean0: float
    norm0: float
    increments: np.ndarray | None = None
    trajectory: np.ndarray | None = field(default=None, repr=False)
    aborted: str | None = None

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def max_lp(self, p: float) -> float:
        return max(self.lp0[p], float(np.max(self.lp_series[p])))


def integrate_batch(cfg: SimConfig, path_ids, u0=None, observer=None,
                    keep_trajectory: bool = False) -> list[PathResult]:
    """Advance a batch of paths to ``cfg.T`` and fill their ledgers.

    ``u0`` defaults to ``cfg.u0`` for every path; otherwise it must have shape
    ``(len(path_ids), *grid.shape)``.  Repeated path ids receive identical
    noise (common-noise coupling).  ``observer(n, t_next, u_old, u_new)`` is
    called after every step.  Aborted paths are frozen and flagged rather
    than raising.
    """
    m = cfg.manifold
    path_ids = [int(p) for p in path_ids]
    B = len(path_ids)
    if u0 is None:
        u = np.broadcast_to(cfg.initial_field(), (B, *m.shape)).copy()
    else:
        u = np.array(u0, dtype=float).reshape(B, *m.shape)
    dt, n_steps = time_grid(cfg)
    times = dt * np.arange(n_steps + 1)
    snap_steps = sorted({int(round(t / dt)) for t in cfg.snapshots if 0 <= t <= cfg.T * (1 + 1e-12)})

    led = {k: np.full((B, n_steps), np.nan) for k in LEDGERS}
    lp_series = {p: np.full((B, n_steps), np.nan) for p in cfg.p_list}
    lp_diss = {p: np.full((B, n_steps), np.nan) for p in cfg.p_list}
    lp0 = {p: geo.lp_norm_p(m, u, p) for p in cfg.p_list}
    mean0 = geo.integrate(m, u)
    norm = geo.inner(m, u, u)
    norm0 = norm.copy()
    K = cfg.noise.K if cfg.noise is not None else 0
    incs = np.zeros((B, n_steps, K)) if K else None
    traj = np.empty((B, n_steps + 1, *m.shape)) if keep_trajectory else None
    if traj is not None:
        traj[:, 0] = u
    snaps = [[] for _ in range(B)]
    if 0 in snap_steps:
        for b in range(B):
            snaps[b].append(StateField(0.0, u[b].copy()))

    alive = np.ones(B, dtype=bool)
    aborted = [None] * B
    bshape = (B,) + (1,) * m.dim

    for n in range(n_steps):
        hyp = hyperbolic_rhs(m, cfg.flux, u, cfg.dissipation_scale)
        visc = viscous_rhs(m, u, cfg.eps)
        rhs = hyp + visc
        new = u + dt * rhs
        if K:
            dB = np.stack([sample_increments(cfg.noise, pid, n, dt, cfg.noise_substeps).dB
                           for pid in path_ids])
            incs[:, n] = dB
            nt, G = noise_term(cfg, u, dB)
            new = new + nt
            ito = dt * sum(geo.inner(m, G[k], G[k]) for k in range(K))
            stoch = 2.0 * sum(geo.inner(m, u, G[k]) * dB[:, k] for k in range(K))
        else:
            ito = np.zeros(B)
            stoch = np.zeros(B)

        bad = ~np.all(np.isfinite(new).reshape(B, -1), axis=1) | \
            (np.max(np.abs(np.nan_to_num(new, nan=np.inf)).reshape(B, -1), axis=1) > cfg.guard)
        newly = bad & alive
        for b in np.flatnonzero(newly):
            aborted[b] = f"solver: path {path_ids[b]} aborted at step {n}: blow-up guard {cfg.guard:.3g} exceeded"
            log.warning(aborted[b])
        alive &= ~bad
        new = np.where(alive.reshape(bshape), new, u)

        e = geo.dirichlet_density(m, u)
        new_norm = geo.inner(m, new, new)
        pair = geo.inner(m, u, rhs)
        res = new_norm - norm - (2.0 * pair * dt + ito + stoch)
        cur = {
            "dissipation": cfg.eps * geo.integrate(m, e) * dt,
            "energy_residual": res,
            "ito_correction": ito,
            "hyperbolic_pairing": geo.inner(m, u, hyp) * dt,
            "drift_norm_sq": geo.inner(m, rhs, rhs),
            "spatial_mean": geo.integrate(m, new),
        }
        for k, v in cur.items():
            led[k][alive, n] = np.asarray(v)[alive] if np.ndim(v) else v
        for p in cfg.p_list:
            lp_series[p][alive, n] = geo.lp_norm_p(m, new, p)[alive]
            w = np.abs(u) ** (p - 2.0) * e if p != 2.0 else e
            lp_diss[p][alive, n] = (cfg.eps * geo.integrate(m, w) * dt)[alive]
        if observer is not None:
            observer(n, times[n + 1], u, new)
        u = new
        norm = new_norm
        if traj is not None:
            traj[:, n + 1] = u
        if n + 1 in snap_steps:
            for b in range(B):
                snaps[b].append(StateField(float(times[n + 1]), u[b].copy()))
        if not np.any(alive):
            break

    out = []
    for b, pid in enumerate(path_ids):
        out.append(PathResult(
            path_id=pid, dt=dt, times=times, snapshots=snaps[b],
            ledgers={k: v[b] for k, v in led.items()},
            lp_series={p: v[b] for p, v in lp_series.items()},
            lp_dissipation={p: v[b] for p, v in lp_diss.items()},
            lp0={p: float(v[b]) for p, v in lp0.items()},
            mean0=float(mean0[b]), norm0=float(norm0[b]),
            increments=None if incs is None else incs[b],
            trajectory=None if traj is None else traj[b],
            aborted=aborted[b],
        ))
    return out


def run_path(cfg: SimConfig, path_id: int, keep_trajectory: bool = False) -> PathResult:
    res = integrate_batch(cfg, [path_id], keep_trajectory=keep_trajectory)[0]
    if res.aborted:
        raise PathAborted(path_id, None, res.aborted)
    return res

# }}}


# {{{ ensembles

def worker_count(requested=None) -> int:
    cap = os.environ.get("SSCL_THREADS")
    n = requested or os.cpu_count() or 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, int(n))


def map_batches(fn, batches, workers=None):
    """Apply ``fn`` to each batch, in worker processes when more than one is allowed."""
    workers = worker_count(workers)
    if workers == 1 or len(batches) == 1:
        return [fn(b) for b in batches]
    with ProcessPoolExecutor(max_workers=min(workers, len(batches))) as ex:
        return list(ex.map(fn, batches))


def split_paths(path_ids, batch_size):
    path_ids = list(path_ids)
    return [path_ids[i:i + batch_size] for i in range(0, len(path_ids), batch_size)]


def mean_stderr(values) -> tuple[float, float]:
    """Compensated mean and standard error; independent of value order up to round-off."""
    x = [float(v) for v in values]
    M = len(x)
    mean = math.fsum(x) / M
    if M < 2:
        return mean, float("nan")
    var = math.fsum((v - mean) ** 2 for v in x) / (M - 1)
    return mean, math.sqrt(var / M)


def path_functionals(res: PathResult) -> dict[str, float]:
    f = {
        "spatial_mean_drift": float(res.ledgers["spatial_mean"][-1] - res.mean0),
        "dissipation_total": math.fsum(res.ledgers["dissipation"]),
        "energy_residual_total": math.fsum(res.ledgers["energy_residual"]),
        "ito_correction_total": math.fsum(res.ledgers["ito_correction"]),
        "hyperbolic_pairing_total": math.fsum(res.ledgers["hyperbolic_pairing"]),
    }
    for p in res.lp0:
        f[f"lp{p:g}_final"] = float(res.lp_series[p][-1])
        f[f"lp{p:g}_max"] = res.max_lp(p)
        f[f"lp{p:g}_initial"] = res.lp0[p]
        f[f"lp{p:g}_dissipation"] = math.fsum(res.lp_dissipation[p])
    return f


@dataclass
class EnsembleStats:
    n_paths: int
    scalars: dict[str, tuple[float, float]]
    series: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]
    aborted: list[tuple[int, str]]
    dt: float
    n_steps: int

    @property
    def partial(self) -> bool:
        return bool(self.aborted)


def _batch_job(args):
    cfg, ids, keep = args
    return integrate_batch(cfg, ids, keep_trajectory=keep)


def run_paths(cfg: SimConfig, path_ids=None, workers=None, batch_size: int = 32,
              keep_trajectory: bool = False) -> list[PathResult]:
    if path_ids is None:
        path_ids = range(cfg.paths)
    batches = split_paths(path_ids, batch_size)
    chunks = map_batches(_batch_job, [(cfg, b, keep_trajectory) for b in batches], workers)
    return sorted((r for c in chunks for r in c), key=lambda r: r.path_id)


def summarize(results: list[PathResult]) -> EnsembleStats:
    ok = [r for r in results if not r.aborted]
    aborted = [(r.path_id, r.aborted) for r in results if r.aborted]
    if not ok:
        return EnsembleStats(0, {}, {}, aborted, results[0].dt if results else float("nan"), 0)
    funcs = [path_functionals(r) for r in ok]
    scalars = {k: mean_stderr(f[k] for f in funcs) for k in funcs[0]}
    series = {}
    t = ok[0].times[1:]
    stack = np.stack([r.ledgers["spatial_mean"] for r in ok])
    series["spatial_mean"] = (t, *_series_stats(stack))
    for p in ok[0].lp0:
        stack = np.stack([r.lp_series[p] for r in ok])
        series[f"lp{p:g}"] = (t, *_series_stats(stack))
    return EnsembleStats(len(ok), scalars, series, aborted, ok[0].dt, ok[0].n_steps)


def _series_stats(stack: np.ndarray):
    M = stack.shape[0]
    mean = np.array([math.fsum(col) / M for col in stack.T])
    if M < 2:
        return mean, np.full_like(mean, np.nan)
    var = np.array([math.fsum((col - mu) ** 2) / (M - 1) for col, mu in zip(stack.T, mean)])
    return mean, np.sqrt(var / M)


def run_ensemble(cfg: SimConfig, workers=None, batch_size: int = 32) -> EnsembleStats:
    """Run ``cfg.paths`` paths and reduce their functionals."""
    if cfg.paths < 2:
        raise ValueError("run_ensemble needs at least 2 paths")
    return summarize(run_paths(cfg, workers=workers, batch_size=batch_size))

# }}}
