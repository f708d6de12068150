"""
TOML run configuration.

Sections mirror the library modules: ``[manifold]``, ``[flux]`` with
``[[flux.modes]]``, ``[noise]`` with ``[[noise.modes]]``, ``[solver]`` with
``[solver.u0]``, ``[kinetic]`` with ``[kinetic.psi]`` and ``[experiment]``.
Top-level keys are ``seed`` and ``out_dir``.  Unknown keys are rejected and
physical constants have no defaults.  Flux and noise certificates are
either declared numerically or requested explicitly as ``"analytic"``.
Leaving out ``[flux]`` gives ``f = 0``; leaving out ``[noise]`` gives
``B = 0``.
"""

from __future__ import annotations

import copy
import hashlib
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import flux as fx
from . import geometry as geo
from . import kinetic as kin
from . import noise as nz
from . import solver as sv


class ConfigError(ValueError):
    pass


REQ = object()

# key -> (type, default); REQ marks keys without a default
_NUM = (int, float)
SCHEMA = {
    "": {"seed": (int, REQ), "out_dir": (str, "out")},
    "manifold": {"kind": (str, REQ), "sizes": (list, REQ), "beta": (_NUM, REQ)},
    "flux": {"certificate": (str, None), "C0": (_NUM, None), "r": (_NUM, None),
             "L": (_NUM, None), "C1": (_NUM, None), "modes": (list, REQ)},
    "flux.modes": {"profile": (str, REQ), "slope": (_NUM, None), "L": (_NUM, None),
                   "stream": (str, REQ), "amplitude": (_NUM, 1.0), "c": (list, None),
                   "wavenumbers": (list, None), "axis": (int, 0), "phase": (_NUM, 0.0)},
    "noise": {"D1": (_NUM, None), "D2": (_NUM, None), "certificate": (str, None),
              "xi_bound": (_NUM, None), "modes": (list, REQ)},
    "noise.modes": {"c": (_NUM, REQ), "sigma": (str, REQ), "m": (int, 0), "axis": (int, 0), "phi": (str, REQ)},
    "solver": {"eps": (_NUM, REQ), "T": (_NUM, REQ), "theta": (_NUM, REQ), "dt": (_NUM, None),
               "paths": (int, 1), "snapshots": (list, []), "p_list": (list, [2.0]),
               "noise_substeps": (int, 1), "u0": (dict, REQ)},
    "solver.u0": {"kind": (str, REQ), "amplitude": (_NUM, 1.0), "wavenumbers": (list, [1]),
                  "shift": (_NUM, 0.0), "offset": (_NUM, 0.0)},
    "kinetic": {"xi_min": (_NUM, REQ), "xi_max": (_NUM, REQ), "n_xi": (int, REQ),
                "t_bins": (int, 1), "psi": (dict, None)},
    "kinetic.psi": {"centers": (list, None), "kappa": (_NUM, 2.0), "xi_center": (_NUM, 0.0),
                    "xi_width": (_NUM, 1.0)},
    "experiment": {"eps_list": (list, None), "p_list": (list, None), "p": (_NUM, None),
                   "ceiling": (_NUM, 10.0), "eps0": (_NUM, None), "levels": (int, None),
                   "seed_2": (int, None), "u0_2": (dict, None), "control_xi": (list, None),
                   "control_amplitude": (_NUM, None), "xi_bound": (_NUM, None),
                   "builtins": (bool, True)},
    "experiment.u0_2": None,  # same schema as solver.u0
}
SCHEMA["experiment.u0_2"] = SCHEMA["solver.u0"]

_SUBTABLES = {"flux": ("modes",), "noise": ("modes",), "solver": ("u0",), "kinetic": ("psi",),
              "experiment": ("u0_2",)}


def _where(section, key, index=None):
    if not section:
        return key
    sec = f"{section}[{index}]" if index is not None else section
    return f"[{sec}].{key}"


def _check_table(table: dict, section: str, index=None) -> dict:
    schema = SCHEMA[section]
    out = {}
    for key in table:
        if key not in schema:
            raise ConfigError(f"config: unknown key {_where(section, key, index)}")
    for key, (typ, default) in schema.items():
        if key not in table:
            if default is REQ:
                raise ConfigError(f"config: missing required key {_where(section, key, index)}")
            if default is not None:
                out[key] = copy.deepcopy(default)
            continue
        val = table[key]
        if isinstance(val, bool) and typ is not bool:
            raise ConfigError(f"config: {_where(section, key, index)} must not be a boolean")
        if not isinstance(val, typ):
            raise ConfigError(f"config: {_where(section, key, index)} has wrong type {type(val).__name__}")
        out[key] = val
    return out


def validate(raw: dict) -> dict:
    """Normalized copy of a parsed config, or ConfigError naming the offending key."""
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a table")
    sections = {k for k in SCHEMA if k and "." not in k}
    top = {k: v for k, v in raw.items() if k not in sections}
    data = _check_table(top, "")
    for name in ("manifold", "solver"):
        if name not in raw:
            raise ConfigError(f"config: missing section [{name}]")
    for name in sorted(sections):
        if name not in raw:
            continue
        if not isinstance(raw[name], dict):
            raise ConfigError(f"config: [{name}] must be a table")
        sec = _check_table(raw[name], name)
        for sub in _SUBTABLES.get(name, ()):
            if sub not in sec:
                continue
            sub_schema = f"{name}.{sub}"
            if isinstance(sec[sub], list):
                if not sec[sub]:
                    raise ConfigError(f"config: [{sub_schema}] needs at least one entry")
                sec[sub] = [_check_table(t, sub_schema, i) if isinstance(t, dict) else _bad_entry(sub_schema, i)
                            for i, t in enumerate(sec[sub])]
            else:
                sec[sub] = _check_table(sec[sub], sub_schema)
        data[name] = sec
    _check_values(data)
    return data


def _bad_entry(section, i):
    raise ConfigError(f"config: [{section}][{i}] must be a table")


def _check_values(d: dict):
    man = d["manifold"]
    if abs(man["beta"]) >= 1:
        raise ConfigError(f"config: [manifold].beta must satisfy |beta| < 1 (got {man['beta']})")
    if not 0 <= d["seed"] < 2**64:
        raise ConfigError("config: seed must fit in 64 bits")
    s = d["solver"]
    if not s["T"] > 0:
        raise ConfigError(f"config: [solver].T must be positive (got {s['T']})")
    if not 0 < s["theta"] <= 1:
        raise ConfigError(f"config: [solver].theta must lie in (0, 1] (got {s['theta']})")
    if s["eps"] < 0:
        raise ConfigError(f"config: [solver].eps must be nonnegative (got {s['eps']})")
    if s["paths"] < 1:
        raise ConfigError("config: [solver].paths must be >= 1")
    if "flux" in d:
        f = d["flux"]
        declared = [k for k in ("C0", "r", "L", "C1") if k in f]
        if f.get("certificate") not in (None, "analytic"):
            raise ConfigError("config: [flux].certificate must be \"analytic\" when given")
        if f.get("certificate") == "analytic" and declared:
            raise ConfigError("config: [flux] declares constants and also asks for the analytic certificate")
        if f.get("certificate") is None and len(declared) < 4:
            missing = sorted(set(("C0", "r", "L", "C1")) - set(declared))
            raise ConfigError(f"config: missing required key [flux].{missing[0]} (or certificate = \"analytic\")")
    if "noise" in d:
        n = d["noise"]
        if n.get("certificate") not in (None, "analytic"):
            raise ConfigError("config: [noise].certificate must be \"analytic\" when given")
        if n.get("certificate") is None:
            for k in ("D1", "D2"):
                if k not in n:
                    raise ConfigError(f"config: missing required key [noise].{k} (or certificate = \"analytic\")")
        elif "xi_bound" not in n:
            raise ConfigError("config: missing required key [noise].xi_bound (analytic certificate)")
    if "kinetic" in d:
        k = d["kinetic"]
        if not k["xi_max"] > k["xi_min"]:
            raise ConfigError("config: [kinetic].xi_max must exceed [kinetic].xi_min")
        if k["n_xi"] < 16:
            raise ConfigError("config: [kinetic].n_xi must be >= 16")


@dataclass
class RunConfig:
    data: dict
    source: str | None = None

    # {{{ construction

    @classmethod
    def from_dict(cls, raw: dict, source=None) -> "RunConfig":
        return cls(validate(raw), source)

    @classmethod
    def from_toml(cls, text: str, source=None) -> "RunConfig":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"config: TOML parse error: {e}") from None
        return cls.from_dict(raw, source)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"config: cannot read {path}: {e.strerror}") from None
        return cls.from_toml(text, str(path))

    def to_toml(self) -> str:
        return tomli_w.dumps(self.data)

    def sha256(self) -> str:
        return hashlib.sha256(self.to_toml().encode()).hexdigest()

    def override(self, seed=None, paths=None, out_dir=None) -> "RunConfig":
        d = copy.deepcopy(self.data)
        if seed is not None:
            d["seed"] = int(seed)
        if paths is not None:
            d["solver"]["paths"] = int(paths)
        if out_dir is not None:
            d["out_dir"] = str(out_dir)
        return RunConfig.from_dict(d, self.source)

    # }}}

    # {{{ builders

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def experiment(self) -> dict:
        return self.data.get("experiment", {})

    def manifold(self) -> geo.Manifold:
        man = self.data["manifold"]
        return _wrap("manifold", lambda: geo.build_manifold(man["kind"], tuple(man["sizes"]), man["beta"]))

    def flux_pairs(self, m: geo.Manifold):
        out = []
        for i, md in enumerate(self.data["flux"]["modes"]):
            def build(md=md):
                prof = md["profile"]
                if prof == "linear":
                    a = fx.Linear(_need(md, "slope", f"flux.modes[{i}]"))
                elif prof in ("burgers", "cubic"):
                    L = _need(md, "L", f"flux.modes[{i}]")
                    a = fx.BurgersLinearized(L) if prof == "burgers" else fx.CubicLinearized(L)
                else:
                    raise ValueError(f"unknown flux profile {prof!r}; expected linear, burgers or cubic")
                kw = dict(amplitude=float(md["amplitude"]), axis=md["axis"], phase=float(md["phase"]))
                if "c" in md:
                    kw["c"] = tuple(float(x) for x in md["c"])
                elif md["stream"] == "constant":
                    kw["c"] = (1.0,) * m.dim
                if "wavenumbers" in md:
                    kw["wavenumbers"] = tuple(int(k) for k in md["wavenumbers"])
                return a, fx.StreamFunction(md["stream"], **kw)
            out.append(_wrap(f"flux.modes[{i}]", build))
        return out

    def flux(self, m: geo.Manifold) -> fx.FluxModel | None:
        if "flux" not in self.data:
            return None
        from .experiments import default_flux_certificate
        f = self.data["flux"]
        pairs = self.flux_pairs(m)
        if f.get("certificate") == "analytic":
            cert = default_flux_certificate(m, pairs)
        else:
            cert = fx.GrowthCertificate(float(f["C0"]), float(f["r"]), float(f["L"]), float(f["C1"]))
        return _wrap("flux", lambda: fx.FluxModel.build(m, pairs, cert))

    def noise(self, m: geo.Manifold) -> nz.NoiseModel | None:
        if "noise" not in self.data:
            return None
        n = self.data["noise"]
        modes = []
        for i, md in enumerate(n["modes"]):
            modes.append(_wrap(f"noise.modes[{i}]", lambda md=md: nz.NoiseMode(
                float(md["c"]), nz.SpatialProfile(md["sigma"], md["m"], md["axis"]), nz.XiProfile(md["phi"]))))
        if n.get("certificate") == "analytic":
            probe = nz.NoiseModel(tuple(modes), 1.0, 1.0, self.seed)
            d1, d2 = _wrap("noise", lambda: probe.analytic_constants(m, float(n["xi_bound"])))
            return nz.NoiseModel(tuple(modes), 1.05 * d1, 1.05 * max(d2, 1e-300), self.seed)
        return _wrap("noise", lambda: nz.NoiseModel(tuple(modes), float(n["D1"]), float(n["D2"]), self.seed))

    def initial_data(self, table=None) -> sv.InitialData:
        u = table if table is not None else self.data["solver"]["u0"]
        return _wrap("solver.u0", lambda: sv.InitialData(
            u["kind"], float(u["amplitude"]), tuple(int(k) for k in u["wavenumbers"]),
            float(u["shift"]), float(u["offset"])))

    def sim_config(self) -> sv.SimConfig:
        m = self.manifold()
        s = self.data["solver"]
        u0 = self.initial_data()
        _wrap("solver.u0", lambda: u0(m))
        return _wrap("solver", lambda: sv.SimConfig(
            manifold=m, flux=self.flux(m), noise=self.noise(m), eps=float(s["eps"]), T=float(s["T"]),
            theta=float(s["theta"]), u0=u0, paths=int(s["paths"]),
            dt=float(s["dt"]) if "dt" in s else None,
            snapshots=tuple(float(t) for t in s["snapshots"]),
            p_list=tuple(float(p) for p in s["p_list"]), noise_substeps=int(s["noise_substeps"])))

    def xi_grid(self) -> kin.XiGrid | None:
        k = self.data.get("kinetic")
        if k is None:
            return None
        return _wrap("kinetic", lambda: kin.XiGrid(float(k["xi_min"]), float(k["xi_max"]), int(k["n_xi"])))

    def test_function(self) -> kin.TestFunction:
        k = self.data.get("kinetic")
        if k is None or "psi" not in k:
            raise ConfigError("config: missing section [kinetic.psi]")
        p = k["psi"]
        centers = tuple(float(c) for c in p.get("centers", [np.pi]))
        return kin.TestFunction(kin.TimeFactor(float(self.data["solver"]["T"])),
                                kin.SpaceFactor(centers, float(p["kappa"])),
                                kin.XiFactor(float(p["xi_center"]), float(p["xi_width"])))

    # }}}


def _need(table, key, section):
    if key not in table:
        raise ConfigError(f"config: missing required key [{section}].{key}")
    return float(table[key])


def _wrap(section, fn):
    """Re-raise library ValueErrors as ConfigError naming the section."""
    try:
        return fn()
    except ConfigError:
        raise
    except ValueError as e:
        msg = str(e)
        if "beta" in msg and section == "manifold":
            raise ConfigError(f"config: [manifold].beta: {msg}") from None
        raise ConfigError(f"config: [{section}]: {msg}") from None
