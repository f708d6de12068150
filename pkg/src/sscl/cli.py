"""
Command line entry point.

    sscl simulate --config run.toml [--seed S] [--paths M] [--out DIR]
    sscl verify SUITE --config run.toml [...]
    sscl export-plotdata RUN_DIR [--out DIR]

Exit codes: 0 success; 1 configuration or precondition error; 2 a path
aborted during simulate; 3 a verification suite failed (its report is
still written).  ``SSCL_THREADS`` caps the number of worker processes.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from . import io
from . import kinetic as kin
from . import solver as sv
from .config import ConfigError, RunConfig

SUITES = ("contraction", "lp_bounds", "kinetic_mass", "vanishing_viscosity", "energy_identity",
          "conditions", "weak_residual")

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_FAIL = 0, 1, 2, 3


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _load(args) -> RunConfig:
    rc = RunConfig.load(args.config)
    return rc.override(seed=args.seed, paths=args.paths, out_dir=args.out)


# {{{ simulate

def simulate(rc: RunConfig, out: Path) -> int:
    cfg = rc.sim_config()
    xi = rc.xi_grid()
    dt, n_steps = sv.time_grid(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ledgers").mkdir(exist_ok=True)
    if cfg.snapshots:
        (out / "snapshots").mkdir(exist_ok=True)

    if xi is not None and cfg.eps > 0:
        results, measures = [], []
        t_bins = rc.data["kinetic"]["t_bins"]
        for ids in sv.split_paths(range(cfg.paths), 32):
            obs = kin.KineticObserver(cfg, xi, len(ids), dt, t_bins)
            results += sv.integrate_batch(cfg, ids, observer=obs)
            measures += obs.measures
    else:
        results, measures = sv.run_paths(cfg), []

    files = []
    for r in results:
        for name, vals in r.ledgers.items():
            p = out / "ledgers" / f"path{r.path_id:05d}_{name}.csv"
            io.write_ledger(p, r.times, vals)
            files.append(p)
        for q, vals in r.lp_series.items():
            p = out / "ledgers" / f"path{r.path_id:05d}_lp{q:g}.csv"
            io.write_csv(p, ["step", "t", "value"],
                         [(0, 0.0, r.lp0[q])] + [(n + 1, float(r.times[n + 1]), float(v)) for n, v in enumerate(vals)])
            files.append(p)
        for j, s in enumerate(r.snapshots):
            p = out / "snapshots" / f"path{r.path_id:05d}_{j:04d}.sscl"
            io.write_snapshot(p, s.u, s.t)
            files.append(p)
    for r, km in zip(results, measures):
        p = out / "ledgers" / f"path{r.path_id:05d}_kinetic_measure.csv"
        io.write_csv(p, ["t_bin", "x_index", "xi_bin", "mass"], km.rows())
        files.append(p)

    aborted = [(r.path_id, r.aborted) for r in results if r.aborted]
    if len(results) >= 2:
        stats = sv.summarize(results)
        io.write_csv(out / "ensemble.csv", ["functional", "mean", "stderr"],
                     [(k, mu, se) for k, (mu, se) in sorted(stats.scalars.items())])
    (out / "config.toml").write_text(rc.to_toml())
    io.write_manifest(out / "manifest.json", {
        "config_sha256": rc.sha256(),
        "config_file": "config.toml",
        "seed": rc.seed,
        "paths": cfg.paths,
        "dt": dt,
        "n_steps": n_steps,
        "p_list": list(cfg.p_list),
        "ledgers": list(sv.LEDGERS),
        "snapshot_times": [float(t) for t in cfg.snapshots],
        "kinetic": xi is not None and cfg.eps > 0,
        "aborted": [{"path": p, "reason": why} for p, why in aborted],
        "versions": io.versions(),
        "files": sorted(str(f.relative_to(out)) for f in files),
    })
    for p, why in aborted:
        _err(why)
    print(f"simulate: {cfg.paths} paths, {n_steps} steps of dt={dt:.6g}, output in {out}")
    return EXIT_ABORT if aborted else EXIT_OK

# }}}


# {{{ verify

def _need(exp, key):
    if key not in exp:
        raise ConfigError(f"config: missing required key [experiment].{key}")
    return exp[key]


def run_suite(name: str, rc: RunConfig) -> ex.SuiteReport:
    exp = rc.experiment
    if name == "conditions":
        m = rc.manifold()
        cfg = rc.sim_config()
        return ex.conditions_suite(m, float(exp.get("xi_bound", 8.0)), cfg, exp.get("builtins", True))
    cfg = rc.sim_config()
    xi = rc.xi_grid()
    if name == "contraction":
        u2 = rc.initial_data(_need(exp, "u0_2"))
        return ex.contraction_suite(cfg, cfg.u0, u2, exp.get("seed_2"), xi)
    if name in ("lp_bounds", "kinetic_mass"):
        eps_list = [float(e) for e in _need(exp, "eps_list")]
        if name == "lp_bounds":
            p_list = [float(p) for p in _need(exp, "p_list")]
            control = ex.nondivfree_control(cfg, float(exp.get("control_amplitude", 20.0)))
            return ex.lp_bound_suite(cfg, p_list, eps_list, float(exp["ceiling"]), control=control)
        if xi is None:
            raise ConfigError("config: missing section [kinetic] (needed by kinetic_mass)")
        cx = exp.get("control_xi", [-0.1, 0.1])
        return ex.kinetic_mass_suite(cfg, eps_list, float(_need(exp, "p")), xi,
                                     control_xi=kin.XiGrid(float(cx[0]), float(cx[1]), 16),
                                     t_bins=rc.data["kinetic"]["t_bins"])
    if name == "vanishing_viscosity":
        return ex.vanishing_viscosity_suite(cfg, float(_need(exp, "eps0")), int(_need(exp, "levels")))
    if name == "energy_identity":
        return ex.energy_identity_suite(cfg)
    if name == "weak_residual":
        if xi is None:
            raise ConfigError("config: missing section [kinetic] (needed by weak_residual)")
        return ex.weak_residual_suite(cfg, rc.test_function(), xi)
    raise ConfigError(f"verify: unknown suite {name!r}; expected one of {', '.join(SUITES)}")


def write_report(rep: ex.SuiteReport, out: Path, figures: bool = True) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(rep.to_text())
    (out / "timing.txt").write_text(f"runtime_s={rep.runtime:.3f}\n")
    written = [out / "report.txt"]
    for key, (header, rows) in rep.series.items():
        p = out / f"{key}.csv"
        io.write_csv(p, header, rows)
        written.append(p)
    if figures:
        from . import plotting

        written += plotting.render(rep, out)
    return written


def verify(name: str, rc: RunConfig, out: Path) -> int:
    rep = run_suite(name, rc)
    write_report(rep, out)
    sys.stdout.write(rep.to_text())
    print()
    for line in rep.summary_lines():
        print(line)
    print(f"verify {name}: {'PASS' if rep.passed else 'FAIL'} (report in {out})")
    return EXIT_OK if rep.passed else EXIT_FAIL

# }}}


# {{{ export-plotdata

def export_plotdata(run_dir: Path, out: Path | None = None) -> int:
    man = io.read_manifest(run_dir)
    out = out or run_dir / "plotdata"
    out.mkdir(parents=True, exist_ok=True)
    files = man["files"]
    paths = sorted({int(f.split("/")[-1][4:9]) for f in files})
    observables = list(man["ledgers"]) + [f"lp{p:g}" for p in man["p_list"]]
    if man.get("kinetic"):
        observables.append("kinetic_measure")
    for obs in observables:
        header, rows = None, []
        for pid in paths:
            p = run_dir / "ledgers" / f"path{pid:05d}_{obs}.csv"
            if not p.is_file():
                continue
            h, body = io.read_csv(p)
            header = ["path"] + h
            rows += [[pid] + r for r in body]
        if header is not None:
            io.write_csv(out / f"{obs}.csv", header, rows)
    snaps = sorted(f for f in files if f.startswith("snapshots/"))
    if snaps:
        rows = []
        for f in snaps:
            t, u = io.read_snapshot(run_dir / f)
            pid = int(f.split("/")[-1][4:9])
            for idx in np.ndindex(u.shape):
                rows.append([pid, repr(t), *idx, repr(float(u[idx]))])
        dim = np.ndim(u)
        io.write_csv(out / "snapshots.csv", ["path", "t"] + [f"i{l + 1}" for l in range(dim)] + ["u"], rows)
    print(f"export-plotdata: wrote tidy CSVs to {out}")
    return EXIT_OK

# }}}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sscl", description="Stochastic conservation laws on compact manifolds.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--paths", type=int, help="override the path count")
        p.add_argument("--out", help="output directory (default: out_dir from the config)")

    common(sub.add_parser("simulate", help="run an ensemble and write snapshots, ledgers and a manifest"))
    v = sub.add_parser("verify", help="run a verification suite")
    v.add_argument("suite", choices=SUITES)
    common(v)
    e = sub.add_parser("export-plotdata", help="tidy CSVs from a simulate output directory")
    e.add_argument("run_dir")
    e.add_argument("--out", help="destination (default: RUN_DIR/plotdata)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "export-plotdata":
            return export_plotdata(Path(args.run_dir), Path(args.out) if args.out else None)
        rc = _load(args)
        out = Path(rc.data["out_dir"])
        if args.cmd == "simulate":
            return simulate(rc, out)
        return verify(args.suite, rc, out if args.out else out / f"verify_{args.suite}")
    except (ConfigError, ex.PreconditionError) as e:
        _err(str(e))
        return EXIT_CONFIG
    except FileNotFoundError as e:
        _err(str(e))
        return EXIT_CONFIG
    except ValueError as e:
        # library validation errors surfacing at run time (e.g. dt above the CFL limit)
        _err(str(e))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
