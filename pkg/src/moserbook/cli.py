"""Command-line entry point ``moserbook``.

Every command writes ``<command>.csv`` and ``<command>.json`` (and, with
``--emit-plot``, SVG figures) into ``--output``.  Exit status is 0 when the
command's check passes, 2 when it fails and 1 on an error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .convexity import convexity_certificate, hessian_S
from .dynamics import Q_reg, angular_L_reg, sample_level_set
from .equilibria import critical_values, lagrange_points, resolve_energy
from .errors import CollisionLocus, ConfigError, MoserBookError
from .flow import (
    GEODESIC,
    Book,
    IntegratorConfig,
    Projection,
    integrate,
    return_map,
    sample_page_points,
    trajectory_records,
)
from .kepler_oracle import KeplerContext, analytic_return, circular_orbits, kepler_period
from .phase import Chart, RegState, SystemSpec, reg_to_unreg
from .sections import CutoffSpec, a4_value, auto_amplitude, connected_sum_scan, transversality_scan

COMMANDS = ("equilibria", "scan", "return-map", "orbit", "kepler-compare", "convexity", "golden")


@dataclass
class RunConfig:
    command: str
    mu: float = 0.5
    c: Optional[str] = None
    chart: str = "moon"
    delta: float = 0.4
    epsilon: float = 0.15
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = float("inf")
    max_time: float = 1e4
    projection: str = "every-step"
    t_final: float = 10.0
    n_samples: int = 100
    seed: int = 0
    output_path: Path = field(default_factory=lambda: Path("moserbook-out"))
    emit_plot: bool = False

    def system(self) -> SystemSpec:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not 0.0 < self.mu <= 1.0:
            raise ConfigError("--mu must lie in (0, 1]")
        try:
            chart = Chart(self.chart)
        except ValueError:
            raise ConfigError("--chart must be one of moon, earth, single") from None
        token = self.c
        if token is None:
            token = "auto-below-L1" if self.mu < 1.0 else "-2"
        if str(token).startswith("auto") and self.mu >= 1.0:
            raise ConfigError("energy shorthands need mu < 1")
        try:
            c = resolve_energy(token, self.mu)
        except ValueError:
            raise ConfigError(f"cannot read energy {token!r}") from None
        if not c < 0:
            raise ConfigError("--c must be negative")
        if chart is Chart.SINGLE:
            return SystemSpec(1.0, c, Chart.SINGLE)
        return SystemSpec(self.mu, c, chart)

    def cutoff(self) -> CutoffSpec:
        try:
            return CutoffSpec(self.delta, self.epsilon)
        except MoserBookError as exc:
            raise ConfigError(str(exc)) from None

    def integrator(self) -> IntegratorConfig:
        try:
            return IntegratorConfig(self.rel_tol, self.abs_tol, self.max_step, self.max_time,
                                    Projection(self.projection))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# output helpers

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    return obj


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _spec_dict(spec: SystemSpec) -> dict:
    return {"mu": spec.mu, "c": spec.c, "chart": spec.chart.value}


# --------------------------------------------------------------------------
# commands

def _equilibria(cfg: RunConfig, out: Path) -> bool:
    ls = lagrange_points(cfg.mu)
    res = ls.residuals()
    rows = [(n, *p, v, r) for n, p, v, r in zip(ls.names, ls.points, ls.values, res)]
    _write_csv(out / "equilibria.csv", ["name", "q1", "q2", "q3", "value", "residual"], rows)
    ok = bool(ls.values[0] <= -1.5)
    _write_json(out / "equilibria.json", {"mu": cfg.mu, "H_L1": ls.values[0], "H_L2": ls.values[1],
                                          "max_residual": res.max(), "H_L1_at_most_minus_three_halves": ok,
                                          "passed": ok})
    print(f"H(L1) = {ls.values[0]:.15g}  H(L2) = {ls.values[1]:.15g}")
    return ok


def _scan(cfg: RunConfig, out: Path) -> bool:
    spec = cfg.system()
    cut = cfg.cutoff()
    merged = spec.chart is not Chart.SINGLE and spec.mu < 1.0 and spec.c > critical_values(spec.mu)[0]
    if merged:
        crep = connected_sum_scan(spec, cut, cfg.n_samples, cfg.seed)
        rep, ok = crep.scan, crep.passed
        extra = {"connected_sum": True, "overlap_max": crep.overlap_max}
    else:
        rep = transversality_scan(spec, cut, cfg.n_samples, cfg.seed)
        ok = rep.passed
        extra = {"connected_sum": False}
    header, data = rep.rows()
    _write_csv(out / "scan.csv", header, data.tolist())
    _write_json(out / "scan.json", {**rep.summary(), **extra, "passed": ok})
    if cfg.emit_plot:
        from .plotting import section_scatter

        section_scatter(rep, out / "scan_section.svg")
    print(f"min normalized pairing = {rep.min_normalized:.6e} over {rep.normalized.size} samples")
    return ok


def _return_map(cfg: RunConfig, out: Path) -> bool:
    spec = cfg.system()
    icfg = cfg.integrator()
    cut = auto_amplitude(spec, cfg.cutoff(), seed=cfg.seed + 7919)
    book = Book("interpolated", cut)
    st = sample_page_points(spec, cfg.n_samples, np.random.default_rng(cfg.seed), book)
    rows, recs = [], []
    for k in range(st.xi.shape[0]):
        rec = return_map(RegState(st.xi[k], st.eta[k]), spec, cfg=icfg, book=book)
        recs.append(rec)
        rows.append([*rec.start.xi, *rec.start.eta, *rec.end.xi, *rec.end.eta, rec.return_time,
                     rec.physical_time, rec.angle_swept, rec.q_drift])
    names = [f"{p}{i}" for p in ("xi", "eta") for i in range(4)]
    header = [f"start_{n}" for n in names] + [f"end_{n}" for n in names] + [
        "return_time", "physical_time", "angle_swept", "q_drift"]
    _write_csv(out / "return-map.csv", header, rows)
    drift = max(r.q_drift for r in recs)
    swept = max(abs(r.angle_swept - 2 * np.pi) for r in recs)
    ok = drift < 1e-8 and swept < 1e-9
    _write_json(out / "return-map.json", {**_spec_dict(spec), "amplitude": cut.amplitude, "samples": len(recs),
                                          "max_return_time": max(r.return_time for r in recs),
                                          "max_q_drift": drift, "max_angle_error": swept, "passed": ok})
    if cfg.emit_plot:
        from .plotting import return_displacement

        a = np.array([np.concatenate([r.start.xi, r.start.eta]) for r in recs])
        b = np.array([np.concatenate([r.end.xi, r.end.eta]) for r in recs])
        return_displacement(a, b, out / "return-map_displacement.svg", f"mu={spec.mu:g}, c={spec.c:.6g}")
    print(f"{len(recs)} returns; max |dQ| = {drift:.3e}; max angle error = {swept:.3e}")
    return ok


def _orbit(cfg: RunConfig, out: Path) -> bool:
    spec = cfg.system()
    icfg = cfg.integrator()
    st = sample_level_set(spec, 1, np.random.default_rng(cfg.seed), near_binding_fraction=0.0)
    r0 = RegState(st.xi[0], st.eta[0])
    traj = integrate(r0, cfg.t_final, spec, icfg)
    recs = list(trajectory_records(traj, spec, cfg.cutoff()))
    with open(out / "orbit.jsonl", "w") as fh:
        for rec in recs:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    rows = [[r["s"], r["t"], *r["xi"], *r["eta"], r["Q"]] for r in recs]
    _write_csv(out / "orbit.csv", ["s", "t", "xi0", "xi1", "xi2", "xi3", "eta0", "eta1", "eta2", "eta3", "Q"], rows)
    q0 = float(Q_reg(r0, spec))
    drift = max(abs(r["Q"] - q0) for r in recs)
    ok = drift < 1e-9 * max(1.0, abs(cfg.t_final))
    _write_json(out / "orbit.json", {**_spec_dict(spec), "t_final": cfg.t_final, "steps": len(recs) - 1,
                                     "physical_time": recs[-1]["t"], "max_q_drift": drift, "passed": ok})
    if cfg.emit_plot:
        from .plotting import orbit_projection

        qs = []
        for y in traj.y:
            try:
                qs.append(reg_to_unreg(RegState.from_vector(y[:8]), spec).q)
            except CollisionLocus:
                continue
        orbit_projection(traj.y, np.array(qs), out / "orbit_projection.svg", f"mu={spec.mu:g}, c={spec.c:.6g}")
    print(f"{len(recs) - 1} steps; max |dQ| = {drift:.3e}")
    return ok


def _kepler_compare(cfg: RunConfig, out: Path) -> bool:
    try:
        c = -2.0 if cfg.c is None else float(cfg.c)
    except ValueError:
        raise ConfigError("kepler-compare needs a numeric --c") from None
    if not c < 0:
        raise ConfigError("--c must be negative")
    spec = SystemSpec(1.0, c)
    ctx = KeplerContext(c)
    icfg = cfg.integrator()
    if cfg.rel_tol == RunConfig.rel_tol and cfg.abs_tol == RunConfig.abs_tol:
        icfg = IntegratorConfig(1e-12, 1e-13, icfg.max_step, icfg.max_time, icfg.projection)
    st = sample_page_points(spec, cfg.n_samples, np.random.default_rng(cfg.seed), GEODESIC)
    rows, dev, tdev, starts, ends = [], [], [], [], []
    for k in range(st.xi.shape[0]):
        x = RegState(st.xi[k], st.eta[k])
        rec = return_map(x, spec, cfg=icfg, book=GEODESIC)
        an = analytic_return(x, ctx)
        L = float(angular_L_reg(x.xi, x.eta))
        d = float(np.max(np.abs(rec.end.as_vector() - an.as_vector())))
        dt = abs(rec.physical_time - kepler_period(c - L))
        dev.append(d)
        tdev.append(dt)
        starts.append(x.as_vector())
        ends.append(rec.end.as_vector())
        rows.append([*x.xi, *x.eta, L, rec.physical_time, kepler_period(c - L), d, dt])
    header = ["xi0", "xi1", "xi2", "xi3", "eta0", "eta1", "eta2", "eta3", "L", "return_time",
              "expected_return_time", "max_coordinate_deviation", "return_time_deviation"]
    _write_csv(out / "kepler-compare.csv", header, rows)
    ok = max(dev) < 1e-6 and max(tdev) < 1e-8
    _write_json(out / "kepler-compare.json", {"c": c, "samples": len(rows), "max_coordinate_deviation": max(dev),
                                              "max_return_time_deviation": max(tdev), "passed": ok})
    if cfg.emit_plot:
        from .plotting import deviation_histogram, return_displacement

        return_displacement(np.array(starts), np.array(ends), out / "kepler-compare_displacement.svg",
                            f"rotating Kepler, c={c:g}")
        deviation_histogram(np.array(dev), out / "kepler-compare_deviation.svg", "numerical vs analytic")
    print(f"max coordinate deviation = {max(dev):.3e}; max return-time deviation = {max(tdev):.3e}")
    return ok


def _convexity(cfg: RunConfig, out: Path) -> bool:
    spec = cfg.system()
    rep = convexity_certificate(spec, cfg.cutoff(), cfg.n_samples, cfg.seed)
    S = hessian_S(rep.states, spec)
    data = np.column_stack([rep.states.xi, rep.states.eta, S.s11, S.s12, S.s22, S.eigen_min])
    _write_csv(out / "convexity.csv", ["xi0", "xi1", "xi2", "xi3", "eta0", "eta1", "eta2", "eta3",
                                       "s11", "s12", "s22", "eigen_min"], data.tolist())
    _write_json(out / "convexity.json", rep.summary())
    print(f"min eigenvalue of S = {rep.margin:.6e} over {rep.eigen_min.size} binding states")
    return rep.passed


def _golden(cfg: RunConfig, out: Path) -> bool:
    spec = cfg.system()
    if spec.chart is Chart.SINGLE:
        raise ConfigError("golden numbers are defined for the three-body charts")
    co = circular_orbits(-1.5)
    checks = [
        ("r_dir(-3/2)", co.r_dir, 1.0, 1e-10),
        ("r_ret(-3/2)", co.r_ret, 0.25, 1e-10),
        ("p_dir(-3/2)", co.p_dir, 1.0, 1e-10),
        ("p_ret(-3/2)", co.p_ret, 2.0, 1e-10),
    ]
    mu, c, g = spec.mu, spec.c, spec.coupling
    coll = RegState(np.array([1.0, 0.0, 0.0, 0.0]), np.array([0.0, g, 0.0, 0.0]))
    ev = np.sort(np.linalg.eigvalsh(hessian_S(coll, spec).matrix()))
    want = np.sort([1.0, g**2 * (g - c - 0.5)])
    checks += [("collision eigenvalue low", ev[0], want[0], 1e-10),
               ("collision eigenvalue high", ev[1], want[1], 1e-10),
               ("A4", a4_value(spec), g - c - 0.5, 1e-12)]
    for m in (0.1, 0.3, 0.5, 0.7, 0.9, 0.999):
        h1 = critical_values(m)[0]
        checks.append((f"H(L1) at mu={m}", h1, -1.5, None))
    rows, ok = [], True
    for name, got, ref, tol in checks:
        passed = bool(got <= ref) if tol is None else bool(abs(got - ref) <= tol)
        ok &= passed
        rows.append([name, float(got), ref, "<=" if tol is None else tol, passed])
    _write_csv(out / "golden.csv", ["quantity", "value", "reference", "tolerance", "passed"], rows)
    table = []
    for cc in (-1.5, -1.75, -2.0, -2.5, -3.0):
        o = circular_orbits(cc)
        table.append([cc, o.r_dir, o.r_ret, o.p_dir, o.p_ret, kepler_period(cc)])
    _write_csv(out / "golden-kepler.csv", ["c", "r_dir", "r_ret", "p_dir", "p_ret", "T"], table)
    _write_json(out / "golden.json", {**_spec_dict(spec), "checks": [dict(zip(
        ["quantity", "value", "reference", "tolerance", "passed"], r)) for r in rows], "passed": ok})
    for r in rows:
        print(f"{'PASS' if r[4] else 'FAIL'}  {r[0]} = {float(r[1])!r}")
    return ok


_DISPATCH = {
    "equilibria": _equilibria,
    "scan": _scan,
    "return-map": _return_map,
    "orbit": _orbit,
    "kepler-compare": _kepler_compare,
    "convexity": _convexity,
    "golden": _golden,
}


def run(cfg: RunConfig) -> int:
    """Execute one command; returns the exit status."""
    try:
        if cfg.command not in _DISPATCH:
            raise ConfigError(f"unknown command {cfg.command!r}")
        if cfg.n_samples < 1:
            raise ConfigError("--samples must be positive")
        if cfg.command != "kepler-compare":
            cfg.system()
        out = Path(cfg.output_path)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        ok = _DISPATCH[cfg.command](cfg, out)
        print(f"{cfg.command}: {'pass' if ok else 'FAIL'} ({time.perf_counter() - t0:.2f} s)")
        return 0 if ok else 2
    except MoserBookError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="moserbook", description="Open books and return maps for the regularized spatial CR3BP.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--mu", type=float, default=0.5, help="mass ratio in (0, 1]")
    p.add_argument("--c", default=None, help="energy, or auto-below-L1 / auto-above-L1")
    p.add_argument("--chart", default="moon", choices=[c.value for c in Chart])
    p.add_argument("--delta", type=float, default=0.4, help="cutoff width near the collision fibre")
    p.add_argument("--epsilon", type=float, default=0.15, help="cutoff ramp length")
    p.add_argument("--rel-tol", type=float, default=1e-10)
    p.add_argument("--abs-tol", type=float, default=1e-12)
    p.add_argument("--max-step", type=float, default=float("inf"))
    p.add_argument("--max-time", type=float, default=1e4)
    p.add_argument("--projection", default="every-step", choices=[m.value for m in Projection])
    p.add_argument("--t-final", type=float, default=10.0, help="flow time for the orbit command")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", type=Path, default=Path("moserbook-out"))
    p.add_argument("--emit-plot", action="store_true")
    return p


def parse_config(argv: Optional[Sequence[str]] = None) -> RunConfig:
    a = build_parser().parse_args(argv)
    return RunConfig(command=a.command, mu=a.mu, c=a.c, chart=a.chart, delta=a.delta, epsilon=a.epsilon,
                     rel_tol=a.rel_tol, abs_tol=a.abs_tol, max_step=a.max_step, max_time=a.max_time,
                     projection=a.projection, t_final=a.t_final, n_samples=a.samples, seed=a.seed,
                     output_path=a.output, emit_plot=a.emit_plot)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
