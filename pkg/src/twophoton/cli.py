"""Command line runner: figure scenarios, parameter sweeps, detector operators.

    twophoton run <scenario|config.yaml> [--out DIR]
    twophoton sweep <config.yaml> [--out DIR]
    twophoton povm <config.yaml> [--out DIR]
    twophoton validate <config.yaml|scenario>

Exit codes: 0 ok, 2 configuration error (the message names the field), 3
numerical failure. Worker count for sweeps comes from TWOPHOTON_WORKERS
(default: the CPUs available to this process).

Output CSV columns
------------------
steady.csv      engine,P0,P2,P4,P2_plus_P4
trajectory_<engine>.csv   t,P0,P1,P2,P3,P4
bridge.csv      scenario,samples,<one column per hierarchy label>,max
flux.csv        identity,residual
table.csv / sweep.csv     one column per axis, then one per quantity, then error
spectrum.csv    index,eigenvalue
state_<k>.csv   t,amplitude

Numbers are written with 12 significant digits, so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analytic, bridge, gdm, liouvillian, povm, scenarios
from ._ode import IntegrationError
from .scenarios import ConfigError, Scenario

log = logging.getLogger(__name__)

QUANTITIES = ("p_alpha", "p_beta", "p_overlap", "rho2424_inf", "F2_inf", "F4_inf")
NUMERICAL_ERRORS = (
    IntegrationError,
    analytic.PrincipalValueError,
    analytic.SpectralGridError,
    bridge.BridgeError,
    povm.PovmError,
    ArithmeticError,
)
ENGINE_AGREEMENT = 1e-3
BRIDGE_TOL = 1e-5
STEADY_COLUMNS = ("P0", "P2", "P4", "P2_plus_P4")


def fmt(x) -> str:
    if isinstance(x, str):
        return x
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{float(x):.12g}"


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def workers() -> int:
    env = os.environ.get("TWOPHOTON_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError("TWOPHOTON_WORKERS", f"expected an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("TWOPHOTON_WORKERS", "must be at least 1")
        return n
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


# ---------------------------------------------------------------- run


@dataclass
class RunResult:
    scenario: Scenario
    steady: dict[str, dict[str, float]] = field(default_factory=dict)
    trajectories: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    bridge: bridge.CrossCheck | None = None
    flux: liouvillian.FluxReport | None = None
    table: tuple[list[str], list[list]] | None = None

    @property
    def disagreement(self) -> float:
        engines = list(self.steady.values())
        if len(engines) < 2:
            return 0.0
        return max(abs(a[k] - b[k]) for a, b in itertools.combinations(engines, 2) for k in STEADY_COLUMNS)


def _steady_from_pops(p: np.ndarray) -> dict[str, float]:
    return {"P0": float(p[0]), "P2": float(p[2]), "P4": float(p[4]), "P2_plus_P4": float(p[2] + p[4])}


def analytic_steady(sc: Scenario) -> dict[str, float]:
    """Steady populations from the frequency-domain formulas (excited levels empty)."""
    pa, pb = sc.pulses
    if pa is None:
        return {"P0": 1.0, "P2": 0.0, "P4": 0.0, "P2_plus_P4": 0.0}
    A = analytic.p_alpha(pa, sc.params)
    both = 0.0 if pb is None else analytic.two_photon_spectral(pa, pb, sc.params).rho_2424
    return {"P0": 1.0 - A, "P2": A - both, "P4": both, "P2_plus_P4": A}


def _engines(sc: Scenario) -> list[str]:
    return ["gdm", "liouvillian", "analytic"] if sc.engine == "all" else [sc.engine]


def run_scenario(sc: Scenario, table: bool = True) -> RunResult:
    res = RunResult(sc)
    t0, T = gdm.steady_window(sc.params, sc.pulses)
    dt = sc.dt or gdm.default_dt(sc.params, sc.pulses)
    for eng in _engines(sc):
        if eng == "analytic":
            res.steady[eng] = analytic_steady(sc)
            continue
        if eng == "gdm":
            tr = gdm.integrate(t0, T, dt, sc.pulses, sc.params, method=sc.method if sc.method != "expm" else "rk4")
        else:
            tr = liouvillian.integrate(t0, T, dt, sc.pulses, sc.params, method=sc.method)
            res.flux = liouvillian.flux_balance_report(tr)
        pops = tr.populations()
        res.trajectories[eng] = (tr.times, pops)
        res.steady[eng] = _steady_from_pops(pops[-1])
    if sc.engine == "all":
        method = "rk4" if sc.method == "expm" else sc.method
        res.bridge = bridge.cross_validate(sc.pulses, sc.params, t0, T, dt, sc.name, method)
    if table and sc.name in FIGURE_TABLES:
        res.table = FIGURE_TABLES[sc.name]()
    return res


def _figure_sweep(name: str, axes: dict[str, Sequence], quantities: Sequence[str]):
    base = scenarios.named_config(name)
    header, rows = sweep_table(base, axes, quantities)
    return header, rows


def _fig5_table():
    header, rows = _figure_sweep("fig5", {"pulse_beta.delay": scenarios.FIG5_DELAYS}, ("F2_inf", "F4_inf"))
    # P2 + P4 is the probability to absorb alpha, 10/11 for every delay
    header = header[:-1] + ["P2_plus_P4", "error"]
    rows = [r[:-1] + [r[1] + r[2] if not r[-1] else float("nan"), r[-1]] for r in rows]
    return header, rows


FIGURE_TABLES = {
    "fig5": _fig5_table,
    "fig6_7": lambda: _figure_sweep("fig6_7", {"pulse_beta.kappa": scenarios.FIG6_7_KAPPAS}, ("F2_inf", "F4_inf")),
    "fig8": lambda: _figure_sweep(
        "fig8",
        {"pulse_alpha.sigma": scenarios.FIG8_SIGMAS, "pulse_beta.sigma": scenarios.FIG8_SIGMAS, "pulse_beta.delay": scenarios.FIG8_DELAYS},
        ("rho2424_inf",),
    ),
    "fig9": lambda: _figure_sweep(
        "fig9",
        {"pulse_alpha.sigma": scenarios.FIG9_SIGMAS, "pulse_beta.width": scenarios.FIG9_WIDTHS, "pulse_beta.delay": scenarios.FIG9_DELAYS},
        ("rho2424_inf",),
    ),
}


def _subsample(times: np.ndarray, pops: np.ndarray, max_rows: int = 2000):
    step = max(1, int(math.ceil(times.size / max_rows)))
    idx = np.unique(np.r_[np.arange(0, times.size, step), times.size - 1])
    return times[idx], pops[idx]


GNUPLOT_TRAJECTORY = """\
set datafile separator ','
set key autotitle columnhead
set xlabel 't'
set ylabel 'population'
plot '{file}' using 1:2 with lines title 'F0', \\
     '' using 1:4 with lines title 'F2', \\
     '' using 1:6 with lines title 'F4'
"""

GNUPLOT_TABLE = """\
set datafile separator ','
set key autotitle columnhead
set xlabel '{x}'
plot '{file}' using 1:{col} with linespoints
"""


def write_run(res: RunResult, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    rows = [[eng] + [v[k] for k in STEADY_COLUMNS] for eng, v in res.steady.items()]
    write_csv(out / "steady.csv", ["engine", *STEADY_COLUMNS], rows)
    written.append(out / "steady.csv")
    for eng, (t, pops) in res.trajectories.items():
        t, pops = _subsample(t, pops)
        path = out / f"trajectory_{eng}.csv"
        write_csv(path, ["t", "P0", "P1", "P2", "P3", "P4"], np.column_stack([t, pops]).tolist())
        (out / f"trajectory_{eng}.gp").write_text(GNUPLOT_TRAJECTORY.format(file=path.name))
        written += [path, out / f"trajectory_{eng}.gp"]
    if res.bridge is not None:
        bridge.write_report([res.bridge], out / "bridge.csv")
        written.append(out / "bridge.csv")
    if res.flux is not None:
        write_csv(out / "flux.csv", ["identity", "residual"], sorted(res.flux.residuals.items()))
        written.append(out / "flux.csv")
    if res.table is not None:
        header, rows = res.table
        write_csv(out / "table.csv", header, rows)
        n_axes = header.index("error") - 1
        (out / "table.gp").write_text(GNUPLOT_TABLE.format(x=header[0], file="table.csv", col=n_axes + 1))
        written += [out / "table.csv", out / "table.gp"]
    if res.scenario.notes:
        (out / "notes.txt").write_text("\n".join(res.scenario.notes) + "\n")
        written.append(out / "notes.txt")
    return written


def summarize(res: RunResult) -> str:
    lines = [f"scenario {res.scenario.name}"]
    for eng, v in res.steady.items():
        lines.append(f"  {eng:12s} " + "  ".join(f"{k}={v[k]:.6f}" for k in STEADY_COLUMNS))
    if len(res.steady) > 1:
        flag = "ok" if res.disagreement < ENGINE_AGREEMENT else "EXCEEDS 1e-3"
        lines.append(f"  engine disagreement {res.disagreement:.3e} ({flag})")
    if res.bridge is not None:
        lines.append(f"  bridge max deviation {res.bridge.max_deviation:.3e}")
    if res.flux is not None:
        worst = max(abs(v) for v in res.flux.residuals.values())
        lines.append(f"  flux residual max {worst:.3e}" + ("" if res.flux.ok else f" flagged {res.flux.flagged}"))
    if res.table is not None:
        lines.append(f"  table: {len(res.table[1])} rows")
    for n in res.scenario.notes:
        lines.append(f"  note: {n}")
    return "\n".join(lines)


# ---------------------------------------------------------------- sweep


def _point_values(sc: Scenario, quantities: Sequence[str], engine: str) -> dict[str, float]:
    pa, pb = sc.pulses
    if pa is None or pb is None:
        raise ConfigError("pulse_beta" if pb is None else "pulse_alpha", "sweeps need both pulses")
    out: dict[str, float] = {}
    need_pair = any(q in quantities for q in ("p_overlap", "rho2424_inf", "F2_inf", "F4_inf"))
    spec = analytic.two_photon_spectral(pa, pb, sc.params) if need_pair or "p_beta" in quantities else None
    if engine == "analytic":
        both = spec.rho_2424 if spec else 0.0
        pa_val = spec.p_alpha if spec else analytic.p_alpha(pa, sc.params)
        steady = {"F2_inf": pa_val - both, "F4_inf": both}
    else:
        mod = gdm if engine == "gdm" else liouvillian
        pops = mod.steady_state(sc.pulses, sc.params, dt=sc.dt).populations()[-1]
        steady = {"F2_inf": float(pops[2]), "F4_inf": float(pops[4])}
    for q in quantities:
        if q == "p_alpha":
            out[q] = spec.p_alpha if spec else analytic.p_alpha(pa, sc.params)
        elif q == "p_beta":
            out[q] = spec.p_beta
        elif q == "p_overlap":
            out[q] = spec.p_overlap
        elif q == "rho2424_inf":
            out[q] = spec.rho_2424 if engine == "analytic" else steady["F4_inf"]
        else:
            out[q] = steady[q]
    return out


def _evaluate_point(args):
    config, quantities, engine = args
    try:
        sc = scenarios.parse_scenario(config)
        vals = _point_values(sc, quantities, engine)
        return [vals[q] for q in quantities], ""
    except (ConfigError, *NUMERICAL_ERRORS, ValueError) as exc:
        return [float("nan")] * len(quantities), f"{type(exc).__name__}: {exc}"


def sweep_table(base: dict, axes: dict[str, Sequence], quantities: Sequence[str], engine: str = "analytic", n_workers: int | None = None):
    """Evaluate ``quantities`` on the product grid of ``axes`` (first axis slowest).

    Rows come back in grid order whatever the worker count; a point that fails
    gets NaN values and the exception text in the ``error`` column.
    """
    if not axes:
        raise ConfigError("sweep.axes", "at least one axis is required")
    for name, values in axes.items():
        if not isinstance(values, (list, tuple)) or len(values) == 0:
            raise ConfigError(f"sweep.axes.{name}", "axis must be a nonempty list")
    bad = [q for q in quantities if q not in QUANTITIES]
    if not quantities or bad:
        raise ConfigError("sweep.quantity", f"expected some of {QUANTITIES}, got {bad or quantities!r}")
    if engine not in ("analytic", "gdm", "liouvillian"):
        raise ConfigError("sweep.engine", f"expected analytic, gdm or liouvillian, got {engine!r}")
    names = list(axes)
    grid = list(itertools.product(*(axes[n] for n in names)))
    configs = []
    for point in grid:
        cfg = base
        for n, v in zip(names, point):
            cfg = scenarios.set_path(cfg, n, v)
        configs.append(cfg)
    # schema problems in the axes are usage errors, not per-point failures
    scenarios.parse_scenario(configs[0])
    jobs = [(c, tuple(quantities), engine) for c in configs]
    n_workers = n_workers or workers()
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(n_workers, len(jobs))) as ex:
            results = list(ex.map(_evaluate_point, jobs))
    else:
        results = [_evaluate_point(j) for j in jobs]
    rows = [list(point) + vals + [err] for point, (vals, err) in zip(grid, results)]
    return names + list(quantities) + ["error"], rows


def parse_sweep(cfg: dict):
    sw = cfg.get("sweep")
    if not isinstance(sw, dict):
        raise ConfigError("sweep", "a sweep section is required")
    axes = sw.get("axes")
    if not isinstance(axes, dict) or not axes:
        raise ConfigError("sweep.axes", "at least one axis is required")
    q = sw.get("quantity", "rho2424_inf")
    quantities = [q] if isinstance(q, str) else list(q or [])
    engine = sw.get("engine", "analytic")
    base = {k: v for k, v in cfg.items() if k != "sweep"}
    return base, axes, quantities, engine


# ---------------------------------------------------------------- povm


@dataclass
class PovmResult:
    trace: float
    closed_form: float | None
    eigen: povm.Eigensystem | None
    born: float | None


def run_povm(cfg: dict) -> PovmResult:
    sec = cfg.get("povm")
    if not isinstance(sec, dict):
        raise ConfigError("povm", "a povm section is required")
    params = scenarios.parse_params(cfg.get("params"))
    order = sec.get("order", 1)
    if order not in (1, 2):
        raise ConfigError("povm.order", "must be 1 or 2")
    t0 = scenarios._number(sec, "t0", "povm", 0.0)
    T = scenarios._number(sec, "T", "povm")
    n = sec.get("n")
    if n is not None and (not isinstance(n, int) or isinstance(n, bool) or n < 1):
        raise ConfigError("povm.n", "must be a positive integer")
    try:
        grid = povm.TimeGrid.for_params(t0, T, params, n)
        grid.check(params)
    except ValueError as exc:
        raise ConfigError("povm", str(exc)) from None
    op = povm.build_pi(order, grid, params)
    eig = povm.eigendecompose(op) if op.matrix is not None else None
    born = None
    pa = scenarios.parse_pulse(cfg.get("pulse_alpha"), "pulse_alpha")
    if pa is not None:
        pb = scenarios.parse_pulse(cfg.get("pulse_beta"), "pulse_beta")
        if order == 2 and pb is None:
            raise ConfigError("pulse_beta", "the two-photon operator needs both pulses")
        born = povm.born_probability(op, pa, pb if order == 2 else None)
    closed = povm.trace_closed_form(params, T - t0, exact=True) if order == 1 else None
    return PovmResult(op.trace(), closed, eig, born)


def write_povm(res: PovmResult, out: Path, n_states: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    if res.eigen is not None:
        povm.write_spectrum(res.eigen, out / "spectrum.csv")
        if res.eigen.order == 1:
            for k in range(min(n_states, res.eigen.values.size)):
                povm.write_state(res.eigen, out / f"state_{k}.csv", k)


# ---------------------------------------------------------------- validate


def validate_scenario(sc: Scenario):
    t0, T = gdm.steady_window(sc.params, sc.pulses)
    dt = sc.dt or gdm.default_dt(sc.params, sc.pulses)
    method = "rk4" if sc.method == "expm" else sc.method
    check = bridge.cross_validate(sc.pulses, sc.params, t0, T, dt, sc.name, method)
    flux = liouvillian.flux_balance_report(liouvillian.integrate(t0, T, dt, sc.pulses, sc.params, method=method))
    return check, flux


# ---------------------------------------------------------------- entry point


def _load(target: str) -> tuple[dict, Path | None]:
    if target in scenarios.NAMED:
        return scenarios.named_config(target), None
    p = Path(target)
    if not p.exists():
        raise ConfigError("scenario", f"{target!r} is neither a built-in scenario ({', '.join(scenarios.NAMED)}) nor a file")
    return scenarios.load_config(p), p.parent


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twophoton", description="Sequential two-photon detection by a five-level molecule.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a built-in scenario or a config file")
    r.add_argument("target")
    r.add_argument("--out", type=Path)
    r.add_argument("--no-table", action="store_true", help="skip the figure sweep table")
    s = sub.add_parser("sweep", help="parameter sweep through the frequency-domain formulas")
    s.add_argument("target")
    s.add_argument("--out", type=Path)
    p = sub.add_parser("povm", help="assemble and diagonalize a detector operator")
    p.add_argument("target")
    p.add_argument("--out", type=Path)
    p.add_argument("--states", type=int, default=3, help="number of eigenstates to dump")
    v = sub.add_parser("validate", help="cross-check the two density-matrix formalisms")
    v.add_argument("target")
    v.add_argument("--tol", type=float, default=BRIDGE_TOL)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, base = _load(args.target)
        if args.command == "run":
            sc = scenarios.parse_scenario(cfg, base)
            res = run_scenario(sc, table=not args.no_table)
            print(summarize(res))
            out = args.out or Path("out") / sc.name
            write_run(res, out)
            print(f"  written to {out}")
            return 0
        if args.command == "sweep":
            base_cfg, axes, quantities, engine = parse_sweep(cfg)
            header, rows = sweep_table(base_cfg, axes, quantities, engine)
            out = args.out or Path("out") / str(cfg.get("name", "sweep"))
            out.mkdir(parents=True, exist_ok=True)
            write_csv(out / "sweep.csv", header, rows)
            n_axes = len(axes)
            (out / "sweep.gp").write_text(GNUPLOT_TABLE.format(x=header[0], file="sweep.csv", col=n_axes + 1))
            failed = sum(1 for r in rows if r[-1])
            print(f"sweep: {len(rows)} points, {failed} failed, written to {out / 'sweep.csv'}")
            return 0
        if args.command == "povm":
            res = run_povm(cfg)
            msg = f"trace {res.trace:.8g}"
            if res.closed_form is not None:
                msg += f" (closed form {res.closed_form:.8g})"
            if res.eigen is not None:
                msg += f", largest eigenvalue {res.eigen.values[0]:.8g}"
            if res.born is not None:
                msg += f", detection probability {res.born:.8g}"
            print(msg)
            if args.out:
                write_povm(res, args.out, args.states)
                print(f"written to {args.out}")
            return 0
        if args.command == "validate":
            sc = scenarios.parse_scenario(cfg, base)
            check, flux = validate_scenario(sc)
            worst = max(abs(v) for v in flux.residuals.values())
            print(f"{sc.name}: bridge max deviation {check.max_deviation:.3e}, flux residual max {worst:.3e}")
            if check.max_deviation > args.tol or not flux.ok:
                print("validation failed", file=sys.stderr)
                return 3
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
