"""Command-line front end.

Every subcommand reads an :class:`~chemcompass.config.ExperimentConfig`,
computes one or more :class:`ResultTable` objects and writes them as CSV
files into the output directory.  Each file starts with ``#`` lines holding
the tool version, the configuration hash, the wall time and the full
resolved configuration (``# config| `` lines, valid TOML once the prefix is
stripped).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import HEADER_CONFIG_PREFIX, ConfigError, ControlConfig, ExperimentConfig, load_config
from .model import FieldDirection, RadicalPairModel
from .optimize import ControlConstraints, OptimizerOptions, optimize_control, optimize_hyperfine
from .sensitivity import (
    YieldEvaluator,
    analytic_applicable,
    angular_response,
    parallel_map,
    theta_grid,
    with_parameter,
)
from .dynamics import propagate, singlet_yields

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COMPUTE = 3

JOBS_ENV = "CHEMCOMPASS_JOBS"


@dataclass
class ResultTable:
    """Rectangular numeric table with a metadata header."""

    name: str
    columns: tuple
    rows: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = tuple(self.columns)
        self.rows = [tuple(float(x) for x in r) for r in self.rows]
        for i, r in enumerate(self.rows):
            if len(r) != len(self.columns):
                raise ValueError(f"row {i} has {len(r)} values, expected {len(self.columns)}")

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([r[j] for r in self.rows])

    def body(self, precision: int = 17) -> str:
        """Column line plus data rows, without the metadata header."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([format(x, f".{precision}g") for x in r])
        return buf.getvalue()

    def header(self, config: ExperimentConfig | None = None) -> str:
        lines = [f"chemcompass {__version__}", f"table: {self.name}"]
        if config is not None:
            lines.append(f"config_sha256: {config.digest()}")
        for key, value in self.metadata.items():
            lines.append(f"{key}: {value}")
        out = "".join(f"# {line}\n" for line in lines)
        if config is not None:
            out += "".join(HEADER_CONFIG_PREFIX + line + "\n" for line in config.to_toml().splitlines())
        return out

    def to_csv(self, path, config: ExperimentConfig | None = None, precision: int = 17) -> Path:
        path = Path(path)
        path.write_text(self.header(config) + self.body(precision))
        return path


def read_table(path) -> ResultTable:
    """Load a table written by :meth:`ResultTable.to_csv` (metadata is dropped)."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    columns = next(reader)
    return ResultTable(Path(path).stem, columns, [[float(x) for x in r] for r in reader])


def table_body(path) -> str:
    with open(path) as fh:
        return "".join(ln for ln in fh if not ln.startswith("#"))


# --------------------------------------------------------------------------
# parallel sweep


class _Row:
    def __init__(self, evaluator):
        self.evaluator = evaluator

    def __call__(self, point):
        return tuple(float(v) for v in self.evaluator(point))


def parallel_sweep(points, evaluator, columns, jobs: int | None = 1, name: str = "sweep") -> ResultTable:
    """Evaluate independent points, possibly across processes.

    Each row is the point (a number or a tuple of numbers) followed by the
    values returned by ``evaluator(point)``; ``columns`` names all of them.
    Rows follow input order whatever the number of jobs.  A failing point
    becomes a row of NaN values and its message is kept in the metadata.
    """
    points = list(points)
    rows, errors = [], []
    n_point = None
    for i, (p, (ok, out)) in enumerate(zip(points, parallel_map(_Row(evaluator), points, jobs))):
        head = tuple(p) if isinstance(p, (tuple, list)) else (p,)
        n_point = len(head) if n_point is None else n_point
        if ok:
            rows.append(head + out)
        else:
            rows.append(head + (math.nan,) * (len(columns) - len(head)))
            errors.append(f"row {i} {head}: {out}")
    meta = {"failed_points": len(errors)}
    for j, msg in enumerate(errors):
        meta[f"error[{j}]"] = msg
    return ResultTable(name, columns, rows, meta)


@dataclass(frozen=True)
class ResponsePoint:
    """Sensitivity of ``model`` after setting the named parameters to the point."""

    model: RadicalPairModel
    parameters: tuple
    grid: int
    full_range: bool
    method: str = "auto"

    def __call__(self, point):
        values = point if isinstance(point, (tuple, list)) else (point,)
        m = self.model
        for name, v in zip(self.parameters, values):
            m = with_parameter(m, name, float(v))
        method = self.method
        if method == "analytic" and not analytic_applicable(m):
            method = "resolvent"
        r = angular_response(YieldEvaluator(m, method), self.grid, self.full_range)
        return r.sensitivity, r.theta_max, r.theta_min, r.phi_max, r.phi_min


_RESPONSE_COLUMNS = ("D_S", "theta_max", "theta_min", "phi_S_max", "phi_S_min")


@dataclass(frozen=True)
class LifetimePoint:
    """Hyperfine-optimized D_S at one (B_uT, tau_us) pair."""

    model: RadicalPairModel
    grid: int
    options: OptimizerOptions

    def __call__(self, point):
        b_uT, tau = point
        m = replace(self.model, B_uT=float(b_uT), k=1.0 / float(tau))
        rep = optimize_hyperfine(m, 1, "axial", options=self.options, grid_size=self.grid)
        return rep.metadata["nuclei"][0].hyperfine.zz, rep.best_value


# --------------------------------------------------------------------------
# commands


def _jobs(cfg: ExperimentConfig) -> int:
    return cfg.run.jobs


def _full(cfg: ExperimentConfig, model: RadicalPairModel) -> bool:
    return cfg.run.full_theta or model.dephasing.active


def _options(opt, seed: int) -> OptimizerOptions:
    return OptimizerOptions(max_evaluations=opt.max_evaluations, initial_step=opt.initial_step,
                            restarts=opt.restarts, jitter=opt.jitter, seed=seed)


def cmd_yield(cfg: ExperimentConfig) -> list:
    """Phi_S(theta) by the resolvent and, when it applies, the closed form."""
    model = cfg.model.build()
    thetas = theta_grid(cfg.run.grid, _full(cfg, model))
    resolvent = singlet_yields(model, thetas)
    if analytic_applicable(model):
        closed = YieldEvaluator(model, "analytic").many(thetas)
    else:
        closed = np.full_like(thetas, math.nan)
    diff = np.abs(closed - resolvent)
    meta = {
        "D_S_resolvent": format(float(resolvent.max() - resolvent.min()), ".17g"),
        "max_abs_diff": format(float(np.nanmax(diff)), ".17g") if np.any(np.isfinite(diff)) else "nan",
    }
    rows = zip(thetas, resolvent, closed, diff)
    return [ResultTable("yield", ("theta", "phi_S_resolvent", "phi_S_analytic", "abs_diff"), rows, meta)]


def cmd_fig1(cfg: ExperimentConfig) -> list:
    """D_S versus a/B, with optional (a/B, B) grid and lifetime table."""
    f = cfg.run.fig1
    model = cfg.model.build()
    full = _full(cfg, model)
    ratios = np.geomspace(f.ratio_min, f.ratio_max, f.points)
    point = ResponsePoint(model, ("a_over_B",), cfg.run.grid, full, cfg.run.method)
    scan = parallel_sweep(ratios, point, ("a_over_B",) + _RESPONSE_COLUMNS, _jobs(cfg), "fig1")
    scan.metadata["B_uT"] = model.B_uT
    scan.metadata["k_per_us"] = model.k
    tables = [scan]
    if f.contour:
        pts = [(r, b) for b in f.contour_B_uT for r in f.contour_ratios]
        cpoint = ResponsePoint(model, ("B", "a_over_B"), cfg.run.grid, full, cfg.run.method)
        # parameters are applied in order: field first, then the ratio to it
        pts_bf = [(b, r) for r, b in pts]
        t = parallel_sweep(pts_bf, cpoint, ("B_uT", "a_over_B") + _RESPONSE_COLUMNS, _jobs(cfg),
                           "fig1_contour")
        tables.append(t)
    if f.lifetimes_us:
        pts = [(f.lifetime_B_uT, tau) for tau in f.lifetimes_us]
        lp = LifetimePoint(model, cfg.run.optimize.grid, _options(cfg.run.optimize.optimizer, cfg.run.seed))
        tables.append(parallel_sweep(pts, lp, ("B_uT", "tau_us", "a_opt", "D_S"), _jobs(cfg),
                                     "fig1_lifetime"))
    return tables


def _constraints(c: ControlConfig) -> ControlConstraints:
    return ControlConstraints(c_max=c.c_max_uT, omega_max=c.omega_max, duration=c.duration_us,
                              polar_offset=c.polar_offset)


def _run_control(cfg: ExperimentConfig, c: ControlConfig, model: RadicalPairModel):
    return optimize_control(model, c.template, c.components, _constraints(c),
                            _options(c.optimizer, cfg.run.seed), n_theta=c.n_theta, full_range=True,
                            n_starts=c.n_starts, n_polish=c.n_polish)


def _control_meta(rep) -> dict:
    ctrl = rep.metadata["control"]
    meta = {
        "template": rep.metadata["template"],
        "converged": str(rep.converged).lower(),
        "n_evaluations": rep.n_evaluations,
        "D_S_uncontrolled": format(rep.metadata["baseline_sensitivity"], ".17g"),
        "D_S_controlled": format(rep.metadata["response"].sensitivity, ".17g"),
        "constraint_violation": format(rep.metadata.get("violation", 0.0), ".3g"),
        "control_max_abs_uT": format(ctrl.max_abs(), ".17g"),
        "control_duration_us": format(ctrl.duration, ".17g"),
    }
    if hasattr(ctrl, "terms"):
        meta["control_terms"] = [tuple(float(x) for x in t) for t in ctrl.terms]
    else:
        meta["control_times"] = list(ctrl.times)
        meta["control_amplitudes"] = list(ctrl.amplitudes)
    return meta


def _trace_table(rep, name: str) -> ResultTable:
    """Objective value (minimized, penalty included) at every evaluation."""
    return ResultTable(name, ("evaluation", "objective"), [(i, v) for i, v in enumerate(rep.trace, 1)], {})


def cmd_fig2(cfg: ExperimentConfig) -> list:
    """Optimized control: angular response and f_S(t) traces with and without it."""
    f = cfg.run.fig2
    model = cfg.model.build()
    rep = _run_control(cfg, f.control, model)
    if not rep.converged:
        log.warning("control optimization did not converge within %d evaluations", rep.n_evaluations)
    meta = _control_meta(rep)
    base, ctrl_resp = rep.metadata["baseline"], rep.metadata["response"]
    yield_rows = zip(base.thetas, base.values, ctrl_resp.values)
    tables = [ResultTable("fig2", ("theta", "phi_S_uncontrolled", "phi_S_controlled"), yield_rows, meta)]

    ctrl = rep.metadata["control"]
    t_end = f.trace_t_end_us or 14.0 / model.k
    cols, series = ["t_us"], []
    for label, theta in (("theta0", 0.0), ("theta90", math.pi / 2)):
        d = FieldDirection(theta)
        for tag, c in (("uncontrolled", None), ("controlled", None if ctrl.is_zero else ctrl)):
            res = propagate(model, d, c, t_end=t_end, sample_dt=f.trace_dt_us)
            cols.append(f"f_S_{tag}_{label}")
            series.append(res.singlet)
    times = res.times
    tables.append(ResultTable("fig2_traces", cols, zip(times, *series), {"trace_dt_us": f.trace_dt_us}))
    tables.append(ResultTable("fig2_control", ("t_us", "C_uT"), zip(times, ctrl.value(times)), {}))
    tables.append(_trace_table(rep, "fig2_optimizer_trace"))
    return tables, rep


def _fig3_tables(cfg: ExperimentConfig) -> list:
    f = cfg.run.fig3
    model = cfg.model.build()
    gammas = np.linspace(f.gamma_min, f.gamma_max, f.points)
    pts = [(d, g) for d in f.d_values for g in gammas]
    point = ResponsePoint(model, ("d", "gamma"), cfg.run.grid, True, "auto")
    scan = parallel_sweep(pts, point, ("d", "gamma") + _RESPONSE_COLUMNS, _jobs(cfg), "fig3")
    scan.metadata["a_rad_per_us"] = model.max_coupling
    thetas = theta_grid(cfg.run.grid, True)
    cols, curves = ["theta"], []
    for g in f.curve_gammas:
        m = model.with_dephasing(g, f.curve_d)
        cols.append(f"phi_S_gamma_{g:g}")
        curves.append(singlet_yields(m, thetas))
    curve = ResultTable("fig3_curves", cols, zip(thetas, *curves), {"d": f.curve_d})
    return [scan, curve]


def cmd_fig3(cfg: ExperimentConfig) -> list:
    """D_S versus dephasing rate for several correlations d, plus Phi_S(theta) curves."""
    return _fig3_tables(cfg)


def _model_snippet(cfg: ExperimentConfig, best_model: RadicalPairModel, tensor_form: str) -> str:
    data = cfg.to_dict()
    nuclei = []
    for n in best_model.nuclei:
        t = n.hyperfine
        entry = {"spin": n.spin, "electron": t.electron}
        if tensor_form == "axial":
            entry["axial"] = t.zz
        else:
            entry["diagonal"] = [float(x) for x in np.diag(t.array)]
        nuclei.append(entry)
    data["model"]["nuclei"] = nuclei
    return ExperimentConfig.model_validate(data).to_toml()


def cmd_optimize(cfg: ExperimentConfig):
    """Optimize hyperfine tensors or a control field; returns (tables, report, snippet)."""
    o = cfg.run.optimize
    model = cfg.model.build()
    if o.target == "control":
        rep = _run_control(cfg, o.control, model)
        meta = _control_meta(rep)
        resp = rep.metadata["response"]
        table = ResultTable("optimize", ("theta", "phi_S_uncontrolled", "phi_S_controlled"),
                            zip(resp.thetas, rep.metadata["baseline"].values, resp.values), meta)
        ctrl = rep.metadata["control"]
        if hasattr(ctrl, "terms"):
            snippet = "[control]\ntemplate = \"harmonic\"\nterms = [" + ", ".join(
                "[" + ", ".join(format(x, ".17g") for x in t) + "]" for t in ctrl.terms) + "]\n"
        else:
            snippet = ("[control]\ntemplate = \"piecewise\"\ntimes = ["
                       + ", ".join(format(x, ".17g") for x in ctrl.times) + "]\namplitudes = ["
                       + ", ".join(format(x, ".17g") for x in ctrl.amplitudes) + "]\n")
        snippet += f"duration_us = {ctrl.duration!r}\ndirection = {list(ctrl.direction)!r}\n"
    else:
        bounds = None
        if o.lower is not None or o.upper is not None:
            if o.lower is None or o.upper is None:
                raise ConfigError("run.optimize needs both lower and upper bounds")
            bounds = (o.lower, o.upper)
        rep = optimize_hyperfine(model, o.n_nuclei, o.tensor_form, bounds,
                                 _options(o.optimizer, cfg.run.seed), grid_size=o.grid)
        resp = rep.metadata["response"]
        meta = {
            "tensor_form": o.tensor_form,
            "n_nuclei": o.n_nuclei,
            "converged": str(rep.converged).lower(),
            "n_evaluations": rep.n_evaluations,
            "D_S": format(resp.sensitivity, ".17g"),
            "best_params": [float(x) for x in rep.best_params],
        }
        table = ResultTable("optimize", ("theta", "phi_S"), resp.rows(), meta)
        snippet = _model_snippet(cfg, rep.metadata["model"], o.tensor_form)
    return [table, _trace_table(rep, "optimize_trace")], rep, snippet


def cmd_sweep(cfg: ExperimentConfig) -> list:
    """D_S over one model parameter."""
    s = cfg.run.sweep
    model = cfg.model.build()
    full = _full(cfg, model) or s.parameter == "gamma"
    point = ResponsePoint(model, (s.parameter,), cfg.run.grid, full, cfg.run.method)
    return [parallel_sweep(s.resolved_values(), point, (s.parameter,) + _RESPONSE_COLUMNS,
                           _jobs(cfg), "sweep")]


# --------------------------------------------------------------------------
# entry point

COMMANDS = ("yield", "fig1", "fig2", "fig3", "dephasing-scan", "optimize", "sweep")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chemcompass", description="Radical-pair compass simulations.")
    p.add_argument("--version", action="version", version=f"chemcompass {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="TOML configuration file (defaults if omitted)")
        sp.add_argument("--out", type=str, help="output directory (overrides output.dir)")
        sp.add_argument("--jobs", type=int, help=f"worker processes (overrides ${JOBS_ENV} and run.jobs)")
        sp.add_argument("--seed", type=int, help="optimizer seed (overrides run.seed)")
        sp.add_argument("--grid", type=int, help="number of theta grid points (overrides run.grid)")
        sp.add_argument("--full-theta", action="store_true", help="sample theta over [0, pi]")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> tuple:
    """Merge file, environment and flags; returns (config, jobs source)."""
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    jobs, source = None, "config"
    env = os.environ.get(JOBS_ENV)
    if env:
        try:
            jobs, source = int(env), f"environment {JOBS_ENV}"
        except ValueError:
            raise ConfigError(f"{JOBS_ENV} must be an integer, got {env!r}") from None
    if args.jobs is not None:
        jobs, source = args.jobs, "--jobs"
    cfg = cfg.with_overrides(out=args.out, jobs=jobs, seed=args.seed, grid=args.grid,
                             full_theta=True if args.full_theta else None)
    return cfg, source


def run(cfg: ExperimentConfig, command: str, jobs_source: str = "config") -> list:
    """Run one subcommand and write its files; returns the written paths."""
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    report, snippet = None, None
    if command == "yield":
        tables = cmd_yield(cfg)
    elif command == "fig1":
        tables = cmd_fig1(cfg)
    elif command == "fig2":
        tables, report = cmd_fig2(cfg)
    elif command in ("fig3", "dephasing-scan"):
        tables = cmd_fig3(cfg)
    elif command == "optimize":
        tables, report, snippet = cmd_optimize(cfg)
    elif command == "sweep":
        tables = cmd_sweep(cfg)
    else:
        raise ValueError(f"unknown command {command!r}")
    wall = time.perf_counter() - start
    paths = []
    for t in tables:
        t.metadata = {"command": command, "jobs": f"{cfg.run.jobs} ({jobs_source})",
                      "wall_time_s": f"{wall:.3f}", **t.metadata}
        paths.append(t.to_csv(out / f"{t.name}.csv", cfg, cfg.output.precision))
        failed = t.metadata.get("failed_points", 0)
        if failed:
            log.warning("%s: %d point(s) failed; see the file header", t.name, failed)
    if report is not None:
        path = out / f"{tables[0].name}_report.txt"
        path.write_text(report.to_text())
        paths.append(path)
    if snippet is not None:
        path = out / f"{tables[0].name}_best.toml"
        path.write_text(snippet)
        paths.append(path)
    return paths


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, source = resolve_config(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        paths = run(cfg, args.command, source)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:  # any numerical failure ends the run with a distinct status
        log.debug("computation failed", exc_info=True)
        print(f"computation failed: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_COMPUTE
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
