"""Derivative-free optimization of hyperfine couplings and control fields."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import qmc

from .control import (
    DEFAULT_C_MAX_UT,
    DEFAULT_OMEGA_MAX,
    ControlField,
    HarmonicControl,
    PiecewiseControl,
    control_direction,
)
from .dynamics import CUTOFF_LIFETIMES
from .model import HyperfineTensor, NucleusSpec, RadicalPairModel
from .sensitivity import DEFAULT_GRID, YieldEvaluator, angular_response

log = logging.getLogger(__name__)

#: weight of the quadratic constraint penalty
PENALTY_WEIGHT = 1e3

REFLECT, EXPAND, CONTRACT, SHRINK = 1.0, 2.0, 0.5, 0.5


@dataclass
class OptimizerOptions:
    max_evaluations: int = 2000
    initial_step: float | tuple = 0.1
    ftol: float = 1e-10
    xtol: float = 1e-8
    restarts: int = 0
    seed: int = 1
    jitter: float = 0.1

    def __post_init__(self):
        if self.max_evaluations < 1:
            raise ValueError("max_evaluations must be positive")
        if np.any(np.asarray(self.initial_step, dtype=float) <= 0):
            raise ValueError("initial_step must be positive")
        if self.ftol <= 0 or self.xtol <= 0 or self.jitter <= 0:
            raise ValueError("tolerances and jitter must be positive")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")


@dataclass
class RestartRecord:
    start: np.ndarray
    best_params: np.ndarray
    best_value: float
    n_evaluations: int
    converged: bool


@dataclass
class OptimizationReport:
    best_params: np.ndarray
    best_value: float
    n_evaluations: int
    converged: bool
    history: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def write(self, stem) -> tuple:
        """Write ``<stem>.txt`` (summary) and ``<stem>_trace.csv``; return both paths."""
        stem = str(stem)
        summary, trace_path = stem + ".txt", stem + "_trace.csv"
        with open(summary, "w") as fh:
            fh.write(self.to_text())
        with open(trace_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["evaluation", "objective"])
            for i, v in enumerate(self.trace, 1):
                w.writerow([i, format(v, ".17g")])
        return summary, trace_path

    def to_text(self) -> str:
        lines = [
            f"best_value = {self.best_value:.17g}",
            "best_params = [" + ", ".join(format(x, ".17g") for x in self.best_params) + "]",
            f"n_evaluations = {self.n_evaluations}",
            f"converged = {str(self.converged).lower()}",
        ]
        for key, value in self.metadata.items():
            if isinstance(value, (int, float, str, bool)):
                lines.append(f"{key} = {value!r}")
        for i, rec in enumerate(self.history):
            lines.append(f"restart[{i}] = value {rec.best_value:.17g}, evaluations {rec.n_evaluations}, "
                         f"converged {str(rec.converged).lower()}")
        return "\n".join(lines) + "\n"


class _BudgetExhausted(Exception):
    pass


class _Counter:
    def __init__(self, fun, budget):
        self.fun = fun
        self.budget = budget
        self.count = 0
        self.trace = []
        self.best_x = None
        self.best_f = math.inf

    def __call__(self, x):
        if self.count >= self.budget:
            raise _BudgetExhausted
        self.count += 1
        try:
            f = float(self.fun(np.array(x, dtype=float)))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            log.debug("objective failed at %s: %s", x, exc)
            f = math.inf
        if not math.isfinite(f):
            f = math.inf
        self.trace.append(f)
        if f < self.best_f or self.best_x is None:
            self.best_f, self.best_x = f, np.array(x, dtype=float)
        return f


def _simplex_search(f, x0, step, ftol, xtol):
    """One Nelder-Mead run; returns True when it converged."""
    n = len(x0)
    pts = [np.array(x0, dtype=float)]
    for i in range(n):
        p = np.array(x0, dtype=float)
        p[i] += step[i]
        pts.append(p)
    sim = np.array(pts)
    fs = np.array([f(p) for p in sim])
    while True:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        f_spread = np.max(np.abs(fs[1:] - fs[0])) if np.all(np.isfinite(fs)) else math.inf
        x_spread = np.max(np.abs(sim[1:] - sim[0]))
        if f_spread <= ftol or x_spread <= xtol:
            return True
        centroid = sim[:-1].mean(axis=0)
        worst = sim[-1]
        xr = centroid + REFLECT * (centroid - worst)
        fr = f(xr)
        if fr < fs[0]:
            xe = centroid + EXPAND * (xr - centroid)
            fe = f(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = centroid + CONTRACT * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = centroid + CONTRACT * (worst - centroid)
            fc = f(xc)
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        for i in range(1, n + 1):
            sim[i] = sim[0] + SHRINK * (sim[i] - sim[0])
            fs[i] = f(sim[i])


def nelder_mead(objective, x0, options: OptimizerOptions | None = None) -> OptimizationReport:
    """Minimize ``objective`` with the Nelder-Mead simplex and optional restarts.

    Coefficients are 1 (reflection), 2 (expansion), 0.5 (contraction) and
    0.5 (shrink).  A run stops when the spread of simplex values drops to
    ``ftol`` or its vertices lie within ``xtol`` of the best one.  Each
    restart rebuilds the simplex around the incumbent, displaced by Gaussian
    jitter of size ``jitter * initial_step`` from a generator seeded with
    ``seed``.  Non-finite objective values count as +inf.
    """
    opts = options or OptimizerOptions()
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    step = np.broadcast_to(np.asarray(opts.initial_step, dtype=float), x0.shape).copy()
    rng = np.random.default_rng(opts.seed)
    f = _Counter(objective, opts.max_evaluations)
    history = []
    converged = False
    start = x0
    for run in range(opts.restarts + 1):
        before = f.count
        try:
            converged = _simplex_search(f, start, step, opts.ftol, opts.xtol)
        except _BudgetExhausted:
            converged = False
        history.append(RestartRecord(start, f.best_x.copy(), f.best_f, f.count - before, converged))
        if f.count >= opts.max_evaluations:
            break
        start = f.best_x + opts.jitter * step * rng.standard_normal(x0.shape)
    return OptimizationReport(f.best_x, f.best_f, f.count, converged, history, f.trace)


def multistart(objective, candidates, options: OptimizerOptions | None = None,
               n_polish: int = 4) -> OptimizationReport:
    """Evaluate every candidate start, then run :func:`nelder_mead` from the best few.

    The evaluations left after screening are split evenly between the
    ``n_polish`` simplex runs.  The returned report covers all evaluations
    (its trace starts with the screening values) and keeps the best run.
    """
    opts = options or OptimizerOptions()
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    screen = _Counter(objective, opts.max_evaluations)
    values = []
    for u in candidates:
        try:
            values.append(screen(u))
        except _BudgetExhausted:
            break
    order = np.argsort(values, kind="stable")[:max(1, n_polish)]
    share = (opts.max_evaluations - screen.count) // len(order)
    if share < len(candidates[0]) + 1:
        return OptimizationReport(screen.best_x, screen.best_f, screen.count, False, [], screen.trace)
    best, trace, history, used = None, list(screen.trace), [], screen.count
    for i in order:
        run = nelder_mead(objective, candidates[i], replace(opts, max_evaluations=share))
        trace += run.trace
        history += run.history
        used += run.n_evaluations
        if best is None or run.best_value < best.best_value:
            best = run
    return OptimizationReport(best.best_params, best.best_value, used, best.converged, history, trace)


# --------------------------------------------------------------------------
# hyperfine optimization


def _box_penalty(x, lower, upper, scale):
    below = np.maximum(lower - x, 0.0) / scale
    above = np.maximum(x - upper, 0.0) / scale
    return PENALTY_WEIGHT * float(np.sum(below ** 2 + above ** 2))


def _hyperfine_nuclei(x, n_nuclei, tensor_form, electron, spin):
    if tensor_form == "axial":
        tensors = [HyperfineTensor.axial(a, electron) for a in x]
    else:
        tensors = [HyperfineTensor.diagonal(*x[3 * j: 3 * j + 3], electron=electron)
                   for j in range(n_nuclei)]
    return tuple(NucleusSpec(t, spin) for t in tensors)


@dataclass(frozen=True)
class _HyperfineObjective:
    model: RadicalPairModel
    n_nuclei: int
    tensor_form: str
    lower: np.ndarray
    upper: np.ndarray
    scale: float
    grid_size: int
    full_range: bool
    electron: int
    spin: float

    def nuclei(self, u):
        x = np.clip(np.asarray(u) * self.scale, self.lower, self.upper)
        return _hyperfine_nuclei(x, self.n_nuclei, self.tensor_form, self.electron, self.spin)

    def sensitivity(self, u):
        m = replace(self.model, nuclei=self.nuclei(u))
        return angular_response(YieldEvaluator(m, "resolvent"), self.grid_size, self.full_range).sensitivity

    def __call__(self, u):
        x = np.asarray(u) * self.scale
        return -self.sensitivity(u) + _box_penalty(x, self.lower, self.upper, self.scale)


def optimize_hyperfine(model: RadicalPairModel, n_nuclei: int = 1, tensor_form: str = "axial",
                       bounds=None, options: OptimizerOptions | None = None, grid_size: int = 31,
                       x0=None, full_range: bool | None = None, electron: int = 2,
                       spin: float = 0.5) -> OptimizationReport:
    """Maximize D_S over hyperfine tensors of ``n_nuclei`` nuclei on one electron.

    ``tensor_form="axial"`` optimizes one coupling a >= 0 per nucleus
    (T = diag(0, 0, a)); ``"diagonal"`` optimizes (tx, ty, tz) per nucleus.
    ``bounds`` is a (lower, upper) pair of per-parameter arrays in rad/us;
    the default box is [0, 20 w] for axial and [-20 w, 20 w] for diagonal
    parameters, with w = max(omega_B, k).  Unless ``x0`` is given, the
    simplex starts from the best of a small log-spaced set of couplings.
    Parameters are scaled by w internally.  The report's ``best_value`` is
    the maximal D_S on the objective's angle grid.
    """
    if n_nuclei < 1:
        raise ValueError("n_nuclei must be >= 1")
    if tensor_form not in ("axial", "diagonal"):
        raise ValueError(f"tensor_form must be 'axial' or 'diagonal', got {tensor_form!r}")
    dim = 4 * int(round(2 * spin + 1)) ** n_nuclei
    if dim > 32:
        raise ValueError(f"Hilbert dimension {dim} exceeds the supported maximum of 32")
    scale = max(model.omega_B, model.k)
    n_par = n_nuclei * (1 if tensor_form == "axial" else 3)
    if bounds is None:
        lower = np.full(n_par, 0.0 if tensor_form == "axial" else -20 * scale)
        upper = np.full(n_par, 20 * scale)
    else:
        lower = np.broadcast_to(np.asarray(bounds[0], dtype=float), (n_par,)).copy()
        upper = np.broadcast_to(np.asarray(bounds[1], dtype=float), (n_par,)).copy()
    if np.any(lower > upper):
        raise ValueError("lower bounds exceed upper bounds")
    if full_range is None:
        full_range = model.dephasing.active
    opts = options or OptimizerOptions(max_evaluations=600, initial_step=0.1, restarts=1)
    obj = _HyperfineObjective(model, n_nuclei, tensor_form, lower, upper, scale, grid_size,
                              full_range, electron, spin)

    seeds_used = 0
    if x0 is None:
        lo = max(lower.min(), 1e-3 * scale)
        hi = max(upper.max(), lo)
        candidates = np.geomspace(lo, hi, 9) if hi > lo else np.array([lo])
        best = None
        for a in candidates:
            if tensor_form == "axial":
                u = np.full(n_par, a / scale)
            else:
                u = np.tile([0.0, 0.0, a / scale], n_nuclei)
                # separate the nuclei so they do not start degenerate
                u[2::3] *= np.linspace(1.0, 0.5, n_nuclei)
            val = obj(u)
            seeds_used += 1
            if best is None or val < best[0]:
                best = (val, u)
        u0 = best[1]
    else:
        u0 = np.asarray(x0, dtype=float) / scale
    report = nelder_mead(obj, u0, opts)
    best_x = np.clip(report.best_params * scale, lower, upper)
    nuclei = obj.nuclei(report.best_params)
    best_model = replace(model, nuclei=nuclei)
    report.best_params = best_x
    report.best_value = -report.best_value
    report.n_evaluations += seeds_used
    for rec in report.history:
        rec.best_value = -rec.best_value
    report.metadata.update(
        sense="maximize",
        tensor_form=tensor_form,
        n_nuclei=n_nuclei,
        seed_evaluations=seeds_used,
        nuclei=nuclei,
        model=best_model,
        bounds=(lower, upper),
        response=angular_response(YieldEvaluator(best_model), DEFAULT_GRID, full_range),
    )
    return report


# --------------------------------------------------------------------------
# control optimization


@dataclass(frozen=True)
class ControlConstraints:
    c_max: float = DEFAULT_C_MAX_UT
    omega_max: float = DEFAULT_OMEGA_MAX
    duration: float | None = None
    polar_offset: float = 0.0


@dataclass(frozen=True)
class _ControlObjective:
    model: RadicalPairModel
    template: str
    n_components: int
    constraints: ControlConstraints
    duration: float
    thetas: int
    full_range: bool
    max_step: float | None

    def control(self, u) -> ControlField:
        c = self.constraints
        direction = control_direction(c.polar_offset)
        n = self.n_components
        if self.template == "harmonic":
            terms = [(u[3 * j] * c.c_max, u[3 * j + 1] * c.c_max, u[3 * j + 2] * c.omega_max)
                     for j in range(n)]
            return HarmonicControl(direction, c.c_max, self.duration, tuple(terms))
        lengths = np.maximum(np.abs(u[:n]) * self.duration, 1e-9)
        times = np.cumsum(lengths)
        return PiecewiseControl(direction, c.c_max, tuple(times), tuple(u[n:] * c.c_max))

    def violation(self, u) -> float:
        """Constraint violation in units of the bounds."""
        c = self.constraints
        ctrl = self.control(u)
        v = ctrl.amplitude_violation() / c.c_max
        if self.template == "harmonic":
            omegas = np.abs(np.asarray(u[2::3]))
            v2 = np.maximum(omegas - 1.0, 0.0)
            return float(np.sqrt(v * v + np.sum(v2 * v2)))
        over = max(0.0, ctrl.duration / self.duration - 1.0)
        return float(math.hypot(v, over))

    def sensitivity(self, u) -> float:
        ev = YieldEvaluator(self.model, control=self.control(u), max_step=self.max_step)
        return angular_response(ev, self.thetas, self.full_range, refine=False).sensitivity

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return -self.sensitivity(u) + PENALTY_WEIGHT * self.violation(u) ** 2


def default_control_start(template: str, n_components: int) -> np.ndarray:
    """Scaled starting parameters: small amplitudes, low frequencies / equal segments."""
    if template == "harmonic":
        u = []
        for j in range(n_components):
            u += [0.02, 0.0, 0.01 * (j + 1)]
        return np.array(u)
    return np.concatenate([np.full(n_components, 1.0 / (2 * n_components)),
                           np.full(n_components, 0.02)])


def control_start_box(template: str, n_components: int) -> tuple:
    """Scaled (lower, upper) box from which extra starting points are drawn."""
    n = n_components
    if template == "harmonic":
        # slow terms: fast oscillations average out over the lifetime and cost more to evaluate
        return np.tile([-0.1, -0.1, 0.0], n), np.tile([0.1, 0.1, 0.05], n)
    return np.r_[np.full(n, 0.02), np.full(n, -0.25)], np.r_[np.full(n, 0.5), np.full(n, 0.25)]


def optimize_control(model: RadicalPairModel, template: str = "harmonic", n_components: int = 2,
                     constraints: ControlConstraints | None = None,
                     options: OptimizerOptions | None = None, n_theta: int = 13,
                     full_range: bool = True, x0=None, max_step: float | None = None,
                     n_starts: int = 32, n_polish: int = 4) -> OptimizationReport:
    """Maximize D_S over a control field of fixed shape.

    ``template="harmonic"`` optimizes ``n_components`` terms (A_k, B_k, w_k);
    ``"piecewise"`` optimizes ``n_components`` segment lengths and
    amplitudes.  Parameters are scaled by ``c_max``, ``omega_max`` and the
    control duration; constraint violations (relative to these bounds) cost
    ``PENALTY_WEIGHT * violation**2``.  The default start (or ``x0``) and
    ``n_starts`` Sobol points from :func:`control_start_box` are screened
    and the ``n_polish`` best are refined (see :func:`multistart`);
    ``n_starts=0`` runs a single simplex from the start.  The objective uses ``n_theta``
    angles; the report metadata carries the refined 1-degree response at the
    optimum together with the uncontrolled response.
    """
    if template not in ("harmonic", "piecewise"):
        raise ValueError(f"template must be 'harmonic' or 'piecewise', got {template!r}")
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    c = constraints or ControlConstraints()
    duration = c.duration if c.duration is not None else CUTOFF_LIFETIMES / model.k
    if not duration > 0:
        raise ValueError("control duration must be positive")
    grid_full = 181 if full_range else DEFAULT_GRID
    baseline = angular_response(YieldEvaluator(model), grid_full, full_range)
    meta = dict(sense="maximize", template=template, n_components=n_components,
                c_max_uT=c.c_max, omega_max=c.omega_max, duration_us=duration,
                polar_offset=c.polar_offset, baseline=baseline,
                baseline_sensitivity=baseline.sensitivity)
    n_par = 3 * n_components if template == "harmonic" else 2 * n_components

    if c.c_max == 0:
        # the only feasible control is C = 0
        u = np.zeros(n_par)
        if template == "piecewise":
            u[:n_components] = 1.0 / n_components
        zero = (HarmonicControl(control_direction(c.polar_offset), 0.0, duration, ())
                if template == "harmonic" else
                PiecewiseControl(control_direction(c.polar_offset), 0.0,
                                 tuple(np.linspace(duration / n_components, duration, n_components)),
                                 (0.0,) * n_components))
        meta.update(control=zero, response=baseline)
        return OptimizationReport(u, baseline.sensitivity, 0, True, [], [], meta)

    obj = _ControlObjective(model, template, n_components, c, duration, n_theta, full_range, max_step)
    opts = options or OptimizerOptions(max_evaluations=1500, initial_step=0.05, restarts=1)
    u0 = default_control_start(template, n_components) if x0 is None else np.asarray(x0, dtype=float)
    if n_starts > 0:
        lo, hi = control_start_box(template, n_components)
        sample = qmc.Sobol(n_par, seed=opts.seed).random(n_starts)
        report = multistart(obj, np.vstack([u0, lo + sample * (hi - lo)]), opts, n_polish)
    else:
        report = nelder_mead(obj, u0, opts)
    best = obj.control(report.best_params)
    report.best_value = -report.best_value
    for rec in report.history:
        rec.best_value = -rec.best_value
    response = angular_response(YieldEvaluator(model, control=best, max_step=max_step), grid_full,
                                full_range)
    meta.update(control=best, response=response, violation=obj.violation(report.best_params),
                objective_grid=n_theta)
    report.metadata.update(meta)
    return report
