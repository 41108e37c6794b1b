"""Angular response curves and the compass sensitivity D_S = max - min yield."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar

from . import analytic
from .control import ControlField, controlled_yields, is_factorizable
from .dynamics import propagate, singlet_yield_quadrature, singlet_yields
from .model import FieldDirection, RadicalPairModel

DEFAULT_GRID = 91
REFINE_XATOL = 1e-6
EXTREMUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class AngularResponse:
    thetas: np.ndarray
    values: np.ndarray
    theta_max: float
    phi_max: float
    theta_min: float
    phi_min: float

    @property
    def sensitivity(self) -> float:
        return self.phi_max - self.phi_min

    def rows(self):
        return [(float(t), float(v)) for t, v in zip(self.thetas, self.values)]


class YieldEvaluator:
    """Picklable theta -> singlet yield function for one model.

    ``method`` is ``"analytic"`` (single axial spin-1/2 nucleus, no
    dephasing), ``"resolvent"`` or ``"auto"``.  With a non-zero control the
    exact factorized evaluator is used when the model allows it, and
    propagation plus quadrature otherwise.
    """

    def __init__(self, model: RadicalPairModel, method: str = "auto", control: ControlField | None = None,
                 phi: float = 0.0, max_step: float | None = None):
        if method not in ("auto", "analytic", "resolvent"):
            raise ValueError(f"unknown evaluator method {method!r}")
        if method == "analytic" and not analytic_applicable(model):
            raise ValueError("analytic yield needs one axial spin-1/2 nucleus on electron 2 and no dephasing")
        self.model = model
        self.method = method
        self.control = None if control is None or control.is_zero else control
        self.phi = phi
        self.max_step = max_step

    def __call__(self, theta):
        return self.many(np.atleast_1d(theta))[0] if np.ndim(theta) == 0 else self.many(theta)

    def many(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float)
        m = self.model
        if self.control is not None:
            if is_factorizable(m):
                return controlled_yields(m, thetas, self.control, self.phi, self.max_step)
            out = []
            for t in thetas:
                res = propagate(m, FieldDirection(float(t), self.phi), self.control)
                out.append(min(1.0, max(0.0, singlet_yield_quadrature(res, m.k).value)))
            return np.array(out)
        if self.method == "analytic" and self.phi == 0.0:
            p = analytic.AnalyticParams(m.omega_B, m.nuclei[0].hyperfine.zz, m.k)
            return np.atleast_1d(analytic.yield_avg(thetas, p))
        return singlet_yields(m, thetas, self.phi)


def analytic_applicable(model: RadicalPairModel) -> bool:
    if model.dephasing.active or len(model.nuclei) != 1:
        return False
    n = model.nuclei[0]
    return n.spin == 0.5 and n.hyperfine.is_axial and n.hyperfine.electron == 2


def theta_grid(grid_size: int, full_range: bool = False) -> np.ndarray:
    if grid_size < 9:
        raise ValueError(f"grid_size must be at least 9, got {grid_size}")
    upper = math.pi if full_range else math.pi / 2
    return np.linspace(0.0, upper, grid_size)


def _vector_eval(evaluator):
    if hasattr(evaluator, "many"):
        return evaluator.many
    return lambda ts: np.array([float(evaluator(float(t))) for t in ts])


def _refine(fun, thetas, values, i, sign):
    """Golden-section/parabolic refinement of an extremum near grid index i."""
    lo = thetas[max(i - 1, 0)]
    hi = thetas[min(i + 1, len(thetas) - 1)]
    best_t, best_v = float(thetas[i]), float(values[i])
    res = minimize_scalar(lambda t: sign * fun(t), bounds=(lo, hi), method="bounded",
                          options={"xatol": REFINE_XATOL})
    # res.fun is sign * Phi, so a smaller value is an improvement in both cases
    if res.success and res.fun < sign * best_v:
        best_t, best_v = float(res.x), float(sign * res.fun)
    return best_t, best_v


def angular_response(evaluator, grid_size: int = DEFAULT_GRID, full_range: bool = False,
                     refine: bool = True) -> AngularResponse:
    """Sample Phi_S(theta) on a uniform grid and locate its extrema.

    The grid covers [0, pi/2] (enough when Phi_S(theta) = Phi_S(pi - theta))
    or [0, pi] with ``full_range``.
    """
    thetas = theta_grid(grid_size, full_range)
    many = _vector_eval(evaluator)
    try:
        values = np.asarray(many(thetas), dtype=float)
    except Exception as exc:
        # find the offending angle
        for t in thetas:
            try:
                many(np.array([t]))
            except Exception:
                raise RuntimeError(f"yield evaluation failed at theta={t!r}: {exc}") from exc
        raise
    imax, imin = int(np.argmax(values)), int(np.argmin(values))
    t_max, v_max = float(thetas[imax]), float(values[imax])
    t_min, v_min = float(thetas[imin]), float(values[imin])
    if refine:
        def scalar(t):
            return float(many(np.array([t]))[0])

        t_max, v_max = _refine(scalar, thetas, values, imax, -1.0)
        t_min, v_min = _refine(scalar, thetas, values, imin, +1.0)
    return AngularResponse(thetas, values, t_max, v_max, t_min, v_min)


# --------------------------------------------------------------------------
# scans

SCAN_PARAMETERS = ("a", "a_over_B", "B", "k", "tau", "gamma", "d")


def with_parameter(model: RadicalPairModel, parameter: str, value: float) -> RadicalPairModel:
    """Copy of ``model`` with one named quantity replaced.

    ``a`` (rad/us) and ``a_over_B`` set an axial coupling on every nucleus,
    ``B`` is in uT, ``k`` in 1/us, ``tau`` = 1/k in us, ``gamma`` and ``d``
    configure dephasing.
    """
    if parameter == "a":
        return model.with_axial_coupling(value)
    if parameter == "a_over_B":
        return model.with_axial_coupling(value * model.omega_B)
    if parameter == "B":
        return replace(model, B_uT=value)
    if parameter == "k":
        return replace(model, k=value)
    if parameter == "tau":
        return replace(model, k=1.0 / value)
    if parameter == "gamma":
        return model.with_dephasing(value)
    if parameter == "d":
        return model.with_dephasing(model.dephasing.gamma, value)
    raise ValueError(f"unknown scan parameter {parameter!r}; expected one of {SCAN_PARAMETERS}")


@dataclass(frozen=True)
class ScanRow:
    value: float
    sensitivity: float
    theta_max: float
    theta_min: float
    error: str | None = None


@dataclass(frozen=True)
class _ScanPoint:
    model: RadicalPairModel
    parameter: str
    grid_size: int
    full_range: bool
    method: str

    def __call__(self, value: float) -> ScanRow:
        m = with_parameter(self.model, self.parameter, value)
        method = self.method
        if method == "analytic" and not analytic_applicable(m):
            method = "resolvent"
        resp = angular_response(YieldEvaluator(m, method), self.grid_size, self.full_range)
        return ScanRow(value, resp.sensitivity, resp.theta_max, resp.theta_min)


def resolve_jobs(jobs: int | None) -> int:
    if jobs is None:
        jobs = int(os.environ.get("CHEMCOMPASS_JOBS", "1"))
    return max(1, int(jobs))


class _Captured:
    def __init__(self, fn):
        self.fn = fn

    def __call__(self, item):
        try:
            return True, self.fn(item)
        except Exception as exc:  # recorded per point; the sweep continues
            return False, f"{type(exc).__name__}: {exc}"


def parallel_map(fn, items, jobs: int | None = 1) -> list:
    """Apply ``fn`` to every item, optionally across processes.

    Results are ``(ok, value_or_error_message)`` pairs in input order and
    are identical to sequential evaluation.  ``fn`` must be picklable for
    ``jobs > 1``.
    """
    items = list(items)
    jobs = resolve_jobs(jobs)
    wrapped = _Captured(fn)
    if jobs == 1 or len(items) <= 1:
        return [wrapped(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(wrapped, items))


def sensitivity_scan(model: RadicalPairModel, parameter: str, values, grid_size: int = DEFAULT_GRID,
                     full_range: bool | None = None, method: str = "auto", jobs: int | None = 1) -> list:
    """D_S for each parameter value, one row per input in input order.

    Dephased models default to the full [0, pi] angle range.
    """
    if parameter not in SCAN_PARAMETERS:
        raise ValueError(f"unknown scan parameter {parameter!r}; expected one of {SCAN_PARAMETERS}")
    values = [float(v) for v in values]
    if not all(math.isfinite(v) for v in values):
        raise ValueError("scan values must be finite")
    if full_range is None:
        full_range = model.dephasing.active or parameter == "gamma"
    point = _ScanPoint(model, parameter, grid_size, full_range, method)
    rows = []
    for v, (ok, out) in zip(values, parallel_map(point, values, jobs)):
        rows.append(out if ok else ScanRow(v, math.nan, math.nan, math.nan, out))
    return rows


@dataclass(frozen=True)
class LifetimeRow:
    tau: float
    a: float
    sensitivity: float
    error: str | None = None


def lifetime_sensitivity(model: RadicalPairModel, lifetimes, optimize_a: bool = True,
                         options=None, grid_size: int = 31) -> list:
    """Best D_S versus radical-pair lifetime tau = 1/k (us).

    With ``optimize_a`` the axial coupling is optimized for every lifetime
    (see :func:`chemcompass.optimize.optimize_hyperfine`); otherwise the
    template's couplings are kept.
    """
    from .optimize import optimize_hyperfine

    rows = []
    for tau in lifetimes:
        if not tau > 0:
            raise ValueError(f"lifetimes must be positive, got {tau}")
        m = replace(model, k=1.0 / tau)
        try:
            if optimize_a:
                rep = optimize_hyperfine(m, n_nuclei=1, tensor_form="axial", options=options,
                                         grid_size=grid_size)
                rows.append(LifetimeRow(tau, rep.metadata["nuclei"][0].hyperfine.zz, rep.best_value))
            else:
                resp = angular_response(YieldEvaluator(m), DEFAULT_GRID)
                a = m.nuclei[0].hyperfine.zz if m.nuclei else 0.0
                rows.append(LifetimeRow(tau, a, resp.sensitivity))
        except Exception as exc:
            rows.append(LifetimeRow(tau, math.nan, math.nan, f"{type(exc).__name__}: {exc}"))
    return rows


