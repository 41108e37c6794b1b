"""Open-system propagation and singlet-yield evaluation.

Recombination with equal singlet and triplet rates is not part of the
generator: the pair survives to time t with probability exp(-k t), so the
singlet yield is the exponentially weighted time average

    Phi_S = int_0^inf k exp(-k t) Tr(P_S rho(t)) dt
          = k <vec(P_S), (k - L)^-1 vec(rho_0)>,

with ``L`` the (trace-preserving) Liouvillian of coherent evolution plus
pure dephasing.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.integrate import simpson, solve_ivp, trapezoid

from .model import (
    DEPHASING_PREFACTOR,
    GAMMA_E,
    FieldDirection,
    RadicalPairModel,
    build_hamiltonian,
    dephasing_operators,
    electron_spin_sum,
    hyperfine_hamiltonian,
    initial_state,
    singlet_projector,
    zeeman_hamiltonian,
)
from .spin import HERMITIAN_TOL, hermitian_eig, hermiticity_error, solve_linear, unvec, vec

log = logging.getLogger(__name__)

YIELD_SLACK = 1e-9
TRACE_DRIFT_LIMIT = 1e-6
#: quadrature cutoff in units of the lifetime 1/k; exp(-14) < 1e-6
CUTOFF_LIFETIMES = 14.0


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Liouvillian:
    """Superoperator matrix acting on column-major vectorized density matrices."""

    matrix: np.ndarray
    includes_dephasing: bool = False

    @property
    def hilbert_dim(self) -> int:
        return int(round(math.sqrt(self.matrix.shape[0])))

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.matrix @ vec(rho), self.hilbert_dim)


def commutator_superoperator(h: np.ndarray) -> np.ndarray:
    """Matrix of rho -> -i [H, rho]."""
    n = h.shape[0]
    eye = np.eye(n)
    return -1j * (np.kron(eye, h) - np.kron(h.T, eye))


def dissipator_superoperator(lindblads, prefactor: float = DEPHASING_PREFACTOR) -> np.ndarray:
    """Matrix of rho -> prefactor * sum_k (2 L rho L^+ - L^+ L rho - rho L^+ L)."""
    lindblads = list(lindblads)
    n = lindblads[0].shape[0]
    eye = np.eye(n)
    d = np.zeros((n * n, n * n), dtype=complex)
    for op in lindblads:
        ldl = op.conj().T @ op
        d += 2 * np.kron(op.conj(), op) - np.kron(eye, ldl) - np.kron(ldl.T, eye)
    return prefactor * d


def build_liouvillian(h: np.ndarray, lindblads=(), prefactor: float = DEPHASING_PREFACTOR) -> Liouvillian:
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"Hamiltonian must be square, got shape {h.shape}")
    err = hermiticity_error(h)
    if err > HERMITIAN_TOL:
        raise ValueError(f"Hamiltonian is not Hermitian (max deviation {err:.2e})")
    lindblads = [np.asarray(op) for op in lindblads]
    for op in lindblads:
        if op.shape != h.shape:
            raise ValueError(f"jump operator shape {op.shape} does not match Hamiltonian {h.shape}")
    lv = commutator_superoperator(h)
    active = [op for op in lindblads if np.any(op)]
    if active:
        lv = lv + dissipator_superoperator(active, prefactor)
    return Liouvillian(lv, includes_dephasing=bool(active))


def model_liouvillian(model: RadicalPairModel, direction: FieldDirection) -> Liouvillian:
    h = build_hamiltonian(model, direction)
    lindblads = dephasing_operators(model.dephasing, model.dims) if model.dephasing.active else ()
    return build_liouvillian(h, lindblads)


def clamp_yield(raw: float) -> float:
    if not (-YIELD_SLACK <= raw <= 1 + YIELD_SLACK):
        log.warning("singlet yield %.12g outside [0, 1] beyond slack", raw)
    elif raw < 0 or raw > 1:
        log.debug("clamping raw singlet yield %.17g", raw)
    return min(1.0, max(0.0, raw))


def yield_from_generator(liouvillian: Liouvillian, rho0: np.ndarray, projector: np.ndarray, k: float) -> float:
    """Raw (unclamped) yield k <P, (k - L)^-1 rho0> by one linear solve."""
    lv = liouvillian.matrix
    x = solve_linear(k * np.eye(lv.shape[0]) - lv, vec(rho0))
    return float(k * np.real(np.vdot(vec(projector), x)))


def yield_from_hamiltonian(h: np.ndarray, rho0: np.ndarray, projector: np.ndarray, k: float):
    """Raw yield(s) of closed-system evolution via the spectral resolvent.

    Accepts a single Hamiltonian or a stack of them along the leading axis.
    """
    w, v = hermitian_eig(h)
    vh = np.conj(np.swapaxes(v, -1, -2))
    r = vh @ rho0 @ v
    p = vh @ projector @ v
    omega = w[..., :, None] - w[..., None, :]
    kernel = k / (k + 1j * omega)
    # Tr(P rho(t)) = sum_mn P_nm rho_mn exp(-i w_mn t)
    return np.real(np.sum(np.swapaxes(p, -1, -2) * r * kernel, axis=(-2, -1)))


def _resolve_method(model: RadicalPairModel, method: str) -> str:
    if method not in ("auto", "solve", "spectral"):
        raise ValueError(f"unknown yield method {method!r}")
    if method == "auto":
        return "solve" if model.dephasing.active else "spectral"
    if method == "spectral" and model.dephasing.active:
        raise ValueError("spectral yield path requires a model without dephasing")
    return method


def _singlet_frozen(model: RadicalPairModel) -> bool:
    # without hyperfine coupling or dephasing |S> is an eigenstate of the Zeeman term
    return model.max_coupling == 0 and not model.dephasing.active


def singlet_yield_resolvent(model: RadicalPairModel, direction: FieldDirection, method: str = "auto") -> float:
    """Exact singlet yield for a time-independent generator.

    ``method="solve"`` performs the Liouville-space linear solve;
    ``"spectral"`` evaluates the same resolvent in the Hamiltonian eigenbasis
    (closed systems only).  ``"auto"`` picks the spectral route when there
    is no dephasing.
    """
    method = _resolve_method(model, method)
    if _singlet_frozen(model):
        return 1.0
    rho0 = initial_state(model)
    proj = singlet_projector(model)
    if method == "spectral":
        raw = float(yield_from_hamiltonian(build_hamiltonian(model, direction), rho0, proj, model.k))
    else:
        raw = yield_from_generator(model_liouvillian(model, direction), rho0, proj, model.k)
    return clamp_yield(raw)


def singlet_yields(model: RadicalPairModel, thetas, phi: float = 0.0, method: str = "auto") -> np.ndarray:
    """Vectorized ``singlet_yield_resolvent`` over polar angles."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    method = _resolve_method(model, method)
    if _singlet_frozen(model):
        return np.ones(len(thetas))
    if method == "solve":
        return np.array([singlet_yield_resolvent(model, FieldDirection(t, phi), "solve") for t in thetas])
    dims = model.dims
    rho0 = initial_state(model)
    proj = singlet_projector(model)
    s = electron_spin_sum(dims)
    hf = hyperfine_hamiltonian(model.nuclei, dims)
    w = model.omega_B
    st, ct = np.sin(thetas), np.cos(thetas)
    h = (w * st * math.cos(phi))[:, None, None] * s[0]
    h = h + (w * st * math.sin(phi))[:, None, None] * s[1]
    h = h + (w * ct)[:, None, None] * s[2] + hf
    raw = yield_from_hamiltonian(h, rho0, proj, model.k)
    return np.array([clamp_yield(float(x)) for x in raw])


# --------------------------------------------------------------------------
# time stepping


@dataclass(frozen=True, eq=False)
class PropagationResult:
    times: np.ndarray
    singlet: np.ndarray
    final_state: np.ndarray
    states: np.ndarray | None = None

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t_us", "f_S"])
            for t, f in zip(self.times, self.singlet):
                writer.writerow([format(t, ".17g"), format(f, ".17g")])


def default_t_end(k: float, control=None) -> float:
    t_end = CUTOFF_LIFETIMES / k
    if control is not None:
        t_end = max(t_end, control.duration + 2.0 / k)
    return t_end


def frequency_scale(model: RadicalPairModel, control=None) -> float:
    """Largest rate in the problem (rad/us), used to bound integrator steps."""
    scales = [model.omega_B, model.max_coupling, model.dephasing.gamma, model.k]
    if control is not None:
        scales.append(GAMMA_E * control.max_abs())
    return max(scales)


def _control_superoperator(control, dims) -> np.ndarray:
    s = electron_spin_sum(dims)
    hc = GAMMA_E * sum(c * op for c, op in zip(control.direction, s))
    return commutator_superoperator(hc)


def _rk4(fun, t0, y0, t1, n_steps):
    y = y0
    h = (t1 - t0) / n_steps
    t = t0
    for _ in range(n_steps):
        k1 = fun(t, y)
        k2 = fun(t + h / 2, y + h / 2 * k1)
        k3 = fun(t + h / 2, y + h / 2 * k2)
        k4 = fun(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


def propagate(
    model: RadicalPairModel,
    direction: FieldDirection,
    control=None,
    t_end: float | None = None,
    dt_max: float = 0.05,
    *,
    sample_dt: float | None = None,
    method: str = "adaptive",
    atol: float = 1e-9,
    rtol: float = 1e-9,
    store_states: bool = False,
) -> PropagationResult:
    """Integrate d rho/dt = -i[H0 + Hc(t), rho] + dephasing and sample f_S(t).

    ``method="adaptive"`` uses an explicit Dormand-Prince 8(5,3) scheme;
    ``method="fixed"`` uses classical RK4 with the bounding step, which is
    bitwise reproducible.  Steps never exceed ``dt_max`` nor
    1/(50 * largest frequency).  Piecewise-constant controls are integrated
    segment by segment so their jumps fall on step boundaries.
    """
    if t_end is None:
        t_end = default_t_end(model.k, control)
    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    if method not in ("adaptive", "fixed"):
        raise ValueError(f"unknown integration method {method!r}")
    scale = frequency_scale(model, control)
    max_step = min(dt_max, 1.0 / (50.0 * scale))
    if sample_dt is None:
        sample_dt = min(dt_max, 0.1 / scale)
    n_samples = max(int(math.ceil(t_end / sample_dt)), 2) + 1
    times = np.linspace(0.0, t_end, n_samples)

    n = model.dim
    l0 = model_liouvillian(model, direction).matrix
    if control is not None and control.max_abs() > 0:
        lc = _control_superoperator(control, model.dims)

        def rhs(t, y):
            return l0 @ y + control.value(t) * (lc @ y)
    else:
        control = None

        def rhs(t, y):
            return l0 @ y

    # knots: sample times plus control discontinuities
    knots = set(times.tolist())
    if control is not None:
        knots.update(t for t in control.breakpoints() if 0 < t < t_end)
    knots = np.array(sorted(knots))
    sample_index = {t: i for i, t in enumerate(times.tolist())}

    y = vec(initial_state(model)).astype(complex)
    proj_vec = vec(singlet_projector(model))
    singlet = np.empty(n_samples)
    states = np.empty((n_samples, n, n), dtype=complex) if store_states else None

    def record(i, y):
        singlet[i] = np.real(np.vdot(proj_vec, y))
        if states is not None:
            states[i] = unvec(y, n)

    record(0, y)
    if method == "fixed":
        for t0, t1 in zip(knots[:-1], knots[1:]):
            steps = max(1, int(math.ceil((t1 - t0) / max_step - 1e-9)))
            y = _rk4(rhs, t0, y, t1, steps)
            if t1 in sample_index:
                record(sample_index[t1], y)
    else:
        segment_edges = [0.0]
        if control is not None:
            segment_edges += [t for t in control.breakpoints() if 0 < t < t_end]
        segment_edges.append(t_end)
        for t0, t1 in zip(segment_edges[:-1], segment_edges[1:]):
            inside = knots[(knots > t0) & (knots <= t1)]
            sol = solve_ivp(rhs, (t0, t1), y, method="DOP853", t_eval=inside,
                            max_step=max_step, atol=atol, rtol=rtol)
            if sol.status != 0:
                raise PropagationError(f"integration failed on [{t0}, {t1}]: {sol.message}")
            for t, col in zip(sol.t, sol.y.T):
                if t in sample_index:
                    record(sample_index[t], col)
            y = sol.y[:, -1]

    rho_end = unvec(y, n)
    drift = abs(np.trace(rho_end) - 1)
    if drift > TRACE_DRIFT_LIMIT:
        raise PropagationError(f"trace drift {drift:.3e} exceeds {TRACE_DRIFT_LIMIT:g}")
    return PropagationResult(times, singlet, rho_end, states)


class QuadratureYield(NamedTuple):
    value: float
    error: float


def singlet_yield_quadrature(result: PropagationResult, k: float) -> QuadratureYield:
    """Composite Simpson estimate of int_0^t_end k exp(-k t) f_S(t) dt.

    The error estimate combines the Simpson/trapezoid discrepancy with the
    analytic bound exp(-k t_end) on the neglected tail.
    """
    t = np.asarray(result.times)
    if t[-1] < CUTOFF_LIFETIMES / k * (1 - 1e-12):
        raise ValueError(
            f"propagation ends at {t[-1]:.4g} us; need at least {CUTOFF_LIFETIMES / k:.4g} us (14/k)"
        )
    integrand = k * np.exp(-k * t) * np.asarray(result.singlet)
    value = float(simpson(integrand, x=t))
    error = abs(value - float(trapezoid(integrand, x=t))) + math.exp(-k * t[-1])
    return QuadratureYield(value, error)
