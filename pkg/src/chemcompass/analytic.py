"""Closed-form singlet yield for one axial spin-1/2 nucleus.

With T = diag(0, 0, a) the nuclear Sz is conserved and the nucleus acts on
electron 2 as a static field b = +a/2 or -a/2 along z.  Electron 1 then
precesses in the applied field B and electron 2 in the effective field B1
at angle theta' from z.  All fields are angular frequencies (rad/us) and
share units with the rate k.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

log = logging.getLogger(__name__)

DEGENERATE_FIELD = 1e-9


@dataclass(frozen=True)
class AnalyticParams:
    B: float
    a: float
    k: float

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if not self.B >= 0:
            raise ValueError(f"B must be non-negative, got {self.B}")


class BranchYield(NamedTuple):
    value: np.ndarray | float
    delegated: np.ndarray | bool


class EffectiveField(NamedTuple):
    B1: np.ndarray | float
    theta_p: np.ndarray | float
    degenerate: np.ndarray | bool


def g(x, k):
    """Lorentzian weight k^2 / (k^2 + x^2)."""
    return k * k / (k * k + np.square(x))


def effective_field(theta, B, b) -> EffectiveField:
    if np.any(np.asarray(B) < 0):
        raise ValueError("B must be non-negative")
    z = B * np.cos(theta) + b
    x = B * np.sin(theta)
    b1 = np.hypot(x, z)
    return EffectiveField(b1, np.arctan2(x, z), b1 < DEGENERATE_FIELD)


def _branch_closed_form(theta, b, B, k):
    b1, theta_p, _ = effective_field(theta, B, b)
    c = np.cos(theta - theta_p)
    c2 = c * c
    return (0.25 * (1 + c2) + 0.25 * (1 - c2) * (g(b1, k) + g(B, k))
            + 0.125 * (1 - c) ** 2 * g(b1 + B, k) + 0.125 * (1 + c) ** 2 * g(b1 - B, k))


def _branch_numeric(theta: float, b: float, B: float, k: float) -> float:
    # 4-level electron problem H = B n.(S1 + S2) + b S2z
    from .dynamics import yield_from_hamiltonian
    from .model import electron_spin_sum, singlet_vector

    s = electron_spin_sum((2, 2))
    sz2 = np.kron(np.eye(2), np.diag([0.5, -0.5]))
    h = B * (math.sin(theta) * s[0] + math.cos(theta) * s[2]) + b * sz2
    sv = singlet_vector()
    p = np.outer(sv, sv.conj())
    return float(yield_from_hamiltonian(h, p, p, k))


def yield_branch(theta, b, params: AnalyticParams, with_info: bool = False):
    """Singlet yield for a fixed nuclear branch with static field ``b`` on electron 2.

    Vectorized over ``theta``.  Points where the effective field vanishes
    (theta' undefined) are evaluated numerically instead; with
    ``with_info`` a :class:`BranchYield` also marks those points.
    """
    theta_arr = np.asarray(theta, dtype=float)
    out = np.asarray(_branch_closed_form(theta_arr, b, params.B, params.k), dtype=float)
    degenerate = np.broadcast_to(np.asarray(effective_field(theta_arr, params.B, b).degenerate), out.shape)
    if np.any(degenerate):
        out = np.array(out, copy=True)
        flat_t = np.broadcast_to(theta_arr, out.shape)
        for idx in zip(*np.nonzero(degenerate)) if out.ndim else [()]:
            log.info("degenerate effective field at theta=%g, b=%g: numeric branch", flat_t[idx], b)
            out[idx] = _branch_numeric(float(flat_t[idx]), b, params.B, params.k)
    value = float(out) if out.ndim == 0 else out
    if with_info:
        return BranchYield(value, bool(degenerate) if out.ndim == 0 else degenerate.copy())
    return value


def yield_avg(theta, params: AnalyticParams):
    """Nuclear-branch average 1/2 [Phi(theta, a/2) + Phi(theta, -a/2)]."""
    half = params.a / 2
    return 0.5 * (yield_branch(theta, half, params) + yield_branch(theta, -half, params))


def regime1_approx(theta):
    """Large-coupling limit 1/4 (1 + cos^2 theta)."""
    return 0.25 * (1 + np.cos(theta) ** 2)


def weakfield_sensitivity(B, k):
    """Sensitivity B^2 / (4 (k^2 + B^2)) of the large-coupling compass."""
    if not k > 0:
        raise ValueError(f"k must be positive, got {k}")
    return np.square(B) / (4 * (k * k + np.square(B)))
