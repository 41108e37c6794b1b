"""Dense spin-operator algebra.

Basis conventions used throughout the package:

* tensor factors are ordered (electron 1, electron 2, nuclei as declared);
* each single-spin basis is the Sz eigenbasis in descending m;
* operators are vectorized column-major (Fortran order), so that
  ``vec(A @ X @ B) == kron(B.T, A) @ vec(X)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache, reduce

import numpy as np

HERMITIAN_TOL = 1e-10


class NotHermitianError(ValueError):
    pass


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition number {condition:.3e})")
        self.condition = condition


@dataclass(frozen=True, eq=False)
class SpinOperators:
    s: float
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray

    @property
    def dim(self) -> int:
        return self.sz.shape[0]

    def __iter__(self):
        return iter((self.sx, self.sy, self.sz))


def _check_spin(s) -> Fraction:
    two_s = Fraction(s).limit_denominator(1000) * 2
    if two_s.denominator != 1 or two_s <= 0 or abs(float(two_s) - 2 * float(s)) > 1e-12:
        raise ValueError(f"spin quantum number must be a positive half-integer, got {s!r}")
    return two_s / 2


@lru_cache(maxsize=None)
def _spin_matrices(two_s: int):
    s = two_s / 2
    m = s - np.arange(two_s + 1)
    sz = np.diag(m).astype(complex)
    # <m+1|S+|m> on the superdiagonal (descending-m ordering)
    sp = np.diag(np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1)), 1).astype(complex)
    sm = sp.conj().T
    sx = (sp + sm) / 2
    sy = (sp - sm) / 2j
    for a in (sx, sy, sz):
        a.setflags(write=False)
    return sx, sy, sz


def spin_operators(s) -> SpinOperators:
    """Angular-momentum matrices for spin ``s`` in the descending-m Sz basis."""
    two_s = int(_check_spin(s) * 2)
    sx, sy, sz = _spin_matrices(two_s)
    return SpinOperators(two_s / 2, sx, sy, sz)


def embed(op: np.ndarray, site: int, dims) -> np.ndarray:
    """Lift a single-factor operator to the full tensor-product space."""
    dims = [int(d) for d in dims]
    if not 0 <= site < len(dims):
        raise IndexError(f"site {site} out of range for {len(dims)} subsystems")
    op = np.asarray(op)
    if op.shape != (dims[site], dims[site]):
        raise ValueError(
            f"operator shape {op.shape} does not match subsystem dimension {dims[site]}"
        )
    left = int(np.prod(dims[:site], dtype=int))
    right = int(np.prod(dims[site + 1:], dtype=int))
    out = op
    if left > 1:
        out = np.kron(np.eye(left), out)
    if right > 1:
        out = np.kron(out, np.eye(right))
    return out.astype(complex, copy=False)


def kron_all(ops) -> np.ndarray:
    return reduce(np.kron, ops)


def hermiticity_error(m: np.ndarray) -> float:
    m = np.asarray(m)
    return float(np.max(np.abs(m - m.conj().swapaxes(-1, -2)), initial=0.0))


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return hermiticity_error(m) <= tol


def hermitian_eig(m: np.ndarray, tol: float = HERMITIAN_TOL):
    """Eigen-decomposition of a Hermitian matrix (or a stack of them).

    Returns ascending real eigenvalues and the unitary matrix of column
    eigenvectors.
    """
    m = np.asarray(m)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError(f"expected square matrix, got shape {m.shape}")
    err = hermiticity_error(m)
    if err > tol:
        raise NotHermitianError(f"matrix is not Hermitian: max |M - M^H| = {err:.3e}")
    return np.linalg.eigh(m)


def solve_linear(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected square matrix, got shape {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise ValueError(f"right-hand side of length {b.shape[0]} does not conform to {a.shape}")
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        raise SingularSystemError("singular linear system", float(np.linalg.cond(a))) from None
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("linear solve produced non-finite values", float(np.linalg.cond(a)))
    return x


def vec(m: np.ndarray) -> np.ndarray:
    """Column-major vectorization."""
    return np.asarray(m).reshape(-1, order="F")


def unvec(v: np.ndarray, n: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    if n is None:
        n = int(round(np.sqrt(v.shape[-1])))
    if n * n != v.shape[-1]:
        raise ValueError(f"vector of length {v.shape[-1]} is not a vectorized square matrix")
    return v.reshape(n, n, order="F")


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a
