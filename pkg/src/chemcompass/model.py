"""Radical-pair problem instances and their operators.

Units: couplings and Zeeman frequencies are angular frequencies in
rad/us, rates (recombination ``k``, dephasing ``gamma``) are in 1/us and
magnetic fields are given in uT at the input boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .spin import embed, spin_operators

#: electron gyromagnetic ratio magnitude, rad us^-1 uT^-1 (CODATA 1.76085963e11 rad s^-1 T^-1)
GAMMA_E = 0.1760860

#: overall prefactor of the pure-dephasing dissipator, sum_k prefactor*(2 L rho L^+ - {L^+ L, rho})
DEPHASING_PREFACTOR = 0.25

ELECTRON_SITES = (0, 1)


def omega_from_field(b_uT: float) -> float:
    return GAMMA_E * b_uT


def field_from_omega(omega: float) -> float:
    return omega / GAMMA_E


@dataclass(frozen=True)
class HyperfineTensor:
    """3x3 hyperfine tensor (rad/us) and the electron (1 or 2) it couples to."""

    matrix: tuple = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    electron: int = 2

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"hyperfine tensor must be 3x3, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("hyperfine tensor entries must be finite")
        if self.electron not in (1, 2):
            raise ValueError(f"electron index must be 1 or 2, got {self.electron}")
        object.__setattr__(self, "matrix", tuple(tuple(float(x) for x in row) for row in m))

    @classmethod
    def axial(cls, a: float, electron: int = 2) -> "HyperfineTensor":
        return cls.diagonal(0.0, 0.0, a, electron=electron)

    @classmethod
    def diagonal(cls, tx: float, ty: float, tz: float, electron: int = 2) -> "HyperfineTensor":
        return cls(tuple(map(tuple, np.diag([tx, ty, tz]))), electron)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.matrix)

    @property
    def is_axial(self) -> bool:
        """True when only the zz element is non-zero (nuclear Sz conserved)."""
        m = self.array
        m[2, 2] = 0.0
        return not np.any(m)

    @property
    def zz(self) -> float:
        return self.matrix[2][2]


@dataclass(frozen=True)
class NucleusSpec:
    hyperfine: HyperfineTensor
    spin: float = 0.5

    def __post_init__(self):
        spin_operators(self.spin)  # validates the spin quantum number

    @property
    def dim(self) -> int:
        return int(round(2 * self.spin)) + 1


@dataclass(frozen=True)
class DephasingSpec:
    """Pure electron dephasing with rate ``gamma`` and correlation ``d``.

    ``d = 0`` is uncorrelated, ``d = 1`` perfectly correlated and
    ``d = -1`` anti-correlated noise.  Values outside [-1, 1] are accepted.
    """

    gamma: float = 0.0
    d: float = 0.0

    def __post_init__(self):
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ValueError(f"dephasing rate must be finite and >= 0, got {self.gamma}")
        if not math.isfinite(self.d):
            raise ValueError(f"correlation parameter must be finite, got {self.d}")

    @property
    def active(self) -> bool:
        return self.gamma > 0


@dataclass(frozen=True)
class FieldDirection:
    theta: float
    phi: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.theta <= math.pi + 1e-12):
            raise ValueError(f"polar angle must lie in [0, pi], got {self.theta}")

    @property
    def unit_vector(self) -> np.ndarray:
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)])


@dataclass(frozen=True)
class RadicalPairModel:
    """Field magnitude (uT), recombination rate k (1/us), nuclei and dephasing.

    Singlet and triplet recombination share the single rate ``k``.
    """

    B_uT: float
    k: float
    nuclei: tuple = ()
    dephasing: DephasingSpec = field(default_factory=DephasingSpec)

    def __post_init__(self):
        if not (self.k > 0 and math.isfinite(self.k)):
            raise ValueError(f"recombination rate must be positive, got {self.k}")
        if not (self.B_uT >= 0 and math.isfinite(self.B_uT)):
            raise ValueError(f"field magnitude must be finite and >= 0, got {self.B_uT}")
        object.__setattr__(self, "nuclei", tuple(self.nuclei))
        for n in self.nuclei:
            if not isinstance(n, NucleusSpec):
                raise TypeError(f"nuclei must be NucleusSpec instances, got {type(n).__name__}")

    @classmethod
    def one_nucleus(cls, B_uT: float, k: float, a: float, *, gamma: float = 0.0,
                    d: float = 0.0, electron: int = 2) -> "RadicalPairModel":
        """Reference-and-probe model with one axial spin-1/2 nucleus, T = diag(0, 0, a)."""
        nucleus = NucleusSpec(HyperfineTensor.axial(a, electron=electron))
        return cls(B_uT, k, (nucleus,), DephasingSpec(gamma, d))

    @property
    def omega_B(self) -> float:
        return omega_from_field(self.B_uT)

    @property
    def dims(self) -> tuple:
        return (2, 2) + tuple(n.dim for n in self.nuclei)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def nuclear_dim(self) -> int:
        return self.dim // 4

    @property
    def max_coupling(self) -> float:
        if not self.nuclei:
            return 0.0
        return max(float(np.max(np.abs(n.hyperfine.array))) for n in self.nuclei)

    @property
    def is_axial(self) -> bool:
        return all(n.hyperfine.is_axial for n in self.nuclei)

    def with_axial_coupling(self, a: float) -> "RadicalPairModel":
        """Copy with every nucleus replaced by an axial tensor of strength ``a``."""
        nuclei = tuple(
            replace(n, hyperfine=HyperfineTensor.axial(a, n.hyperfine.electron))
            for n in self.nuclei
        )
        return replace(self, nuclei=nuclei)

    def with_dephasing(self, gamma: float, d: float | None = None) -> "RadicalPairModel":
        d = self.dephasing.d if d is None else d
        return replace(self, dephasing=DephasingSpec(gamma, d))

    def to_dict(self) -> dict:
        return {
            "B_uT": self.B_uT,
            "k_per_us": self.k,
            "nuclei": [
                {
                    "spin": n.spin,
                    "electron": n.hyperfine.electron,
                    "tensor": [list(row) for row in n.hyperfine.matrix],
                }
                for n in self.nuclei
            ],
            "dephasing": {"gamma": self.dephasing.gamma, "d": self.dephasing.d},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RadicalPairModel":
        nuclei = tuple(
            NucleusSpec(HyperfineTensor(tuple(map(tuple, n["tensor"])), n.get("electron", 2)),
                        n.get("spin", 0.5))
            for n in data.get("nuclei", [])
        )
        deph = data.get("dephasing", {})
        return cls(data["B_uT"], data["k_per_us"], nuclei,
                   DephasingSpec(deph.get("gamma", 0.0), deph.get("d", 0.0)))


@lru_cache(maxsize=64)
def _site_operators(dims: tuple):
    """Embedded (Sx, Sy, Sz) triples for every site of ``dims``."""
    ops = []
    for site, d in enumerate(dims):
        local = spin_operators((d - 1) / 2)
        triple = tuple(embed(o, site, dims) for o in local)
        for o in triple:
            o.setflags(write=False)
        ops.append(triple)
    return tuple(ops)


def electron_spin_sum(dims: tuple) -> tuple:
    """Components of S1 + S2 in the full space."""
    s1, s2 = _site_operators(tuple(dims))[:2]
    return tuple(a + b for a, b in zip(s1, s2))


def zeeman_hamiltonian(field_vector, dims) -> np.ndarray:
    """omega . (S1 + S2) for a field vector already in rad/us."""
    dims = tuple(dims)
    s = electron_spin_sum(dims)
    h = np.zeros((int(np.prod(dims)),) * 2, dtype=complex)
    for w, op in zip(field_vector, s):
        if w:
            h += w * op
    return h


def hyperfine_hamiltonian(nuclei, dims) -> np.ndarray:
    dims = tuple(dims)
    ops = _site_operators(dims)
    h = np.zeros((int(np.prod(dims)),) * 2, dtype=complex)
    for j, nucleus in enumerate(nuclei):
        electron = ops[nucleus.hyperfine.electron - 1]
        spin = ops[2 + j]
        t = nucleus.hyperfine.array
        for p in range(3):
            for q in range(3):
                if t[p, q]:
                    h += t[p, q] * (electron[p] @ spin[q])
    return h


def build_hamiltonian(model: RadicalPairModel, direction: FieldDirection) -> np.ndarray:
    """Zeeman plus hyperfine Hamiltonian in rad/us.

    The Zeeman term is written with a positive sign, +omega_B n.(S1 + S2);
    the singlet yield does not depend on the overall sign of the field.
    """
    dims = model.dims
    h = zeeman_hamiltonian(model.omega_B * direction.unit_vector, dims)
    return h + hyperfine_hamiltonian(model.nuclei, dims)


def singlet_vector() -> np.ndarray:
    """(|ud> - |du>)/sqrt(2) in the (uu, ud, du, dd) basis."""
    return np.array([0.0, 1.0, -1.0, 0.0], dtype=complex) / math.sqrt(2)


def _electron_singlet_projector() -> np.ndarray:
    s = singlet_vector()
    return np.outer(s, s.conj())


def initial_state(model: RadicalPairModel) -> np.ndarray:
    """|S><S| tensored with the maximally mixed nuclear state."""
    nd = model.nuclear_dim
    return np.kron(_electron_singlet_projector(), np.eye(nd) / nd)


def singlet_projector(model: RadicalPairModel) -> np.ndarray:
    return np.kron(_electron_singlet_projector(), np.eye(model.nuclear_dim))


def dephasing_operators(spec: DephasingSpec, dims) -> list:
    """The two correlated-dephasing jump operators L1, L2.

    L1 = sqrt(gamma/(1+d^2)) (sz1 + d sz2), L2 = sqrt(gamma/(1+d^2)) (d sz1 + sz2),
    with Pauli sz.  They enter the generator with the overall factor
    ``DEPHASING_PREFACTOR``.
    """
    dims = tuple(dims)
    ops = _site_operators(dims)
    pz1 = 2 * ops[0][2]
    pz2 = 2 * ops[1][2]
    scale = math.sqrt(spec.gamma / (1 + spec.d ** 2))
    return [scale * (pz1 + spec.d * pz2), scale * (spec.d * pz1 + pz2)]
