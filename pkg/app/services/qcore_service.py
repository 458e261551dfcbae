from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, NamedTuple, Optional, Union

import numpy as np

# ---------- small constants & utilities ----------

_TOL = 1e-12          # closure tolerance for norms / unitarity
_ZERO_BRANCH = 1e-15  # below this a projected branch is treated as empty

Qubit = Literal["system", "meter"]
Basis = Literal["HV", "DA"]

_SQRT_HALF = 1.0 / math.sqrt(2.0)


def _frozen(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=complex)
    if arr.shape != shape:
        raise ValueError(f"Expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


# ---------- domain types ----------

@dataclass(frozen=True)
class Qubit2State:
    """Single-qubit pure state in the ordered basis {|H>, |V>}."""

    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "amplitudes", _frozen(self.amplitudes, (2,)))

    @property
    def norm2(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def normalize(self) -> Qubit2State:
        n2 = self.norm2
        if n2 <= _ZERO_BRANCH:
            raise ValueError("Cannot normalize a zero state")
        return Qubit2State(self.amplitudes / math.sqrt(n2))


@dataclass(frozen=True)
class Qubit4State:
    """
    Two-qubit pure state in {|HH>, |HV>, |VH>, |VV>}, system first.

    `weight` is 1 for an ordinary state; a post-selected branch stores its
    normalized amplitudes plus the branch probability in `weight`.
    """

    amplitudes: np.ndarray
    weight: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "amplitudes", _frozen(self.amplitudes, (4,)))
        w = float(self.weight)
        if not 0.0 <= w <= 1.0 + _TOL:
            raise ValueError(f"weight must lie in [0, 1], got {w}")
        object.__setattr__(self, "weight", min(w, 1.0))

    @property
    def norm2(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    @property
    def normalized(self) -> bool:
        return abs(self.norm2 - 1.0) <= _TOL

    def matrix(self) -> np.ndarray:
        """Amplitudes as a 2x2 array indexed [system, meter]."""
        return self.amplitudes.reshape(2, 2)

    def normalize(self) -> Qubit4State:
        n2 = self.norm2
        if n2 <= _ZERO_BRANCH:
            raise ValueError("Cannot normalize a zero state")
        return Qubit4State(self.amplitudes / math.sqrt(n2), weight=self.weight)


@dataclass(frozen=True)
class Gate:
    """2x2 or 4x4 complex matrix acting on the ordered bases above."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.entries, dtype=complex)
        if arr.shape not in {(2, 2), (4, 4)}:
            raise ValueError(f"Gate must be 2x2 or 4x4, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def is_unitary(self, tol: float = _TOL) -> bool:
        g = self.entries
        return bool(np.allclose(g.conj().T @ g, np.eye(self.dim), atol=tol, rtol=0.0))

    def __matmul__(self, other: Gate) -> Gate:
        if self.dim != other.dim:
            raise ValueError(f"Cannot compose {self.dim}x{self.dim} with {other.dim}x{other.dim}")
        return Gate(self.entries @ other.entries)


class Projection(NamedTuple):
    probability: float
    collapsed: Optional[Qubit2State]  # None when the branch is empty


# ---------- basis states ----------

KET_H = Qubit2State([1.0, 0.0])
KET_V = Qubit2State([0.0, 1.0])
KET_D = Qubit2State([_SQRT_HALF, _SQRT_HALF])
KET_A = Qubit2State([_SQRT_HALF, -_SQRT_HALF])
KET_R = Qubit2State([_SQRT_HALF, 1j * _SQRT_HALF])
KET_L = Qubit2State([_SQRT_HALF, -1j * _SQRT_HALF])

_BASIS_KETS = {
    "HV": {"H": KET_H, "V": KET_V},
    "DA": {"D": KET_D, "A": KET_A},
}


# ---------- gates ----------

def phase_gate(theta: float) -> Gate:
    """U(theta) = exp(-2i theta Y): a real rotation by 2*theta in the H/V plane."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError(f"theta must be finite, got {theta}")
    c, s = math.cos(2.0 * theta), math.sin(2.0 * theta)
    return Gate([[c, -s], [s, c]])


def cz_gate() -> Gate:
    return Gate(np.diag([1.0, 1.0, 1.0, -1.0]))


def hadamard_gate() -> Gate:
    return Gate(_SQRT_HALF * np.array([[1.0, 1.0], [1.0, -1.0]]))


def identity_gate(dim: int = 2) -> Gate:
    return Gate(np.eye(dim))


# ---------- states ----------

def meter_amplitudes(K: float) -> tuple[float, float]:
    """(kappa, lambda) with K = 2 kappa^2 - 1 and kappa >= lambda >= 0."""
    K = float(K)
    if not (math.isfinite(K) and 0.0 <= K <= 1.0):
        raise ValueError(f"K must lie in [0, 1], got {K}")
    return math.sqrt((1.0 + K) / 2.0), math.sqrt((1.0 - K) / 2.0)


def meter_state(K: float) -> Qubit2State:
    kappa, lam = meter_amplitudes(K)
    return Qubit2State(kappa * KET_D.amplitudes + lam * KET_A.amplitudes)


def tensor(system: Qubit2State, meter: Qubit2State) -> Qubit4State:
    return Qubit4State(np.kron(system.amplitudes, meter.amplitudes))


def apply(gate: Gate, state: Union[Qubit2State, Qubit4State], target: Optional[Qubit] = None):
    """Matrix-vector product, embedding a 2x2 gate on the chosen qubit of a 4-state."""
    if isinstance(state, Qubit2State):
        if gate.dim != 2:
            raise ValueError("A 4x4 gate cannot act on a single qubit")
        return Qubit2State(gate.entries @ state.amplitudes)

    if gate.dim == 4:
        if target is not None:
            raise ValueError("A 4x4 gate acts on both qubits; target must be None")
        full = gate.entries
    elif target == "system":
        full = np.kron(gate.entries, np.eye(2))
    elif target == "meter":
        full = np.kron(np.eye(2), gate.entries)
    else:
        raise ValueError("A 2x2 gate on a two-qubit state needs target 'system' or 'meter'")
    return Qubit4State(full @ state.amplitudes, weight=state.weight)


# ---------- measurement ----------

def project(state: Qubit4State, qubit: Qubit, basis: Basis, outcome: str) -> Projection:
    """
    Project one qubit of a normalized two-qubit state on a basis vector.
    Returns the branch probability and the renormalized state of the other qubit.
    """
    if not state.normalized:
        raise ValueError(f"project needs a normalized state (norm^2={state.norm2:.15g})")
    try:
        ket = _BASIS_KETS[basis][outcome]
    except KeyError:
        raise ValueError(f"Unknown outcome {outcome!r} for basis {basis!r}") from None

    m = state.matrix()
    bra = ket.amplitudes.conj()
    if qubit == "meter":
        branch = m @ bra
    elif qubit == "system":
        branch = bra @ m
    else:
        raise ValueError(f"qubit must be 'system' or 'meter', got {qubit!r}")

    prob = float(np.vdot(branch, branch).real)
    if prob <= _ZERO_BRANCH:
        return Projection(0.0, None)
    return Projection(prob, Qubit2State(branch / math.sqrt(prob)))


def schmidt_coefficients(state: Qubit4State) -> np.ndarray:
    """Descending Schmidt coefficients of the normalized state."""
    sv = np.linalg.svd(state.matrix(), compute_uv=False)
    return sv / math.sqrt(state.norm2)


def reduced_state(state: Qubit4State, qubit: Qubit) -> np.ndarray:
    m = state.matrix() / math.sqrt(state.norm2)
    if qubit == "system":
        return m @ m.conj().T
    if qubit == "meter":
        return m.T @ m.conj()
    raise ValueError(f"qubit must be 'system' or 'meter', got {qubit!r}")


def reduced_purity(state: Qubit4State, qubit: Qubit) -> float:
    rho = reduced_state(state, qubit)
    return float(np.trace(rho @ rho).real)
