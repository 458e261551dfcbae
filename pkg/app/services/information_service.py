from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal, Tuple

import numpy as np

from app.services.protocol_service import (
    MeasurementStrength,
    PhasePair,
    amplitude_jacobian,
    full_state,
)
from app.utils.logger import get_logger

logger = get_logger(__name__)

InfoKind = Literal["classical", "quantum"]

SINGULAR_DET = 1e-12   # determinants below this are reported as sloppy, not inverted
_PSD_TOL = 1e-9
_QFIM_PATH_TOL = 1e-4  # agreement required between closed-form and finite-difference QFIM
_P_FLOOR = 1e-12       # outcomes below this are dropped from finite-difference FI


# ---------- domain types ----------

@dataclass(frozen=True)
class InfoMatrix:
    """Symmetric 2x2 information matrix in rad^-2."""

    m11: float
    m12: float
    m22: float
    kind: InfoKind = "classical"

    @classmethod
    def from_array(cls, arr: np.ndarray, kind: InfoKind) -> InfoMatrix:
        a = np.asarray(arr, dtype=float)
        return cls(float(a[0, 0]), float(0.5 * (a[0, 1] + a[1, 0])), float(a[1, 1]), kind)

    def as_array(self) -> np.ndarray:
        return np.array([[self.m11, self.m12], [self.m12, self.m22]])

    @property
    def determinant(self) -> float:
        return self.m11 * self.m22 - self.m12 * self.m12

    @property
    def trace(self) -> float:
        return self.m11 + self.m22

    def is_psd(self, tol: float = _PSD_TOL) -> bool:
        return bool(np.all(np.linalg.eigvalsh(self.as_array()) >= -tol))


@dataclass(frozen=True)
class SloppinessReport:
    stiff_value: float
    sloppy_value: float
    stiff_dir: Tuple[float, float]
    sloppy_dir: Tuple[float, float]
    determinant: float
    condition_number: float  # math.inf when singular


@dataclass(frozen=True)
class CovarianceBound:
    """Cramer-Rao floor Sigma >= M^-1 / N, in rad^2."""

    var1: float
    var2: float
    cov: float
    shots: int
    unbounded: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([[self.var1, self.cov], [self.cov, self.var2]])

    @property
    def correlation(self) -> float:
        if self.unbounded:
            return math.nan
        return self.cov / math.sqrt(self.var1 * self.var2)


# ---------- Fisher information ----------

def classical_fim(phases: PhasePair, strength: MeasurementStrength) -> InfoMatrix:
    """
    F_jk = sum_x dp_j dp_k / p, evaluated as 4 J^T J with J the amplitude
    Jacobian, which stays finite where some p(x) = 0.
    """
    J = amplitude_jacobian(phases, strength)
    return InfoMatrix.from_array(4.0 * J.T @ J, "classical")


def probability_fim(
    prob_fn: Callable[[PhasePair], np.ndarray],
    phases: PhasePair,
    step: float = 1e-5,
    floor: float = _P_FLOOR,
) -> InfoMatrix:
    """Classical FI of an arbitrary 4-outcome model by central finite differences."""
    p0 = np.asarray(prob_fn(phases), dtype=float)
    grads = []
    for j in range(2):
        dt = [0.0, 0.0]
        dt[j] = step
        plus = np.asarray(prob_fn(PhasePair(phases.theta1 + dt[0], phases.theta2 + dt[1])), dtype=float)
        minus = np.asarray(prob_fn(PhasePair(phases.theta1 - dt[0], phases.theta2 - dt[1])), dtype=float)
        grads.append((plus - minus) / (2.0 * step))
    g = np.stack(grads, axis=1)  # (4, 2)
    keep = p0 > floor
    F = (g[keep].T / p0[keep]) @ g[keep]
    return InfoMatrix.from_array(F, "classical")


# ---------- quantum Fisher information ----------

def qfim_closed_form(strength: MeasurementStrength) -> InfoMatrix:
    r = math.sqrt(max(0.0, 1.0 - strength.K ** 2))
    return InfoMatrix(16.0, 16.0 * r, 16.0, "quantum")


def qfim_numeric(phases: PhasePair, strength: MeasurementStrength, step: float = 1e-6) -> InfoMatrix:
    """
    Pure-state QFIM, Q_jk = 4 Re[<d_j Psi|d_k Psi> - <d_j Psi|Psi><Psi|d_k Psi>],
    with |Psi> from the circuit and central-difference derivatives.
    """
    psi = full_state(phases, strength).amplitudes
    derivs = []
    for j in range(2):
        dt = [0.0, 0.0]
        dt[j] = step
        plus = full_state(PhasePair(phases.theta1 + dt[0], phases.theta2 + dt[1]), strength).amplitudes
        minus = full_state(PhasePair(phases.theta1 - dt[0], phases.theta2 - dt[1]), strength).amplitudes
        derivs.append((plus - minus) / (2.0 * step))

    Q = np.empty((2, 2))
    for j in range(2):
        for k in range(2):
            term = np.vdot(derivs[j], derivs[k]) - np.vdot(derivs[j], psi) * np.vdot(psi, derivs[k])
            Q[j, k] = 4.0 * term.real
    return InfoMatrix.from_array(Q, "quantum")


def qfim(phases: PhasePair, strength: MeasurementStrength, *, check: bool = True) -> InfoMatrix:
    """Closed-form QFIM, cross-checked against the finite-difference path."""
    closed = qfim_closed_form(strength)
    if check:
        numeric = qfim_numeric(phases, strength)
        gap = float(np.max(np.abs(closed.as_array() - numeric.as_array())))
        logger.debug("qfim paths at K=%.6g differ by %.3e", strength.K, gap)
        if gap > _QFIM_PATH_TOL:
            raise RuntimeError(
                f"QFIM closed form and finite-difference path disagree by {gap:.3e} "
                f"at theta=({phases.theta1:.6g}, {phases.theta2:.6g}), K={strength.K:.6g}"
            )
    return closed


# ---------- bounds & diagnostics ----------

def crb(info: InfoMatrix, shots: int) -> CovarianceBound:
    """Inverse information over N shots; singular matrices yield an unbounded result."""
    shots = int(shots)
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    det = info.determinant
    if det < SINGULAR_DET:
        return CovarianceBound(math.inf, math.inf, math.inf, shots, unbounded=True)
    scale = 1.0 / (det * shots)
    return CovarianceBound(info.m22 * scale, info.m11 * scale, -info.m12 * scale, shots)


def _canonical(v: np.ndarray) -> Tuple[float, float]:
    v = v / np.hypot(v[0], v[1])
    if v[0] < 0 or (v[0] == 0 and v[1] < 0):
        v = -v
    return float(v[0]), float(v[1])


def sloppiness(info: InfoMatrix) -> SloppinessReport:
    """Closed-form 2x2 eigen-decomposition (trace/determinant)."""
    a, b, d = info.m11, info.m12, info.m22
    mean = 0.5 * (a + d)
    radius = math.hypot(0.5 * (a - d), b)
    stiff = mean + radius
    sloppy = max(0.0, mean - radius)

    if abs(b) > 1e-15 * max(1.0, abs(a), abs(d)):
        v = np.array([b, stiff - a])
    else:
        v = np.array([1.0, 0.0]) if a >= d else np.array([0.0, 1.0])
    stiff_dir = _canonical(v)
    sloppy_dir = _canonical(np.array([-stiff_dir[1], stiff_dir[0]]))

    det = info.determinant
    cond = math.inf if (det < SINGULAR_DET or sloppy <= 0.0) else stiff / sloppy
    return SloppinessReport(stiff, sloppy, stiff_dir, sloppy_dir, det, cond)


def stiff_sloppy_values(K: float) -> Tuple[float, float]:
    """F+ = 16(1 + sqrt(1-K^2)), F- = 16(1 - sqrt(1-K^2))."""
    r = math.sqrt(max(0.0, 1.0 - float(K) ** 2))
    return 16.0 * (1.0 + r), 16.0 * (1.0 - r)
