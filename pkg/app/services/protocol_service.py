from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from app.services.qcore_service import (
    Qubit4State,
    apply,
    cz_gate,
    meter_amplitudes,
    meter_state,
    phase_gate,
    project,
    tensor,
    KET_H,
    KET_D,
    KET_A,
    KET_V,
)

# Outcome order (x_w, x_s): weak meter measurement in D/A, strong system measurement in H/V.
OUTCOMES: Tuple[str, ...] = ("DH", "DV", "AH", "AV")

# Canonical estimation domain, [0, 22.5] degrees.
DOMAIN_RAD = (0.0, math.pi / 8.0)


# ---------- domain types ----------

@dataclass(frozen=True)
class PhasePair:
    theta1: float
    theta2: float

    def __post_init__(self) -> None:
        for name in ("theta1", "theta2"):
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise ValueError(f"{name} must be finite, got {val}")
            object.__setattr__(self, name, val)

    @classmethod
    def from_degrees(cls, theta1_deg: float, theta2_deg: float) -> PhasePair:
        return cls(math.radians(theta1_deg), math.radians(theta2_deg))

    @property
    def degrees(self) -> Tuple[float, float]:
        return math.degrees(self.theta1), math.degrees(self.theta2)

    def swapped(self) -> PhasePair:
        return PhasePair(self.theta2, self.theta1)


@dataclass(frozen=True)
class MeasurementStrength:
    """K = 2 kappa^2 - 1 in [0, 1]; kappa, lam are the meter amplitudes on |D>, |A>."""

    K: float
    kappa: float = field(init=False)
    lam: float = field(init=False)

    def __post_init__(self) -> None:
        kappa, lam = meter_amplitudes(self.K)
        object.__setattr__(self, "K", float(self.K))
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "lam", lam)


@dataclass(frozen=True)
class OutcomeDistribution:
    amplitudes: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self) -> None:
        for name in ("amplitudes", "probabilities"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (4,):
                raise ValueError(f"{name} must have 4 entries, got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def as_dict(self) -> Dict[str, float]:
        return {k: float(p) for k, p in zip(OUTCOMES, self.probabilities)}


# ---------- closed-form model ----------

def outcome_amplitudes(theta1, theta2, kappa: float, lam: float) -> np.ndarray:
    """Real amplitudes A(x) in OUTCOMES order; broadcasts over array-valued phases."""
    t1 = np.asarray(theta1, dtype=float)
    t2 = np.asarray(theta2, dtype=float)
    c1, s1 = np.cos(2.0 * t1), np.sin(2.0 * t1)
    c2, s2 = np.cos(2.0 * t2), np.sin(2.0 * t2)
    return np.stack(
        [
            kappa * c1 * c2 - lam * s1 * s2,
            kappa * c1 * s2 + lam * s1 * c2,
            lam * c1 * c2 - kappa * s1 * s2,
            lam * c1 * s2 + kappa * s1 * c2,
        ],
        axis=-1,
    )


def outcome_probabilities_grid(theta1, theta2, K: float) -> np.ndarray:
    """Vectorised p(x | theta1, theta2, K), last axis in OUTCOMES order."""
    kappa, lam = meter_amplitudes(K)
    return outcome_amplitudes(theta1, theta2, kappa, lam) ** 2


def outcome_distribution(phases: PhasePair, strength: MeasurementStrength) -> OutcomeDistribution:
    amps = outcome_amplitudes(phases.theta1, phases.theta2, strength.kappa, strength.lam)
    return OutcomeDistribution(amplitudes=amps, probabilities=amps ** 2)


def amplitude_jacobian(phases: PhasePair, strength: MeasurementStrength) -> np.ndarray:
    """4x2 matrix of dA(x)/dtheta_j, using dc/dtheta = -2s and ds/dtheta = 2c."""
    kappa, lam = strength.kappa, strength.lam
    c1, s1 = math.cos(2.0 * phases.theta1), math.sin(2.0 * phases.theta1)
    c2, s2 = math.cos(2.0 * phases.theta2), math.sin(2.0 * phases.theta2)
    return 2.0 * np.array(
        [
            [-kappa * s1 * c2 - lam * c1 * s2, -kappa * c1 * s2 - lam * s1 * c2],
            [-kappa * s1 * s2 + lam * c1 * c2, kappa * c1 * c2 - lam * s1 * s2],
            [-lam * s1 * c2 - kappa * c1 * s2, -lam * c1 * s2 - kappa * s1 * c2],
            [-lam * s1 * s2 + kappa * c1 * c2, lam * c1 * c2 - kappa * s1 * s2],
        ]
    )


# ---------- circuit path (qcore) ----------

def full_state(phases: PhasePair, strength: MeasurementStrength) -> Qubit4State:
    """|Psi> = (U(theta2) x I) C_Z (U(theta1) x I) |H>|mu>."""
    psi = tensor(KET_H, meter_state(strength.K))
    psi = apply(phase_gate(phases.theta1), psi, target="system")
    psi = apply(cz_gate(), psi)
    return apply(phase_gate(phases.theta2), psi, target="system")


def circuit_distribution(phases: PhasePair, strength: MeasurementStrength) -> OutcomeDistribution:
    """
    The same four-outcome model obtained by simulating the circuit and
    measuring the meter in D/A, then the system in H/V.
    """
    psi = full_state(phases, strength)
    m = psi.matrix()
    amps, probs = [], []
    for meter_label, meter_ket in (("D", KET_D), ("A", KET_A)):
        weak = project(psi, "meter", "DA", meter_label)
        for sys_ket in (KET_H, KET_V):
            amps.append(float((sys_ket.amplitudes.conj() @ m @ meter_ket.amplitudes.conj()).real))
            if weak.collapsed is None:
                probs.append(0.0)
                continue
            overlap = np.vdot(sys_ket.amplitudes, weak.collapsed.amplitudes)
            probs.append(weak.probability * float(abs(overlap) ** 2))
    return OutcomeDistribution(amplitudes=amps, probabilities=probs)
