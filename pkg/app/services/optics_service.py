from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Optional, Tuple

import numpy as np

from app.services.information_service import InfoMatrix, probability_fim
from app.services.protocol_service import MeasurementStrength, OutcomeDistribution, PhasePair
from app.services.qcore_service import Qubit4State
from app.utils.logger import get_logger

logger = get_logger(__name__)

_EXACT_COMPENSATION = 1e-9
_ZERO_SUCCESS = 1e-15

# Arm states ordered {HH, HV, VH, VV}: first letter = polarisation in the system
# output arm, second = polarisation in the meter output arm.
_CZ = np.diag([1.0, 1.0, 1.0, -1.0])
_MEASURE_W = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)  # rows <D|, <A|


# ---------- domain types ----------

@dataclass(frozen=True)
class PPBSModel:
    """
    Partially-polarizing beam splitter. Defaults T_H=1, T_V=1/3 give an exact
    C-Z after compensation; T_H=2/3 is the uncompensable experimental variant.
    """

    t_h: float = 1.0
    t_v: float = 1.0 / 3.0
    visibility: float = 1.0
    rescaling: bool = True

    def __post_init__(self) -> None:
        for name in ("t_h", "t_v", "visibility"):
            val = float(getattr(self, name))
            if not (math.isfinite(val) and 0.0 <= val <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {val}")
            object.__setattr__(self, name, val)

    def transmission(self) -> np.ndarray:
        return np.sqrt([self.t_h, self.t_v])

    def reflection(self) -> np.ndarray:
        return np.sqrt([1.0 - self.t_h, 1.0 - self.t_v])


@dataclass(frozen=True)
class Compensation:
    """Per-photon diagonal attenuations (H, V) applied before the gate."""

    system: Tuple[float, float]
    meter: Tuple[float, float]
    scale: float      # post-selected amplitude scale relative to the ideal C-Z
    residual: float   # relative Frobenius distance to scale * C-Z

    @property
    def exact(self) -> bool:
        return self.residual <= _EXACT_COMPENSATION


@dataclass(frozen=True)
class PostselectedMap:
    """
    Coincidence branch of the PPBS. `transmitted` keeps each photon in its arm,
    `reflected` swaps arms (|x,y> -> |y,x>); the coherent map is their difference.
    """

    transmitted: np.ndarray
    reflected: np.ndarray
    visibility: float
    compensation: Optional[Compensation] = None

    @property
    def matrix(self) -> np.ndarray:
        return self.transmitted - self.reflected

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.matrix, compute_uv=False)

    def coincidence_weights(self, psi: np.ndarray) -> np.ndarray:
        """
        Unnormalised probabilities of the four arm states for an input
        two-photon amplitude vector: coherent fraction v interferes, the rest
        adds the two branches at the probability level.
        """
        v = self.visibility
        coherent = np.abs(psi @ self.matrix.T) ** 2
        incoherent = np.abs(psi @ self.transmitted.T) ** 2 + np.abs(psi @ self.reflected.T) ** 2
        return v * coherent + (1.0 - v) * incoherent

    def success_probability(self, psi: np.ndarray) -> float:
        return float(np.sum(self.coincidence_weights(np.asarray(psi))))


@dataclass(frozen=True)
class ImperfectDistribution:
    distribution: OutcomeDistribution
    success_probability: float
    branch: Optional[Qubit4State] = None  # coherent coincidence state after the gate


# ---------- coincidence map ----------

def _solve_compensation(matrix: np.ndarray) -> Optional[Compensation]:
    """
    Least squares on log|diag| for attenuation ratios (a_H/a_V, b_H/b_V) that
    equalise the post-selected diagonal with a C-Z; exact when the map allows it.
    """
    d = np.diag(matrix)
    if np.any(np.abs(d) < 1e-12):
        return None
    m = np.log(np.abs(d))
    design = np.array([[1.0, 1.0, -1.0], [1.0, 0.0, -1.0], [0.0, 1.0, -1.0], [0.0, 0.0, -1.0]])
    (u, w, _), *_ = np.linalg.lstsq(design, -m, rcond=None)

    sys_att = np.array([math.exp(u), 1.0])
    met_att = np.array([math.exp(w), 1.0])
    sys_att /= sys_att.max()
    met_att /= met_att.max()

    effective = matrix @ np.diag(np.kron(sys_att, met_att))
    scale = float(np.sum(effective * _CZ) / np.sum(_CZ * _CZ))
    if scale <= 0.0:
        residual = math.inf
    else:
        residual = float(np.linalg.norm(effective - scale * _CZ) / np.linalg.norm(scale * _CZ))
    return Compensation(
        system=(float(sys_att[0]), float(sys_att[1])),
        meter=(float(met_att[0]), float(met_att[1])),
        scale=scale,
        residual=residual,
    )


@lru_cache(maxsize=64)
def ppbs_coincidence_map(model: PPBSModel) -> PostselectedMap:
    t, r = model.transmission(), model.reflection()
    transmitted = np.zeros((4, 4))
    reflected = np.zeros((4, 4))
    for x in range(2):
        for y in range(2):
            src = 2 * x + y
            transmitted[src, src] = t[x] * t[y]
            reflected[2 * y + x, src] += r[x] * r[y]

    comp = None
    if model.rescaling:
        comp = _solve_compensation(transmitted - reflected)
        if comp is None:
            logger.warning("PPBS T_H=%.4g T_V=%.4g has a vanishing diagonal entry; no compensation exists",
                           model.t_h, model.t_v)
        elif not comp.exact:
            logger.warning("PPBS T_H=%.4g T_V=%.4g admits no exact C-Z compensation (residual %.3e)",
                           model.t_h, model.t_v, comp.residual)
        else:
            logger.debug("PPBS compensation system=%s meter=%s scale=%.6g", comp.system, comp.meter, comp.scale)
    transmitted.setflags(write=False)
    reflected.setflags(write=False)
    return PostselectedMap(transmitted, reflected, model.visibility, comp)


# ---------- imperfect protocol ----------

def _gate_input(t1: np.ndarray, K: float, gate: PostselectedMap, rescaling: bool) -> np.ndarray:
    """Two-photon input (..., 4) in H/V arm order, attenuated when rescaling."""
    strength = MeasurementStrength(K)
    system = np.stack([np.cos(2.0 * t1), np.sin(2.0 * t1)], axis=-1)
    meter = np.array([strength.kappa + strength.lam, strength.kappa - strength.lam]) / math.sqrt(2.0)
    if rescaling:
        if gate.compensation is None:
            raise ValueError("Rescaling requested but this PPBS admits no compensation")
        system = system * np.asarray(gate.compensation.system)
        meter = meter * np.asarray(gate.compensation.meter)
    return np.einsum("...i,j->...ij", system, meter).reshape(t1.shape + (4,))


def postselect(gate: PostselectedMap, state: Qubit4State) -> Qubit4State:
    """
    Coherent coincidence branch of `state` through the gate: normalised
    amplitudes, with the branch probability folded into `weight`.
    """
    out = gate.matrix @ state.amplitudes
    p = float(np.vdot(out, out).real)
    if p <= _ZERO_SUCCESS:
        raise RuntimeError("Zero post-selection probability for the requested settings")
    return Qubit4State(out / math.sqrt(p), weight=state.weight * p)


def _imperfect_weights(theta1, theta2, K: float, gate: PostselectedMap, rescaling: bool) -> np.ndarray:
    """Unnormalised outcome weights (..., 4) in OUTCOMES order; broadcasts over phases."""
    t1 = np.asarray(theta1, dtype=float)
    t2 = np.asarray(theta2, dtype=float)
    t1, t2 = np.broadcast_arrays(t1, t2)
    psi = _gate_input(t1, K, gate, rescaling)

    c2, s2 = np.cos(2.0 * t2), np.sin(2.0 * t2)
    rot = np.stack([np.stack([c2, -s2], axis=-1), np.stack([s2, c2], axis=-1)], axis=-2)

    def outcome_amplitudes(branch: np.ndarray) -> np.ndarray:
        phi = branch.reshape(t1.shape + (2, 2))                # [system, meter]
        phi = np.einsum("...si,...im->...sm", rot, phi)        # U(theta2) on the system arm
        amps = np.einsum("...sm,wm->...ws", phi, _MEASURE_W)   # (meter D/A, system H/V)
        return amps.reshape(t1.shape + (4,))

    v = gate.visibility
    coherent = outcome_amplitudes(psi @ gate.matrix.T) ** 2
    incoherent = (
        outcome_amplitudes(psi @ gate.transmitted.T) ** 2
        + outcome_amplitudes(psi @ gate.reflected.T) ** 2
    )
    return v * coherent + (1.0 - v) * incoherent


def imperfect_probabilities(theta1, theta2, K: float, model: PPBSModel) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised renormalised probabilities (..., 4) and success probabilities (...)."""
    gate = ppbs_coincidence_map(model)
    weights = _imperfect_weights(theta1, theta2, K, gate, model.rescaling)
    success = weights.sum(axis=-1)
    if np.any(success <= _ZERO_SUCCESS):
        raise RuntimeError("Zero post-selection probability for the requested settings")
    return weights / success[..., None], success


def imperfect_distribution(
    phases: PhasePair, strength: MeasurementStrength, model: PPBSModel
) -> ImperfectDistribution:
    """
    Protocol with the C-Z replaced by the post-selected PPBS. Amplitudes are
    reported as magnitudes sqrt(p) since a partially distinguishable mixture
    has no single signed amplitude.
    """
    probs, success = imperfect_probabilities(phases.theta1, phases.theta2, strength.K, model)
    dist = OutcomeDistribution(amplitudes=np.sqrt(probs), probabilities=probs)
    gate = ppbs_coincidence_map(model)
    psi = _gate_input(np.asarray(phases.theta1, dtype=float), strength.K, gate, model.rescaling)
    state = Qubit4State(psi)
    coherent = float(np.sum(np.abs(gate.matrix @ state.amplitudes) ** 2))
    branch = postselect(gate, state) if coherent > _ZERO_SUCCESS else None
    return ImperfectDistribution(dist, float(success), branch)


def effective_fim(phases: PhasePair, strength: MeasurementStrength, model: PPBSModel) -> InfoMatrix:
    """Classical FI of the imperfect model, central differences with step 1e-5."""

    def probs(ph: PhasePair) -> np.ndarray:
        return imperfect_probabilities(ph.theta1, ph.theta2, strength.K, model)[0]

    return probability_fim(probs, phases, step=1e-5)


# ---------- two-photon mode-operator oracle ----------

def _expand_creation(model: PPBSModel, port: str, pol: int):
    """Output expansion of one input creation operator: [(arm, pol, coefficient)]."""
    t, r = model.transmission()[pol], model.reflection()[pol]
    if port == "a":
        return [("c", pol, t), ("d", pol, r)]
    return [("d", pol, t), ("c", pol, -r)]


def mode_operator_amplitudes(model: PPBSModel, psi_in: np.ndarray) -> np.ndarray:
    """
    Brute-force coincidence amplitudes for indistinguishable photons: expand
    sum psi[x,y] a_x^dag b_y^dag through the PPBS and read off the c_p^dag d_q^dag terms.
    """
    psi = np.asarray(psi_in, dtype=complex).reshape(2, 2)
    terms: Dict[Tuple, complex] = defaultdict(complex)
    for x in range(2):
        for y in range(2):
            if psi[x, y] == 0:
                continue
            for arm1, p1, k1 in _expand_creation(model, "a", x):
                for arm2, p2, k2 in _expand_creation(model, "b", y):
                    key = tuple(sorted([(arm1, p1), (arm2, p2)]))
                    terms[key] += psi[x, y] * k1 * k2

    out = np.zeros(4, dtype=complex)
    for key, amp in terms.items():
        arms = {arm: pol for arm, pol in key}
        if len(arms) == 2:  # one photon per arm
            out[2 * arms["c"] + arms["d"]] += amp
    return out


def mode_operator_probabilities(model: PPBSModel, psi_in: np.ndarray) -> np.ndarray:
    """
    Coincidence probabilities with scalar visibility: a fraction v of
    indistinguishable pairs plus 1-v of pairs tagged with orthogonal internal labels.
    """
    psi = np.asarray(psi_in, dtype=complex).reshape(2, 2)
    tagged: Dict[Tuple, complex] = defaultdict(complex)
    for x in range(2):
        for y in range(2):
            if psi[x, y] == 0:
                continue
            for arm1, p1, k1 in _expand_creation(model, "a", x):
                for arm2, p2, k2 in _expand_creation(model, "b", y):
                    tagged[((arm1, p1, 0), (arm2, p2, 1))] += psi[x, y] * k1 * k2

    distinguishable = np.zeros(4)
    for ((arm1, p1, _), (arm2, p2, _)), amp in tagged.items():
        if arm1 == arm2:
            continue
        pols = {arm1: p1, arm2: p2}
        distinguishable[2 * pols["c"] + pols["d"]] += abs(amp) ** 2

    indistinguishable = np.abs(mode_operator_amplitudes(model, psi_in)) ** 2
    v = model.visibility
    return v * indistinguishable + (1.0 - v) * distinguishable
