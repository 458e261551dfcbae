from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, List, Literal, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from app.services.optics_service import PPBSModel, imperfect_probabilities
from app.services.protocol_service import (
    DOMAIN_RAD,
    OUTCOMES,
    MeasurementStrength,
    PhasePair,
    outcome_probabilities_grid,
)
from app.utils.logger import get_logger

logger = get_logger(__name__)

Objective = Literal["lsq", "mle"]
ModelKind = Literal["ideal", "optics"]
Seed = Union[int, Sequence[int]]

# ---------- constants ----------

CALIBRATION_STEP_DEG = 2.5
COARSE_STEP_DEG = 0.25
FINE_STEP_DEG = 0.001
VALLEY_TOL = 1e-6          # objective slack defining the near-minimal valley
VALLEY_FRACTION = 0.25     # valley span / grid diagonal above which the estimate is degenerate
TIE_TOL = 1e-12            # coarse-grid values this close to the minimum are ties
DEFAULT_REPLICAS = 500
MAX_REDRAWS = 10
CALIBRATION_SHOT_RATIO = 50  # calibration : estimation shots (5 s vs 0.1 s per setting)

_K_MATCH_TOL = 1e-9
_DOMAIN_SLACK = 1e-12
_P_CLIP = 1e-300
_IMPROVE_TOL = 1e-15  # pattern-search moves need at least this much decrease
_MAX_POLLS = 20000


# ---------- domain types ----------

@dataclass(frozen=True)
class CountTable:
    """Observed shot counts in OUTCOMES order (DH, DV, AH, AV)."""

    counts: np.ndarray
    K: float
    truth: Optional[PhasePair] = None
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        arr = np.asarray(self.counts)
        if arr.shape != (4,):
            raise ValueError(f"counts must have 4 entries, got shape {arr.shape}")
        if not np.all(np.equal(np.mod(arr, 1), 0)) or np.any(arr < 0):
            raise ValueError(f"counts must be non-negative integers, got {arr.tolist()}")
        arr = arr.astype(np.int64)
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)
        MeasurementStrength(self.K)  # validates K
        object.__setattr__(self, "K", float(self.K))

    @property
    def shots(self) -> int:
        return int(self.counts.sum())

    @property
    def frequencies(self) -> np.ndarray:
        if self.shots == 0:
            raise ValueError("Count table is empty (all counts are zero)")
        return self.counts / self.shots

    def as_dict(self) -> dict:
        return {k: int(c) for k, c in zip(OUTCOMES, self.counts)}


class ForwardModel(Protocol):
    K: float

    @property
    def domain(self) -> Tuple[Tuple[float, float], Tuple[float, float]]: ...

    def probabilities(self, theta1, theta2) -> np.ndarray: ...


@dataclass(frozen=True)
class ExactForwardModel:
    """Closed-form (or optics-model) probabilities over the canonical domain."""

    K: float
    ppbs: Optional[PPBSModel] = None
    bounds: Tuple[Tuple[float, float], Tuple[float, float]] = (DOMAIN_RAD, DOMAIN_RAD)

    @property
    def domain(self) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        return self.bounds

    def probabilities(self, theta1, theta2) -> np.ndarray:
        if self.ppbs is None:
            return outcome_probabilities_grid(theta1, theta2, self.K)
        return imperfect_probabilities(theta1, theta2, self.K, self.ppbs)[0]


@dataclass(frozen=True)
class CalibrationTable:
    """
    Gridded reference probabilities. `shots_per_node` is None for the
    noiseless (exact) calibration.
    """

    grid1: np.ndarray
    grid2: np.ndarray
    probs: np.ndarray
    K: float
    shots_per_node: Optional[int] = None
    model: ModelKind = "ideal"
    seed: Optional[int] = None
    _interp: RegularGridInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        g1 = np.asarray(self.grid1, dtype=float)
        g2 = np.asarray(self.grid2, dtype=float)
        for name, g in (("grid1", g1), ("grid2", g2)):
            if g.ndim != 1 or g.size < 2:
                raise ValueError(f"{name} needs at least two nodes")
            if np.any(np.diff(g) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (g1.size, g2.size, 4):
            raise ValueError(f"probs must have shape {(g1.size, g2.size, 4)}, got {probs.shape}")
        totals = probs.sum(axis=-1, keepdims=True)
        if np.any(totals <= 0):
            raise ValueError("Every calibration node needs a positive total probability")
        probs = probs / totals
        for arr in (g1, g2, probs):
            arr.setflags(write=False)
        object.__setattr__(self, "grid1", g1)
        object.__setattr__(self, "grid2", g2)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "K", float(self.K))
        object.__setattr__(
            self, "_interp", RegularGridInterpolator((g1, g2), probs, method="linear", bounds_error=True)
        )

    @property
    def domain(self) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        return (float(self.grid1[0]), float(self.grid1[-1])), (float(self.grid2[0]), float(self.grid2[-1]))

    def probabilities(self, theta1, theta2) -> np.ndarray:
        """Bilinear interpolation per outcome, renormalised to sum 1."""
        t1, t2 = np.broadcast_arrays(np.asarray(theta1, dtype=float), np.asarray(theta2, dtype=float))
        (lo1, hi1), (lo2, hi2) = self.domain
        if (
            np.any(t1 < lo1 - _DOMAIN_SLACK) or np.any(t1 > hi1 + _DOMAIN_SLACK)
            or np.any(t2 < lo2 - _DOMAIN_SLACK) or np.any(t2 > hi2 + _DOMAIN_SLACK)
        ):
            raise ValueError("Query lies outside the calibration grid")
        pts = np.stack([np.clip(t1, lo1, hi1), np.clip(t2, lo2, hi2)], axis=-1)
        p = self._interp(pts.reshape(-1, 2)).reshape(t1.shape + (4,))
        return p / p.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class EstimateResult:
    theta1_hat: float
    theta2_hat: float
    covariance: np.ndarray
    objective_value: float
    degenerate_flag: bool
    bootstrap_replicas: int = 0
    objective: Objective = "lsq"

    @property
    def degrees(self) -> Tuple[float, float]:
        return math.degrees(self.theta1_hat), math.degrees(self.theta2_hat)


@dataclass(frozen=True)
class MonteCarloResult:
    estimates: np.ndarray   # (M, 2) radians
    covariance: np.ndarray  # (2, 2) rad^2, divisor M-1

    @property
    def mean(self) -> np.ndarray:
        return self.estimates.mean(axis=0)

    @property
    def correlation(self) -> float:
        c = self.covariance
        return float(c[0, 1] / math.sqrt(c[0, 0] * c[1, 1]))


# ---------- grids & sampling ----------

def grid_size(start_deg: float, stop_deg: float, step_deg: float) -> int:
    """Node count for a step that tiles [start, stop] exactly."""
    if not (math.isfinite(step_deg) and step_deg > 0):
        raise ValueError(f"step must be positive, got {step_deg}")
    intervals = (stop_deg - start_deg) / step_deg
    if abs(intervals - round(intervals)) > 1e-9 * max(1.0, abs(intervals)):
        raise ValueError(f"step {step_deg} does not divide [{start_deg}, {stop_deg}] evenly")
    return int(round(intervals)) + 1


def uniform_grid(start_deg: float = 0.0, stop_deg: float = 22.5, step_deg: float = CALIBRATION_STEP_DEG) -> np.ndarray:
    """Evenly spaced nodes in radians, both ends included."""
    n = grid_size(start_deg, stop_deg, step_deg)
    if n < 2:
        raise ValueError(f"Grid [{start_deg}, {stop_deg}] with step {step_deg} has fewer than two nodes")
    return np.deg2rad(np.linspace(start_deg, stop_deg, n))


def _model_probabilities(theta1, theta2, K: float, model: ModelKind, ppbs: Optional[PPBSModel]) -> np.ndarray:
    if model == "ideal":
        return outcome_probabilities_grid(theta1, theta2, K)
    if model == "optics":
        return imperfect_probabilities(theta1, theta2, K, ppbs or PPBSModel())[0]
    raise ValueError(f"Unknown model {model!r}; expected 'ideal' or 'optics'")


def sample_counts(
    phases: PhasePair,
    strength: MeasurementStrength,
    shots: int,
    seed: Seed,
    model: ModelKind = "ideal",
    ppbs: Optional[PPBSModel] = None,
) -> CountTable:
    """Multinomial draw of `shots` events over the four exact probabilities."""
    shots = int(shots)
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    p = _model_probabilities(phases.theta1, phases.theta2, strength.K, model, ppbs)
    p = np.clip(p, 0.0, None)
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(shots, p / p.sum())
    return CountTable(counts, strength.K, truth=phases, seed=seed if isinstance(seed, int) else None)


def build_calibration(
    strength: MeasurementStrength,
    grid1: np.ndarray,
    grid2: np.ndarray,
    shots_per_node: Optional[int],
    seed: Optional[int],
    model: ModelKind = "ideal",
    ppbs: Optional[PPBSModel] = None,
) -> CalibrationTable:
    """
    Calibration table over grid1 x grid2 (radians). With shots_per_node=None the
    exact probabilities are stored; otherwise each node holds sampled frequencies
    from its own seeded stream.
    """
    g1 = np.asarray(grid1, dtype=float)
    g2 = np.asarray(grid2, dtype=float)
    lo, hi = DOMAIN_RAD
    for name, g in (("grid1", g1), ("grid2", g2)):
        if g.size == 0:
            raise ValueError(f"{name} is empty")
        if np.any(g < lo - _DOMAIN_SLACK) or np.any(g > hi + _DOMAIN_SLACK):
            raise ValueError(f"{name} leaves the domain [0, 22.5] degrees")

    T1, T2 = np.meshgrid(g1, g2, indexing="ij")
    exact = _model_probabilities(T1, T2, strength.K, model, ppbs)

    if shots_per_node is None:
        probs = exact
    else:
        if shots_per_node < 1:
            raise ValueError(f"shots_per_node must be >= 1, got {shots_per_node}")
        if seed is None:
            raise ValueError("A seed is required for a sampled calibration")
        children = np.random.SeedSequence(seed).spawn(T1.size)
        flat = exact.reshape(-1, 4)
        sampled = np.empty_like(flat)
        for idx, child in enumerate(children):
            p = np.clip(flat[idx], 0.0, None)
            sampled[idx] = np.random.default_rng(child).multinomial(shots_per_node, p / p.sum()) / shots_per_node
        probs = sampled.reshape(exact.shape)

    logger.debug("calibration K=%.4g grid=%dx%d shots/node=%s model=%s",
                 strength.K, g1.size, g2.size, shots_per_node, model)
    return CalibrationTable(g1, g2, probs, strength.K, shots_per_node, model, seed)


def interpolate(cal: CalibrationTable, phases: PhasePair) -> np.ndarray:
    return cal.probabilities(phases.theta1, phases.theta2)


# ---------- estimator ----------

def _objective(freqs: np.ndarray, probs: np.ndarray, objective: Objective) -> np.ndarray:
    if objective == "lsq":
        return np.sum((freqs - probs) ** 2, axis=-1)
    if objective == "mle":
        # negative log-likelihood per shot; empty outcomes do not contribute
        logs = np.log(np.clip(probs, _P_CLIP, None))
        return -np.sum(np.where(freqs > 0, freqs * logs, 0.0), axis=-1)
    raise ValueError(f"Unknown objective {objective!r}; expected 'lsq' or 'mle'")


def _axis(lo: float, hi: float, step: float) -> np.ndarray:
    n = max(2, int(round((hi - lo) / step)) + 1)
    return np.linspace(lo, hi, n)


def _valley_span(near: np.ndarray, i: int, j: int, g1: np.ndarray, g2: np.ndarray) -> float:
    """Largest extent (radians) of the near-minimal component holding node (i, j)."""
    labels, _ = ndimage.label(near, structure=np.ones((3, 3), dtype=int))
    idx1, idx2 = np.nonzero(labels == labels[i, j])
    x, y = g1[idx1], g2[idx2]
    spans = [np.ptp(x), np.ptp(y), np.ptp(x + y) / math.sqrt(2.0), np.ptp(x - y) / math.sqrt(2.0)]
    return float(max(spans))


def _pattern_search(
    fun: Callable[[np.ndarray, np.ndarray], np.ndarray],
    x0: Tuple[float, float],
    step: float,
    step_min: float,
    bounds: Tuple[Tuple[float, float], Tuple[float, float]],
) -> Tuple[float, float, float]:
    """Compass search over axes and diagonals, halving the step after an unsuccessful poll."""
    dirs = np.array([[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
    lo = np.array([bounds[0][0], bounds[1][0]])
    hi = np.array([bounds[0][1], bounds[1][1]])
    x = np.array(x0, dtype=float)
    fx = float(fun(x[:1], x[1:])[0])

    polls = 0
    while step >= 0.5 * step_min and polls < _MAX_POLLS:
        cand = np.clip(x + step * dirs, lo, hi)
        vals = fun(cand[:, 0], cand[:, 1])
        best = int(np.argmin(vals))
        polls += 1
        if vals[best] < fx - _IMPROVE_TOL:
            x, fx = cand[best], float(vals[best])
        else:
            step *= 0.5
    if polls >= _MAX_POLLS:
        logger.warning("pattern search stopped after %d polls at step %.3g rad", polls, step)
    return float(x[0]), float(x[1]), fx


def _point_estimate(freqs: np.ndarray, model: ForwardModel, objective: Objective) -> Tuple[float, float, float, bool]:
    (lo1, hi1), (lo2, hi2) = model.domain
    coarse = math.radians(COARSE_STEP_DEG)
    g1, g2 = _axis(lo1, hi1, coarse), _axis(lo2, hi2, coarse)
    T1, T2 = np.meshgrid(g1, g2, indexing="ij")
    obj = _objective(freqs, model.probabilities(T1, T2), objective)

    best = float(obj.min())
    i, j = np.unravel_index(int(np.flatnonzero(obj.ravel() <= best + TIE_TOL)[0]), obj.shape)

    span = _valley_span(obj <= best + VALLEY_TOL, i, j, g1, g2)
    degenerate = span > VALLEY_FRACTION * math.hypot(hi1 - lo1, hi2 - lo2)
    if degenerate:
        logger.warning("degenerate estimate: near-minimal valley spans %.3g deg", math.degrees(span))

    def fun(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return _objective(freqs, model.probabilities(a, b), objective)

    t1, t2, val = _pattern_search(fun, (g1[i], g2[j]), coarse, math.radians(FINE_STEP_DEG), model.domain)
    return t1, t2, val, bool(degenerate)


def _check_pairing(counts: CountTable, model: ForwardModel) -> None:
    if counts.shots <= 0:
        raise ValueError("Count table is empty (all counts are zero)")
    if abs(counts.K - model.K) > _K_MATCH_TOL:
        raise ValueError(f"Counts were taken at K={counts.K:.6g} but the model is for K={model.K:.6g}")


def estimate(
    counts: CountTable,
    model: ForwardModel,
    *,
    objective: Objective = "lsq",
    replicas: int = 0,
    seed: Optional[int] = None,
    workers: int = 1,
) -> EstimateResult:
    """
    argmin over the domain of sum_x (f_x - p_x)^2 (or the multinomial NLL):
    exhaustive 0.25 deg grid, then pattern search down to 0.001 deg.
    With replicas > 0 the covariance is the Poisson-bootstrap covariance.
    """
    _check_pairing(counts, model)
    t1, t2, val, degenerate = _point_estimate(counts.frequencies, model, objective)

    cov = np.zeros((2, 2))
    if replicas:
        cov = bootstrap_covariance(counts, model, replicas, seed, objective=objective, workers=workers)
    return EstimateResult(t1, t2, cov, val, degenerate, int(replicas), objective)


# ---------- bootstrap & Monte Carlo ----------

def _map_indexed(fn: Callable[[int], np.ndarray], n: int, workers: int) -> List[np.ndarray]:
    """Ordered results of fn(0..n-1); parallel when workers > 1."""
    if workers <= 1:
        return [fn(i) for i in range(n)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n), chunksize=max(1, n // (4 * workers))))


def _bootstrap_one(index: int, counts: CountTable, model: ForwardModel, seed: int, objective: Objective) -> np.ndarray:
    rng = np.random.default_rng([seed, index])
    for attempt in range(MAX_REDRAWS):
        draw = rng.poisson(counts.counts)
        if draw.sum() > 0:
            break
        logger.warning("bootstrap replica %d drew no events (attempt %d); redrawing", index, attempt + 1)
    else:
        raise RuntimeError(f"Bootstrap replica {index} stayed empty after {MAX_REDRAWS} draws")
    t1, t2, _, _ = _point_estimate(draw / draw.sum(), model, objective)
    return np.array([t1, t2])


def bootstrap_replicas(
    counts: CountTable,
    model: ForwardModel,
    replicas: int = DEFAULT_REPLICAS,
    seed: Optional[int] = None,
    *,
    objective: Objective = "lsq",
    workers: int = 1,
) -> np.ndarray:
    """(B, 2) replica estimates; replica i is seeded from (seed, i)."""
    if replicas < 2:
        raise ValueError(f"replicas must be >= 2, got {replicas}")
    if seed is None:
        raise ValueError("A seed is required for bootstrap replicas")
    _check_pairing(counts, model)
    fn = partial(_bootstrap_one, counts=counts, model=model, seed=int(seed), objective=objective)
    return np.vstack(_map_indexed(fn, int(replicas), workers))


def bootstrap_covariance(
    counts: CountTable,
    model: ForwardModel,
    replicas: int = DEFAULT_REPLICAS,
    seed: Optional[int] = None,
    *,
    objective: Objective = "lsq",
    workers: int = 1,
) -> np.ndarray:
    """Sample covariance (divisor B-1) of estimates on Poisson-redrawn counts."""
    est = bootstrap_replicas(counts, model, replicas, seed, objective=objective, workers=workers)
    return np.cov(est, rowvar=False, ddof=1)


def _experiment_one(
    index: int,
    phases: PhasePair,
    strength: MeasurementStrength,
    shots: int,
    seed: int,
    model: ForwardModel,
    objective: Objective,
    sampler: ModelKind,
    ppbs: Optional[PPBSModel],
) -> np.ndarray:
    counts = sample_counts(phases, strength, shots, [seed, index], model=sampler, ppbs=ppbs)
    t1, t2, _, _ = _point_estimate(counts.frequencies, model, objective)
    return np.array([t1, t2])


def monte_carlo_experiments(
    phases: PhasePair,
    strength: MeasurementStrength,
    shots: int,
    trials: int,
    seed: int,
    model: ForwardModel,
    *,
    objective: Objective = "lsq",
    sampler: ModelKind = "ideal",
    ppbs: Optional[PPBSModel] = None,
    workers: int = 1,
) -> MonteCarloResult:
    """Repeat sample+estimate `trials` times with per-trial seeds (seed, i)."""
    if trials < 2:
        raise ValueError(f"trials must be >= 2, got {trials}")
    fn = partial(
        _experiment_one,
        phases=phases,
        strength=strength,
        shots=int(shots),
        seed=int(seed),
        model=model,
        objective=objective,
        sampler=sampler,
        ppbs=ppbs,
    )
    est = np.vstack(_map_indexed(fn, int(trials), workers))
    return MonteCarloResult(est, np.cov(est, rowvar=False, ddof=1))
