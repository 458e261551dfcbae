import math

import numpy as np
import pytest

from app.services import estimation_service
from app.services.estimation_service import (
    CalibrationTable,
    CountTable,
    ExactForwardModel,
    bootstrap_covariance,
    bootstrap_replicas,
    build_calibration,
    estimate,
    grid_size,
    interpolate,
    monte_carlo_experiments,
    sample_counts,
    uniform_grid,
)
from app.services.protocol_service import MeasurementStrength, PhasePair, outcome_probabilities_grid

INTERIOR = PhasePair(math.pi / 16, math.pi / 16)


def noiseless_counts(phases, K, scale=10 ** 9):
    """Counts proportional to the exact probabilities."""
    p = outcome_probabilities_grid(phases.theta1, phases.theta2, K)
    return CountTable(np.rint(p * scale).astype(np.int64), K, truth=phases)


def exact_calibration(K, step_deg=2.5):
    g = uniform_grid(0.0, 22.5, step_deg)
    return build_calibration(MeasurementStrength(K), g, g, None, None)


# ---------- sampling ----------

def test_sample_counts_deterministic_outcome():
    c = sample_counts(PhasePair(0.0, 0.0), MeasurementStrength(1.0), 1234, seed=5)
    assert c.counts.tolist() == [1234, 0, 0, 0]
    assert c.shots == 1234


def test_sample_counts_same_seed_same_table():
    args = (INTERIOR, MeasurementStrength(0.785), 10_000)
    a = sample_counts(*args, seed=42)
    b = sample_counts(*args, seed=42)
    c = sample_counts(*args, seed=43)
    assert a.counts.tolist() == b.counts.tolist()
    assert a.counts.tolist() != c.counts.tolist()


def test_sample_counts_within_binomial_bands():
    N = 10 ** 6
    s = MeasurementStrength(0.785)
    c = sample_counts(INTERIOR, s, N, seed=1)
    p = outcome_probabilities_grid(INTERIOR.theta1, INTERIOR.theta2, s.K)
    sigma = np.sqrt(p * (1 - p) / N)
    assert np.all(np.abs(c.frequencies - p) <= 5 * sigma)


def test_sample_counts_rejects_no_shots():
    with pytest.raises(ValueError):
        sample_counts(INTERIOR, MeasurementStrength(0.5), 0, seed=1)


def test_count_table_validation():
    with pytest.raises(ValueError):
        CountTable(np.array([1, -1, 0, 0]), 0.5)
    with pytest.raises(ValueError):
        CountTable(np.array([1, 2, 3]), 0.5)
    with pytest.raises(ValueError):
        CountTable(np.array([1, 2, 3, 4]), 1.5)
    with pytest.raises(ValueError):
        CountTable(np.zeros(4, dtype=int), 0.5).frequencies


# ---------- calibration & interpolation ----------

def test_uniform_grid_nodes():
    g = uniform_grid(0.0, 22.5, 2.5)
    assert len(g) == 10
    assert g[0] == 0.0
    assert g[-1] == pytest.approx(math.pi / 8)


@pytest.mark.parametrize("step_deg", [7.0, 5.0, 0.0, -2.5, float("nan")])
def test_uniform_grid_rejects_uneven_or_bad_steps(step_deg):
    with pytest.raises(ValueError):
        uniform_grid(0.0, 22.5, step_deg)


def test_grid_size_counts_both_ends():
    assert grid_size(0.0, 22.5, 2.5) == 10
    assert grid_size(0.0, 22.5, 0.1) == 226
    assert grid_size(0.0, 22.5, 22.5) == 2


def test_exact_calibration_reproduces_model_at_nodes():
    cal = exact_calibration(0.785)
    T1, T2 = np.meshgrid(cal.grid1, cal.grid2, indexing="ij")
    assert np.allclose(cal.probs, outcome_probabilities_grid(T1, T2, 0.785), atol=1e-15)
    assert cal.shots_per_node is None


def test_sampled_calibration_within_binomial_bands():
    g = uniform_grid(0.0, 22.5, 2.5)
    shots = 10 ** 5
    cal = build_calibration(MeasurementStrength(0.785), g, g, shots, seed=3)
    T1, T2 = np.meshgrid(g, g, indexing="ij")
    p = outcome_probabilities_grid(T1, T2, 0.785)
    sigma = np.sqrt(p * (1 - p) / shots)
    assert np.all(np.abs(cal.probs - p) <= 5 * sigma + 1e-12)
    assert np.allclose(cal.probs.sum(axis=-1), 1.0, atol=1e-9)


def test_sampled_calibration_is_seeded():
    g = uniform_grid(0.0, 22.5, 7.5)
    a = build_calibration(MeasurementStrength(0.5), g, g, 1000, seed=9)
    b = build_calibration(MeasurementStrength(0.5), g, g, 1000, seed=9)
    assert np.array_equal(a.probs, b.probs)
    with pytest.raises(ValueError):
        build_calibration(MeasurementStrength(0.5), g, g, 1000, seed=None)


def test_calibration_grid_errors():
    s = MeasurementStrength(0.5)
    g = uniform_grid(0.0, 22.5, 2.5)
    with pytest.raises(ValueError):
        build_calibration(s, np.deg2rad([0.0, 30.0]), g, None, None)
    with pytest.raises(ValueError):
        build_calibration(s, np.array([]), g, None, None)
    with pytest.raises(ValueError):
        CalibrationTable(g[::-1], g, np.full((10, 10, 4), 0.25), 0.5)


def test_uneven_theta1_grid_is_accepted():
    g1 = np.deg2rad([0.0, 1.0, 3.0, 7.0, 12.0, 22.5])
    g2 = uniform_grid(0.0, 22.5, 2.5)
    cal = build_calibration(MeasurementStrength(0.934), g1, g2, None, None)
    assert cal.probs.shape == (6, 10, 4)
    p = interpolate(cal, PhasePair(g1[3], g2[4]))
    assert p == pytest.approx(outcome_probabilities_grid(g1[3], g2[4], 0.934), abs=1e-12)


def test_interpolation_is_exact_at_nodes():
    cal = exact_calibration(0.785)
    for i, j in [(0, 0), (3, 7), (9, 9)]:
        p = interpolate(cal, PhasePair(cal.grid1[i], cal.grid2[j]))
        assert p == pytest.approx(cal.probs[i, j], abs=1e-12)


def test_interpolation_midpoint_is_average():
    cal = exact_calibration(0.785)
    mid = PhasePair(0.5 * (cal.grid1[2] + cal.grid1[3]), 0.5 * (cal.grid2[5] + cal.grid2[6]))
    avg = cal.probs[2:4, 5:7].reshape(-1, 4).mean(axis=0)
    assert interpolate(cal, mid) == pytest.approx(avg / avg.sum(), abs=1e-12)


@pytest.mark.parametrize("step_deg,tol", [(2.5, 4e-3), (1.25, 2e-3)])
def test_interpolation_error_against_model(step_deg, tol):
    K = 0.785
    cal = exact_calibration(K, step_deg)
    t = np.deg2rad(np.linspace(0, 22.5, 181))
    T1, T2 = np.meshgrid(t, t, indexing="ij")
    err = np.abs(cal.probabilities(T1, T2) - outcome_probabilities_grid(T1, T2, K))
    assert err.max() < tol


def test_interpolation_rejects_queries_outside_grid():
    cal = exact_calibration(0.785)
    with pytest.raises(ValueError):
        interpolate(cal, PhasePair.from_degrees(23.0, 5.0))
    with pytest.raises(ValueError):
        interpolate(cal, PhasePair.from_degrees(5.0, -0.5))


# ---------- estimator ----------

@pytest.mark.parametrize("objective", ["lsq", "mle"])
def test_noiseless_estimate_recovers_truth(objective):
    truth = PhasePair.from_degrees(10.13, 4.87)
    result = estimate(noiseless_counts(truth, 0.934), ExactForwardModel(0.934), objective=objective)
    t1, t2 = result.degrees
    assert t1 == pytest.approx(10.13, abs=0.01)
    assert t2 == pytest.approx(4.87, abs=0.01)
    assert not result.degenerate_flag
    assert result.objective == objective


def test_noiseless_estimate_through_calibration_table():
    truth = PhasePair.from_degrees(10.0, 5.0)
    result = estimate(noiseless_counts(truth, 0.934), exact_calibration(0.934))
    assert result.degrees == pytest.approx((10.0, 5.0), abs=0.01)


def test_zero_strength_is_degenerate_along_the_sum():
    truth = PhasePair.from_degrees(10.0, 5.0)
    result = estimate(noiseless_counts(truth, 0.0), ExactForwardModel(0.0))
    assert result.degenerate_flag
    assert sum(result.degrees) == pytest.approx(15.0, abs=0.01)


def test_coarse_ties_pick_lowest_theta1():
    # K = 0: every node on theta1 + theta2 = 15 deg fits exactly; the first one wins
    result = estimate(noiseless_counts(PhasePair.from_degrees(10.0, 5.0), 0.0), ExactForwardModel(0.0))
    assert result.degrees == pytest.approx((0.0, 15.0), abs=1e-9)


def test_estimate_stays_in_domain():
    counts = sample_counts(PhasePair.from_degrees(22.0, 0.5), MeasurementStrength(0.785), 500, seed=4)
    result = estimate(counts, ExactForwardModel(0.785))
    for t in (result.theta1_hat, result.theta2_hat):
        assert 0.0 <= t <= math.pi / 8


def test_estimate_errors():
    model = ExactForwardModel(0.785)
    with pytest.raises(ValueError):
        estimate(CountTable(np.zeros(4, dtype=int), 0.785), model)
    with pytest.raises(ValueError):
        estimate(noiseless_counts(INTERIOR, 0.5), model)
    with pytest.raises(ValueError):
        estimate(noiseless_counts(INTERIOR, 0.785), model, objective="l1")


# ---------- bootstrap ----------

def test_bootstrap_keeps_empty_channels_empty():
    counts = CountTable(np.array([500, 0, 0, 0]), 1.0)
    reps = bootstrap_replicas(counts, ExactForwardModel(1.0), 20, seed=1)
    assert reps.shape == (20, 2)
    assert np.allclose(reps, 0.0, atol=1e-12)
    assert np.allclose(bootstrap_covariance(counts, ExactForwardModel(1.0), 20, seed=1), 0.0, atol=1e-20)


def test_bootstrap_two_replicas_is_valid():
    counts = sample_counts(INTERIOR, MeasurementStrength(0.785), 10_000, seed=2)
    cov = bootstrap_covariance(counts, ExactForwardModel(0.785), 2, seed=5)
    assert cov.shape == (2, 2)
    assert cov[0, 1] == pytest.approx(cov[1, 0])
    with pytest.raises(ValueError):
        bootstrap_covariance(counts, ExactForwardModel(0.785), 1, seed=5)
    with pytest.raises(ValueError):
        bootstrap_covariance(counts, ExactForwardModel(0.785), 10, seed=None)


def test_bootstrap_is_seeded():
    counts = sample_counts(INTERIOR, MeasurementStrength(0.785), 10_000, seed=2)
    model = ExactForwardModel(0.785)
    a = bootstrap_replicas(counts, model, 10, seed=8)
    b = bootstrap_replicas(counts, model, 10, seed=8)
    assert np.array_equal(a, b)


def test_bootstrap_gives_up_after_repeated_empty_draws(monkeypatch):
    # a single count: Poisson(1) is empty with probability e^-1
    monkeypatch.setattr(estimation_service, "MAX_REDRAWS", 1)
    counts = CountTable(np.array([1, 0, 0, 0]), 1.0)
    model = ExactForwardModel(1.0)
    outcomes = set()
    for seed in range(50):
        try:
            bootstrap_replicas(counts, model, 2, seed=seed)
            outcomes.add("ok")
        except RuntimeError:
            outcomes.add("capped")
    assert outcomes == {"ok", "capped"}


def test_estimate_with_bootstrap_replicas():
    counts = sample_counts(INTERIOR, MeasurementStrength(0.785), 10_000, seed=2)
    result = estimate(counts, ExactForwardModel(0.785), replicas=50, seed=6)
    assert result.bootstrap_replicas == 50
    assert np.all(np.linalg.eigvalsh(result.covariance) >= -1e-15)
    assert result.covariance[0, 1] < 0


# ---------- Monte Carlo ----------

def test_monte_carlo_is_seeded():
    s = MeasurementStrength(0.785)
    a = monte_carlo_experiments(INTERIOR, s, 1000, 10, seed=3, model=ExactForwardModel(0.785))
    b = monte_carlo_experiments(INTERIOR, s, 1000, 10, seed=3, model=ExactForwardModel(0.785))
    assert np.array_equal(a.estimates, b.estimates)
    assert a.estimates.shape == (10, 2)


@pytest.mark.slow
@pytest.mark.parametrize("K", [0.322, 0.785, 0.934])
def test_mle_saturates_cramer_rao_bound(K):
    N, M = 10_000, 1000
    mc = monte_carlo_experiments(INTERIOR, MeasurementStrength(K), N, M, seed=100, model=ExactForwardModel(K),
                                 objective="mle")
    bound = 1 / (16 * N * K ** 2)
    for var in np.diag(mc.covariance):
        assert 0.85 <= var / bound <= 1.30
    assert mc.correlation == pytest.approx(-math.sqrt(1 - K ** 2), abs=0.1)
    # unbiased within three standard errors
    se = np.sqrt(np.diag(mc.covariance) / M)
    assert np.all(np.abs(mc.mean - [INTERIOR.theta1, INTERIOR.theta2]) < 3 * se)


@pytest.mark.slow
def test_doubling_shots_halves_variance():
    s, model = MeasurementStrength(0.785), ExactForwardModel(0.785)
    a = monte_carlo_experiments(INTERIOR, s, 10_000, 1000, seed=200, model=model, objective="mle")
    b = monte_carlo_experiments(INTERIOR, s, 20_000, 1000, seed=201, model=model, objective="mle")
    ratio = np.diag(a.covariance) / np.diag(b.covariance)
    assert np.all((1.6 <= ratio) & (ratio <= 2.4))


@pytest.mark.slow
def test_bootstrap_variance_tracks_monte_carlo():
    K, N = 0.785, 10_000
    s, model = MeasurementStrength(K), ExactForwardModel(K)
    truth_var = np.diag(monte_carlo_experiments(INTERIOR, s, N, 300, seed=300, model=model).covariance)

    boot = []
    for i in range(20):
        counts = sample_counts(INTERIOR, s, N, seed=[301, i])
        boot.append(np.diag(bootstrap_covariance(counts, model, 200, seed=400 + i)))
    ratio = np.mean(boot, axis=0) / truth_var
    assert np.all((0.7 <= ratio) & (ratio <= 1.4))


@pytest.mark.slow
def test_sampled_calibration_pipeline_accuracy():
    K = 0.934
    g = uniform_grid(0.0, 22.5, 2.5)
    cal = build_calibration(MeasurementStrength(K), g, g, 100_000, seed=500)
    truths = np.random.default_rng(501).uniform(2.0, 20.0, size=(100, 2))

    errors = []
    for i, (t1, t2) in enumerate(truths):
        counts = sample_counts(PhasePair.from_degrees(t1, t2), MeasurementStrength(K), 2000, seed=[502, i])
        errors.append(np.abs(np.subtract(estimate(counts, cal).degrees, (t1, t2))))
    mae = np.mean(errors, axis=0)
    assert np.all(mae < 0.5)
