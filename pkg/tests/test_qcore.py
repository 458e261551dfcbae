import math

import numpy as np
import pytest

from app.services.qcore_service import (
    KET_A,
    KET_D,
    KET_H,
    KET_L,
    KET_R,
    KET_V,
    Gate,
    Qubit2State,
    Qubit4State,
    apply,
    cz_gate,
    hadamard_gate,
    identity_gate,
    meter_amplitudes,
    meter_state,
    phase_gate,
    project,
    reduced_purity,
    schmidt_coefficients,
    tensor,
)

RNG = np.random.default_rng(20240601)


def random_state4() -> Qubit4State:
    v = RNG.normal(size=4) + 1j * RNG.normal(size=4)
    return Qubit4State(v / np.linalg.norm(v))


# ---------- gates ----------

def test_phase_gate_zero_is_identity():
    assert np.allclose(phase_gate(0.0).entries, np.eye(2), atol=1e-15)


def test_phase_gate_pi_over_8():
    c = math.cos(math.pi / 4)
    expected = np.array([[c, -c], [c, c]])
    assert np.allclose(phase_gate(math.pi / 8).entries, expected, atol=1e-15)


def test_phase_gate_rejects_non_finite():
    with pytest.raises(ValueError):
        phase_gate(float("nan"))
    with pytest.raises(ValueError):
        phase_gate(float("inf"))


@pytest.mark.parametrize("t1,t2", [(0.1, 0.2), (0.3, -0.05), (1.2, 2.9)])
def test_phase_gates_compose_on_shared_generator(t1, t2):
    composed = phase_gate(t2) @ phase_gate(t1)
    assert np.allclose(composed.entries, phase_gate(t1 + t2).entries, atol=1e-12)
    out = apply(composed, KET_H).amplitudes
    # only the sum of the phases survives
    assert np.allclose(out, [math.cos(2 * (t1 + t2)), math.sin(2 * (t1 + t2))], atol=1e-12)


def test_cz_gate_signs():
    hh = tensor(KET_H, KET_H)
    vv = tensor(KET_V, KET_V)
    assert np.allclose(apply(cz_gate(), hh).amplitudes, hh.amplitudes)
    assert np.allclose(apply(cz_gate(), vv).amplitudes, -vv.amplitudes)


def test_cz_entangles_v_and_d():
    out = apply(cz_gate(), tensor(KET_V, KET_D)).amplitudes
    s = 1 / math.sqrt(2)
    assert np.allclose(out, [0, 0, s, -s], atol=1e-15)
    assert schmidt_coefficients(apply(cz_gate(), tensor(KET_D, KET_D)))[1] == pytest.approx(s, abs=1e-12)


def test_ideal_gates_are_unitary():
    for g in (phase_gate(0.37), cz_gate(), hadamard_gate(), identity_gate(4)):
        assert g.is_unitary()


def test_gate_shape_and_composition_errors():
    with pytest.raises(ValueError):
        Gate(np.eye(3))
    with pytest.raises(ValueError):
        phase_gate(0.1) @ cz_gate()


# ---------- states ----------

def test_basis_kets_are_normalized_and_orthogonal():
    for ket in (KET_H, KET_V, KET_D, KET_A, KET_R, KET_L):
        assert ket.norm2 == pytest.approx(1.0, abs=1e-12)
    assert abs(np.vdot(KET_D.amplitudes, KET_A.amplitudes)) < 1e-15
    assert abs(np.vdot(KET_R.amplitudes, KET_L.amplitudes)) < 1e-15


def test_meter_state_limits():
    assert np.allclose(meter_state(1.0).amplitudes, KET_D.amplitudes, atol=1e-15)
    assert np.allclose(meter_state(0.0).amplitudes, KET_H.amplitudes, atol=1e-15)


def test_meter_amplitudes_at_intermediate_strength():
    kappa, lam = meter_amplitudes(0.785)
    assert kappa == pytest.approx(0.944723, abs=1e-6)
    assert lam == pytest.approx(0.327872, abs=1e-6)
    assert kappa ** 2 + lam ** 2 == pytest.approx(1.0, abs=1e-12)
    assert 2 * kappa ** 2 - 1 == pytest.approx(0.785, abs=1e-12)


@pytest.mark.parametrize("K", [-0.1, 1.0001, float("nan")])
def test_meter_state_rejects_out_of_range(K):
    with pytest.raises(ValueError):
        meter_state(K)


def test_normalize_and_zero_state():
    assert Qubit2State([3.0, 4.0]).normalize().norm2 == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        Qubit4State(np.zeros(4)).normalize()


def test_amplitudes_are_read_only():
    with pytest.raises(ValueError):
        KET_H.amplitudes[0] = 0.0


# ---------- apply ----------

def test_identity_and_double_hadamard():
    psi = random_state4()
    assert np.allclose(apply(identity_gate(4), psi).amplitudes, psi.amplitudes)
    h = hadamard_gate()
    assert np.allclose(apply(h, apply(h, KET_H)).amplitudes, KET_H.amplitudes, atol=1e-15)


def test_unitary_application_preserves_norm():
    for _ in range(50):
        psi = random_state4()
        out = apply(phase_gate(RNG.uniform(-3, 3)), psi, target="meter")
        out = apply(cz_gate(), out)
        out = apply(hadamard_gate(), out, target="system")
        assert out.norm2 == pytest.approx(1.0, abs=1e-12)


def test_apply_dimension_errors():
    psi = tensor(KET_H, KET_H)
    with pytest.raises(ValueError):
        apply(phase_gate(0.1), psi)              # needs a target
    with pytest.raises(ValueError):
        apply(cz_gate(), KET_H)                  # 4x4 on one qubit
    with pytest.raises(ValueError):
        apply(cz_gate(), psi, target="system")   # 4x4 takes no target


def test_apply_embeds_on_the_chosen_qubit():
    psi = tensor(KET_H, KET_H)
    flip = Gate([[0, 1], [1, 0]])
    assert np.allclose(apply(flip, psi, target="system").amplitudes, tensor(KET_V, KET_H).amplitudes)
    assert np.allclose(apply(flip, psi, target="meter").amplitudes, tensor(KET_H, KET_V).amplitudes)


# ---------- measurement ----------

def test_project_product_state():
    prob, collapsed = project(tensor(KET_H, KET_H), "meter", "HV", "H")
    assert prob == pytest.approx(1.0)
    assert np.allclose(collapsed.amplitudes, KET_H.amplitudes)


def test_project_bell_state():
    bell = Qubit4State(np.array([1, 0, 0, 1]) / math.sqrt(2))
    prob, collapsed = project(bell, "meter", "HV", "H")
    assert prob == pytest.approx(0.5, abs=1e-12)
    assert np.allclose(collapsed.amplitudes, KET_H.amplitudes)


def test_project_empty_branch():
    prob, collapsed = project(tensor(KET_H, KET_H), "meter", "HV", "V")
    assert prob == 0.0
    assert collapsed is None


def test_project_needs_normalized_state():
    with pytest.raises(ValueError):
        project(Qubit4State([1.0, 1.0, 0.0, 0.0]), "meter", "HV", "H")


def test_project_rejects_unknown_outcome():
    with pytest.raises(ValueError):
        project(tensor(KET_H, KET_H), "meter", "HV", "D")


@pytest.mark.parametrize("qubit", ["system", "meter"])
@pytest.mark.parametrize("basis,outcomes", [("HV", ("H", "V")), ("DA", ("D", "A"))])
def test_branch_probabilities_sum_to_one(qubit, basis, outcomes):
    for _ in range(20):
        psi = random_state4()
        total = sum(project(psi, qubit, basis, o).probability for o in outcomes)
        assert total == pytest.approx(1.0, abs=1e-12)


def test_zero_strength_meter_carries_no_system_information():
    # K = 0: the meter is |H>, the C-Z acts trivially and the state stays separable
    theta1 = 0.21
    psi = tensor(apply(phase_gate(theta1), KET_H), meter_state(0.0))
    psi = apply(cz_gate(), psi)
    _, on_d = project(psi, "meter", "DA", "D")
    _, on_a = project(psi, "meter", "DA", "A")
    assert abs(np.vdot(on_d.amplitudes, on_a.amplitudes)) == pytest.approx(1.0, abs=1e-12)


def test_reduced_purity_of_product_and_bell():
    assert reduced_purity(tensor(KET_D, KET_H), "meter") == pytest.approx(1.0)
    bell = Qubit4State(np.array([1, 0, 0, 1]) / math.sqrt(2))
    assert reduced_purity(bell, "system") == pytest.approx(0.5)
    assert reduced_purity(bell, "meter") == pytest.approx(0.5)
