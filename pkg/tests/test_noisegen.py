import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatebath.engine import circuit_trace, coherent_trace
from gatebath.errors import ParameterError
from gatebath.exciton import EnergyScale, dimer_propagator_circuit
from gatebath.noisegen import (
    SEQUENCE_WORDS,
    GateSequence,
    NoiseModel,
    build_dissipative_circuit,
    build_schedule,
    distance_from_identity,
    expand_sequence,
    gate_error_channels,
    word_unitary,
)
from gatebath.qsim import PAULI_X, PAULI_Z, ChannelOp, DensityMatrix, Gate, run_circuit


def eps_only(eps, delta=0.0):
    return NoiseModel(x_overrotation_eps=eps, x_phase_delta=delta, depol1_p=0.0, depol2_p=0.0,
                      dephase2_p=0.0, amp_damping_gamma=0.0)


def rx_oracle(a):
    # exp(-i a X / 2) written out directly
    return math.cos(a / 2) * np.eye(2) - 1j * math.sin(a / 2) * PAULI_X


def phase_free_distance(a, b):
    ov = np.vdot(b.ravel(), a.ravel())
    return np.max(np.abs(a - ov / abs(ov) * b))


def test_word_lengths():
    assert len(expand_sequence(GateSequence("X2", (0,)))) == 2
    assert len(expand_sequence(GateSequence("XZ2", (0,)))) == 4
    assert len(expand_sequence(GateSequence("XZXZZ2", (0,)))) == 10
    swap = expand_sequence(GateSequence("SWAP2"))
    assert len(swap) == 6 and all(g.kind == "CNOT" for g in swap)


def test_single_qubit_words_hit_both_qubits():
    gates = expand_sequence(GateSequence("X2"))
    assert sorted(g.qubits[0] for g in gates) == [0, 0, 1, 1]


@pytest.mark.parametrize("kind", sorted(SEQUENCE_WORDS))
def test_noiseless_words_are_identity(kind):
    assert distance_from_identity(word_unitary(GateSequence(kind))) < 1e-12
    assert phase_free_distance(word_unitary(GateSequence(kind)), np.eye(4)) < 1e-12


def test_xzxzz_word_by_hand():
    # X Z X Z Z in time order is the operator Z Z X Z X = X Z X = -Z; squared gives I
    five = PAULI_Z @ PAULI_Z @ PAULI_X @ PAULI_Z @ PAULI_X
    np.testing.assert_allclose(five, -PAULI_Z, atol=1e-15)
    np.testing.assert_allclose(five @ five, np.eye(2), atol=1e-15)


def test_ideal_model_gives_exact_x():
    ops = gate_error_channels(Gate("X", (0,)), NoiseModel.ideal())
    assert ops == (Gate("X", (0,)),)


def test_virtual_z_and_propagator_are_noiseless():
    nm = NoiseModel()
    assert gate_error_channels(Gate("Z", (0,)), nm) == (Gate("Z", (0,)),)
    assert gate_error_channels(Gate("RZ", (1,), (0.3,)), nm) == (Gate("RZ", (1,), (0.3,)),)
    for g in dimer_propagator_circuit(0.2):
        assert gate_error_channels(g, nm) == (g,)


def test_noisy_cnot_channel_order():
    ops = gate_error_channels(Gate("CNOT", (0, 1)), NoiseModel())
    assert ops[0] == Gate("CNOT", (0, 1))
    names = [op.channel.name.split("(")[0] for op in ops[1:]]
    assert names == ["depolarizing", "phase_flip", "amplitude_damping", "phase_flip", "amplitude_damping"]
    assert all(isinstance(op, ChannelOp) for op in ops[1:])


def test_x2_word_is_double_overrotation():
    eps = 0.02
    u = word_unitary(GateSequence("X2", (0,)), eps_only(eps), n_qubits=1)
    assert phase_free_distance(u, rx_oracle(2 * eps)) < 1e-12
    assert phase_free_distance(u, rx_oracle(0.04)) < 1e-12


@pytest.mark.parametrize("kind", ["XZ2", "XZXZZ2"])
@pytest.mark.parametrize("eps", [0.01, 0.05, 0.3])
def test_echo_words_cancel_overrotation(kind, eps):
    u = word_unitary(GateSequence(kind, (0,)), eps_only(eps), n_qubits=1)
    assert distance_from_identity(u) < 1e-12


@pytest.mark.parametrize("eps", [0.01, 0.05])
@pytest.mark.parametrize("delta", [0.01, 0.05, 0.1])
def test_long_echo_beats_short_echo_with_phase_error(eps, delta):
    nm = eps_only(eps, delta)
    long_word = word_unitary(GateSequence("XZXZZ2", (0,)), nm, n_qubits=1)
    short_word = word_unitary(GateSequence("XZ2", (0,)), nm, n_qubits=1)
    assert distance_from_identity(long_word) <= distance_from_identity(short_word)


def test_distance_metric():
    assert distance_from_identity(np.eye(2) * 1j) == pytest.approx(0.0, abs=1e-7)
    assert distance_from_identity(PAULI_X) == pytest.approx(2.0)


def test_noise_model_validation():
    with pytest.raises(ParameterError):
        NoiseModel(depol2_p=1.5)
    with pytest.raises(ParameterError):
        NoiseModel(x_overrotation_eps=4.0)
    with pytest.raises(ParameterError):
        NoiseModel(virtual_z_noiseless=False)


def test_noise_model_round_trip_and_scaling():
    nm = NoiseModel()
    assert NoiseModel.from_dict(nm.to_dict()) == nm
    s = nm.scaled_two_qubit(0.5)
    assert s.depol2_p == pytest.approx(0.005) and s.dephase2_p == pytest.approx(0.015)
    assert s.depol1_p == nm.depol1_p and s.x_overrotation_eps == nm.x_overrotation_eps
    assert NoiseModel.ideal().is_ideal


# -- schedule ---------------------------------------------------------------

def test_schedule_d1():
    sch = build_schedule(1, 150, 25)
    assert sch.total_insertions == 6
    assert [s for s in range(151) if sch.insertions(s)] == [25, 50, 75, 100, 125, 150]


def test_schedule_d0_and_d50():
    assert build_schedule(0, 150).total_insertions == 0
    assert build_schedule(50, 150).insertions(1) == 2


def test_schedule_rejects_negative():
    with pytest.raises(ParameterError):
        build_schedule(-1, 150)


@given(st.floats(0, 60, allow_nan=False), st.integers(1, 300))
@settings(max_examples=100, deadline=None)
def test_schedule_invariants(d, n_steps):
    sch = build_schedule(d, n_steps)
    cum = [sch.cumulative(s) for s in range(n_steps + 1)]
    assert all(b >= a for a, b in zip(cum, cum[1:]))
    assert sch.total_insertions == math.floor(d * n_steps / 25 + 1e-9)
    assert sum(sch.insertion_counts()) == sch.total_insertions
    # every word sits before the step at which it is first counted
    for i, p in enumerate(sch.positions(), start=1):
        first = next(s for s in range(n_steps + 1) if sch.cumulative(s) >= i)
        assert p < first or (p == 0 and first == 0)
    bigger = build_schedule(d + 1.0, n_steps)
    assert all(bigger.cumulative(s) >= c for s, c in enumerate(cum))


# -- circuit layout -----------------------------------------------------------

def test_layout_step25_d1():
    dth = EnergyScale().delta_theta
    circ = build_dissipative_circuit(25, build_schedule(1), GateSequence("SWAP2"), dth)
    kinds = [g.kind for g in circ]
    assert kinds[:6] == ["CNOT"] * 6 and not any(g.ideal for g in circ.gates[:6])
    prop = dimer_propagator_circuit(25 * dth)
    assert circ.gates[6:] == prop.gates


def test_layout_step10_d1_is_pure_propagator():
    dth = EnergyScale().delta_theta
    circ = build_dissipative_circuit(10, build_schedule(1), GateSequence("SWAP2"), dth)
    assert circ.gates == dimer_propagator_circuit(10 * dth).gates


def test_layout_step_bounds():
    with pytest.raises(ParameterError):
        build_dissipative_circuit(151, build_schedule(1), GateSequence("SWAP2"), 0.1)


@pytest.mark.parametrize("kind", sorted(SEQUENCE_WORDS))
@pytest.mark.parametrize("d,step", [(1, 60), (7, 33), (18, 150)])
def test_noiseless_layout_equals_coherent(kind, d, step):
    dth = EnergyScale().delta_theta
    circ = build_dissipative_circuit(step, build_schedule(d), GateSequence(kind), dth)
    out = run_circuit(circ, NoiseModel.ideal(), DensityMatrix.basis_state("01"))
    assert out.probabilities()[1] == pytest.approx(math.cos(step * dth) ** 2, abs=1e-10)


def test_prefix_sharing_matches_full_circuits():
    nm = NoiseModel()
    dth = EnergyScale().delta_theta
    seq = GateSequence("XZXZZ2")
    sched = build_schedule(7, 60)
    tr = circuit_trace(seq, 7, nm, 60, shots=None)
    for step in (0, 1, 4, 30, 59, 60):
        rho = run_circuit(build_dissipative_circuit(step, sched, seq, dth), nm, DensityMatrix.basis_state("01"))
        p = rho.probabilities()
        assert tr.P1[step] == pytest.approx(p[1] / (p[1] + p[2]), abs=1e-12)
        assert tr.leak_frac[step] == pytest.approx(p[0] + p[3], abs=1e-12)


def test_stochastic_noise_equilibrates_at_strong_damping():
    nm = NoiseModel.calibrated()
    for d in (18, 24):
        tr = circuit_trace("SWAP2", d, NoiseModel(0.0, 0.0, nm.depol1_p, nm.depol2_p, nm.dephase2_p,
                                                    nm.amp_damping_gamma), shots=None)
        assert abs(tr.P1[-1] - 0.5) < 0.05


def test_d0_equals_coherent_for_every_sequence():
    ref = coherent_trace(shots=8192, seed=4)
    for kind in SEQUENCE_WORDS:
        tr = circuit_trace(kind, 0, NoiseModel(), shots=8192, seed=4)
        np.testing.assert_array_equal(tr.counts, ref.counts)
