import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dqcsim.config import build_noise, build_runtime_config, default_config
from dqcsim.core import CZ, QuantumState, state_fidelity
from dqcsim.link import AttemptSchedule
from dqcsim.noise import NoiseModel
from dqcsim.protocol import (CIRCUIT_A, CIRCUIT_B, RULE, FeedForwardRule, branch_oracle, memory_channel,
                             qgt_channel, teleported_cz, unitary_superoperator)
from dqcsim.runtime import Runtime, RuntimeConfig, reduced_circuit_state
from dqcsim.tomography import ROTATIONS

from conftest import haar_unitary

ZERO = np.array([1, 0], dtype=complex)
INPUTS = [np.kron(rb @ ZERO, ra @ ZERO) for rb in ROTATIONS for ra in ROTATIONS]


def run_branch(psi, m_a, m_b, cfg=None, rule=RULE):
    rt = Runtime(NoiseModel.noiseless(), cfg or RuntimeConfig(AttemptSchedule(1.0, 200, 300.0, 0.01)), 3)
    rt.prepare(QuantumState((CIRCUIT_A, CIRCUIT_B), psi))
    rt.register.forced = {"Alice": [m_a], "Bob": [m_b]}
    bits = teleported_cz(rt, rule)
    return rt, bits


@pytest.mark.parametrize("m_a,m_b", [(0, 0), (0, 1), (1, 0), (1, 1)])
def test_branch_oracle_is_cz(m_a, m_b):
    op = branch_oracle(m_a, m_b)
    phase = op[0, 0]
    assert abs(abs(phase) - 1) < 1e-12
    np.testing.assert_allclose(op, phase * CZ, atol=1e-12)


def test_swapped_bob_correction_breaks_the_table():
    # reading Y outcome 0 as the other eigenstate amounts to swapping Bob's S and S-dagger

    class Swapped(FeedForwardRule):
        @staticmethod
        def u_bob(parity):
            return FeedForwardRule.u_bob(1 - parity)

    fids = [abs(np.trace(branch_oracle(a, b, Swapped()).conj().T @ CZ)) / 4 for a in (0, 1) for b in (0, 1)]
    assert min(fids) < 0.9


@pytest.mark.parametrize("m_a,m_b", [(0, 0), (0, 1), (1, 0), (1, 1)])
def test_runtime_branches_match_direct_cz(m_a, m_b):
    for psi in INPUTS:
        rt, bits = run_branch(psi, m_a, m_b)
        assert bits == {"Alice": m_a, "Bob": m_b}
        assert rt.register.weight == pytest.approx(0.25)
        out = reduced_circuit_state(rt)
        assert state_fidelity(out, CZ @ psi) >= 1 - 1e-9


@given(st.integers(0, 2**31 - 1))
def test_random_inputs_sampled_outcomes(seed):
    rng = np.random.default_rng(seed)
    psi = haar_unitary(rng, 4)[:, 0]
    rt = Runtime(NoiseModel.noiseless(), RuntimeConfig(AttemptSchedule(1.0, 200, 300.0, 0.3)), seed)
    rt.prepare(QuantumState((CIRCUIT_A, CIRCUIT_B), psi))
    teleported_cz(rt)
    assert state_fidelity(reduced_circuit_state(rt), CZ @ psi) >= 1 - 1e-9


@pytest.mark.parametrize("pulses", list(range(0, 23)))
def test_interrupted_decoupling_at_every_pulse_index(pulses):
    # a herald after `pulses` decoupling pulses; attempt length puts it mid-way between pulses
    cfg = RuntimeConfig(AttemptSchedule(1500.0 * pulses + 1.0, 200, 0.0, 1.0))
    psi = INPUTS[10]
    rt, _ = run_branch(psi, pulses % 2, 1, cfg)
    assert rt.heralds[0].dd_pulses_applied == {"Alice": pulses, "Bob": pulses}
    assert state_fidelity(reduced_circuit_state(rt), CZ @ psi) >= 1 - 1e-9


def test_noiseless_channel_is_cz():
    cfg = default_config()
    sup = qgt_channel(NoiseModel.noiseless(), build_runtime_config(cfg), 1, campaigns=2)
    assert np.abs(sup - unitary_superoperator(CZ)).max() < 1e-10


def test_calibrated_channel_is_cptp_and_near_target():
    from dqcsim.tomography import ProcessMatrix, average_gate_fidelity

    cfg = default_config()
    sup = qgt_channel(build_noise(cfg), build_runtime_config(cfg), 1, campaigns=2)
    chi = ProcessMatrix.from_process(sup)
    chi.check(tol=1e-9)
    assert 0.8 < average_gate_fidelity(chi, CZ) < 0.9


def test_memory_channel_noiseless_is_identity():
    cfg = default_config()
    sup = memory_channel(NoiseModel.noiseless(), build_runtime_config(cfg), 4, campaigns=3)
    np.testing.assert_allclose(sup, np.eye(4), atol=1e-12)
