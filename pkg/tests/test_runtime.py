import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dqcsim.core import CZ, PAULIS, QuantumState, QubitId, basis_state
from dqcsim.link import AttemptSchedule
from dqcsim.noise import ModuleNoise, NoiseModel
from dqcsim.runtime import (DdState, Entangle, LinkTimeout, ModuleAgent, ProtocolOrderError, Quantum, Recv,
                            Register, Runtime, RuntimeConfig, Send, kdd_sequence, knill_block, pi_pulse,
                            sequence_unitary)

X, Z = PAULIS["X"], PAULIS["Z"]


def proportional_to_identity(u, atol=1e-12):
    phase = u[0, 0]
    return abs(abs(phase) - 1) < atol and np.allclose(u, phase * np.eye(len(u)), atol=atol)


def config(p=1.0, attempt=1.0):
    return RuntimeConfig(AttemptSchedule(attempt, 200, 300.0, p))


def test_kdd_is_twenty_pulses_and_identity():
    seq = kdd_sequence()
    assert len(seq) == 20
    assert proportional_to_identity(sequence_unitary(seq))


def test_single_knill_block_is_a_pi_rotation_not_identity():
    u = sequence_unitary(knill_block())
    assert not proportional_to_identity(u)
    # net pi rotation about the equatorial axis at 5pi/6, up to global phase
    target = pi_pulse(5 * np.pi / 6)
    overlap = abs(np.trace(target.conj().T @ u)) / 2
    assert overlap == pytest.approx(1, abs=1e-12)


@given(st.floats(0, 2 * np.pi))
def test_every_pulse_is_x_times_diagonal(phase):
    d = X @ pi_pulse(phase)
    assert abs(d[0, 1]) < 1e-12 and abs(d[1, 0]) < 1e-12


def test_propagation_identity_exact():
    lhs = np.kron(np.eye(2), X) @ CZ   # X on the first qubit (least significant)
    rhs = CZ @ np.kron(Z, X)
    assert np.abs(lhs - rhs).max() < 1e-12


@given(st.floats(0, 40_000))
def test_dd_tick_pulse_count(elapsed):
    agent = ModuleAgent("Alice", ModuleNoise())
    reg = Register(basis_state(sorted(agent.qubits)))
    agent.start_dd()
    n = agent.dd_tick(reg, elapsed)
    assert n == int(np.floor(elapsed / 1500.0 + 0.5))
    assert agent.dd.pending_x_parity == n % 2


def test_dd_tick_is_additive():
    a1, a2 = ModuleAgent("Alice", ModuleNoise()), ModuleAgent("Alice", ModuleNoise())
    r1, r2 = Register(basis_state(sorted(a1.qubits))), Register(basis_state(sorted(a2.qubits)))
    a1.dd_tick(r1, 5000.0)
    a2.dd_tick(r2, 2000.0)
    a2.dd_tick(r2, 3000.0)
    assert a1.dd.applied == a2.dd.applied == 3


def test_protocol_order_enforced():
    agent = ModuleAgent("Alice", ModuleNoise())
    reg = Register(basis_state(sorted(agent.qubits)))
    with pytest.raises(ProtocolOrderError):
        agent.local_cz(reg)
    with pytest.raises(ProtocolOrderError):
        agent.transfer_aux_to_circuit(reg)
    with pytest.raises(ProtocolOrderError):
        agent.measure_network(reg, "X", np.random.default_rng(0))
    agent.transfer_circuit_to_aux(reg)
    with pytest.raises(ProtocolOrderError):
        agent.transfer_circuit_to_aux(reg)
    with pytest.raises(ProtocolOrderError):
        agent.local_cz(reg)  # no live network qubit yet


def test_transfer_moves_data():
    agent = ModuleAgent("Alice", ModuleNoise())
    qs = sorted(agent.qubits)
    bits = {agent.circuit: 1}
    reg = Register(basis_state(qs, [bits.get(q, 0) for q in qs]))
    agent.transfer_circuit_to_aux(reg)
    out = np.argmax(np.abs(reg.state.data))
    assert (out >> qs.index(agent.auxiliary)) & 1 == 1
    assert (out >> qs.index(agent.circuit)) & 1 == 0


def _ping_programs(log):
    def alice(agent):
        yield Quantum(lambda reg, rng: None, "work", 5.0)
        yield Send(1)
        got = yield Recv()
        log.append(("Alice", got, agent.time))
        return got

    def bob(agent):
        got = yield Recv()
        yield Send(got ^ 1)
        log.append(("Bob", got, agent.time))
        return got

    return {"Alice": alice, "Bob": bob}


@pytest.mark.parametrize("mode", ["sequential", "threaded"])
def test_classical_messages_and_latency(mode):
    log = []
    rt = Runtime(NoiseModel.noiseless(), config(), 0, mode=mode)
    results = rt.run(_ping_programs(log))
    assert results == {"Alice": 0, "Bob": 1}
    assert ("Bob", 1, 6.0) in log and ("Alice", 0, 7.0) in log
    assert rt.counters["bits_sent"] == 2


def test_dropped_message_raises_timeout_with_context():
    rt = Runtime(NoiseModel.noiseless(), config(), 0, drop_messages=frozenset({("Alice", 0)}))
    with pytest.raises(LinkTimeout, match="waiting"):
        rt.run(_ping_programs([]))
    assert rt.events[-1]["event"] == "timeout"


def test_entangle_rendezvous_sets_shared_time():
    def prog(agent):
        if agent.name == "Bob":
            yield Quantum(lambda reg, rng: None, "busy", 50.0)
        rec = yield Entangle()
        return (rec.elapsed, agent.time, agent.network_live)

    rt = Runtime(NoiseModel.noiseless(), config(p=1.0, attempt=3.0), 0)
    res = rt.run({"Alice": prog, "Bob": prog})
    assert res["Alice"] == res["Bob"] == (3.0, 53.0, True)
    assert rt.counters["bell_pairs"] == 1


def test_schedulers_produce_identical_event_logs():
    from dqcsim.config import build_noise, build_runtime_config, default_config
    from dqcsim.protocol import teleported_cz

    cfg = default_config()
    logs = []
    for mode in ("sequential", "threaded"):
        rt = Runtime(build_noise(cfg), build_runtime_config(cfg), 42, mode=mode)
        rt.prepare(QuantumState((QubitId("Alice", "circuit", 0), QubitId("Bob", "circuit", 0)),
                                np.array([0.5, 0.5, 0.5, 0.5], dtype=complex)))
        teleported_cz(rt)
        logs.append((rt.event_log_lines(), rt.register.state.density().tobytes()))
    assert logs[0] == logs[1]


def test_forced_outcomes_weight():
    agent = ModuleAgent("Alice", ModuleNoise())
    q = agent.network
    plus = QuantumState((q,), np.array([1, 1], dtype=complex) / np.sqrt(2))
    reg = Register(plus, forced={"Alice": [1]})
    assert reg.readout(q, np.eye(2), np.random.default_rng(0), "Alice") == 1
    assert reg.weight == pytest.approx(0.5)


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        Runtime(NoiseModel.noiseless(), config(), 0, mode="parallel")


def test_dd_state_reset():
    d = DdState(applied=3, clock=10.0)
    d.reset()
    assert d.applied == 0 and d.clock == 0.0
