"""Teleported CZ between the circuit qubits of two modules.

Per module: wait for a herald while decoupling the circuit qubit, move the
data to the auxiliary qubit, CZ it with the network qubit, move it back,
read out the network qubit (Alice in X, Bob in Y), swap the two bits, apply
the conditional S / S-dagger, finish the decoupling sequence and apply the
Z frame correction implied by the peer's pulse parity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .core import S, SDG, QuantumState, QubitId
from .runtime import Entangle, ModuleAgent, Quantum, Recv, Runtime, Send, reduced_circuit_state
from .tomography import input_states

CIRCUIT_A = QubitId("Alice", "circuit", 0)
CIRCUIT_B = QubitId("Bob", "circuit", 0)


@dataclass(frozen=True)
class FeedForwardRule:
    basis_alice: str = "X"
    basis_bob: str = "Y"

    @staticmethod
    def u_alice(parity: int) -> np.ndarray:
        return SDG if parity == 0 else S

    @staticmethod
    def u_bob(parity: int) -> np.ndarray:
        return S if parity == 0 else SDG

    def basis(self, first: bool) -> str:
        return self.basis_alice if first else self.basis_bob

    def correction(self, first: bool, parity: int) -> np.ndarray:
        return self.u_alice(parity) if first else self.u_bob(parity)


RULE = FeedForwardRule()


def qgt_steps(rt: Runtime, agent: ModuleAgent, rule: FeedForwardRule = RULE) -> Iterator:
    """Effects one module yields for a single teleported CZ (use with ``yield from``)."""
    first = agent.rank == 0
    peer = rt.peer(agent.name)
    agent.start_dd(agent.rng)
    while True:
        rec = yield Entangle()
        pulses = yield Quantum(lambda reg, rng: agent.dd_tick(reg, rec.elapsed), "dd_tick")
        rec.dd_pulses_applied[agent.name] = rec.dd_pulses_applied.get(agent.name, 0) + pulses
        if rec.success:
            break
    yield Quantum(lambda reg, rng: agent.transfer_circuit_to_aux(reg), "transfer_c_to_x")
    yield Quantum(lambda reg, rng: agent.local_cz(reg), "local_cz")
    yield Quantum(lambda reg, rng: agent.transfer_aux_to_circuit(reg), "transfer_x_to_c")
    basis = rule.basis(first)
    m = yield Quantum(lambda reg, rng: agent.measure_network(reg, basis, rng),
                      f"measure_network_{basis}", agent.noise.measurement_duration)
    yield Send(m)
    peer_m = yield Recv()
    u = rule.correction(first, m ^ peer_m)
    yield Quantum(lambda reg, rng: agent.rotate(reg, u), "feed_forward")
    yield Quantum(lambda reg, rng: agent.complete_dd_with_cz_propagation(reg)[0], "complete_dd")
    # the peer's pending parity is known from the shared herald record
    z = rec.dd_pulses_applied.get(peer, 0) % 2
    yield Quantum(lambda reg, rng: agent.apply_z_correction(reg, z), "z_correction")
    yield Quantum(lambda reg, rng: agent.reset_network(reg), "reset_network")
    return m


def teleported_cz(rt: Runtime, rule: FeedForwardRule = RULE) -> dict[str, int]:
    """Run one teleported CZ on the runtime's register; returns each module's measured bit."""

    def program(agent):
        return (yield from qgt_steps(rt, agent, rule))

    return rt.run({name: program for name in rt.agents})


# ---------------------------------------------------------------- oracles

def branch_oracle(m_a: int, m_b: int, rule: FeedForwardRule = RULE) -> np.ndarray:
    """Circuit-qubit operator of the noiseless protocol conditioned on (m_a, m_b).

    Built by plain Kronecker products over (c_A, n_A, c_B, n_B), independent
    of the runtime. The projected operator is rescaled by 2 so that it is
    unitary when the branch is correct.
    """
    i2 = np.eye(2)
    # qubit order (MSB first): c_A, n_A, c_B, n_B
    def on(op, k):
        mats = [i2] * 4
        mats[k] = op
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    def cz(a, b):
        out = np.zeros((16, 16), dtype=complex)
        for idx in range(16):
            bits = [(idx >> (3 - k)) & 1 for k in range(4)]
            out[idx, idx] = -1 if bits[a] and bits[b] else 1
        return out

    psi_plus = np.array([0, 1, 1, 0]) / np.sqrt(2)
    # isometry |c_A c_B> -> |c_A> |n_A n_B = Psi+> |c_B> arranged as c_A n_A c_B n_B
    iso = np.zeros((16, 4), dtype=complex)
    for ca in (0, 1):
        for cb in (0, 1):
            for na in (0, 1):
                for nb in (0, 1):
                    amp = psi_plus[2 * na + nb]
                    iso[(ca << 3) | (na << 2) | (cb << 1) | nb, 2 * ca + cb] = amp
    op = cz(0, 1) @ cz(2, 3) @ iso
    eig = {"X": [np.array([1, 1]) / np.sqrt(2), np.array([1, -1]) / np.sqrt(2)],
           "Y": [np.array([1, -1j]) / np.sqrt(2), np.array([1, 1j]) / np.sqrt(2)]}
    bra_a = eig[rule.basis_alice][m_a].conj()
    bra_b = eig[rule.basis_bob][m_b].conj()
    proj = np.kron(np.kron(np.kron(i2, bra_a), i2), bra_b)
    circuit_op = proj @ op
    # back to little-endian order (c_A least significant) used everywhere else
    swap = np.eye(4)[[0, 2, 1, 3]]
    circuit_op = swap @ circuit_op @ swap
    ff = np.kron(rule.u_bob(m_a ^ m_b), rule.u_alice(m_a ^ m_b))
    return 2 * ff @ circuit_op


def product_inputs_2q() -> list[np.ndarray]:
    """16 product density matrices; index 4*i_B + i_A with Alice as the least significant qubit."""
    return input_states(2)


def superoperator_from_io(inputs: list[np.ndarray], outputs: list[np.ndarray]) -> np.ndarray:
    """Linear inversion: S with vec(out_i) = S vec(in_i), row-major vec."""
    a = np.array([m.reshape(-1) for m in inputs]).T
    b = np.array([m.reshape(-1) for m in outputs]).T
    return b @ np.linalg.inv(a)


def qgt_channel(noise, config, seed: int, campaigns: int = 16, rule: FeedForwardRule = RULE,
                body=teleported_cz) -> np.ndarray:
    """Superoperator of one teleported CZ on the two circuit qubits, averaged over campaigns.

    For each sampled campaign the four measurement branches are forced and
    summed with their probabilities, so the only sampling left is over the
    herald time (and any quasi-static detuning).
    """
    inputs = product_inputs_2q()
    children = np.random.SeedSequence(seed).spawn(campaigns)
    total = np.zeros((16, 16), dtype=complex)
    for child in children:
        outputs = []
        for rho in inputs:
            acc = np.zeros((4, 4), dtype=complex)
            for m_a in (0, 1):
                for m_b in (0, 1):
                    rt = Runtime(noise, config, np.random.SeedSequence(child.entropy, spawn_key=child.spawn_key))
                    rt.prepare(QuantumState((CIRCUIT_A, CIRCUIT_B), rho))
                    rt.register.forced = {"Alice": [m_a], "Bob": [m_b]}
                    body(rt, rule)
                    acc += rt.register.weight * reduced_circuit_state(rt).density()
            outputs.append(acc)
        total += superoperator_from_io(inputs, outputs)
    return total / campaigns


def unitary_superoperator(u: np.ndarray) -> np.ndarray:
    """Row-major vec convention: vec(u rho u^dag) = (u (x) conj(u)) vec(rho)."""
    return np.kron(u, u.conj())


def apply_superoperator(sup: np.ndarray, rho: np.ndarray) -> np.ndarray:
    d = rho.shape[0]
    return (sup @ rho.reshape(-1)).reshape(d, d)


def memory_channel(noise, config, seed: int, module: str = "Alice", campaigns: int = 16) -> np.ndarray:
    """Single-qubit superoperator of the circuit qubit stored under decoupling for one
    entanglement campaign, then brought back to the frame by finishing the sequence."""
    from .core import partial_trace, product_state
    from .link import generate_entanglement
    from .runtime import DdState, ModuleAgent, Register

    inputs = input_states(1)
    total = np.zeros((4, 4), dtype=complex)
    for child in np.random.SeedSequence(seed).spawn(campaigns):
        link_ss, agent_ss = child.spawn(2)
        rec = generate_entanglement(config.schedule, noise.bell, np.random.default_rng(link_ss))
        outputs = []
        for rho in inputs:
            agent = ModuleAgent(module, noise[module], DdState(config.dd_sequence, config.interpulse_delay))
            reg = Register(product_state([(agent.circuit, rho)]))
            agent.start_dd(np.random.default_rng(agent_ss))
            agent.dd_tick(reg, rec.elapsed)
            agent.complete_dd_with_cz_propagation(reg)
            outputs.append(partial_trace(reg.state, [agent.circuit]).density())
        total += superoperator_from_io(inputs, outputs)
    return total / campaigns
