"""Two-module runtime: per-module agents, a shared quantum register and a
deterministic scheduler for agent programs.

Agent programs are generators that yield effects (``Quantum``, ``Send``,
``Recv``, ``Entangle``) and receive the effect's result back. The kernel
always executes the ready effect with the smallest (model time, agent rank),
so the outcome of a run depends only on the seeds. In ``threaded`` mode each
program runs in its own thread and talks to the kernel through queues; the
kernel still picks effects in the same order, so both modes give
bit-identical results.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Generator

import numpy as np

from .core import (CZ, PAULIS, KrausChannel, QuantumState, QubitId, apply_channel, apply_unitary,
                   basis_state, measurement_branches, partial_trace, replace_qubits, rotation)
from .link import AttemptSchedule, HeraldRecord, generate_entanglement
from .noise import (ModuleNoise, NoiseModel, SpamPovm, dephasing_channel, depolarizing_channel,
                    depolarizing_from_infidelity, detection_error, memory_dephasing_probability)


class ProtocolOrderError(RuntimeError):
    """Local operations requested out of the transfer -> CZ -> transfer-back order."""


class LinkTimeout(RuntimeError):
    """A receive did not complete within the configured model-time timeout."""


# ---------------------------------------------------------------- decoupling

def knill_block(base_phase: float = 0.0) -> tuple[float, ...]:
    return tuple(base_phase + p for p in (np.pi / 6, 0.0, np.pi / 2, 0.0, np.pi / 6))


def kdd_sequence() -> tuple[float, ...]:
    """Four Knill blocks with base phases 0, pi/2, 0, pi/2 (20 pulses)."""
    return sum((knill_block(b) for b in (0.0, np.pi / 2, 0.0, np.pi / 2)), ())


def pi_pulse(phase: float) -> np.ndarray:
    """pi rotation about the equatorial axis at angle ``phase`` from x."""
    return -1j * (np.cos(phase) * PAULIS["X"] + np.sin(phase) * PAULIS["Y"])


def sequence_unitary(phases) -> np.ndarray:
    u = np.eye(2, dtype=complex)
    for ph in phases:
        u = pi_pulse(ph) @ u
    return u


@dataclass
class DdState:
    sequence: tuple[float, ...] = field(default_factory=kdd_sequence)
    interpulse_delay: float = 1500.0
    applied: int = 0
    clock: float = 0.0

    @property
    def pending_x_parity(self) -> int:
        # every pulse is an equatorial pi rotation, i.e. X up to a Z-diagonal factor
        return self.applied % 2

    def reset(self) -> None:
        self.applied = 0
        self.clock = 0.0


# ---------------------------------------------------------------- register

@dataclass
class Register:
    """Joint quantum state of all modules.

    With ``forced`` set, mid-circuit measurements do not sample: the outcome
    for each module is taken from ``forced[module]`` in order and ``weight``
    is multiplied by its probability, so the four branch runs can be summed
    into the exact averaged channel.
    """

    state: QuantumState
    weight: float = 1.0
    forced: dict[str, list[int]] | None = None
    _forced_pos: dict[str, int] = field(default_factory=dict)

    def apply_unitary(self, u, targets) -> None:
        # callers are internal and pass exact unitaries
        self.state = apply_unitary(self.state, u, targets, check=False)

    def apply_channel(self, ch: KrausChannel, targets) -> None:
        self.state = apply_channel(self.state, ch, targets)

    def next_forced(self, module: str) -> int | None:
        if self.forced is None:
            return None
        pos = self._forced_pos.get(module, 0)
        self._forced_pos[module] = pos + 1
        return self.forced[module][pos]

    def readout(self, target: QubitId, flip: np.ndarray, rng: np.random.Generator, module: str) -> int:
        """Z readout with classical confusion matrix ``flip[read, true]``.

        The post-measurement state keeps the target projected onto the true
        outcome (mixed over true outcomes when a forced reading is used).
        """
        branches = measurement_branches(self.state, target, "Z")
        forced = self.next_forced(module)
        if forced is None:
            true = 0 if rng.random() < branches[0][0] else 1
            read = true if rng.random() >= flip[1 - true, true] else 1 - true
            self.state = branches[true][2]
            return read
        parts = [(p * flip[forced, t], s) for p, t, s in branches if s is not None and p * flip[forced, t] > 0]
        total = sum(w for w, _ in parts)
        if total <= 0:
            raise ValueError(f"forced outcome {forced} on {target} has zero probability")
        if len(parts) == 1:
            self.state = parts[0][1]
        else:
            self.state = QuantumState(self.state.qubits, sum(w * s.density() for w, s in parts) / total)
        self.weight *= total
        return forced


# ---------------------------------------------------------------- agents

IDLE, ON_AUX, CZ_DONE = "idle", "on_aux", "cz_done"

# basis pre-rotations for network-qubit readout: outcome 0 <-> R|0> with R the inverse
_NETWORK_PREROTATION = {
    "X": rotation("y", -np.pi / 2),  # 0 <-> |+>
    "Y": rotation("x", -np.pi / 2),  # 0 <-> (|0> - i|1>)/sqrt(2)
    "Z": np.eye(2, dtype=complex),
}


@dataclass
class ModuleAgent:
    name: str
    noise: ModuleNoise
    dd: DdState = field(default_factory=DdState)
    rank: int = 0
    time: float = 0.0
    phase: str = IDLE
    network_live: bool = False
    quasistatic_detuning: float = 0.0
    rng: np.random.Generator | None = None

    @property
    def network(self) -> QubitId:
        return QubitId(self.name, "network", 0)

    @property
    def circuit(self) -> QubitId:
        return QubitId(self.name, "circuit", 0)

    @property
    def auxiliary(self) -> QubitId:
        return QubitId(self.name, "auxiliary", 0)

    @property
    def qubits(self) -> tuple[QubitId, QubitId, QubitId]:
        return (self.auxiliary, self.circuit, self.network)

    def _depolarize(self, reg: Register, error: float, targets) -> None:
        if error > 0:
            p = depolarizing_from_infidelity(error, len(targets))
            reg.apply_channel(depolarizing_channel(p, len(targets)), targets)

    # single-qubit gates on the data qubit
    def rotate(self, reg: Register, u: np.ndarray, noisy: bool = True) -> None:
        target = self.auxiliary if self.phase in (ON_AUX, CZ_DONE) else self.circuit
        reg.apply_unitary(u, [target])
        if noisy:
            self._depolarize(reg, self.noise.single_qubit_error, [target])

    def transfer_circuit_to_aux(self, reg: Register) -> None:
        if self.phase != IDLE:
            raise ProtocolOrderError(f"{self.name}: transfer C->X requested while data is {self.phase}")
        self._swap(reg, self.circuit, self.auxiliary)
        self.phase = ON_AUX

    def local_cz(self, reg: Register) -> None:
        if self.phase != ON_AUX:
            raise ProtocolOrderError(f"{self.name}: local CZ requires data on the auxiliary qubit (state {self.phase})")
        if not self.network_live:
            raise ProtocolOrderError(f"{self.name}: local CZ requires a live network qubit")
        reg.apply_unitary(CZ, [self.network, self.auxiliary])
        self._depolarize(reg, self.noise.local_cz_error, [self.network, self.auxiliary])
        self.phase = CZ_DONE

    def transfer_aux_to_circuit(self, reg: Register) -> None:
        if self.phase != CZ_DONE:
            raise ProtocolOrderError(f"{self.name}: transfer X->C requested while data is {self.phase}")
        self._swap(reg, self.auxiliary, self.circuit)
        self.phase = IDLE

    def _swap(self, reg: Register, src: QubitId, dst: QubitId) -> None:
        # the destination is in its reset state, so moving the data is a swap
        swap = np.eye(4, dtype=complex)[[0, 2, 1, 3]]
        reg.apply_unitary(swap, [src, dst])
        if self.noise.transfer_error > 0:
            reg.apply_channel(depolarizing_channel(2 * self.noise.transfer_error, 1), [dst])

    # dynamical decoupling of the circuit qubit
    def start_dd(self, rng: np.random.Generator | None = None) -> None:
        self.dd.reset()
        sigma = self.noise.memory_quasistatic_sigma
        self.quasistatic_detuning = float(rng.normal(0.0, sigma)) if sigma > 0 and rng is not None else 0.0

    def _idle(self, reg: Register, dt: float) -> None:
        if dt <= 0:
            return
        p = memory_dephasing_probability(self.noise.memory_dephasing_rate, dt)
        if p > 0:
            reg.apply_channel(dephasing_channel(p), [self.circuit])
        if self.quasistatic_detuning:
            reg.apply_unitary(rotation("z", self.quasistatic_detuning * dt), [self.circuit])

    def _pulse(self, reg: Register) -> None:
        phase = self.dd.sequence[self.dd.applied % len(self.dd.sequence)]
        reg.apply_unitary(pi_pulse(phase), [self.circuit])
        self._depolarize(reg, self.noise.single_qubit_error, [self.circuit])
        self.dd.applied += 1

    def dd_tick(self, reg: Register, elapsed: float) -> int:
        """Idle for ``elapsed`` with a pulse at every (c + 1/2) * delay boundary; returns pulses applied."""
        start = self.dd.applied
        t, end = self.dd.clock, self.dd.clock + elapsed
        while (self.dd.applied + 0.5) * self.dd.interpulse_delay <= end:
            boundary = (self.dd.applied + 0.5) * self.dd.interpulse_delay
            self._idle(reg, boundary - t)
            self._pulse(reg)
            t = boundary
        self._idle(reg, end - t)
        self.dd.clock = end
        return self.dd.applied - start

    def complete_dd_with_cz_propagation(self, reg: Register) -> tuple[int, bool]:
        """Finish the interrupted sequence back-to-back.

        Returns ``(z_correction, was_interrupted)``: the Z-correction bit the
        peer must apply, which is the parity of pulses that ran before the
        teleported CZ, since (X (x) I) CZ = CZ (X (x) Z).
        """
        if self.dd.applied == 0:
            return 0, False
        z = self.dd.pending_x_parity
        length = len(self.dd.sequence)
        remaining = [self.dd.sequence[k % length] for k in range(self.dd.applied, -(-self.dd.applied // length) * length)]
        if remaining:
            # depolarizing noise commutes with unitaries, so the back-to-back block
            # is one unitary followed by the composed depolarizing channel
            reg.apply_unitary(sequence_unitary(remaining), [self.circuit])
            r = self.noise.single_qubit_error
            if r > 0:
                p = 1 - (1 - depolarizing_from_infidelity(r, 1)) ** len(remaining)
                reg.apply_channel(depolarizing_channel(p, 1), [self.circuit])
        self.dd.reset()
        return z, True

    def apply_z_correction(self, reg: Register, bit: int) -> None:
        # frame update, noiseless
        if bit:
            reg.apply_unitary(PAULIS["Z"], [self.circuit])

    def measure_network(self, reg: Register, basis: str, rng: np.random.Generator) -> int:
        if not self.network_live:
            raise ProtocolOrderError(f"{self.name}: network qubit has no live data to measure")
        basis = basis.upper()
        reg.apply_unitary(_NETWORK_PREROTATION[basis], [self.network])
        if basis != "Z":
            self._depolarize(reg, self.noise.network_rotation_error, [self.network])
        dark = detection_error(self.noise.measurement_duration, self.noise)
        base = self.noise.detection_base_error
        flip = np.array([[1 - base, dark], [base, 1 - dark]])
        return reg.readout(self.network, flip, rng, self.name)

    def reset_network(self, reg: Register) -> None:
        reg.state = replace_qubits(reg.state, basis_state([self.network]))
        self.network_live = False

    def measure_circuit(self, reg: Register, rng: np.random.Generator, spam: SpamPovm | None = None) -> int:
        spam = spam or self.noise.spam_for("circuit")
        flip = spam.flip_matrix()
        if reg.forced is not None:
            # final readouts are never forced; sample them
            saved, reg.forced = reg.forced, None
            try:
                return reg.readout(self.circuit, flip, rng, self.name)
            finally:
                reg.forced = saved
        return reg.readout(self.circuit, flip, rng, self.name)


# ---------------------------------------------------------------- effects

@dataclass
class Quantum:
    fn: Callable[[Register, np.random.Generator], Any]
    label: str
    duration: float = 0.0


@dataclass
class Send:
    bit: int
    label: str = "send"


@dataclass
class Recv:
    label: str = "recv"


@dataclass
class Entangle:
    label: str = "entangle"


Program = Generator[Any, Any, Any]


@dataclass
class _Message:
    bit: int
    arrival: float


class _ThreadedProgram:
    """Runs a generator in its own thread; ``step`` resumes it and waits for the next effect."""

    _DONE = object()

    def __init__(self, gen: Program):
        self._gen = gen
        self._to_actor: queue.Queue = queue.Queue()
        self._from_actor: queue.Queue = queue.Queue()
        self.thread = threading.Thread(target=self._loop, daemon=True)
        self.thread.start()

    def _loop(self):
        while True:
            kind, value = self._to_actor.get()
            try:
                if kind == "close":
                    self._gen.close()
                    return
                eff = next(self._gen) if kind == "start" else self._gen.send(value)
                self._from_actor.put(("effect", eff))
            except StopIteration as stop:
                self._from_actor.put(("done", stop.value))
                return
            except BaseException as exc:  # forwarded to the kernel thread
                self._from_actor.put(("error", exc))
                return

    def step(self, kind: str, value: Any = None):
        self._to_actor.put((kind, value))
        tag, payload = self._from_actor.get()
        if tag == "error":
            raise payload
        if tag == "done":
            raise StopIteration(payload)
        return payload

    def close(self):
        if self.thread.is_alive():
            self._to_actor.put(("close", None))
            self.thread.join(timeout=5)


class _DirectProgram:
    def __init__(self, gen: Program):
        self._gen = gen

    def step(self, kind: str, value: Any = None):
        return next(self._gen) if kind == "start" else self._gen.send(value)

    def close(self):
        self._gen.close()


@dataclass
class RuntimeConfig:
    schedule: AttemptSchedule
    interpulse_delay: float = 1500.0
    classical_latency: float = 1.0
    recv_timeout: float = 1e6
    max_attempts: int | None = None
    dd_sequence: tuple[float, ...] = field(default_factory=kdd_sequence)


class Runtime:
    """Two (or more) module agents sharing a register, plus the link and classical channel."""

    def __init__(self, noise: NoiseModel, config: RuntimeConfig, seed: int | np.random.SeedSequence,
                 modules: tuple[str, ...] = ("Alice", "Bob"), mode: str = "sequential",
                 drop_messages: frozenset[tuple[str, int]] = frozenset()):
        if mode not in ("sequential", "threaded"):
            raise ValueError(f"unknown scheduler mode {mode!r}")
        self.noise = noise
        self.config = config
        self.mode = mode
        self.drop_messages = drop_messages
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        # one stream per agent, one for the link
        streams = ss.spawn(len(modules) + 1)
        self.agents = {
            name: ModuleAgent(name, noise[name], DdState(config.dd_sequence, config.interpulse_delay),
                              rank=i, rng=np.random.default_rng(streams[i]))
            for i, name in enumerate(modules)
        }
        self.link_rng = np.random.default_rng(streams[-1])
        qubits = sorted(q for a in self.agents.values() for q in a.qubits)
        self.register = Register(basis_state(qubits))
        self.events: list[dict] = []
        self.counters = {"bell_pairs": 0, "bits_sent": 0, "campaigns": 0}
        self.heralds: list[HeraldRecord] = []
        self._inbox: dict[str, list[_Message]] = {n: [] for n in modules}
        self._sent: dict[str, int] = {n: 0 for n in modules}

    def peer(self, name: str) -> str:
        others = [n for n in self.agents if n != name]
        if len(others) != 1:
            raise ValueError("peer lookup needs exactly two modules")
        return others[0]

    def prepare(self, state: QuantumState) -> None:
        """Load data into (a subset of) the register, e.g. the two circuit qubits."""
        self.register.state = replace_qubits(self.register.state, state)

    def log(self, t: float, agent: str, event: str, **data) -> None:
        self.events.append({"t": t, "agent": agent, "event": event, **data})

    def event_log_lines(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)

    # ------------------------------------------------------------ scheduler

    def run(self, programs: dict[str, Callable[[ModuleAgent], Program]]) -> dict[str, Any]:
        wrap = _ThreadedProgram if self.mode == "threaded" else _DirectProgram
        order = sorted(programs, key=lambda n: self.agents[n].rank)
        procs = {n: wrap(programs[n](self.agents[n])) for n in order}
        pending: dict[str, Any] = {}
        results: dict[str, Any] = {}
        try:
            for n in order:
                self._advance(n, procs, pending, results, "start")
            while pending:
                choice = self._pick(pending)
                if choice is None:
                    self._raise_deadlock(pending)
                name, t = choice
                eff = pending[name]
                if isinstance(eff, Entangle):
                    value = self._do_entangle(pending)
                    for n in sorted(value, key=lambda x: self.agents[x].rank):
                        self._advance(n, procs, pending, results, "send", value[n])
                    continue
                del pending[name]
                value = self._execute(name, eff, t)
                self._advance(name, procs, pending, results, "send", value)
        finally:
            for p in procs.values():
                p.close()
        return results

    def _advance(self, name, procs, pending, results, kind, value=None):
        try:
            pending[name] = procs[name].step(kind, value)
        except StopIteration as stop:
            results[name] = stop.value

    def _ready_time(self, name: str, eff, pending) -> float | None:
        agent = self.agents[name]
        if isinstance(eff, (Quantum, Send)):
            return agent.time
        if isinstance(eff, Recv):
            box = self._inbox[name]
            if not box:
                return None
            return max(agent.time, box[0].arrival)
        if isinstance(eff, Entangle):
            if len(pending) == len(self.agents) and all(isinstance(e, Entangle) for e in pending.values()):
                return max(a.time for a in self.agents.values())
            return None
        raise TypeError(f"unknown effect {eff!r}")

    def _pick(self, pending):
        best = None
        for name, eff in pending.items():
            t = self._ready_time(name, eff, pending)
            if t is None:
                continue
            key = (t, self.agents[name].rank)
            if best is None or key < best[0]:
                best = (key, name, t)
        return None if best is None else (best[1], best[2])

    def _raise_deadlock(self, pending):
        waiting = {n: type(e).__name__ for n, e in pending.items()}
        name = min(pending, key=lambda n: self.agents[n].rank)
        t = self.agents[name].time + self.config.recv_timeout
        self.log(t, name, "timeout", waiting=waiting)
        raise LinkTimeout(
            f"no progress possible at model time {t:.1f} us: agents waiting on {waiting}; "
            f"bits sent so far {dict(self._sent)}; a message was lost or the peer finished early"
        )

    def _execute(self, name: str, eff, t: float) -> Any:
        agent = self.agents[name]
        agent.time = t
        if isinstance(eff, Quantum):
            value = eff.fn(self.register, agent.rng)
            agent.time += eff.duration
            self.log(t, name, eff.label, **({"result": value} if isinstance(value, (int, bool)) else {}))
            return value
        if isinstance(eff, Send):
            if eff.bit not in (0, 1):
                raise ValueError(f"classical channel carries bits, got {eff.bit!r}")
            peer = self.peer(name)
            index = self._sent[name]
            self._sent[name] += 1
            self.counters["bits_sent"] += 1
            self.log(t, name, eff.label, bit=eff.bit)
            if (name, index) not in self.drop_messages:
                self._inbox[peer].append(_Message(eff.bit, t + self.config.classical_latency))
            return None
        if isinstance(eff, Recv):
            msg = self._inbox[name][0]
            waited = msg.arrival - agent.time if msg.arrival > agent.time else 0.0
            if waited > self.config.recv_timeout:
                self.log(agent.time + self.config.recv_timeout, name, "timeout")
                raise LinkTimeout(f"{name}: message arrived {waited:.1f} us after receive started "
                                  f"(timeout {self.config.recv_timeout} us)")
            self._inbox[name].pop(0)
            self.log(t, name, eff.label, bit=msg.bit)
            return msg.bit
        raise TypeError(f"unknown effect {eff!r}")

    def _do_entangle(self, pending) -> dict[str, HeraldRecord]:
        names = sorted(pending, key=lambda n: self.agents[n].rank)
        for n in names:
            pending.pop(n)
        start = max(self.agents[n].time for n in names)
        agents = [self.agents[n] for n in names]
        rec = generate_entanglement(self.config.schedule, self.noise.bell, self.link_rng,
                                    self.config.max_attempts, (agents[0].network, agents[1].network))
        self.counters["campaigns"] += 1
        if rec.success:
            self.register.state = replace_qubits(self.register.state, rec.state)
            self.counters["bell_pairs"] += 1
            for a in agents:
                a.network_live = True
        for a in agents:
            a.time = start + rec.elapsed
        self.heralds.append(rec)
        self.log(start, "link", "herald" if rec.success else "campaign_failed",
                 attempts=rec.attempts, elapsed=rec.elapsed)
        return {n: rec for n in names}


def reduced_circuit_state(rt: Runtime) -> QuantumState:
    return partial_trace(rt.register.state, [a.circuit for a in rt.agents.values()])
