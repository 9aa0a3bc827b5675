"""Two-qubit circuit IR, CZ-based synthesis of arbitrary two-qubit unitaries and
the distributed benchmark circuits (iSWAP, SWAP, Grover).

Synthesis goes through the magic basis: ``u`` is split as
``(A1 (x) A2) exp(i(a XX + b YY + c ZZ)) (B1 (x) B2)``, the interaction
coordinates are reduced to the Weyl chamber (pi/4 >= a >= b >= |c|), a CZ
template with the same coordinates is built, and the local layers are
recovered by matching the two magic-basis decompositions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .core import CZ, QubitId, is_unitary, rotation

MAGIC = np.array([[1, 0, 0, 1j], [0, 1j, 1, 0], [0, 1j, -1, 0], [1, 0, 0, -1j]], dtype=complex) / np.sqrt(2)

# theta_k = sx[k] a + sy[k] b + sz[k] c + g for the magic-basis eigenphases
_COORD_MATRIX = np.array([[1, -1, 1, 1], [1, 1, -1, 1], [-1, -1, -1, 1], [-1, 1, 1, 1]], dtype=float)

SWAP = np.eye(4, dtype=complex)[[0, 2, 1, 3]]
ISWAP = np.array([[1, 0, 0, 0], [0, 0, 1j, 0], [0, 1j, 0, 0], [0, 0, 0, 1]], dtype=complex)

ATOL = 1e-9


# ---------------------------------------------------------------- IR

@dataclass(frozen=True)
class Rotation:
    axis: str
    angle: float
    qubit: QubitId

    def __post_init__(self):
        if self.axis not in ("x", "y", "z"):
            raise ValueError(f"rotation axis must be x, y or z, got {self.axis!r}")


@dataclass(frozen=True)
class LocalCZ:
    q1: QubitId
    q2: QubitId


@dataclass(frozen=True)
class NonlocalCZ:
    q1: QubitId
    q2: QubitId


@dataclass(frozen=True)
class Measure:
    qubit: QubitId
    basis: str = "z"


Op = Union[Rotation, LocalCZ, NonlocalCZ, Measure]


@dataclass
class CircuitIR:
    qubits: tuple[QubitId, ...]
    ops: list[Op] = field(default_factory=list)

    def __post_init__(self):
        self.qubits = tuple(self.qubits)
        for op in self.ops:
            self.validate_op(op)

    def validate_op(self, op: Op) -> None:
        names = [getattr(op, a) for a in ("qubit", "q1", "q2") if hasattr(op, a)]
        for q in names:
            if q not in self.qubits:
                raise ValueError(f"{type(op).__name__} references unknown qubit {q}")
        if isinstance(op, NonlocalCZ):
            if op.q1.module == op.q2.module:
                raise ValueError(f"nonlocal CZ endpoints {op.q1}, {op.q2} are in the same module")
            if op.q1.role != "circuit" or op.q2.role != "circuit":
                raise ValueError("nonlocal CZ endpoints must be circuit qubits")
        if isinstance(op, LocalCZ) and op.q1.module != op.q2.module:
            raise ValueError(f"local CZ endpoints {op.q1}, {op.q2} are in different modules")
        if isinstance(op, Measure) and op.basis not in ("x", "y", "z"):
            raise ValueError(f"measurement basis must be x, y or z, got {op.basis!r}")

    def append(self, op: Op) -> None:
        self.validate_op(op)
        self.ops.append(op)

    def count(self, kind) -> int:
        return sum(isinstance(op, kind) for op in self.ops)

    def to_text(self) -> str:
        lines = ["qubits " + " ".join(str(q) for q in self.qubits)]
        for op in self.ops:
            if isinstance(op, Rotation):
                lines.append(f"rot {op.axis} {op.angle!r} {op.qubit}")
            elif isinstance(op, LocalCZ):
                lines.append(f"cz {op.q1} {op.q2}")
            elif isinstance(op, NonlocalCZ):
                lines.append(f"nlcz {op.q1} {op.q2}")
            else:
                lines.append(f"measure {op.qubit} {op.basis}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CircuitIR":
        """Parse the line format written by ``to_text``.

        Grammar, one statement per line, ``#`` starts a comment:
            qubits <qubit> <qubit> ...
            rot <x|y|z> <angle in rad> <qubit>
            cz <qubit> <qubit>
            nlcz <qubit> <qubit>
            measure <qubit> [x|y|z]
        where <qubit> is module.role.index, e.g. Alice.circuit.0.
        """
        qubits: tuple[QubitId, ...] | None = None
        ops: list[Op] = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            try:
                if tok[0] == "qubits":
                    qubits = tuple(QubitId.parse(t) for t in tok[1:])
                elif tok[0] == "rot" and len(tok) == 4:
                    ops.append(Rotation(tok[1], float(tok[2]), QubitId.parse(tok[3])))
                elif tok[0] == "cz" and len(tok) == 3:
                    ops.append(LocalCZ(QubitId.parse(tok[1]), QubitId.parse(tok[2])))
                elif tok[0] == "nlcz" and len(tok) == 3:
                    ops.append(NonlocalCZ(QubitId.parse(tok[1]), QubitId.parse(tok[2])))
                elif tok[0] == "measure" and len(tok) in (2, 3):
                    ops.append(Measure(QubitId.parse(tok[1]), tok[2] if len(tok) == 3 else "z"))
                else:
                    raise ValueError(f"unrecognised statement {line!r}")
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        if qubits is None:
            seen = []
            for op in ops:
                for a in ("qubit", "q1", "q2"):
                    q = getattr(op, a, None)
                    if q is not None and q not in seen:
                        seen.append(q)
            qubits = tuple(seen)
        return cls(qubits, ops)


def circuit_unitary(circuit: CircuitIR) -> np.ndarray:
    """Unitary of the gate part (measurements skipped), little-endian over ``circuit.qubits``."""
    n = len(circuit.qubits)
    u = np.eye(2**n, dtype=complex)
    for op in circuit.ops:
        if isinstance(op, Rotation):
            u = _embed(rotation(op.axis, op.angle), [circuit.qubits.index(op.qubit)], n) @ u
        elif isinstance(op, (LocalCZ, NonlocalCZ)):
            u = _embed(CZ, [circuit.qubits.index(op.q1), circuit.qubits.index(op.q2)], n) @ u
    return u


def _embed(m: np.ndarray, positions: list[int], n: int) -> np.ndarray:
    k = len(positions)
    out = np.zeros((2**n, 2**n), dtype=complex)
    for col in range(2**n):
        sub_in = sum(((col >> p) & 1) << i for i, p in enumerate(positions))
        base = col & ~sum(1 << p for p in positions)
        for sub_out in range(2**k):
            amp = m[sub_out, sub_in]
            if amp != 0:
                row = base | sum(((sub_out >> i) & 1) << p for i, p in enumerate(positions))
                out[row, col] += amp
    return out


# ---------------------------------------------------------------- canonical class

def _to_su4(u: np.ndarray) -> np.ndarray:
    return u / np.linalg.det(u) ** 0.25


def raw_coordinates(u: np.ndarray) -> np.ndarray:
    """Interaction coordinates (a, b, c) before reduction to the Weyl chamber."""
    ub = MAGIC.conj().T @ _to_su4(u) @ MAGIC
    th = np.angle(np.linalg.eigvals(ub.T @ ub)) / 2
    # eigenphases of ub are th mod pi; pick branches with sum exactly 0 (det = 1)
    th[0] -= np.round(th.sum() / np.pi) * np.pi
    return np.linalg.solve(_COORD_MATRIX, th)[:3]


def canonical_coordinates(u: np.ndarray) -> np.ndarray:
    """Weyl-chamber coordinates: pi/4 >= a >= b >= |c|, and c >= 0 when a = pi/4."""
    v = raw_coordinates(u)
    v = (v + np.pi / 4) % (np.pi / 2) - np.pi / 4
    v = np.where(np.abs(v + np.pi / 4) < ATOL, np.pi / 4, v)
    v = v[np.argsort(-np.abs(v), kind="stable")]
    signs = np.sign(v[np.abs(v) > ATOL])
    sign = np.prod(signs) if signs.size else 1.0
    v = np.abs(v)
    v[2] *= sign
    if abs(v[0] - np.pi / 4) < ATOL:
        v[2] = abs(v[2])
    v[np.abs(v) < ATOL] = 0.0
    return v


def cz_count_for(coords: np.ndarray, tol: float = ATOL) -> int:
    a, b, c = coords
    if max(abs(a), abs(b), abs(c)) < tol:
        return 0
    if abs(a - np.pi / 4) < tol and abs(b) < tol and abs(c) < tol:
        return 1
    if abs(c) < tol:
        return 2
    return 3


# ---------------------------------------------------------------- templates
# Each template is a list of layers: ("1q", position, 2x2) or ("cz",). Position 0 is
# the least significant qubit.

def _h_layer(pos):
    # Hadamard up to phase: Rz(pi) first, then Ry(pi/2)
    return [("1q", pos, rotation("z", np.pi)), ("1q", pos, rotation("y", np.pi / 2))]


def _cnot(control: int, target: int):
    del control
    return _h_layer(target) + [("cz",)] + _h_layer(target)


def _template(kind: int, params: Sequence[float] = ()) -> list:
    if kind == 0:
        return []
    if kind == 1:
        return [("cz",)]
    if kind == 2:
        a, b = params
        return [("cz",), ("1q", 0, rotation("x", 2 * a)), ("1q", 1, rotation("x", 2 * b)), ("cz",)]
    t1, t2, t3 = params
    # in time order: CNOT(0->1), Ry(t3) on 0, CNOT(1->0), Rz(t1) on 1 and Ry(t2) on 0, CNOT(0->1)
    return (_cnot(0, 1) + [("1q", 0, rotation("y", t3))] + _cnot(1, 0)
            + [("1q", 1, rotation("z", t1)), ("1q", 0, rotation("y", t2))] + _cnot(0, 1))


def _layers_unitary(layers: list) -> np.ndarray:
    u = np.eye(4, dtype=complex)
    i2 = np.eye(2)
    for layer in layers:
        if layer[0] == "cz":
            u = CZ @ u
        else:
            _, pos, m = layer
            u = (np.kron(i2, m) if pos == 0 else np.kron(m, i2)) @ u
    return u


def _template_for(coords: np.ndarray, kind: int) -> list:
    a, b, c = coords
    if kind < 2:
        return _template(kind)
    if kind == 2:
        return _template(2, (a, b))
    for cc in (c, -c):
        base = (np.pi / 2 - 2 * a, np.pi / 2 - 2 * b, np.pi / 2 - 2 * cc)
        for perm in itertools.permutations(base):
            layers = _template(3, perm)
            if np.allclose(canonical_coordinates(_layers_unitary(layers)), coords, atol=1e-8):
                return layers
    raise RuntimeError(f"no three-CZ template reproduces coordinates {coords}")


# ---------------------------------------------------------------- local layers

def _real_orthogonal_diagonalize(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """m symmetric unitary -> (O, d) with O real orthogonal, det O = 1, O^T m O = diag(d)."""
    re, im = m.real, m.imag
    for r in (0.4142135623730951, 1.7320508075688772, 0.1234567, 3.1415926535):
        _, o = np.linalg.eigh(re + r * im)
        d = np.diag(o.T @ m @ o)
        if np.allclose(o.T @ m @ o, np.diag(d), atol=1e-10):
            if np.linalg.det(o) < 0:
                o[:, 0] *= -1
            return o, d
    raise RuntimeError("failed to diagonalise symmetric unitary with a real orthogonal basis")


def _kak_parts(u: np.ndarray):
    ub = MAGIC.conj().T @ u @ MAGIC
    o, d = _real_orthogonal_diagonalize(ub.T @ ub)
    return ub, o, d


def _factor_local(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """v = p (x) q (p on the more significant qubit) -> (p, q), each normalised to SU(2)."""
    t = v.reshape(2, 2, 2, 2).transpose(0, 2, 1, 3).reshape(4, 4)
    uu, s, vh = np.linalg.svd(t)
    p = (uu[:, 0] * np.sqrt(s[0])).reshape(2, 2)
    q = (vh[0] * np.sqrt(s[0])).reshape(2, 2)
    if abs(s[1]) > 1e-6:
        raise RuntimeError("local layer does not factor into single-qubit gates")
    p = p / np.sqrt(np.linalg.det(p))
    q = q / np.sqrt(np.linalg.det(q))
    return p, q


def _match_locals(u: np.ndarray, t: np.ndarray):
    """Find single-qubit layers with u = phase * L t R.

    Returns (L, R) as 4x4 local matrices. Both unitaries are brought to SU(4),
    decomposed as K sqrt(D) O^T in the magic basis, and the eigenvalues of D
    are matched up to an overall sign and a signed permutation.
    """
    us, ts = _to_su4(u), _to_su4(t)
    ub, ou, du = _kak_parts(us)
    tb, ot, dt = _kak_parts(ts)
    for lam in (1, -1):
        used, perm = set(), []
        for k in range(4):
            hit = [j for j in range(4) if j not in used and abs(du[k] - lam * dt[j]) < 1e-7]
            if not hit:
                break
            used.add(hit[0])
            perm.append(hit[0])
        if len(perm) < 4:
            continue
        p = np.zeros((4, 4))
        for k, j in enumerate(perm):
            p[k, j] = 1.0
        # sqrt(D_u) := sqrt(lam) P sqrt(D_t) P^T, consistent choice of square roots
        half_t = np.sqrt(dt)
        half_u = np.sqrt(complex(lam)) * (p @ np.diag(half_t) @ p.T)
        ku = ub @ ou @ np.linalg.inv(half_u)
        kt = tb @ ot @ np.diag(1 / half_t)
        lmat = (ku @ p @ kt.T).real
        rmat = (ot @ p.T @ ou.T).real
        if np.linalg.det(lmat) < 0:
            p[:, 0] *= -1
            lmat = (ku @ p @ kt.T).real
            rmat = (ot @ p.T @ ou.T).real
        left = MAGIC @ lmat @ MAGIC.conj().T
        right = MAGIC @ rmat @ MAGIC.conj().T
        if _phase_distance(left @ t @ right, u) < 1e-7:
            return left, right
    raise RuntimeError("magic-basis spectra of target and template do not match")


def _phase_distance(a: np.ndarray, b: np.ndarray) -> float:
    """max |a - e^{i phi} b| with phi chosen from the largest overlap entry."""
    idx = np.unravel_index(np.argmax(np.abs(b)), b.shape)
    if abs(a[idx]) < 1e-12:
        return float(np.abs(a - b).max())
    phase = a[idx] / b[idx]
    phase /= abs(phase)
    return float(np.abs(a - phase * b).max())


def zyz_angles(m: np.ndarray) -> tuple[float, float, float]:
    """(alpha, beta, gamma) with m = e^{i phi} Rz(alpha) Ry(beta) Rz(gamma)."""
    m = m / np.sqrt(np.linalg.det(m))
    # in SU(2): m00 = e^{-i(alpha+gamma)/2} cos(beta/2), m10 = e^{i(alpha-gamma)/2} sin(beta/2)
    beta = 2 * np.arctan2(abs(m[1, 0]), abs(m[0, 0]))
    half_plus = -np.angle(m[0, 0]) if abs(m[0, 0]) > 1e-12 else 0.0
    half_minus = np.angle(m[1, 0]) if abs(m[1, 0]) > 1e-12 else 0.0
    return float(half_plus + half_minus), float(beta), float(half_plus - half_minus)


def single_qubit_ops(m: np.ndarray, qubit: QubitId) -> list[Rotation]:
    alpha, beta, gamma = zyz_angles(m)
    ops = []
    for axis, angle in (("z", gamma), ("y", beta), ("z", alpha)):
        angle = float(np.remainder(angle + np.pi, 2 * np.pi) - np.pi)
        if abs(angle) > 1e-12:
            ops.append(Rotation(axis, angle, qubit))
    return ops


# ---------------------------------------------------------------- synthesis

@dataclass
class DecompositionResult:
    circuit: CircuitIR
    cz_count: int
    residual: float
    coordinates: tuple[float, float, float]


def decompose_two_qubit(u: np.ndarray, qubits: tuple[QubitId, QubitId] = (
        QubitId("Alice", "circuit", 0), QubitId("Bob", "circuit", 0))) -> DecompositionResult:
    """Circuit of at most three CZs and single-qubit rotations equal to ``u`` up to global phase.

    ``u`` is little-endian over ``qubits``: ``qubits[0]`` is the least significant bit.
    """
    u = np.asarray(u, dtype=complex)
    if u.shape != (4, 4) or not is_unitary(u):
        raise ValueError("decompose_two_qubit needs a 4x4 unitary (within 1e-10)")
    coords = canonical_coordinates(u)
    kind = cz_count_for(coords)
    layers = _template_for(coords, kind)
    t = _layers_unitary(layers)
    left, right = _match_locals(u, t)
    r1, r0 = _factor_local(right)
    l1, l0 = _factor_local(left)
    full = [("1q", 0, r0), ("1q", 1, r1)] + layers + [("1q", 0, l0), ("1q", 1, l1)]
    cz_cls = NonlocalCZ if qubits[0].module != qubits[1].module else LocalCZ
    circuit = CircuitIR(qubits, _emit(full, qubits, cz_cls))
    residual = _phase_distance(circuit_unitary(circuit), u)
    return DecompositionResult(circuit, kind, residual, tuple(float(x) for x in coords))


def _emit(layers: list, qubits, cz_cls) -> list[Op]:
    """Merge runs of single-qubit layers per qubit and emit ZYZ rotations."""
    ops: list[Op] = []
    acc = [np.eye(2, dtype=complex), np.eye(2, dtype=complex)]

    def flush():
        for pos in (0, 1):
            ops.extend(single_qubit_ops(acc[pos], qubits[pos]))
            acc[pos] = np.eye(2, dtype=complex)

    for layer in layers:
        if layer[0] == "cz":
            flush()
            ops.append(cz_cls(qubits[0], qubits[1]))
        else:
            acc[layer[1]] = layer[2] @ acc[layer[1]]
    flush()
    return ops


# ---------------------------------------------------------------- benchmark circuits

ALICE_C = QubitId("Alice", "circuit", 0)
BOB_C = QubitId("Bob", "circuit", 0)


def iswap_circuit() -> CircuitIR:
    return decompose_two_qubit(ISWAP).circuit


def swap_circuit() -> CircuitIR:
    return decompose_two_qubit(SWAP).circuit


def grover_circuit(marked: str) -> CircuitIR:
    """Two-qubit Grover search for ``marked`` (first character is Alice's bit)."""
    if marked not in ("00", "01", "10", "11"):
        raise ValueError(f"marked state must be a 2-bit string, got {marked!r}")
    qa, qb = ALICE_C, BOB_C
    c = CircuitIR((qa, qb))

    def h(q):
        c.append(Rotation("z", np.pi, q))
        c.append(Rotation("y", np.pi / 2, q))

    def x(q):
        c.append(Rotation("x", np.pi, q))

    h(qa), h(qb)
    flips = [q for q, bit in zip((qa, qb), marked) if bit == "0"]
    for q in flips:
        x(q)
    c.append(NonlocalCZ(qa, qb))
    for q in flips:
        x(q)
    h(qa), h(qb)
    x(qa), x(qb)
    c.append(NonlocalCZ(qa, qb))
    x(qa), x(qb)
    h(qa), h(qb)
    c.append(Measure(qa))
    c.append(Measure(qb))
    return c


# ---------------------------------------------------------------- execution

def _module_program(circuit: CircuitIR, rt):
    from .protocol import qgt_steps
    from .runtime import Quantum

    pre = {"x": rotation("y", -np.pi / 2), "y": rotation("x", np.pi / 2), "z": None}

    def program(agent):
        bits = {}
        for op in circuit.ops:
            if isinstance(op, Rotation):
                if op.qubit.module == agent.name:
                    u = rotation(op.axis, op.angle)
                    yield Quantum(lambda reg, rng, u=u: agent.rotate(reg, u), f"rot_{op.axis}")
            elif isinstance(op, NonlocalCZ):
                yield from qgt_steps(rt, agent)
            elif isinstance(op, LocalCZ):
                if op.q1.module == agent.name:
                    raise ValueError("local CZ between circuit qubits needs more than one circuit qubit per module")
            elif op.qubit.module == agent.name:
                def meas(reg, rng, basis=op.basis):
                    if pre[basis] is not None:
                        agent.rotate(reg, pre[basis], noisy=False)
                    return agent.measure_circuit(reg, rng)
                bits[str(op.qubit)] = yield Quantum(meas, "measure_circuit")
        return bits

    return program


def execute(circuit: CircuitIR, noise, config, seed: int, shots: int, mode: str = "trajectory",
            scheduler: str = "sequential", campaigns: int = 16) -> dict[str, int]:
    """Run ``shots`` repetitions and histogram the measured bit strings.

    Strings list measured qubits in ``circuit.qubits`` order. ``trajectory``
    runs the full two-module protocol once per shot; ``channel`` replaces each
    nonlocal CZ by the campaign-averaged teleported-CZ superoperator, computes
    the exact outcome distribution and samples it.
    """
    measured = [op.qubit for op in circuit.ops if isinstance(op, Measure)]
    if mode == "channel":
        probs = outcome_distribution(circuit, noise, config, seed, campaigns)
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])
        counts = rng.multinomial(shots, [probs[k] for k in sorted(probs)])
        return {k: int(c) for k, c in zip(sorted(probs), counts)}
    if mode != "trajectory":
        raise ValueError(f"unknown execution mode {mode!r}")
    from .runtime import Runtime

    hist: dict[str, int] = {}
    for child in np.random.SeedSequence(seed).spawn(shots):
        rt = Runtime(noise, config, child, modules=tuple(sorted({q.module for q in circuit.qubits})),
                     mode=scheduler)
        results = rt.run({name: _module_program(circuit, rt) for name in rt.agents})
        bits = {k: v for r in results.values() for k, v in r.items()}
        key = "".join(str(bits[str(q)]) for q in measured)
        hist[key] = hist.get(key, 0) + 1
    return dict(sorted(hist.items()))


def outcome_distribution(circuit: CircuitIR, noise, config, seed: int, campaigns: int = 16,
                         qgt_superop: np.ndarray | None = None) -> dict[str, float]:
    """Exact outcome probabilities with each nonlocal CZ replaced by the averaged QGT channel.

    Measurements must come last. The circuit qubits must be Alice's and Bob's.
    """
    from .core import QuantumState, apply_channel, apply_unitary, partial_trace
    from .noise import depolarizing_channel, depolarizing_from_infidelity
    from .protocol import CIRCUIT_A, CIRCUIT_B, apply_superoperator, qgt_channel

    order = (CIRCUIT_A, CIRCUIT_B)
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = 1
    state = QuantumState(order, rho)
    measured: list[Measure] = []
    for op in circuit.ops:
        if measured and not isinstance(op, Measure):
            raise ValueError("channel execution needs all measurements at the end")
        if isinstance(op, Rotation):
            state = apply_unitary(state, rotation(op.axis, op.angle), [op.qubit])
            err = noise[op.qubit.module].single_qubit_error
            if err > 0:
                state = apply_channel(state, depolarizing_channel(depolarizing_from_infidelity(err, 1), 1),
                                      [op.qubit])
        elif isinstance(op, NonlocalCZ):
            if qgt_superop is None:
                qgt_superop = qgt_channel(noise, config, seed, campaigns)
            state = QuantumState(order, apply_superoperator(qgt_superop, state.density()))
        elif isinstance(op, LocalCZ):
            raise ValueError("local CZ between circuit qubits is not supported in this layout")
        else:
            measured.append(op)
    # joint distribution over measured qubits, in measurement order
    for op in measured:
        basis_rot = {"x": rotation("y", -np.pi / 2), "y": rotation("x", np.pi / 2), "z": np.eye(2)}[op.basis]
        state = apply_unitary(state, basis_rot, [op.qubit])
    reduced = partial_trace(state, [op.qubit for op in measured])
    # reduced.qubits is in register order; map to measurement order
    diag = np.real(np.diag(reduced.density())).clip(0)
    flips = [noise[q.module].spam_for("circuit").flip_matrix() for q in reduced.qubits]
    n = len(reduced.qubits)
    out = {}
    for read in range(2**n):
        p = 0.0
        for true in range(2**n):
            w = diag[true]
            for k in range(n):
                w *= flips[k][(read >> k) & 1, (true >> k) & 1]
            p += w
        bits = {str(q): (read >> k) & 1 for k, q in enumerate(reduced.qubits)}
        out["".join(str(bits[str(op.qubit)]) for op in measured)] = p
    return dict(sorted(out.items()))


def circuit_superoperator(circuit: CircuitIR, noise, qgt_superop: np.ndarray) -> np.ndarray:
    """Channel of a measurement-free circuit on the two circuit qubits (Alice least significant),
    with noisy single-qubit rotations and each nonlocal CZ replaced by ``qgt_superop``."""
    from .core import KrausChannel
    from .noise import depolarizing_channel, depolarizing_from_infidelity
    from .protocol import CIRCUIT_A, CIRCUIT_B, unitary_superoperator

    order = (CIRCUIT_A, CIRCUIT_B)
    if tuple(circuit.qubits) != order:
        raise ValueError(f"circuit must act on {order}")
    total = np.eye(16, dtype=complex)
    for op in circuit.ops:
        if isinstance(op, Rotation):
            u = _embed(rotation(op.axis, op.angle), [order.index(op.qubit)], 2)
            step = unitary_superoperator(u)
            err = noise[op.qubit.module].single_qubit_error
            if err > 0:
                ch = depolarizing_channel(depolarizing_from_infidelity(err, 1), 1)
                ops = tuple(_embed(k, [order.index(op.qubit)], 2) for k in ch.operators)
                step = KrausChannel(ops).superoperator @ step
        elif isinstance(op, NonlocalCZ):
            step = qgt_superop
        else:
            raise ValueError(f"{type(op).__name__} is not supported in a process circuit")
        total = step @ total
    return total
