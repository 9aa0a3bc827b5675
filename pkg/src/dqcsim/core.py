"""Dense state-vector / density-matrix engine for a handful of labelled qubits.

Index convention is little-endian: the first qubit of ``QuantumState.qubits``
is the least significant bit of the basis-state index. A matrix acting on an
ordered target list ``[t0, t1, ...]`` follows the same rule, so
``np.kron(B, A)`` applies ``A`` to ``t0`` and ``B`` to ``t1``.
"""

from __future__ import annotations

import itertools
from functools import lru_cache
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

ROLES = ("network", "circuit", "auxiliary")

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
S = np.diag([1, 1j])
SDG = np.diag([1, -1j])
CZ = np.diag([1, 1, 1, -1]).astype(complex)
PAULIS = {"I": I2, "X": X, "Y": Y, "Z": Z}

# basis change taking the measurement basis onto Z (outcome 0 <-> first eigenvector)
_TO_Z = {"Z": I2, "X": H, "Y": H @ SDG}


def rotation(axis: str, angle: float) -> np.ndarray:
    """exp(-i angle/2 sigma_axis)."""
    return np.cos(angle / 2) * I2 - 1j * np.sin(angle / 2) * PAULIS[axis.upper()]


@dataclass(frozen=True, order=True)
class QubitId:
    module: str
    role: str
    index: int = 0

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown qubit role {self.role!r}; expected one of {ROLES}")

    def __str__(self) -> str:
        return f"{self.module}.{self.role}.{self.index}"

    @classmethod
    def parse(cls, text: str) -> "QubitId":
        try:
            module, role, index = text.strip().split(".")
            return cls(module, role, int(index))
        except ValueError as exc:
            raise ValueError(f"bad qubit address {text!r} (want module.role.index)") from exc


@dataclass(frozen=True)
class QuantumState:
    """State over an ordered tuple of qubits.

    ``data`` is either an amplitude vector of length 2**n or a 2**n x 2**n
    density matrix. Instances are treated as immutable values.
    """

    qubits: tuple[QubitId, ...]
    data: np.ndarray

    def __post_init__(self):
        n = len(self.qubits)
        if len(set(self.qubits)) != n:
            raise ValueError("duplicate qubit in state")
        dim = 2**n
        if self.data.shape not in ((dim,), (dim, dim)):
            raise ValueError(f"data shape {self.data.shape} does not match {n} qubits")

    @property
    def n(self) -> int:
        return len(self.qubits)

    @property
    def is_density(self) -> bool:
        return self.data.ndim == 2

    def density(self) -> np.ndarray:
        if self.is_density:
            return self.data
        return np.outer(self.data, self.data.conj())

    def to_density(self) -> "QuantumState":
        return self if self.is_density else QuantumState(self.qubits, self.density())

    def position(self, q: QubitId) -> int:
        try:
            return self.qubits.index(q)
        except ValueError:
            raise ValueError(f"qubit {q} not in state {[str(x) for x in self.qubits]}") from None

    def check(self, atol: float = 1e-10) -> None:
        """Raise if the norm/trace/positivity invariants are violated."""
        if not self.is_density:
            nrm = np.linalg.norm(self.data)
            if abs(nrm - 1) > atol:
                raise ValueError(f"state vector norm {nrm} != 1")
            return
        rho = self.data
        if np.abs(rho - rho.conj().T).max() > atol:
            raise ValueError("density matrix not Hermitian")
        tr = np.trace(rho).real
        if abs(tr - 1) > atol:
            raise ValueError(f"density matrix trace {tr} != 1")
        if np.linalg.eigvalsh((rho + rho.conj().T) / 2).min() < -atol:
            raise ValueError("density matrix has negative eigenvalues")


def basis_state(qubits: Sequence[QubitId], bits: Sequence[int] | None = None) -> QuantumState:
    qubits = tuple(qubits)
    bits = bits or [0] * len(qubits)
    vec = np.zeros(2 ** len(qubits), dtype=complex)
    vec[sum(b << k for k, b in enumerate(bits))] = 1
    return QuantumState(qubits, vec)


def product_state(parts: Sequence[tuple[QubitId, np.ndarray]]) -> QuantumState:
    """Product of single-qubit vectors or density matrices, in canonical qubit order."""
    parts = sorted(parts, key=lambda p: p[0])
    density = any(np.ndim(v) == 2 for _, v in parts)
    out = np.ones((1, 1) if density else 1, dtype=complex)
    for _, v in parts:
        v = np.asarray(v, dtype=complex)
        if density and v.ndim == 1:
            v = np.outer(v, v.conj())
        out = np.kron(v, out)
    return QuantumState(tuple(q for q, _ in parts), out)


def tensor(*states: QuantumState) -> QuantumState:
    """Joint state of independent subsystems, reordered into canonical (sorted) order."""
    density = any(s.is_density for s in states)
    qubits: list[QubitId] = []
    data = np.ones((1, 1) if density else 1, dtype=complex)
    for s in states:
        d = s.density() if density else s.data
        data = np.kron(d, data)
        qubits.extend(s.qubits)
    return reorder(QuantumState(tuple(qubits), data), sorted(qubits))


def reorder(state: QuantumState, order: Sequence[QubitId]) -> QuantumState:
    order = tuple(order)
    if order == state.qubits:
        return state
    if sorted(order) != sorted(state.qubits):
        raise ValueError("reorder must be a permutation of the state's qubits")
    n = state.n
    # tensor axis of qubit at position k is n-1-k
    src = [n - 1 - state.position(q) for q in reversed(order)]
    if state.is_density:
        t = state.data.reshape((2,) * (2 * n)).transpose(src + [a + n for a in src])
        return QuantumState(order, t.reshape(2**n, 2**n))
    return QuantumState(order, state.data.reshape((2,) * n).transpose(src).reshape(-1))


def _target_axes(state: QuantumState, targets: Sequence[QubitId]) -> list[int]:
    if len(set(targets)) != len(targets):
        raise ValueError(f"duplicate targets {[str(t) for t in targets]}")
    n = state.n
    # matrix row index is MSB-first over reversed(targets)
    return [n - 1 - state.position(t) for t in reversed(list(targets))]


def _apply_left(t: np.ndarray, op: np.ndarray, axes: list[int]) -> np.ndarray:
    m = len(axes)
    op_t = op.reshape((2,) * (2 * m))
    out = np.tensordot(op_t, t, axes=(list(range(m, 2 * m)), axes))
    return np.moveaxis(out, list(range(m)), axes)


def is_unitary(u: np.ndarray, atol: float = 1e-10) -> bool:
    u = np.asarray(u)
    return u.ndim == 2 and u.shape[0] == u.shape[1] and np.allclose(u.conj().T @ u, np.eye(len(u)), atol=atol)


def apply_unitary(state: QuantumState, u: np.ndarray, targets: Sequence[QubitId],
                  check: bool = True) -> QuantumState:
    u = np.asarray(u, dtype=complex)
    if u.shape != (2 ** len(targets),) * 2:
        raise ValueError(f"unitary of shape {u.shape} does not fit {len(targets)} targets")
    if check and not is_unitary(u):
        raise ValueError("matrix is not unitary within 1e-10")
    axes = _target_axes(state, targets)
    n = state.n
    if not state.is_density:
        t = _apply_left(state.data.reshape((2,) * n), u, axes)
        return QuantumState(state.qubits, t.reshape(-1))
    t = state.data.reshape((2,) * (2 * n))
    t = _apply_left(t, u, axes)
    t = _apply_left(t, u.conj(), [a + n for a in axes])
    return QuantumState(state.qubits, t.reshape(2**n, 2**n))


@dataclass(frozen=True)
class KrausChannel:
    operators: tuple[np.ndarray, ...]
    _super: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ops = tuple(np.asarray(k, dtype=complex) for k in self.operators)
        if not ops:
            raise ValueError("channel needs at least one Kraus operator")
        dim = ops[0].shape[0]
        acc = sum(k.conj().T @ k for k in ops)
        if not np.allclose(acc, np.eye(dim), atol=1e-10):
            raise ValueError("Kraus operators are not trace preserving (sum K^dag K != I)")
        object.__setattr__(self, "operators", ops)
        # S[(o_r, o_c), (i_r, i_c)] = sum_k K[o_r, i_r] conj(K[o_c, i_c])
        sup = sum(np.einsum("ab,cd->acbd", k, k.conj()) for k in ops)
        object.__setattr__(self, "_super", sup.reshape(dim * dim, dim * dim))

    @property
    def num_qubits(self) -> int:
        return int(np.log2(self.operators[0].shape[0]))

    @property
    def superoperator(self) -> np.ndarray:
        """Row-major vec convention: vec(rho)[i*d + j] = rho[i, j]."""
        return self._super

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        return sum(k @ rho @ k.conj().T for k in self.operators)


def apply_channel(state: QuantumState, ch: KrausChannel, targets: Sequence[QubitId]) -> QuantumState:
    m = ch.num_qubits
    if m != len(targets):
        raise ValueError(f"{m}-qubit channel applied to {len(targets)} targets")
    if len(ch.operators) == 1 and not state.is_density:
        return apply_unitary(state, ch.operators[0], targets)
    axes = _target_axes(state, targets)
    n = state.n
    t = state.density().reshape((2,) * (2 * n))
    sup = ch.superoperator.reshape((2,) * (4 * m))
    in_axes = axes + [a + n for a in axes]
    out = np.tensordot(sup, t, axes=(list(range(2 * m, 4 * m)), in_axes))
    out = np.moveaxis(out, list(range(2 * m)), in_axes)
    return QuantumState(state.qubits, out.reshape(2**n, 2**n))


def partial_trace(state: QuantumState, keep: Iterable[QubitId]) -> QuantumState:
    keep = [q for q in state.qubits if q in set(keep)]
    if not keep:
        raise ValueError("partial_trace needs a non-empty keep set")
    n = state.n
    kept_axes = sorted(n - 1 - state.position(q) for q in keep)
    if not state.is_density:
        t = state.data.reshape((2,) * n)
        t = np.moveaxis(t, kept_axes, list(range(len(kept_axes))))
        m = t.reshape(2 ** len(keep), -1)
        return QuantumState(tuple(keep), m @ m.conj().T)
    letters = "abcdefghijklmnopqrstuvwxyz"
    rows = list(letters[:n])
    cols = [rows[a] if a not in kept_axes else letters[n + a] for a in range(n)]
    out = [rows[a] for a in kept_axes] + [cols[a] for a in kept_axes]
    expr = "".join(rows) + "".join(cols) + "->" + "".join(out)
    t = np.einsum(expr, state.data.reshape((2,) * (2 * n)))
    d = 2 ** len(keep)
    return QuantumState(tuple(keep), t.reshape(d, d))


def replace_qubits(state: QuantumState, sub: QuantumState) -> QuantumState:
    """Discard whatever ``sub.qubits`` held and put them in ``sub``'s state.

    Used for resets and for delivering a fresh Bell pair. The rest of the
    register is kept as its reduced state.
    """
    rest = [q for q in state.qubits if q not in sub.qubits]
    if not rest:
        return reorder(sub, state.qubits)
    if not state.is_density and not sub.is_density:
        # fast path: the replaced qubits must factor out (they are assumed idle)
        reduced = partial_trace(state, rest)
        w, v = np.linalg.eigh(reduced.data)
        if w[-1] > 1 - 1e-12:
            kept = QuantumState(reduced.qubits, v[:, -1])
            return reorder(tensor(kept, sub), state.qubits)
    out = tensor(partial_trace(state, rest), sub)
    return reorder(out, state.qubits)


def measurement_branches(state: QuantumState, target: QubitId, basis: str = "Z"):
    """All outcomes of a projective measurement: list of (probability, bit, post-state).

    The post-state has ``target`` in the measured basis eigenstate; zero
    probability branches carry ``None``.
    """
    basis = basis.upper()
    if basis not in _TO_Z:
        raise ValueError(f"unknown basis {basis!r}")
    rot = _TO_Z[basis]
    rotated = apply_unitary(state, rot, [target]) if basis != "Z" else state
    out = []
    for bit in (0, 1):
        proj = np.zeros((2, 2), dtype=complex)
        proj[bit, bit] = 1
        axes = _target_axes(rotated, [target])
        n = rotated.n
        if rotated.is_density:
            t = rotated.data.reshape((2,) * (2 * n))
            t = _apply_left(_apply_left(t, proj, axes), proj, [axes[0] + n])
            post = t.reshape(2**n, 2**n)
            p = float(np.trace(post).real)
        else:
            post = _apply_left(rotated.data.reshape((2,) * n), proj, axes).reshape(-1)
            p = float(np.vdot(post, post).real)
        if p <= 1e-15:
            out.append((0.0, bit, None))
            continue
        post_state = QuantumState(rotated.qubits, post / p if rotated.is_density else post / np.sqrt(p))
        if basis != "Z":
            post_state = apply_unitary(post_state, rot.conj().T, [target])
        out.append((p, bit, post_state))
    total = out[0][0] + out[1][0]
    return [(p / total, b, s) for p, b, s in out]


def measure(state: QuantumState, target: QubitId, basis: str, rng: np.random.Generator):
    """Sample a projective measurement; returns (bit, post-state)."""
    branches = measurement_branches(state, target, basis)
    bit = 0 if rng.random() < branches[0][0] else 1
    return bit, branches[bit][2]


def pauli_labels(n: int) -> list[str]:
    """Labels with qubit 0 written first, enumerated II, IX, ..., ZZ."""
    return ["".join(p) for p in itertools.product("IXYZ", repeat=n)]


@lru_cache(maxsize=None)
def _pauli_matrix(label: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for ch in label:
        out = np.kron(PAULIS[ch], out)
    out.setflags(write=False)
    return out


def pauli_matrix(label: str) -> np.ndarray:
    return _pauli_matrix(label).copy()


def pauli_basis(n: int) -> np.ndarray:
    """Stack of the 4**n Pauli matrices in ``pauli_labels`` order."""
    return np.array([pauli_matrix(lbl) for lbl in pauli_labels(n)])


def num_qubits_of(dim: int) -> int:
    n = int(round(np.log2(dim))) if dim > 0 else -1
    if n < 0 or 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


def pauli_expansion(m: np.ndarray) -> dict[str, complex]:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("pauli_expansion needs a square matrix")
    n = num_qubits_of(m.shape[0])
    basis = pauli_basis(n)
    coeffs = np.einsum("kij,ij->k", basis.conj(), m) / 2**n
    return dict(zip(pauli_labels(n), coeffs))


def state_fidelity(state: QuantumState | np.ndarray, target: QuantumState | np.ndarray) -> float:
    """Fidelity F = (Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2; exact overlap when either side is pure."""
    a = state.data if isinstance(state, QuantumState) else np.asarray(state)
    b = target.data if isinstance(target, QuantumState) else np.asarray(target)
    if a.ndim == 1 and b.ndim == 1:
        return float(abs(np.vdot(b, a)) ** 2)
    if a.ndim == 1:
        a, b = b, a
    if b.ndim == 1:
        return float(np.vdot(b, a @ b).real)
    # trace norm of sqrt(a) sqrt(b); singular values stay accurate for near-pure states
    return float(np.sum(np.linalg.svd(_psd_sqrt(a) @ _psd_sqrt(b), compute_uv=False)) ** 2)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def matrix_to_json(m: np.ndarray) -> list:
    """Row-major nested lists of [re, im] pairs (floats round-trip exactly through JSON)."""
    m = np.asarray(m, dtype=complex)
    return [[[float(f"{z.real:.17g}"), float(f"{z.imag:.17g}")] for z in row] for row in np.atleast_2d(m)]


def matrix_from_json(rows: list) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows])
