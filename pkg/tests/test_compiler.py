import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dqcsim.compiler import (ISWAP, SWAP, CircuitIR, LocalCZ, Measure, NonlocalCZ, Rotation,
                             canonical_coordinates, circuit_superoperator, circuit_unitary, cz_count_for,
                             decompose_two_qubit, execute, grover_circuit, iswap_circuit, outcome_distribution,
                             swap_circuit, zyz_angles)
from dqcsim.config import build_runtime_config, default_config
from dqcsim.core import CZ, PAULIS, QubitId, rotation
from dqcsim.noise import NoiseModel
from dqcsim.protocol import unitary_superoperator

from conftest import haar_unitary

A = QubitId("Alice", "circuit", 0)
B = QubitId("Bob", "circuit", 0)
CNOT = np.eye(4)[[0, 3, 2, 1]].astype(complex)
YY = np.kron(PAULIS["Y"], PAULIS["Y"])


def gamma_trace(u):
    """Independent oracle for the entangling-gate count (Shende, Markov, Bullock)."""
    u = u / np.linalg.det(u) ** 0.25
    return np.trace(u @ YY @ u.T @ YY)


def oracle_count(u, tol=1e-7):
    u = u / np.linalg.det(u) ** 0.25
    g = u @ YY @ u.T @ YY
    tr = np.trace(g)
    if np.allclose(g, np.eye(4), atol=tol) or np.allclose(g, -np.eye(4), atol=tol):
        return 0
    if abs(tr) < tol and np.allclose(g @ g, -np.eye(4), atol=tol):
        return 1
    return 2 if abs(tr.imag) < tol else 3


def phase_distance(a, b):
    k = np.argmax(np.abs(b))
    ph = a.flat[k] / b.flat[k]
    return np.abs(a - ph * b).max()


@pytest.mark.parametrize("u,coords,count", [
    (np.eye(4, dtype=complex), (0, 0, 0), 0),
    (CZ, (np.pi / 4, 0, 0), 1),
    (CNOT, (np.pi / 4, 0, 0), 1),
    (ISWAP, (np.pi / 4, np.pi / 4, 0), 2),
    (SWAP, (np.pi / 4, np.pi / 4, np.pi / 4), 3),
])
def test_named_gates(u, coords, count):
    np.testing.assert_allclose(canonical_coordinates(u), coords, atol=1e-9)
    res = decompose_two_qubit(u)
    assert res.cz_count == count == oracle_count(u)
    assert res.circuit.count(NonlocalCZ) == count
    assert res.residual < 1e-9


def test_iswap_and_swap_circuits():
    assert iswap_circuit().count(NonlocalCZ) == 2
    assert swap_circuit().count(NonlocalCZ) == 3
    assert phase_distance(circuit_unitary(iswap_circuit()), ISWAP) < 1e-9
    assert phase_distance(circuit_unitary(swap_circuit()), SWAP) < 1e-9


@given(st.integers(0, 2**31 - 1))
def test_random_unitaries_decompose(seed):
    u = haar_unitary(np.random.default_rng(seed), 4)
    res = decompose_two_qubit(u)
    assert res.cz_count <= 3
    assert res.cz_count == oracle_count(u)
    assert res.residual < 1e-8


@given(st.integers(0, 2**31 - 1))
def test_coordinates_are_local_invariants(seed):
    rng = np.random.default_rng(seed)
    u = haar_unitary(rng, 4)
    locals_ = [np.kron(haar_unitary(rng, 2), haar_unitary(rng, 2)) for _ in range(2)]
    np.testing.assert_allclose(canonical_coordinates(locals_[0] @ u @ locals_[1]), canonical_coordinates(u),
                               atol=1e-7)


@given(st.integers(0, 2**31 - 1), st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi))
def test_two_cz_family_needs_two(seed, a, b):
    rng = np.random.default_rng(seed)
    core = CZ @ np.kron(rotation("x", b), rotation("x", a)) @ CZ
    u = np.kron(haar_unitary(rng, 2), haar_unitary(rng, 2)) @ core @ np.kron(haar_unitary(rng, 2),
                                                                             haar_unitary(rng, 2))
    res = decompose_two_qubit(u)
    assert res.cz_count <= 2
    assert abs(gamma_trace(u).imag) < 1e-7
    assert res.residual < 1e-8


def test_cz_count_rule_ignores_nonzero_coefficient_count():
    # (pi/4, 0, 0) has one nonzero coordinate and needs one CZ; (0.3, 0, 0) also has one but needs two
    assert cz_count_for(np.array([np.pi / 4, 0, 0])) == 1
    assert cz_count_for(np.array([0.3, 0, 0])) == 2
    assert cz_count_for(np.array([0.3, 0.2, 0.1])) == 3


@given(st.integers(0, 2**31 - 1))
def test_zyz_angles_reconstruct(seed):
    u = haar_unitary(np.random.default_rng(seed), 2)
    a, b, c = zyz_angles(u)
    v = rotation("z", a) @ rotation("y", b) @ rotation("z", c)
    assert phase_distance(v, u) < 1e-9


def test_ir_validation():
    c = CircuitIR((A, B))
    with pytest.raises(ValueError):
        c.append(NonlocalCZ(A, QubitId("Alice", "auxiliary", 0)))
    with pytest.raises(ValueError):
        c.append(LocalCZ(A, B))
    with pytest.raises(ValueError):
        c.append(Rotation("w", 0.1, A))
    with pytest.raises(ValueError):
        c.append(Measure(A, "q"))
    with pytest.raises(ValueError):
        c.append(Rotation("x", 0.1, QubitId("Carol", "circuit", 0)))


def test_text_roundtrip_exact():
    c = grover_circuit("01")
    text = c.to_text()
    back = CircuitIR.from_text("# comment line\n" + text)
    assert back.ops == c.ops and back.qubits == c.qubits
    with pytest.raises(ValueError, match="line 2"):
        CircuitIR.from_text("qubits Alice.circuit.0\nrot x notanumber Alice.circuit.0\n")


@pytest.mark.parametrize("marked", ["00", "01", "10", "11"])
def test_grover_noiseless_is_certain(marked):
    cfg = build_runtime_config(default_config())
    probs = outcome_distribution(grover_circuit(marked), NoiseModel.noiseless(), cfg, 0, campaigns=1)
    assert probs[marked] == pytest.approx(1, abs=1e-12)
    hist = execute(grover_circuit(marked), NoiseModel.noiseless(), cfg, 0, 20)
    assert hist == {marked: 20}


def test_grover_unitary_marks_state():
    for marked in ("00", "01", "10", "11"):
        u = circuit_unitary(grover_circuit(marked))
        out = np.abs(u[:, 0]) ** 2
        idx = int(marked[0]) + 2 * int(marked[1])  # Alice is the least significant bit
        assert out[idx] == pytest.approx(1)


def test_execute_is_deterministic_across_schedulers():
    from dqcsim.config import build_noise

    cfg = default_config()
    noise, rc = build_noise(cfg), build_runtime_config(cfg)
    h1 = execute(grover_circuit("10"), noise, rc, 5, 15)
    h2 = execute(grover_circuit("10"), noise, rc, 5, 15, scheduler="threaded")
    assert h1 == h2 and sum(h1.values()) == 15


def test_circuit_superoperator_noiseless():
    sup = circuit_superoperator(iswap_circuit(), NoiseModel.noiseless(), unitary_superoperator(CZ))
    target = unitary_superoperator(ISWAP)
    assert np.abs(sup - target).max() < 1e-9
