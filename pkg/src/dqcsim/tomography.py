"""Process and state tomography with SPAM-aware diluted maximum likelihood.

Inputs are R_i|0> and measurement setting j reads out in the basis
{R_j|0>, R_j|1>} per qubit, for R in {I, X, (I - iY)/sqrt2, (I + iX)/sqrt2}.
Multi-qubit indices are little-endian (qubit 0 varies fastest); outcome
index ``o`` lists qubit 0's bit first, so for two qubits o = 2*r0 + r1.

Processes are carried as Choi matrices J = sum_ab |a><b| (x) E(|a><b|)
(input factor first). The chi matrix over Pauli strings follows from
chi_ab = <v_a|J|v_b> / d**2 with v_P = sum_a |a> (x) P|a>.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import PAULIS, KrausChannel, pauli_labels, pauli_matrix
from .noise import PSI_PLUS, SpamPovm

I2 = np.eye(2, dtype=complex)
ROTATIONS = (I2, PAULIS["X"].copy(), (I2 - 1j * PAULIS["Y"]) / np.sqrt(2), (I2 + 1j * PAULIS["X"]) / np.sqrt(2))


def kron_le(mats) -> np.ndarray:
    """Kronecker product with the first matrix on the least significant qubit."""
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(m, out)
    return out


def input_states(n: int) -> list[np.ndarray]:
    zero = np.array([[1, 0], [0, 0]], dtype=complex)
    singles = [r @ zero @ r.conj().T for r in ROTATIONS]
    return [kron_le([singles[k] for k in idx[::-1]]) for idx in itertools.product(range(4), repeat=n)]


def setting_indices(n: int) -> list[tuple[int, ...]]:
    """Per-qubit rotation indices for each multi-qubit index (qubit 0 first)."""
    return [idx[::-1] for idx in itertools.product(range(4), repeat=n)]


def outcome_bits(n: int) -> list[tuple[int, ...]]:
    """Bits per qubit (qubit 0 first) for each outcome index."""
    return list(itertools.product((0, 1), repeat=n))


@dataclass(frozen=True)
class TomographySettings:
    n_qubits: int = 2
    shots_per_setting: int = 500
    povm: tuple[SpamPovm, ...] = ()

    def __post_init__(self):
        if self.n_qubits not in (1, 2):
            raise ValueError("tomography supports one or two qubits")
        povm = tuple(self.povm) or (SpamPovm(),) * self.n_qubits
        if len(povm) != self.n_qubits:
            raise ValueError(f"need one SpamPovm per qubit, got {len(povm)}")
        object.__setattr__(self, "povm", povm)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    @property
    def n_inputs(self) -> int:
        return 4**self.n_qubits

    @property
    def n_settings(self) -> int:
        return 4**self.n_qubits

    @property
    def n_outcomes(self) -> int:
        return 2**self.n_qubits

    def without_spam(self) -> "TomographySettings":
        return TomographySettings(self.n_qubits, self.shots_per_setting)

    def effects(self) -> np.ndarray:
        """E[j, o] as (n_settings, n_outcomes, d, d)."""
        per_qubit = [p.effects() for p in self.povm]
        out = np.zeros((self.n_settings, self.n_outcomes, self.dim, self.dim), dtype=complex)
        for j, rot in enumerate(setting_indices(self.n_qubits)):
            for o, bits in enumerate(outcome_bits(self.n_qubits)):
                mats = [ROTATIONS[r] @ per_qubit[k][b] @ ROTATIONS[r].conj().T
                        for k, (r, b) in enumerate(zip(rot, bits))]
                out[j, o] = kron_le(mats)
        return out


@dataclass
class MeasurementRecord:
    """Counts[i, j, o]. With ``exact`` the entries are probabilities (infinite-shot limit)."""

    counts: np.ndarray
    shots: int
    exact: bool = False

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float if self.exact else np.int64)
        if self.counts.ndim != 3:
            raise ValueError("counts must have shape (inputs, settings, outcomes)")
        if not self.exact:
            totals = self.counts.sum(axis=2)
            if np.any(totals != self.shots):
                raise ValueError("every setting's counts must sum to shots_per_setting")

    def frequencies(self) -> np.ndarray:
        return self.counts if self.exact else self.counts / self.shots

    def to_json(self) -> str:
        data = {f"{i},{j}": [float(x) if self.exact else int(x) for x in self.counts[i, j]]
                for i in range(self.counts.shape[0]) for j in range(self.counts.shape[1])}
        return json.dumps({"shots": self.shots, "exact": self.exact, "shape": list(self.counts.shape),
                           "counts": data}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MeasurementRecord":
        raw = json.loads(text)
        shape = tuple(raw["shape"])
        counts = np.zeros(shape, dtype=float if raw["exact"] else np.int64)
        for key, vals in raw["counts"].items():
            i, j = (int(x) for x in key.split(","))
            counts[i, j] = vals
        return cls(counts, raw["shots"], raw["exact"])


# ---------------------------------------------------------------- process representations

def choi_from_superoperator(sup: np.ndarray) -> np.ndarray:
    d = int(round(np.sqrt(sup.shape[0])))
    return sup.reshape(d, d, d, d).transpose(2, 0, 3, 1).reshape(d * d, d * d)


def superoperator_from_choi(j: np.ndarray) -> np.ndarray:
    d = int(round(np.sqrt(j.shape[0])))
    return j.reshape(d, d, d, d).transpose(1, 3, 0, 2).reshape(d * d, d * d)


def unitary_channel(u: np.ndarray) -> KrausChannel:
    return KrausChannel((np.asarray(u, dtype=complex),))


def _as_superoperator(process) -> np.ndarray:
    """A KrausChannel or a row-major superoperator; wrap unitaries with ``unitary_channel``."""
    if isinstance(process, KrausChannel):
        return process.superoperator
    sup = np.asarray(process, dtype=complex)
    if sup.shape not in ((4, 4), (16, 16)):
        raise ValueError(f"expected a 1- or 2-qubit superoperator, got shape {sup.shape}")
    return sup


def _pauli_vectors(n: int) -> np.ndarray:
    """Rows v_P = sum_a |a> (x) P|a> for P in pauli_labels order."""
    d = 2**n
    rows = []
    for lbl in pauli_labels(n):
        p = pauli_matrix(lbl)
        v = np.zeros(d * d, dtype=complex)
        for a in range(d):
            v[a * d:(a + 1) * d] = p[:, a]
        rows.append(v)
    return np.array(rows)


@dataclass
class ProcessMatrix:
    chi: np.ndarray
    n_qubits: int = 2

    @property
    def labels(self) -> list[str]:
        return pauli_labels(self.n_qubits)

    @classmethod
    def from_choi(cls, j: np.ndarray) -> "ProcessMatrix":
        d2 = j.shape[0]
        d = int(round(np.sqrt(d2)))
        n = int(round(np.log2(d)))
        v = _pauli_vectors(n)
        return cls(v.conj() @ j @ v.T / d**2, n)

    @classmethod
    def from_process(cls, process) -> "ProcessMatrix":
        return cls.from_choi(choi_from_superoperator(_as_superoperator(process)))

    def choi(self) -> np.ndarray:
        v = _pauli_vectors(self.n_qubits)
        return v.T @ self.chi @ v.conj()

    def check(self, tol: float = 1e-8) -> dict:
        """Invariant residuals; raises ValueError if any exceeds ``tol``."""
        chi = self.chi
        d = 2**self.n_qubits
        paulis = [pauli_matrix(lbl) for lbl in self.labels]
        tp = sum(chi[a, b] * paulis[b].conj().T @ paulis[a]
                 for a in range(len(paulis)) for b in range(len(paulis)))
        res = {
            "hermitian": float(np.abs(chi - chi.conj().T).max()),
            "min_eigenvalue": float(np.linalg.eigvalsh((chi + chi.conj().T) / 2).min()),
            "trace_preservation": float(np.abs(tp - np.eye(d)).max()),
            "chi_00": float(chi[0, 0].real),
        }
        if res["hermitian"] > tol or res["min_eigenvalue"] < -tol or res["trace_preservation"] > tol \
                or res["chi_00"] > 1 + tol:
            raise ValueError(f"process matrix violates CPTP invariants: {res}")
        return res


def process_fidelity(chi: ProcessMatrix, target: np.ndarray) -> float:
    c = np.array([v for v in _unitary_coefficients(target)])
    return float(np.real(c.conj() @ chi.chi @ c))


def _unitary_coefficients(u: np.ndarray) -> np.ndarray:
    n = int(round(np.log2(u.shape[0])))
    d = 2**n
    return np.array([np.trace(pauli_matrix(lbl).conj().T @ u) / d for lbl in pauli_labels(n)])


def average_gate_fidelity(chi: ProcessMatrix, target: np.ndarray) -> float:
    d = 2**chi.n_qubits
    f = (d * process_fidelity(chi, target) + 1) / (d + 1)
    if not -1e-9 <= f <= 1 + 1e-9:
        raise ValueError(f"average gate fidelity {f} outside [0, 1]; chi is not a valid process")
    return float(min(1.0, max(0.0, f)))


# ---------------------------------------------------------------- simulation

def qpt_probabilities(process, settings: TomographySettings) -> np.ndarray:
    sup = _as_superoperator(process)
    d = settings.dim
    eff = settings.effects()
    outs = [(sup @ rho.reshape(-1)).reshape(d, d) for rho in input_states(settings.n_qubits)]
    probs = np.einsum("joab,iba->ijo", eff, np.array(outs)).real
    return np.clip(probs, 0, None) / np.clip(probs, 0, None).sum(axis=2, keepdims=True)


def simulate_qpt_records(process, settings: TomographySettings, rng: np.random.Generator | None,
                         exact: bool = False) -> MeasurementRecord:
    """Sample counts for every (input, setting); ``exact`` stores the probabilities instead."""
    probs = qpt_probabilities(process, settings)
    if exact:
        return MeasurementRecord(probs, 0, exact=True)
    counts = np.array([[rng.multinomial(settings.shots_per_setting, p) for p in row] for row in probs])
    return MeasurementRecord(counts, settings.shots_per_setting)


def qst_probabilities(rho: np.ndarray, settings: TomographySettings) -> np.ndarray:
    eff = settings.effects()
    probs = np.einsum("joab,ba->jo", eff, rho).real[None]
    probs = np.clip(probs, 0, None)
    return probs / probs.sum(axis=2, keepdims=True)


def simulate_qst_records(rho: np.ndarray, settings: TomographySettings, rng: np.random.Generator | None,
                         exact: bool = False) -> MeasurementRecord:
    probs = qst_probabilities(rho, settings)
    if exact:
        return MeasurementRecord(probs, 0, exact=True)
    counts = np.array([[rng.multinomial(settings.shots_per_setting, p) for p in probs[0]]])
    return MeasurementRecord(counts, settings.shots_per_setting)


# ---------------------------------------------------------------- maximum likelihood

@dataclass
class MleResult:
    estimate: np.ndarray  # Choi matrix for processes, density matrix for states
    log_likelihood: float
    iterations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)


class NonConvergence(RuntimeError):
    def __init__(self, result: MleResult):
        super().__init__(f"MLE did not converge: {result.diagnostics}")
        self.result = result


def _check_complete(records: MeasurementRecord, shape: tuple[int, int, int]) -> None:
    if records.counts.shape != shape:
        raise ValueError(f"records have shape {records.counts.shape}, expected {shape}")
    totals = records.counts.sum(axis=2)
    if np.any(totals <= 0):
        missing = np.argwhere(totals <= 0)[:5].tolist()
        raise ValueError(f"records incomplete: no data for (input, setting) {missing}")


def _diluted_mle(ops: np.ndarray, freqs: np.ndarray, x0: np.ndarray, normalize: Callable,
                 scale: float, epsilon: float, tol: float, max_iter: int, debug: bool) -> MleResult:
    """Generic diluted iteration x <- N[(I + eps R) x (I + eps R)].

    ``ops`` is (K, D, D) with p_k = Tr(ops_k x); ``freqs`` the observed weights.
    ``epsilon`` is reduced geometrically whenever a step would lower the
    likelihood, and grows again after successful steps (capped at 1e3).
    """
    dim = ops.shape[1]
    flat = ops.reshape(len(ops), -1)
    keep = freqs > 0
    weight_total = freqs.sum()
    eye = np.eye(dim)

    def probs(x):
        return np.real(flat @ x.T.reshape(-1))

    def loglik(p):
        with np.errstate(divide="ignore"):
            return float(np.sum(freqs[keep] * np.log(np.clip(p[keep], 1e-300, None))) / weight_total)

    x = x0
    p = probs(x)
    ll = loglik(p)
    eps = epsilon
    history = [ll]
    it = 0
    converged = False
    stalls = 0
    while it < max_iter:
        it += 1
        ratio = np.where(keep, freqs / np.clip(p, 1e-300, None), 0.0)
        r = scale * np.tensordot(ratio, ops, axes=(0, 0)) / weight_total
        while True:
            g = (eye + eps * r) / (1 + eps)
            cand = normalize(g @ x @ g.conj().T)
            cand = (cand + cand.conj().T) / 2
            p_new = probs(cand)
            ll_new = loglik(p_new)
            if ll_new >= ll - 1e-15 or eps < 1e-8:
                break
            eps /= 2
        if debug and ll_new < ll - 1e-12:
            raise AssertionError(f"log-likelihood decreased at iteration {it}: {ll} -> {ll_new}")
        gain = ll_new - ll
        x, p, ll = cand, p_new, max(ll, ll_new)
        history.append(ll)
        eps = min(eps * 1.5, 1e3)
        if gain < tol:
            stalls += 1
            # require several consecutive tiny gains so one cautious step does not stop the run
            if stalls >= 5:
                converged = True
                break
        else:
            stalls = 0
    diagnostics = {"iterations": it, "final_gain": float(history[-1] - history[-2]) if len(history) > 1 else 0.0,
                   "epsilon": eps, "log_likelihood": ll}
    return MleResult(x, ll, it, converged, diagnostics)


def _tp_normalizer(d: int):
    def normalize(j):
        j4 = j.reshape(d, d, d, d)
        tr_out = np.einsum("aobo->ab", j4)
        w, v = np.linalg.eigh((tr_out + tr_out.conj().T) / 2)
        inv_sqrt = (v / np.sqrt(np.clip(w, 1e-300, None))) @ v.conj().T
        lam = np.kron(inv_sqrt, np.eye(d))
        return lam @ j @ lam.conj().T
    return normalize


def mle_reconstruct(records: MeasurementRecord, settings: TomographySettings, epsilon: float = 0.1,
                    tol: float = 1e-10, max_iter: int = 50_000, debug: bool = False,
                    raise_on_failure: bool = False) -> tuple[ProcessMatrix, MleResult]:
    """Maximum-likelihood CPTP process from QPT counts."""
    n_in, n_set, n_out = settings.n_inputs, settings.n_settings, settings.n_outcomes
    _check_complete(records, (n_in, n_set, n_out))
    d = settings.dim
    eff = settings.effects()
    rhos = input_states(settings.n_qubits)
    # p_ijo = Tr[J (rho_i^T (x) E_jo)]
    ops = np.array([np.kron(rho.T, eff[j, o]) for rho in rhos for j in range(n_set) for o in range(n_out)])
    freqs = records.frequencies().reshape(-1).astype(float)
    j0 = np.eye(d * d, dtype=complex) / d
    res = _diluted_mle(ops, freqs, j0, _tp_normalizer(d), scale=d, epsilon=epsilon, tol=tol,
                       max_iter=max_iter, debug=debug)
    if raise_on_failure and not res.converged:
        raise NonConvergence(res)
    return ProcessMatrix.from_choi(res.estimate), res


def state_tomography(records: MeasurementRecord, settings: TomographySettings, target: np.ndarray = PSI_PLUS,
                     epsilon: float = 0.1, tol: float = 1e-10, max_iter: int = 50_000):
    """MLE density matrix from readout counts; returns (rho, fidelity to ``target``, MleResult)."""
    _check_complete(records, (1, settings.n_settings, settings.n_outcomes))
    d = settings.dim
    eff = settings.effects()
    ops = eff.reshape(-1, d, d)
    freqs = records.frequencies().reshape(-1).astype(float)
    res = _diluted_mle(ops, freqs, np.eye(d, dtype=complex) / d, lambda x: x / np.trace(x).real,
                       scale=1.0, epsilon=epsilon, tol=tol, max_iter=max_iter, debug=False)
    rho = res.estimate
    fid = float(np.real(np.vdot(target, rho @ target)))
    return rho, fid, res


# ---------------------------------------------------------------- bootstrap

def bootstrap(records: MeasurementRecord, settings: TomographySettings, resamples: int,
              rng: np.random.Generator, target: np.ndarray, **mle_kwargs) -> tuple[float, np.ndarray]:
    """Standard deviation of the average gate fidelity over multinomially resampled data sets."""
    if resamples < 50:
        raise ValueError("bootstrap needs at least 50 resamples")
    if records.exact:
        # resampling an infinite-shot record reproduces it exactly
        chi, _ = mle_reconstruct(records, settings, **mle_kwargs)
        fids = np.full(resamples, average_gate_fidelity(chi, target))
        return 0.0, fids
    freqs = records.frequencies()
    fids = []
    for _ in range(resamples):
        counts = np.array([[rng.multinomial(records.shots, p / p.sum()) for p in row] for row in freqs])
        chi, _ = mle_reconstruct(MeasurementRecord(counts, records.shots), settings, **mle_kwargs)
        fids.append(average_gate_fidelity(chi, target))
    fids = np.array(fids)
    return float(fids.std(ddof=1)), fids
