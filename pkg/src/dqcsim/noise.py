"""Noise channels, SPAM POVMs and the per-module noise parameter set.

Gate errors are given as average gate infidelities ``r`` and turned into a
depolarizing probability ``p = r * d / (d - 1)`` so that the ideal gate
followed by the channel has average fidelity ``1 - r``.
"""

from __future__ import annotations

import dataclasses
from functools import lru_cache
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .core import PAULIS, KrausChannel, QuantumState, QubitId, pauli_labels, pauli_matrix

PSI_PLUS = np.array([0, 1, 1, 0], dtype=complex) / np.sqrt(2)
PSI_MINUS = np.array([0, 1, -1, 0], dtype=complex) / np.sqrt(2)


def _check_prob(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0 or not np.isfinite(value):
        raise ValueError(f"{name} must be a probability in [0, 1], got {value}")


@dataclass(frozen=True)
class SpamPovm:
    """Readout error model: eps0 = P(read 1 | prepared 0), eps1 = P(read 0 | prepared 1)."""

    eps0: float = 0.0
    eps1: float = 0.0

    def __post_init__(self):
        _check_prob("eps0", self.eps0)
        _check_prob("eps1", self.eps1)

    def effects(self) -> tuple[np.ndarray, np.ndarray]:
        m0 = np.diag([1 - self.eps0, self.eps1]).astype(complex)
        m1 = np.diag([self.eps0, 1 - self.eps1]).astype(complex)
        return m0, m1

    def flip_matrix(self) -> np.ndarray:
        """Column-stochastic T[read, true]."""
        return np.array([[1 - self.eps0, self.eps1], [self.eps0, 1 - self.eps1]])


IDEAL_SPAM = SpamPovm()


def povm_outcome_probabilities(state: QuantumState, target: QubitId, spam: SpamPovm) -> tuple[float, float]:
    from .core import partial_trace

    rho = partial_trace(state, [target]).data
    m0, m1 = spam.effects()
    p0 = float(np.trace(m0 @ rho).real)
    p1 = float(np.trace(m1 @ rho).real)
    return p0, p1


@lru_cache(maxsize=256)
def depolarizing_channel(p: float, n: int = 1) -> KrausChannel:
    """rho -> (1-p) rho + p I/2**n."""
    _check_prob("depolarizing p", p)
    if n not in (1, 2):
        raise ValueError(f"depolarizing channel supports 1 or 2 qubits, got {n}")
    d2 = 4**n
    ops = [np.sqrt(1 - p + p / d2) * np.eye(2**n, dtype=complex)]
    if p > 0:
        ops += [np.sqrt(p / d2) * pauli_matrix(lbl) for lbl in pauli_labels(n)[1:]]
    return KrausChannel(tuple(ops))


@lru_cache(maxsize=1024)
def dephasing_channel(p: float) -> KrausChannel:
    """rho -> (1-p) rho + p Z rho Z."""
    _check_prob("dephasing p", p)
    return KrausChannel((np.sqrt(1 - p) * PAULIS["I"], np.sqrt(p) * PAULIS["Z"]))


def depolarizing_from_infidelity(r: float, n: int) -> float:
    """Depolarizing probability whose average gate infidelity is ``r``."""
    d = 2**n
    p = r * d / (d - 1)
    _check_prob(f"depolarizing p for average infidelity {r}", p)
    return p


def memory_dephasing_probability(rate: float, elapsed: float) -> float:
    """Phase-flip probability after ``elapsed`` with coherence decaying as exp(-rate t)."""
    if rate <= 0 or elapsed <= 0:
        return 0.0
    return 0.5 * (1 - np.exp(-rate * elapsed))


@dataclass(frozen=True)
class BellNoise:
    """Werner mixing plus phase damping of the Psi+/Psi- coherence."""

    werner_p: float = 0.0
    dephasing_q: float = 0.0

    def __post_init__(self):
        _check_prob("werner_p", self.werner_p)
        _check_prob("dephasing_q", self.dephasing_q)

    def fidelity(self) -> float:
        return (1 - self.werner_p) * (1 - self.dephasing_q / 2) + self.werner_p / 4


DEFAULT_BELL_QUBITS = (QubitId("Alice", "network", 0), QubitId("Bob", "network", 0))


def noisy_bell_state(bn: BellNoise, qubits: tuple[QubitId, QubitId] = DEFAULT_BELL_QUBITS) -> QuantumState:
    plus = np.outer(PSI_PLUS, PSI_PLUS.conj())
    if bn.werner_p == 0 and bn.dephasing_q == 0:
        return QuantumState(tuple(sorted(qubits)), PSI_PLUS.copy())
    minus = np.outer(PSI_MINUS, PSI_MINUS.conj())
    q = bn.dephasing_q
    rho = (1 - bn.werner_p) * ((1 - q / 2) * plus + (q / 2) * minus) + bn.werner_p * np.eye(4) / 4
    # Psi+ is symmetric under qubit exchange, so the order of ``qubits`` is irrelevant
    return QuantumState(tuple(sorted(qubits)), rho.astype(complex))


@dataclass(frozen=True)
class ModuleNoise:
    """Noise parameters for one module. Times in microseconds."""

    spam: Mapping[str, SpamPovm] = field(default_factory=dict)
    single_qubit_error: float = 0.0
    local_cz_error: float = 0.0
    transfer_error: float = 0.0
    network_rotation_error: float = 0.0
    detection_base_error: float = 0.0
    upper_state_lifetime: float = 390_000.0
    measurement_duration: float = 100.0
    memory_dephasing_rate: float = 0.0
    memory_quasistatic_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "spam", MappingProxyType(dict(self.spam)))
        for role, povm in self.spam.items():
            if role not in ("network", "circuit", "auxiliary"):
                raise ValueError(f"SPAM entry for unknown role {role!r}")
            if not isinstance(povm, SpamPovm):
                raise TypeError(f"SPAM entry for {role} must be a SpamPovm")
        for name in ("single_qubit_error", "local_cz_error", "transfer_error",
                     "network_rotation_error", "detection_base_error"):
            _check_prob(name, getattr(self, name))
        if self.upper_state_lifetime <= 0:
            raise ValueError("upper_state_lifetime must be positive")
        for name in ("measurement_duration", "memory_dephasing_rate", "memory_quasistatic_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def spam_for(self, role: str) -> SpamPovm:
        return self.spam.get(role, IDEAL_SPAM)


def detection_error(duration: float, rates: ModuleNoise) -> float:
    """Misidentification probability for the shelved (bright-to-dark decaying) state."""
    if duration < 0:
        raise ValueError("duration must be non-negative")
    decay = -np.expm1(-duration / rates.upper_state_lifetime)
    return float(min(1.0, rates.detection_base_error + decay))


@dataclass(frozen=True)
class NoiseModel:
    modules: Mapping[str, ModuleNoise]
    bell: BellNoise = BellNoise()

    def __post_init__(self):
        object.__setattr__(self, "modules", MappingProxyType(dict(self.modules)))

    def __getitem__(self, module: str) -> ModuleNoise:
        try:
            return self.modules[module]
        except KeyError:
            raise KeyError(f"no noise parameters for module {module!r}") from None

    def replace(self, bell: BellNoise | None = None, **module_overrides: dict) -> "NoiseModel":
        """Copy with the Bell noise and/or per-module fields replaced."""
        mods = dict(self.modules)
        for name, fields in module_overrides.items():
            mods[name] = dataclasses.replace(mods[name], **fields)
        return NoiseModel(mods, self.bell if bell is None else bell)

    def scaled(self, **keep: bool) -> "NoiseModel":
        """Keep only the named mechanisms; everything else set to zero.

        Mechanism names: bell, local_cz, transfer, measurement, memory, single_qubit, spam.
        """
        on = {k for k, v in keep.items() if v}
        mods = {}
        for name, m in self.modules.items():
            mods[name] = ModuleNoise(
                spam=m.spam if "spam" in on else {},
                single_qubit_error=m.single_qubit_error if "single_qubit" in on else 0.0,
                local_cz_error=m.local_cz_error if "local_cz" in on else 0.0,
                transfer_error=m.transfer_error if "transfer" in on else 0.0,
                network_rotation_error=m.network_rotation_error if "measurement" in on else 0.0,
                detection_base_error=m.detection_base_error if "measurement" in on else 0.0,
                upper_state_lifetime=m.upper_state_lifetime if "measurement" in on else 1e300,
                measurement_duration=m.measurement_duration,
                memory_dephasing_rate=m.memory_dephasing_rate if "memory" in on else 0.0,
                memory_quasistatic_sigma=m.memory_quasistatic_sigma if "memory" in on else 0.0,
            )
        return NoiseModel(mods, self.bell if "bell" in on else BellNoise())

    @classmethod
    def noiseless(cls, modules: tuple[str, ...] = ("Alice", "Bob")) -> "NoiseModel":
        return cls({m: ModuleNoise(upper_state_lifetime=float("inf")) for m in modules}, BellNoise())
