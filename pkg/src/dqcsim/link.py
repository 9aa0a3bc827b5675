"""Heralded remote entanglement between two network qubits.

Attempts run in blocks of ``attempts_per_block``; after every full block the
ions are recooled for ``recool_duration`` before attempts resume. A campaign
ends at the first heralded success. Model time is in microseconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core import QuantumState, QubitId, state_fidelity
from .noise import DEFAULT_BELL_QUBITS, PSI_PLUS, BellNoise, noisy_bell_state


@dataclass(frozen=True)
class AttemptSchedule:
    attempt_duration: float
    attempts_per_block: int
    recool_duration: float
    success_prob: float

    def __post_init__(self):
        if self.attempt_duration <= 0:
            raise ValueError("attempt_duration must be positive")
        if self.attempts_per_block < 1:
            raise ValueError("attempts_per_block must be at least 1")
        if self.recool_duration < 0:
            raise ValueError("recool_duration must be non-negative")
        if not 0 < self.success_prob <= 1:
            raise ValueError(f"success_prob must be in (0, 1], got {self.success_prob}")

    def elapsed(self, attempts: int) -> float:
        """Model time from campaign start to the herald of attempt number ``attempts``."""
        if attempts < 1:
            raise ValueError("attempts must be >= 1")
        completed_blocks = (attempts - 1) // self.attempts_per_block
        return attempts * self.attempt_duration + completed_blocks * self.recool_duration


@dataclass
class HeraldRecord:
    attempts: int
    elapsed: float
    state: QuantumState | None
    success: bool = True
    dd_pulses_applied: dict[str, int] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "attempts": self.attempts,
            "elapsed_us": self.elapsed,
            "success": self.success,
            "dd_pulses_applied": dict(sorted(self.dd_pulses_applied.items())),
        }


def generate_entanglement(
    schedule: AttemptSchedule,
    bell: BellNoise,
    rng: np.random.Generator,
    max_attempts: int | None = None,
    qubits: tuple[QubitId, QubitId] = DEFAULT_BELL_QUBITS,
) -> HeraldRecord:
    """Run one try-until-success campaign.

    If ``max_attempts`` is set and reached without a herald, a failed record
    with ``state=None`` is returned and the caller decides whether to retry.
    """
    attempts = int(rng.geometric(schedule.success_prob))
    if max_attempts is not None and attempts > max_attempts:
        return HeraldRecord(max_attempts, schedule.elapsed(max_attempts), None, success=False)
    # the delivered state does not depend on how many attempts it took
    return HeraldRecord(attempts, schedule.elapsed(attempts), noisy_bell_state(bell, qubits))


def mean_campaign_time(schedule: AttemptSchedule) -> float:
    """Expected model time per campaign (exact for geometric attempt counts)."""
    q = 1 - schedule.success_prob
    qb = q**schedule.attempts_per_block
    # E[floor((n-1)/B)] = sum_{j>=1} P(n-1 >= jB) = q^B / (1 - q^B)
    recools = qb / (1 - qb) if qb < 1 else np.inf
    return schedule.attempt_duration / schedule.success_prob + schedule.recool_duration * recools


def mean_rate(schedule: AttemptSchedule) -> float:
    """Expected herald rate in 1/model-time for back-to-back campaigns."""
    return 1.0 / mean_campaign_time(schedule)


def duty_cycle_rate(schedule: AttemptSchedule) -> float:
    """Rate ignoring block-boundary effects: p / (a + recool / B)."""
    s = schedule
    return s.success_prob / (s.attempt_duration + s.recool_duration / s.attempts_per_block)


def solve_success_prob(target_rate: float, attempt_duration: float, attempts_per_block: int,
                       recool_duration: float) -> float:
    """Per-attempt success probability whose exact mean_rate equals ``target_rate``."""

    def gap(p):
        return mean_rate(AttemptSchedule(attempt_duration, attempts_per_block, recool_duration, p)) - target_rate

    if gap(1.0) < 0:
        raise ValueError(f"rate {target_rate} is unreachable with this schedule")
    return float(brentq(gap, 1e-12, 1.0, xtol=1e-16, rtol=1e-14))


def herald_fidelity(record: HeraldRecord) -> float:
    return state_fidelity(record.state, PSI_PLUS)


def campaign_statistics(records: list[HeraldRecord]) -> dict:
    attempts = np.array([r.attempts for r in records])
    elapsed = np.array([r.elapsed for r in records])
    return {
        "campaigns": len(records),
        "mean_attempts": float(attempts.mean()),
        "max_attempts": int(attempts.max()),
        "mean_elapsed_us": float(elapsed.mean()),
        "rate_per_s": float(len(records) / elapsed.sum() * 1e6),
    }
