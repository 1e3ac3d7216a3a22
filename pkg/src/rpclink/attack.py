"""Candidate-set construction, multi-round intersection and identification.

A detected query timestamp maps to the k consecutive ledger blocks stamped at
or before it; the initiators inside form that round's candidate set.  Sets
from repeated observations of the same flow are intersected, and the final
set is resolved by filtering out users whose transacting rate reaches the
active-user threshold: a single survivor is the unique identification, an
empty remainder means the target itself is active, anything else stays an
ambiguous candidate set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .catalog import WalletProfile
from .ledger import ActivityStats, Ledger

__all__ = [
    "AttackError",
    "AttackOutcome",
    "CandidateSet",
    "IntervalEstimate",
    "OutcomeVariant",
    "candidate_set",
    "estimate_k",
    "identify",
    "intersect",
    "outcome_to_json",
]

# Guard against float noise pushing an exact integer quotient over the next
# ceiling (e.g. 20.4 / 0.4).
CEIL_EPS = 1e-9


class AttackError(ValueError):
    """Invalid attack input."""


@dataclass(frozen=True)
class IntervalEstimate:
    """Window size in blocks covering the confirmation-to-query interval."""

    k: int
    method: str  # "periodic" or "subscription"
    theoretical_k: int
    safety_margin: int

    def __post_init__(self) -> None:
        if self.k != self.theoretical_k + self.safety_margin or self.k < 1:
            raise AttackError("k must equal theoretical_k + safety_margin >= 1")


def _ceil(value: float) -> int:
    return int(math.ceil(value - CEIL_EPS))


def estimate_k(profile: WalletProfile) -> IntervalEstimate:
    """Blocks needed to cover the worst-case confirmation-to-query interval.

    Periodic wallets can wait a full poll cycle plus a round trip; push
    wallets only the notification and query trips.  The operational k adds
    the profile's margin for consensus-timing fluctuation.
    """
    z = profile.block_time
    if profile.query_method == "periodic":
        cycle = profile.k_estimation_cycle or profile.query_cycle
        theoretical = _ceil((cycle + profile.rtt) / z)
    else:
        theoretical = _ceil(2.0 * profile.rtt / z)
    theoretical = max(theoretical, 1)
    margin = profile.operational_k - theoretical
    if margin < 0:
        raise AttackError(
            f"{profile.name}: operational k {profile.operational_k} below "
            f"theoretical {theoretical}"
        )
    return IntervalEstimate(profile.operational_k, profile.query_method,
                            theoretical, margin)


@dataclass(frozen=True)
class CandidateSet:
    round: int
    pseudonyms: frozenset[str]
    window: tuple[int, int]  # (first block height, k)


def candidate_set(ledger: Ledger, t_q: float, k: int, round_index: int = 0) -> CandidateSet:
    """Initiators of the k highest blocks stamped at or before t_q."""
    if k < 1:
        raise AttackError("k must be positive")
    stamps = ledger.block_timestamps()
    if not stamps[0] <= t_q <= stamps[-1] + ledger.block_time:
        raise AttackError(f"t_q {t_q} outside ledger time span")
    end = int(np.searchsorted(stamps, t_q, side="right"))
    if end < k:
        raise AttackError(f"only {end} blocks precede t_q, need {k}")
    members = frozenset(
        tx.initiator
        for block in ledger.blocks[end - k : end]
        for tx in block.transactions
    )
    return CandidateSet(round_index, members, (end - k, k))


def intersect(rounds: Sequence[CandidateSet]) -> frozenset[str]:
    """Intersection across rounds; a single round passes through unchanged."""
    if not rounds:
        raise AttackError("at least one round is required")
    result = rounds[0].pseudonyms
    for cs in rounds[1:]:
        result = result & cs.pseudonyms
    return result


class OutcomeVariant(Enum):
    UNIQUE = "unique"
    ACTIVE_TARGET = "active_target"
    AMBIGUOUS_NORMAL = "ambiguous_normal"


@dataclass(frozen=True)
class AttackOutcome:
    variant: OutcomeVariant
    candidates: frozenset[str]
    rounds: int
    code: str = ""

    def __post_init__(self) -> None:
        if self.variant is OutcomeVariant.UNIQUE and len(self.candidates) != 1:
            raise AttackError("unique outcome must carry exactly one pseudonym")

    @property
    def pseudonym(self) -> str:
        if self.variant is not OutcomeVariant.UNIQUE:
            raise AttackError("only unique outcomes carry a single pseudonym")
        return next(iter(self.candidates))


def identify(s_m: Iterable[str], stats: ActivityStats, threshold: float,
             rounds: int = 0) -> AttackOutcome:
    """Resolve an intersection result by filtering active users.

    Exactly one surviving normal user is the unique identification; zero
    survivors means the target itself is active (the pre-filter set is
    reported); multiple survivors remain ambiguous.  An already-empty
    intersection is reported as a distinct failure.
    """
    members = frozenset(s_m)
    unknown = [u for u in members if u not in stats.lambda_i]
    if unknown:
        raise AttackError(f"pseudonyms missing from stats: {sorted(unknown)[:3]}")
    if not members:
        return AttackOutcome(OutcomeVariant.AMBIGUOUS_NORMAL, frozenset(), rounds,
                             code="empty_intersection")
    survivors = frozenset(u for u in members if stats.lambda_i[u] < threshold)
    if len(survivors) == 1:
        return AttackOutcome(OutcomeVariant.UNIQUE, survivors, rounds)
    if not survivors:
        return AttackOutcome(OutcomeVariant.ACTIVE_TARGET, members, rounds,
                             code="target_active")
    return AttackOutcome(OutcomeVariant.AMBIGUOUS_NORMAL, survivors, rounds,
                         code="normal_false_positives")


def outcome_to_json(outcome: AttackOutcome,
                    rounds: Sequence[CandidateSet] = ()) -> dict:
    return {
        "variant": outcome.variant.value,
        "candidates": sorted(outcome.candidates),
        "rounds": outcome.rounds,
        "code": outcome.code,
        "windows": [
            {
                "round": cs.round,
                "first_height": cs.window[0],
                "k": cs.window[1],
                "cardinality": len(cs.pseudonyms),
            }
            for cs in rounds
        ],
    }
