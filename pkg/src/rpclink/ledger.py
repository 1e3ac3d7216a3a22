"""Synthetic and ingested blockchain ledgers plus per-user activity statistics.

A ledger here is a minimal time-ordered view of a chain: blocks carry a
timestamp and the pseudonyms that initiated the transactions confirmed in
them.  Synthetic ledgers draw per-block transaction counts from a Poisson
process and assign initiators from a multinomial over user weights, which is
the stochastic model the candidate-set analysis assumes.  Activity statistics
(per-user transaction shares, transacting rates, and windowed count
distributions) feed both the attack and its closed-form model.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "ActivityModel",
    "ActivityStats",
    "Block",
    "Ledger",
    "LedgerConfig",
    "LedgerError",
    "Transaction",
    "UserClass",
    "classify_user",
    "dump_ledger",
    "ingest_ledger",
    "load_ledger",
    "measure_activity",
    "synth_ledger",
    "transacting_threshold",
]

PMF_TOL = 1e-9


class LedgerError(ValueError):
    """Malformed ledger input or configuration."""


@dataclass(frozen=True)
class Transaction:
    initiator: str
    confirm_time: float
    block_height: int


@dataclass(frozen=True)
class Block:
    height: int
    timestamp: float
    transactions: tuple[Transaction, ...]


@dataclass(frozen=True)
class Ledger:
    """Time-ordered blocks with the pseudonym universe that initiated them."""

    blocks: tuple[Block, ...]
    block_time: float
    users: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.blocks:
            raise LedgerError("ledger has no blocks")
        if self.block_time <= 0:
            raise LedgerError("block_time must be positive")
        known = set(self.users)
        if len(known) != len(self.users):
            raise LedgerError("duplicate pseudonyms in users")
        prev_ts = -math.inf
        for expect_height, block in enumerate(self.blocks):
            if block.height != expect_height:
                raise LedgerError(
                    f"block heights must be consecutive from 0, got {block.height} "
                    f"at position {expect_height}"
                )
            if block.timestamp <= prev_ts:
                raise LedgerError(f"non-increasing timestamp at height {block.height}")
            prev_ts = block.timestamp
            for tx in block.transactions:
                if tx.block_height != block.height:
                    raise LedgerError(f"transaction height mismatch in block {block.height}")
                if tx.confirm_time != block.timestamp:
                    raise LedgerError(f"transaction confirm_time mismatch in block {block.height}")
                if tx.initiator not in known:
                    raise LedgerError(f"unknown initiator {tx.initiator!r}")

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def total_transactions(self) -> int:
        return sum(len(b.transactions) for b in self.blocks)

    @property
    def duration(self) -> float:
        """Covered time span: one block_time per block."""
        return self.num_blocks * self.block_time

    @property
    def span(self) -> tuple[float, float]:
        """(first block timestamp, last block timestamp)."""
        return self.blocks[0].timestamp, self.blocks[-1].timestamp

    def block_timestamps(self) -> np.ndarray:
        """Timestamps as an array; memoized, the block tuple is immutable."""
        cached = self.__dict__.get("_stamps")
        if cached is None:
            cached = np.array([b.timestamp for b in self.blocks])
            object.__setattr__(self, "_stamps", cached)
        return cached


@dataclass(frozen=True)
class ActivityModel:
    """How synthetic transaction initiators are weighted across users.

    kind is one of "uniform", "zipf" or "empirical".  Zipf weights follow
    rank^-exponent over the user index; empirical weights are supplied
    explicitly and must already sum to 1.
    """

    kind: str
    exponent: float = 1.1
    weights: tuple[float, ...] | None = None

    @classmethod
    def uniform(cls) -> "ActivityModel":
        return cls("uniform")

    @classmethod
    def zipf(cls, exponent: float = 1.1) -> "ActivityModel":
        return cls("zipf", exponent=exponent)

    @classmethod
    def empirical(cls, weights: Sequence[float]) -> "ActivityModel":
        return cls("empirical", weights=tuple(float(w) for w in weights))

    def validate(self, num_users: int) -> None:
        if self.kind not in ("uniform", "zipf", "empirical"):
            raise LedgerError(f"unknown activity distribution {self.kind!r}")
        if self.kind == "zipf" and self.exponent <= 0:
            raise LedgerError("zipf exponent must be positive")
        if self.kind == "empirical":
            if self.weights is None or len(self.weights) != num_users:
                raise LedgerError("empirical weights must match num_users")
            if any(w < 0 for w in self.weights):
                raise LedgerError("empirical weights must be nonnegative")
            if abs(sum(self.weights) - 1.0) > PMF_TOL:
                raise LedgerError("empirical weights must sum to 1")

    def probabilities(self, num_users: int) -> np.ndarray:
        self.validate(num_users)
        if self.kind == "uniform":
            return np.full(num_users, 1.0 / num_users)
        if self.kind == "zipf":
            ranks = np.arange(1, num_users + 1, dtype=float)
            w = ranks ** (-self.exponent)
            return w / w.sum()
        return np.array(self.weights, dtype=float)


@dataclass(frozen=True)
class LedgerConfig:
    num_users: int
    rate: float  # total transactions per second
    block_time: float  # seconds per block
    duration: float  # seconds to cover
    activity: ActivityModel = field(default_factory=ActivityModel.zipf)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_users < 2:
            raise LedgerError("num_users must be at least 2")
        if self.rate <= 0:
            raise LedgerError("rate must be positive")
        if self.block_time <= 0:
            raise LedgerError("block_time must be positive")
        if self.duration < self.block_time:
            raise LedgerError("duration shorter than one block")
        self.activity.validate(self.num_users)


def _user_names(num_users: int) -> tuple[str, ...]:
    width = len(str(num_users - 1))
    return tuple(f"u{idx:0{width}d}" for idx in range(num_users))


def synth_ledger(config: LedgerConfig) -> Ledger:
    """Generate a ledger under the Poisson/multinomial user model.

    Blocks are stamped exactly at height * block_time; per-block transaction
    counts are Poisson(rate * block_time) and each initiator is an independent
    draw from the activity weights.  Deterministic for a given seed.
    """
    rng = np.random.default_rng(config.seed)
    users = _user_names(config.num_users)
    probs = config.activity.probabilities(config.num_users)
    num_blocks = int(config.duration // config.block_time)
    counts = rng.poisson(config.rate * config.block_time, size=num_blocks)
    initiators = rng.choice(config.num_users, size=int(counts.sum()), p=probs)

    blocks = []
    cursor = 0
    for height in range(num_blocks):
        ts = height * config.block_time
        n = int(counts[height])
        txs = tuple(
            Transaction(users[initiators[cursor + j]], ts, height) for j in range(n)
        )
        cursor += n
        blocks.append(Block(height, ts, txs))
    return Ledger(tuple(blocks), config.block_time, users)


def ingest_ledger(lines: Iterable[str]) -> Ledger:
    """Parse a JSONL block dump into a validated ledger.

    One block per line: {"height": int, "timestamp": seconds,
    "txs": [{"initiator": str}, ...]}.  Heights must be consecutive (they are
    rebased to start at 0) and timestamps strictly increasing.  block_time is
    set to the mean inter-block interval, so at least two blocks are required.
    """
    raw: list[tuple[int, float, list[str]]] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            height = int(rec["height"])
            ts = float(rec["timestamp"])
            txs = [str(t["initiator"]) for t in rec["txs"]]
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise LedgerError(f"malformed block record on line {lineno}: {exc}") from exc
        raw.append((height, ts, txs))

    if len(raw) < 2:
        raise LedgerError("ledger dump must contain at least two blocks")

    base = raw[0][0]
    prev_height, prev_ts = None, None
    for height, ts, _ in raw:
        if prev_height is not None:
            if height == prev_height:
                raise LedgerError(f"duplicate height {height}")
            if height != prev_height + 1:
                raise LedgerError(f"non-consecutive height {height} after {prev_height}")
            if ts <= prev_ts:
                raise LedgerError(f"non-monotonic timestamp at height {height}")
        prev_height, prev_ts = height, ts

    block_time = (raw[-1][1] - raw[0][1]) / (len(raw) - 1)
    users = tuple(dict.fromkeys(init for _, _, txs in raw for init in txs))
    blocks = tuple(
        Block(
            height - base,
            ts,
            tuple(Transaction(init, ts, height - base) for init in txs),
        )
        for height, ts, txs in raw
    )
    return Ledger(blocks, block_time, users)


def load_ledger(path) -> Ledger:
    with open(path, "r", encoding="utf-8") as fh:
        return ingest_ledger(fh)


def dump_ledger(ledger: Ledger, path) -> None:
    """Write the JSONL block dump format consumed by ingest_ledger."""
    with open(path, "w", encoding="utf-8") as fh:
        for block in ledger.blocks:
            rec = {
                "height": block.height,
                "timestamp": block.timestamp,
                "txs": [{"initiator": tx.initiator} for tx in block.transactions],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _validate_pmf(pmf: Mapping[int, float], name: str) -> None:
    if any(v < 0 for v in pmf.values()):
        raise LedgerError(f"{name} has negative mass")
    if abs(sum(pmf.values()) - 1.0) > PMF_TOL:
        raise LedgerError(f"{name} does not sum to 1")


@dataclass(frozen=True)
class ActivityStats:
    """Per-user activity measurements over one ledger.

    p maps each pseudonym to its share of all transactions; lambda_i to its
    transacting rate (lambda_total * p).  pdf_x / pdf_n are the empirical
    distributions of transaction count and distinct-pseudonym count over every
    run of window_k consecutive blocks (sliding, stride 1).
    """

    p: dict[str, float]
    lambda_total: float
    lambda_i: dict[str, float]
    pdf_x: dict[int, float]
    pdf_n: dict[int, float]
    window_k: int

    def __post_init__(self) -> None:
        if abs(sum(self.p.values()) - 1.0) > PMF_TOL:
            raise LedgerError("transaction shares must sum to 1")
        for user, share in self.p.items():
            expect = self.lambda_total * share
            if abs(self.lambda_i.get(user, math.nan) - expect) > 1e-12 * max(1.0, expect):
                raise LedgerError(f"lambda_i inconsistent for {user}")
        _validate_pmf(self.pdf_x, "pdf_x")
        _validate_pmf(self.pdf_n, "pdf_n")
        if self.window_k < 1:
            raise LedgerError("window_k must be positive")

    def to_json(self) -> dict:
        return {
            "p": self.p,
            "lambda_total": self.lambda_total,
            "lambda_i": self.lambda_i,
            "pdf_x": {str(k): v for k, v in self.pdf_x.items()},
            "pdf_n": {str(k): v for k, v in self.pdf_n.items()},
            "window_k": self.window_k,
        }

    @classmethod
    def from_json(cls, payload: Mapping) -> "ActivityStats":
        return cls(
            p=dict(payload["p"]),
            lambda_total=float(payload["lambda_total"]),
            lambda_i=dict(payload["lambda_i"]),
            pdf_x={int(k): float(v) for k, v in payload["pdf_x"].items()},
            pdf_n={int(k): float(v) for k, v in payload["pdf_n"].items()},
            window_k=int(payload["window_k"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "ActivityStats":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def measure_activity(ledger: Ledger, k: int, span: tuple[float, float] | None = None) -> ActivityStats:
    """Measure per-user shares, rates and k-block window distributions.

    span optionally restricts the measurement to blocks whose timestamp falls
    in [span[0], span[1]]; by default the whole ledger is used.
    """
    blocks = ledger.blocks
    if span is not None:
        lo, hi = span
        blocks = tuple(b for b in blocks if lo <= b.timestamp <= hi)
        if not blocks:
            raise LedgerError("span selects no blocks")
    if k < 1:
        raise LedgerError("k must be positive")
    if k > len(blocks):
        raise LedgerError(f"k={k} exceeds block count {len(blocks)}")

    counts: Counter[str] = Counter()
    for block in blocks:
        counts.update(tx.initiator for tx in block.transactions)
    total = sum(counts.values())
    if total == 0:
        raise LedgerError("ledger contains no transactions")

    duration = len(blocks) * ledger.block_time
    lam = total / duration
    p = {user: counts.get(user, 0) / total for user in ledger.users}
    lam_i = {user: lam * share for user, share in p.items()}

    per_block_counts = np.array([len(b.transactions) for b in blocks])
    window_tx = np.convolve(per_block_counts, np.ones(k, dtype=int), mode="valid")
    num_windows = len(window_tx)
    x_counter = Counter(int(v) for v in window_tx)

    # Distinct-initiator counts per window; reuse per-block initiator id arrays.
    user_ids = {user: idx for idx, user in enumerate(ledger.users)}
    per_block_ids = [
        np.array([user_ids[tx.initiator] for tx in b.transactions], dtype=np.int64)
        for b in blocks
    ]
    n_counter: Counter[int] = Counter()
    for start in range(num_windows):
        ids = np.concatenate(per_block_ids[start : start + k]) if k > 1 else per_block_ids[start]
        n_counter[int(np.unique(ids).size)] += 1

    pdf_x = {v: c / num_windows for v, c in sorted(x_counter.items())}
    pdf_n = {v: c / num_windows for v, c in sorted(n_counter.items())}
    return ActivityStats(p, lam, lam_i, pdf_x, pdf_n, k)


def transacting_threshold(k: int, block_time: float, q: float) -> float:
    """Rate at which the k-block appearance probability 1 - exp(-rate*k*T) hits q."""
    if not 0 < q < 1:
        raise LedgerError("q must lie strictly between 0 and 1")
    if k < 1 or block_time <= 0:
        raise LedgerError("k and block_time must be positive")
    return -math.log1p(-q) / (k * block_time)


class UserClass(Enum):
    NORMAL = "normal"
    ACTIVE = "active"


def classify_user(rate: float, threshold: float) -> UserClass:
    """Active iff the transacting rate reaches the threshold (boundary inclusive)."""
    if rate < 0:
        raise LedgerError("rate must be nonnegative")
    return UserClass.ACTIVE if rate >= threshold else UserClass.NORMAL


def active_users(stats: ActivityStats, threshold: float) -> frozenset[str]:
    return frozenset(
        user for user, rate in stats.lambda_i.items()
        if classify_user(rate, threshold) is UserClass.ACTIVE
    )
