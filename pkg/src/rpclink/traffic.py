"""Labeled packet-metadata synthesis for wallet sessions.

Produces the attacker's-eye view of a wallet talking to its RPC service:
per-packet flow id, timestamp, wire size and direction, with ground-truth API
labels attached for training and evaluation.  Periodic wallets poll on a
per-session random phase; while a transaction is pending, each poll tick
issues a status query whose response is nil-sized until the first tick at or
after the confirmation time, which returns the receipt (the Target response
whose timestamp is the query timestamp the detector must recover).
Subscription wallets receive a server push shortly after confirmation and
query immediately.

Calls on the RPC flow are sequential (one outstanding request), so a response
always follows its own request.  On each poll tick the status query is issued
first and the latest-block poll second, keeping the receipt response within
one poll cycle plus a round trip of the confirmation.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .catalog import ApiSpec, SizeRange, WalletProfile

__all__ = [
    "Direction",
    "JitterModel",
    "NoiseModel",
    "PacketRecord",
    "PacketTrace",
    "SessionPlan",
    "TrafficError",
    "TxEvent",
    "filter_rpc_flows",
    "read_trace",
    "synth_session",
    "write_trace",
]

TARGET_MARK = "#target"
NIL_MARK = "#nil"
NOTIFY_LABEL = "notify"

# Span cap for sampling sizes from unbounded response ranges.
SAMPLE_SPAN = 512
# Client-side pause between consecutive calls in one burst, seconds.
CALL_GAP = (0.002, 0.01)


class TrafficError(ValueError):
    """Malformed trace or session plan."""


class Direction(Enum):
    REQUEST = "request"
    RESPONSE = "response"


@dataclass(frozen=True)
class PacketRecord:
    flow: str
    timestamp: float
    size: int
    direction: Direction
    label: str | None = None

    def __post_init__(self) -> None:
        if self.size <= 0:
            raise TrafficError("packet size must be positive")

    @property
    def api(self) -> str | None:
        if self.label is None:
            return None
        return self.label.split("#", 1)[0] or None

    @property
    def is_target_response(self) -> bool:
        return self.label is not None and self.label.endswith(TARGET_MARK)

    @property
    def is_nil_response(self) -> bool:
        return self.label is not None and self.label.endswith(NIL_MARK)


@dataclass(frozen=True)
class PacketTrace:
    records: tuple[PacketRecord, ...]
    flow_endpoints: dict[str, str]

    def __post_init__(self) -> None:
        prev = -math.inf
        for rec in self.records:
            if rec.timestamp < prev:
                raise TrafficError("trace records must be time-ordered")
            prev = rec.timestamp

    def __len__(self) -> int:
        return len(self.records)

    def target_timestamps(self) -> list[float]:
        """Ground-truth query timestamps (confirmed status responses)."""
        return [r.timestamp for r in self.records if r.is_target_response]


@dataclass(frozen=True)
class JitterModel:
    """Truncated-normal extra delay added to each one-way trip."""

    mean: float = 0.05
    stddev: float = 0.02
    max: float = 0.4

    def __post_init__(self) -> None:
        if self.max < 0 or self.stddev < 0:
            raise TrafficError("jitter parameters must be nonnegative")

    def draw(self, rng: np.random.Generator) -> float:
        if self.max == 0 or self.stddev == 0:
            return min(max(self.mean, 0.0), self.max)
        for _ in range(64):
            value = rng.normal(self.mean, self.stddev)
            if 0.0 <= value <= self.max:
                return value
        return float(min(max(rng.normal(self.mean, self.stddev), 0.0), self.max))


@dataclass(frozen=True)
class NoiseModel:
    """Background traffic on non-RPC flows sharing the victim's link."""

    flows: int = 2
    rate: float = 0.5  # packets per second per flow
    size_range: tuple[int, int] = (60, 1500)


@dataclass(frozen=True)
class TxEvent:
    """One victim transaction: sent at send_time, confirmed at confirm_time.

    confirm_time None marks a transaction that never confirms within the
    session (status queries keep returning nil).
    """

    send_time: float
    confirm_time: float | None
    initiator: str = ""

    def __post_init__(self) -> None:
        if self.confirm_time is not None and self.send_time >= self.confirm_time:
            raise TrafficError("send_time must precede confirm_time")


@dataclass(frozen=True)
class SessionPlan:
    profile: WalletProfile
    tx_events: tuple[TxEvent, ...]
    jitter: JitterModel = field(default_factory=JitterModel)
    noise: NoiseModel | None = None
    block_times: tuple[float, ...] | None = None
    session_start: float | None = None
    duration: float | None = None

    def __post_init__(self) -> None:
        if not self.tx_events and self.duration is None:
            raise TrafficError("a plan without transactions needs an explicit duration")


def _validate_confirms(plan: SessionPlan) -> None:
    if plan.block_times is None:
        return
    grid = np.asarray(plan.block_times)
    for tx in plan.tx_events:
        if tx.confirm_time is None:
            continue
        if not np.any(np.isclose(grid, tx.confirm_time, rtol=0.0, atol=1e-6)):
            raise TrafficError(
                f"confirm_time {tx.confirm_time} is not on a block boundary"
            )


class _FlowWriter:
    """Sequential request/response emitter for one flow."""

    def __init__(self, flow: str, profile: WalletProfile, jitter: JitterModel,
                 rng: np.random.Generator):
        self.flow = flow
        self.profile = profile
        self.jitter = jitter
        self.rng = rng
        self.cursor = -math.inf
        self.records: list[PacketRecord] = []

    def _rtt(self) -> float:
        return self.profile.rtt + self.jitter.draw(self.rng) + self.jitter.draw(self.rng)

    def _gap(self) -> float:
        lo, hi = CALL_GAP
        return float(self.rng.uniform(lo, hi))

    def push_response(self, when: float, size: int, label: str) -> float:
        self.records.append(PacketRecord(self.flow, when, size, Direction.RESPONSE, label))
        self.cursor = max(self.cursor, when)
        return when

    def call(self, api: ApiSpec, when: float, *, response_label: str | None = None,
             response_size: int | None = None) -> float:
        """Emit one request/response pair; returns the response timestamp."""
        start = max(when, self.cursor)
        req_size = api.practical_request.sample(self.rng, SAMPLE_SPAN) + self.profile.overhead.total
        if response_size is None:
            response_size = api.practical_response.sample(self.rng, SAMPLE_SPAN) + self.profile.overhead.total
        resp_time = start + self._rtt()
        self.records.append(PacketRecord(self.flow, start, req_size, Direction.REQUEST, api.name))
        self.records.append(
            PacketRecord(self.flow, resp_time, response_size,
                         Direction.RESPONSE, response_label or api.name)
        )
        self.cursor = resp_time + self._gap()
        return resp_time


def _background_ticks(period: float, phase: float, start: float, end: float,
                      avoid: Sequence[float], guard: float) -> list[float]:
    """Task tick times, shifted off poll ticks so bursts stay sequential."""
    ticks = []
    t = start + phase * period
    while t <= end:
        shifted = t
        for tick in avoid:
            if abs(shifted - tick) < guard:
                shifted = tick + guard
        ticks.append(shifted)
        t += period
    return ticks


def synth_session(plan: SessionPlan, rng_seed: int) -> PacketTrace:
    """Synthesize the labeled packet trace of one wallet session."""
    _validate_confirms(plan)
    profile = plan.profile
    rng = np.random.default_rng(rng_seed)
    jitter = plan.jitter
    seq = profile.call_sequence
    events = sorted(plan.tx_events, key=lambda e: e.send_time)

    if plan.session_start is not None:
        start = plan.session_start
    elif events:
        lead = 2 * (profile.query_cycle or 30.0)
        start = events[0].send_time - lead
    else:
        start = 0.0
    if plan.duration is not None:
        end = start + plan.duration
    else:
        horizon = max(
            (e.confirm_time if e.confirm_time is not None else e.send_time)
            for e in events
        )
        end = horizon + 2 * (profile.query_cycle or 30.0) + 10.0

    wallet = _FlowWriter("rpc-0", profile, jitter, rng)
    overhead = profile.overhead.total

    def status_response_size(confirmed: bool) -> tuple[int, str]:
        if confirmed:
            size = profile.target_api.practical_response.sample(rng, SAMPLE_SPAN) + overhead
            return size, profile.target_api.name + TARGET_MARK
        size = profile.nil_response_json.sample(rng) + overhead
        return size, profile.target_api.name + NIL_MARK

    if profile.query_method == "periodic":
        cycle = profile.query_cycle
        phase = float(rng.uniform(0.0, cycle))
        ticks = []
        t = start + phase
        while t <= end:
            ticks.append(t)
            t += cycle
        bg_ticks = [
            (api, when)
            for api, period in profile.background_tasks
            for when in _background_ticks(period, float(rng.uniform(0.0, 1.0)),
                                          start, end, ticks, guard=1.5)
        ]

        # One chronologically sorted schedule keeps rng consumption stable.
        items: list[tuple[float, int, str, object]] = []
        for tx in events:
            items.append((tx.send_time, 0, "send", tx))
        for tick in ticks:
            items.append((tick, 1, "tick", None))
        for api, when in bg_ticks:
            items.append((when, 2, "bg", api))
        items.sort(key=lambda it: (it[0], it[1]))

        pending: list[TxEvent] = []
        for when, _, kind, payload in items:
            if kind == "send":
                tx = payload
                wallet.call(profile.api(seq.send_api), tx.send_time)
                for name in seq.after_send:
                    wallet.call(profile.api(name), tx.send_time)
                pending.append(tx)
            elif kind == "bg":
                wallet.call(profile.api(payload), when)
            else:  # poll tick
                resolved: list[TxEvent] = []
                for tx in list(pending):
                    if tx.send_time > when:
                        continue
                    confirmed = tx.confirm_time is not None and when >= tx.confirm_time
                    size, label = status_response_size(confirmed)
                    wallet.call(profile.api(seq.status_api), when,
                                response_label=label, response_size=size)
                    if confirmed:
                        resolved.append(tx)
                if seq.poll_api is not None:
                    wallet.call(profile.api(seq.poll_api), when)
                for tx in resolved:
                    pending.remove(tx)
                    for name in seq.post_query:
                        wallet.call(profile.api(name), when)
    else:  # subscription
        items = []
        for tx in events:
            items.append((tx.send_time, 0, "send", tx))
            if tx.confirm_time is not None:
                items.append((tx.confirm_time, 1, "notify", tx))
        for api, period in profile.background_tasks:
            phase = float(rng.uniform(0.0, 1.0))
            t = start + phase * period
            while t <= end:
                items.append((t, 2, "bg", api))
                t += period
        items.sort(key=lambda it: (it[0], it[1]))

        for when, _, kind, payload in items:
            if kind == "send":
                wallet.call(profile.api(seq.send_api), when)
                for name in seq.after_send:
                    wallet.call(profile.api(name), when)
            elif kind == "bg":
                wallet.call(profile.api(payload), when)
            else:  # confirmation push, then immediate status query
                one_way = profile.rtt / 2.0 + jitter.draw(rng)
                notify_time = when + one_way
                size = (profile.notification_json or SizeRange(150, 220)).sample(rng) + overhead
                wallet.push_response(notify_time, size, NOTIFY_LABEL)
                size, label = status_response_size(True)
                wallet.call(profile.api(seq.status_api), notify_time,
                            response_label=label, response_size=size)
                for name in seq.post_query:
                    wallet.call(profile.api(name), notify_time)

    records = list(wallet.records)
    endpoints = {"rpc-0": "rpc"}

    if plan.noise is not None and plan.noise.flows > 0 and plan.noise.rate > 0:
        lo, hi = plan.noise.size_range
        for i in range(plan.noise.flows):
            flow = f"noise-{i}"
            endpoints[flow] = "wallet-vendor" if i == 0 else "other"
            t = start
            while True:
                t += float(rng.exponential(1.0 / plan.noise.rate))
                if t > end:
                    break
                records.append(PacketRecord(
                    flow, t, int(rng.integers(lo, hi + 1)),
                    Direction.REQUEST if rng.random() < 0.5 else Direction.RESPONSE,
                ))

    order = sorted(range(len(records)), key=lambda i: (records[i].timestamp, i))
    return PacketTrace(tuple(records[i] for i in order), endpoints)


def filter_rpc_flows(trace: PacketTrace) -> PacketTrace:
    """Keep only records whose flow is mapped to the RPC service."""
    if not trace.flow_endpoints:
        raise TrafficError("flow_endpoints not populated")
    keep = {f for f, kind in trace.flow_endpoints.items() if kind == "rpc"}
    records = tuple(r for r in trace.records if r.flow in keep)
    endpoints = {f: k for f, k in trace.flow_endpoints.items() if f in keep}
    return PacketTrace(records, endpoints)


CSV_HEADER = ["flow_id", "timestamp", "size", "direction", "label"]


def write_trace(trace: PacketTrace, path, sidecar_path=None) -> None:
    """CSV records plus a sidecar JSON mapping flow ids to endpoint labels."""
    path = str(path)
    if sidecar_path is None:
        sidecar_path = path + ".flows.json"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in trace.records:
            writer.writerow([r.flow, repr(r.timestamp), r.size, r.direction.value,
                             r.label or ""])
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump({"flow_endpoints": trace.flow_endpoints}, fh, sort_keys=True)


def read_trace(path, sidecar_path=None) -> PacketTrace:
    path = str(path)
    if sidecar_path is None:
        sidecar_path = path + ".flows.json"
    with open(sidecar_path, "r", encoding="utf-8") as fh:
        endpoints = json.load(fh)["flow_endpoints"]
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise TrafficError(f"unexpected trace header {header}")
        for row in reader:
            flow, ts, size, direction, label = row
            records.append(PacketRecord(
                flow, float(ts), int(size), Direction(direction), label or None
            ))
    return PacketTrace(tuple(records), endpoints)
