"""Recovering transaction-query timestamps from unlabeled packet metadata.

Detection walks an RPC-filtered trace in three stages: size filtering keeps
request/response pairs whose wire sizes fit the status-query API, feature
vectors over the surrounding packet window feed a trained tree ensemble (or
the hand-written relative-order rules), and the timestamps of positively
classified middle responses come out as the recovered query timestamps.

A window of radius r covers 2r+2 packets: the candidate request/response pair
in the middle plus r packets on each side.  Each packet contributes its wire
size, its direction (+1 request / -1 response) and the inter-arrival gap to
the previous packet in the window, so a radius-4 window yields 30 features.
Windows that would run off a trace edge are padded with zero sentinels so
early transactions stay detectable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .catalog import OverheadModel, ApiSpec, SizeRange, WalletProfile
from .forest import RandomForest
from .traffic import Direction, PacketRecord, PacketTrace

__all__ = [
    "Classifier",
    "DetectorError",
    "FeatureVector",
    "RuleConfig",
    "TrainHyperparams",
    "TrainingSet",
    "build_training_set",
    "detect_tq",
    "extract_features",
    "feature_importance",
    "pair_responses",
    "rule_classify",
    "size_filter",
    "train",
]

SENTINEL = (0.0, 0.0, 0.0)
FORMAT_VERSION = 1
# Request sizes within this many bytes of the target range qualify as
# "similar size" negatives when assembling a training set.
SIMILAR_SIZE_BAND = 32


class DetectorError(ValueError):
    """Invalid detector input."""


@dataclass(frozen=True)
class FeatureVector:
    """(size, direction, inter-arrival) triples for one 2r+2 packet window."""

    entries: tuple[tuple[float, float, float], ...]
    r: int

    def __post_init__(self) -> None:
        if len(self.entries) != 2 * self.r + 2:
            raise DetectorError(
                f"expected {2 * self.r + 2} entries, got {len(self.entries)}"
            )
        for i, (_, _, t) in enumerate(self.entries):
            if t < 0:
                raise DetectorError(f"negative inter-arrival at entry {i}")

    def to_array(self) -> np.ndarray:
        return np.array(self.entries, dtype=float).reshape(-1)

    @property
    def middle_request(self) -> tuple[float, float, float]:
        return self.entries[self.r]

    @property
    def middle_response(self) -> tuple[float, float, float]:
        return self.entries[self.r + 1]


def _direction_code(direction: Direction) -> float:
    return 1.0 if direction is Direction.REQUEST else -1.0


def extract_features(trace: PacketTrace, center: int, r: int) -> FeatureVector:
    """Window of radius r around the pair at positions (center, center+1)."""
    records = trace.records
    if len(records) < 2:
        raise DetectorError("trace shorter than 2 records")
    if center < 0 or center + 1 >= len(records):
        raise DetectorError(f"center {center} out of range")
    entries: list[tuple[float, float, float]] = []
    prev: PacketRecord | None = None
    for pos in range(center - r, center + r + 2):
        if pos < 0 or pos >= len(records):
            entries.append(SENTINEL)
            prev = None
            continue
        rec = records[pos]
        gap = rec.timestamp - prev.timestamp if prev is not None else 0.0
        entries.append((float(rec.size), _direction_code(rec.direction), gap))
        prev = rec
    return FeatureVector(tuple(entries), r)


def pair_responses(trace: PacketTrace) -> dict[int, int]:
    """Map request index -> response index within each flow.

    A response pairs with the nearest preceding unpaired request of the same
    flow; pushed responses with no outstanding request stay unpaired.
    """
    open_requests: dict[str, list[int]] = {}
    pairs: dict[int, int] = {}
    for idx, rec in enumerate(trace.records):
        stack = open_requests.setdefault(rec.flow, [])
        if rec.direction is Direction.REQUEST:
            stack.append(idx)
        elif stack:
            pairs[stack.pop()] = idx
    return pairs


def size_filter(trace: PacketTrace, target: ApiSpec, overhead: OverheadModel) -> list[int]:
    """Request indices whose sizes and paired-response sizes fit the target API."""
    req_range = target.practical_request.shift(overhead.total)
    resp_range = target.practical_response.shift(overhead.total)
    pairs = pair_responses(trace)
    candidates = []
    for idx, rec in enumerate(trace.records):
        if rec.direction is not Direction.REQUEST:
            continue
        if not req_range.contains(rec.size):
            continue
        resp_idx = pairs.get(idx)
        if resp_idx is None:
            continue
        if resp_range.contains(trace.records[resp_idx].size):
            candidates.append(idx)
    return candidates


@dataclass(frozen=True)
class RuleConfig:
    """Wire-size ranges for the relative-order identification rules."""

    target_request: SizeRange
    target_response: SizeRange
    preceding_request: SizeRange
    preceding_response: SizeRange
    following_request: SizeRange
    following_response: SizeRange

    @classmethod
    def from_profile(cls, profile: WalletProfile) -> "RuleConfig":
        seq = profile.call_sequence
        target = profile.target_api
        if seq.poll_api is not None:
            preceding_req = profile.wire_request_range(profile.api(seq.poll_api))
            preceding_resp = profile.wire_response_range(profile.api(seq.poll_api))
        else:
            # Push wallets: the packet ahead of the query is the notification.
            push = (profile.notification_json or SizeRange(150, 220)).shift(profile.overhead.total)
            preceding_req, preceding_resp = push, push
        if not seq.post_query:
            raise DetectorError(f"{profile.name}: no following API for rules")
        following = profile.api(seq.post_query[0])
        return cls(
            target_request=profile.wire_request_range(target),
            target_response=profile.wire_response_range(target),
            preceding_request=preceding_req,
            preceding_response=preceding_resp,
            following_request=profile.wire_request_range(following),
            following_response=profile.wire_response_range(following),
        )


def _ordered_pair_in(sizes: Sequence[float], first: SizeRange, second: SizeRange) -> bool:
    for a in range(len(sizes)):
        if sizes[a] > 0 and first.contains(int(sizes[a])):
            for b in range(a + 1, len(sizes)):
                if sizes[b] > 0 and second.contains(int(sizes[b])):
                    return True
    return False


def rule_classify(trace: PacketTrace, center: int, r: int, rules: RuleConfig) -> bool:
    """Relative-order size rules over the window around (center, center+1).

    The middle pair must fit the target ranges; for r > 0 the window must also
    contain a preceding-API request/response pair before the middle and a
    following-API pair after it, in order.  With r = 0 there are no
    surrounding packets, so only the middle-pair check applies.
    """
    vector = extract_features(trace, center, r)
    sizes = [entry[0] for entry in vector.entries]
    mid_req, mid_resp = sizes[r], sizes[r + 1]
    if not (rules.target_request.contains(int(mid_req))
            and rules.target_response.contains(int(mid_resp))):
        return False
    if r == 0:
        return True
    before = sizes[:r]
    after = sizes[r + 2:]
    return (_ordered_pair_in(before, rules.preceding_request, rules.preceding_response)
            and _ordered_pair_in(after, rules.following_request, rules.following_response))


@dataclass(frozen=True)
class TrainingSet:
    """Labeled windows: target centers, overlap-API centers, similar-size centers."""

    positives: tuple[FeatureVector, ...]
    noise_negatives: tuple[FeatureVector, ...]
    random_negatives: tuple[FeatureVector, ...]
    positive_keys: tuple[tuple[int, int], ...] = ()
    noise_keys: tuple[tuple[int, int], ...] = ()
    random_keys: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        groups = (self.positives, self.noise_negatives, self.random_negatives)
        radii = {v.r for group in groups for v in group}
        if len(radii) > 1:
            raise DetectorError(f"mixed radii in training set: {sorted(radii)}")
        key_groups = [set(self.positive_keys), set(self.noise_keys), set(self.random_keys)]
        if any(key_groups[i] & key_groups[j] for i in range(3) for j in range(i + 1, 3)):
            raise DetectorError("training groups share center indices")

    @property
    def r(self) -> int:
        for group in (self.positives, self.noise_negatives, self.random_negatives):
            for v in group:
                return v.r
        raise DetectorError("empty training set")

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        vectors = [*self.positives, *self.noise_negatives, *self.random_negatives]
        X = np.stack([v.to_array() for v in vectors])
        y = np.concatenate([
            np.ones(len(self.positives), dtype=np.int64),
            np.zeros(len(self.noise_negatives) + len(self.random_negatives), dtype=np.int64),
        ])
        return X, y


def build_training_set(
    traces: Sequence[PacketTrace],
    profile: WalletProfile,
    r: int,
    n_per_class: int,
    seed: int = 0,
    similar_band: int = SIMILAR_SIZE_BAND,
) -> TrainingSet:
    """Assemble balanced training windows from labeled RPC traces.

    Positives center on confirmed status-query pairs.  Noise negatives center
    on calls to the overlap-prone APIs.  Random negatives are other request
    windows whose request size falls within similar_band bytes of the target
    request range (nil status queries land here).
    """
    target = profile.target_api
    noise_names = {api.name for api in profile.noise_apis}
    req_range = profile.wire_request_range(target)
    band = SizeRange(max(0, req_range.min - similar_band),
                     None if req_range.max is None else req_range.max + similar_band)

    pos_pool: list[tuple[int, int]] = []
    noise_pool: list[tuple[int, int]] = []
    rand_pool: list[tuple[int, int]] = []
    for t_idx, trace in enumerate(traces):
        records = trace.records
        for idx in range(len(records) - 1):
            rec = records[idx]
            if rec.direction is not Direction.REQUEST:
                continue
            nxt = records[idx + 1]
            if nxt.direction is Direction.RESPONSE and nxt.is_target_response:
                pos_pool.append((t_idx, idx))
            elif rec.api in noise_names:
                noise_pool.append((t_idx, idx))
            elif band.contains(rec.size):
                rand_pool.append((t_idx, idx))

    rng = np.random.default_rng(seed)

    def pick(pool: list[tuple[int, int]], want: int, kind: str) -> list[tuple[int, int]]:
        if len(pool) < want:
            raise DetectorError(f"only {len(pool)} {kind} windows available, need {want}")
        chosen = rng.permutation(len(pool))[:want]
        return [pool[i] for i in sorted(chosen)]

    pos_keys = pick(pos_pool, n_per_class, "positive")
    noise_keys = pick(noise_pool, n_per_class, "noise")
    rand_keys = pick(rand_pool, n_per_class, "similar-size")

    def vectors(keys: list[tuple[int, int]]) -> tuple[FeatureVector, ...]:
        return tuple(extract_features(traces[t], c, r) for t, c in keys)

    return TrainingSet(
        positives=vectors(pos_keys),
        noise_negatives=vectors(noise_keys),
        random_negatives=vectors(rand_keys),
        positive_keys=tuple(pos_keys),
        noise_keys=tuple(noise_keys),
        random_keys=tuple(rand_keys),
    )


@dataclass(frozen=True)
class TrainHyperparams:
    n_trees: int = 100
    max_depth: int = 12
    feature_fraction: str | float = "sqrt"
    holdout_fraction: float = 0.3
    seed: int = 0


@dataclass
class Classifier:
    """Fitted window classifier; predictions require vectors of matching r."""

    forest: RandomForest
    r: int
    seed: int
    holdout_accuracy: float
    holdout_precision: float
    holdout_recall: float

    def predict(self, vectors: Sequence[FeatureVector]) -> np.ndarray:
        for v in vectors:
            if v.r != self.r:
                raise DetectorError(f"vector radius {v.r} does not match model r={self.r}")
        if not vectors:
            return np.zeros(0, dtype=np.int64)
        return self.forest.predict(np.stack([v.to_array() for v in vectors]))

    def to_json(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "r": self.r,
            "seed": self.seed,
            "holdout_accuracy": self.holdout_accuracy,
            "holdout_precision": self.holdout_precision,
            "holdout_recall": self.holdout_recall,
            "forest": self.forest.to_json(),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "Classifier":
        if payload.get("version") != FORMAT_VERSION:
            raise DetectorError(f"unsupported classifier format {payload.get('version')}")
        return cls(
            forest=RandomForest.from_json(payload["forest"]),
            r=int(payload["r"]),
            seed=int(payload["seed"]),
            holdout_accuracy=float(payload["holdout_accuracy"]),
            holdout_precision=float(payload["holdout_precision"]),
            holdout_recall=float(payload["holdout_recall"]),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Classifier":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _stratified_split(y: np.ndarray, holdout_fraction: float, rng: np.random.Generator):
    train_idx, test_idx = [], []
    for cls in np.unique(y):
        members = np.nonzero(y == cls)[0]
        members = members[rng.permutation(len(members))]
        cut = int(round(len(members) * holdout_fraction))
        test_idx.extend(members[:cut])
        train_idx.extend(members[cut:])
    return np.sort(np.array(train_idx)), np.sort(np.array(test_idx))


def train(dataset: TrainingSet, hyperparams: TrainHyperparams = TrainHyperparams()) -> Classifier:
    """Fit the tree ensemble on a stratified split and report held-out quality."""
    X, y = dataset.matrices()
    rng = np.random.default_rng(hyperparams.seed)
    train_idx, test_idx = _stratified_split(y, hyperparams.holdout_fraction, rng)
    forest = RandomForest(
        n_trees=hyperparams.n_trees,
        max_depth=hyperparams.max_depth,
        feature_fraction=hyperparams.feature_fraction,
        seed=hyperparams.seed,
    ).fit(X[train_idx], y[train_idx])

    pred = forest.predict(X[test_idx])
    truth = y[test_idx]
    accuracy = float(np.mean(pred == truth))
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return Classifier(forest, dataset.r, hyperparams.seed, accuracy, precision, recall)


def detect_tq(
    trace: PacketTrace,
    classifier: Classifier,
    target: ApiSpec,
    overhead: OverheadModel,
    dedup_window: float = 0.0,
) -> list[float]:
    """Recovered query timestamps: size-filtered candidates the model accepts.

    Emits the middle response's timestamp for each positive window, sorted
    ascending; positives closer than dedup_window collapse to the earliest
    (one query per transaction per poll cycle).
    """
    candidates = [c for c in size_filter(trace, target, overhead)
                  if c + 1 < len(trace.records)]
    if not candidates:
        return []
    vectors = [extract_features(trace, c, classifier.r) for c in candidates]
    keep = classifier.predict(vectors)
    stamps = sorted(trace.records[c + 1].timestamp
                    for c, flag in zip(candidates, keep) if flag)
    if dedup_window <= 0.0 or not stamps:
        return stamps
    deduped = [stamps[0]]
    for ts in stamps[1:]:
        if ts - deduped[-1] >= dedup_window:
            deduped.append(ts)
    return deduped


def feature_importance(
    classifier: Classifier, dataset: TrainingSet, seed: int = 0
) -> np.ndarray:
    """Permutation importance: accuracy drop when one feature is shuffled."""
    X, y = dataset.matrices()
    base = classifier.forest.score(X, y)
    scores = np.zeros(X.shape[1])
    for f in range(X.shape[1]):
        rng = np.random.default_rng([seed, f])
        shuffled = X.copy()
        shuffled[:, f] = shuffled[rng.permutation(len(X)), f]
        scores[f] = base - classifier.forest.score(shuffled, y)
    return np.maximum(scores, 0.0)


def feature_names(r: int) -> list[str]:
    names = []
    for i in range(1, 2 * r + 3):
        names.extend([f"l_{i}", f"d_{i}", f"t_{i}"])
    return names
