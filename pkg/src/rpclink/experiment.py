"""Experiment orchestration: scenarios, Monte-Carlo attack trials, reports.

A scenario fixes a ledger (synthesized or ingested), a wallet profile, victim
behavior and attack parameters.  Each trial picks a victim pseudonym from the
ledger, replays m of its recorded transactions, recovers query timestamps
(either through the real traffic pipeline or an alpha-override shortcut that
bypasses the detector), builds the per-round candidate windows, intersects
and identifies.  The report pairs the empirical rates with the closed-form
expectations computed from the same measured distributions.

Everything is seeded: trial i derives its generator from (seed, i), so runs
are reproducible bit-for-bit and trials could be farmed out to workers
without changing results.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import analytics
from .analytics import DistributionSet, ExpectedSuccess
from .attack import (
    AttackOutcome,
    CandidateSet,
    OutcomeVariant,
    candidate_set,
    estimate_k,
    identify,
    intersect,
    outcome_to_json,
)
from .catalog import WalletProfile, get_profile
from .detector import (
    Classifier,
    TrainHyperparams,
    build_training_set,
    detect_tq,
    train,
)
from .ledger import (
    ActivityModel,
    ActivityStats,
    Ledger,
    LedgerConfig,
    dump_ledger,
    load_ledger,
    measure_activity,
    synth_ledger,
    transacting_threshold,
)
from .traffic import (
    JitterModel,
    NoiseModel,
    PacketTrace,
    SessionPlan,
    TxEvent,
    filter_rpc_flows,
    synth_session,
    write_trace,
)

__all__ = [
    "ExperimentReport",
    "Scenario",
    "ScenarioError",
    "TrialResult",
    "build_resources",
    "draw_query_delay",
    "run_experiment",
    "run_trial",
    "scenario_from_toml",
    "synth_training_corpus",
]


class ScenarioError(ValueError):
    """Invalid scenario configuration."""


@dataclass(frozen=True)
class LedgerSpec:
    source: str = "synth"  # "synth" or "dump"
    num_users: int = 20_000
    rate: float = 12.68
    block_time: float = 12.0
    duration: float = 43_200.0
    activity: str = "zipf"
    zipf_exponent: float = 1.1
    dump_path: str | None = None
    seed_offset: int = 17


@dataclass(frozen=True)
class DetectorSpec:
    r: int = 4
    n_trees: int = 100
    max_depth: int = 12
    n_per_class: int = 2000
    corpus_sessions: int = 100
    corpus_txs: int = 20
    burst_fraction: float = 0.1


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    seed: int = 0
    trials: int = 100
    rounds: int = 3
    wallet: str = "MetaMask"
    detection: str = "alpha"  # "alpha" or "detector"
    alpha: float = 0.99
    # How a failed alpha-round is realized: a wrong-window detection keeps the
    # per-round candidate set but almost surely without the target (the
    # behavior the alpha^m term models); "skip" drops the round instead.
    failure_mode: str = "wrong_window"
    victim_class: str = "normal"
    k: int | None = None
    window_k: int | None = None
    threshold_q: float = 0.01
    analytic_samples: int = 200_000
    heatmap: bool = False
    ledger: LedgerSpec = field(default_factory=LedgerSpec)
    detector: DetectorSpec = field(default_factory=DetectorSpec)
    jitter: JitterModel = field(default_factory=JitterModel)
    noise: NoiseModel | None = None

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ScenarioError("trials must be at least 1")
        if self.rounds < 1:
            raise ScenarioError("rounds must be at least 1")
        if self.detection not in ("alpha", "detector"):
            raise ScenarioError(f"unknown detection mode {self.detection!r}")
        if self.failure_mode not in ("wrong_window", "skip"):
            raise ScenarioError(f"unknown failure mode {self.failure_mode!r}")
        if self.victim_class not in ("normal", "active"):
            raise ScenarioError(f"unknown victim class {self.victim_class!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ScenarioError("alpha must be a probability")
        if not 0.0 < self.threshold_q < 1.0:
            raise ScenarioError("threshold_q must lie in (0, 1)")

    def to_json(self) -> dict:
        payload = dataclasses.asdict(self)
        return payload


def _load_toml(path) -> dict:
    try:
        import tomllib  # Python >= 3.11
    except ModuleNotFoundError:  # pragma: no cover - version-dependent
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _schema() -> dict:
    from importlib.resources import files

    with files("rpclink.data").joinpath("scenario.schema.json").open("rb") as fh:
        return json.load(fh)


def scenario_from_toml(path) -> Scenario:
    """Parse and validate a scenario config file."""
    import jsonschema

    payload = _load_toml(path)
    try:
        jsonschema.validate(payload, _schema())
    except jsonschema.ValidationError as exc:
        raise ScenarioError(f"invalid scenario config: {exc.message}") from exc
    return scenario_from_dict(payload)


def scenario_from_dict(payload: Mapping) -> Scenario:
    top = dict(payload.get("scenario", {}))
    ledger = LedgerSpec(**payload.get("ledger", {}))
    detector = DetectorSpec(**payload.get("detector", {}))
    jitter = JitterModel(**payload.get("jitter", {})) if "jitter" in payload else JitterModel()
    noise = None
    if "noise" in payload:
        raw = dict(payload["noise"])
        if "size_range" in raw:
            raw["size_range"] = tuple(raw["size_range"])
        noise = NoiseModel(**raw)
    try:
        return Scenario(ledger=ledger, detector=detector, jitter=jitter,
                        noise=noise, **top)
    except TypeError as exc:
        raise ScenarioError(f"invalid scenario config: {exc}") from exc


@dataclass
class Resources:
    """Per-experiment artifacts shared by all trials."""

    profile: WalletProfile
    ledger: Ledger
    stats: ActivityStats
    k: int
    theta_lambda: float
    theta_p: float
    dists: DistributionSet
    tx_index: dict[str, list[int]]  # pseudonym -> block heights of its txs
    eligible: list[str]
    classifier: Classifier | None = None
    trace_dir: Path | None = None  # set to persist detector-mode trial traces


def draw_query_delay(profile: WalletProfile, jitter: JitterModel,
                     rng: np.random.Generator) -> float:
    """Confirmation-to-query delay under the session timing model."""
    j = jitter.draw
    if profile.query_method == "periodic":
        return float(rng.uniform(0.0, profile.query_cycle)) + profile.rtt + j(rng) + j(rng)
    return 1.5 * profile.rtt + j(rng) + j(rng) + j(rng)


def _build_ledger(scenario: Scenario) -> Ledger:
    spec = scenario.ledger
    if spec.source == "dump":
        if not spec.dump_path:
            raise ScenarioError("dump source requires dump_path")
        return load_ledger(spec.dump_path)
    if spec.activity == "zipf":
        activity = ActivityModel.zipf(spec.zipf_exponent)
    elif spec.activity == "uniform":
        activity = ActivityModel.uniform()
    else:
        raise ScenarioError(f"unknown activity model {spec.activity!r}")
    config = LedgerConfig(
        num_users=spec.num_users,
        rate=spec.rate,
        block_time=spec.block_time,
        duration=spec.duration,
        activity=activity,
        seed=scenario.seed + spec.seed_offset,
    )
    return synth_ledger(config)


def synth_training_corpus(
    profile: WalletProfile,
    sessions: int,
    txs_per_session: int,
    seed: int,
    jitter: JitterModel = JitterModel(),
    noise: NoiseModel | None = None,
    burst_fraction: float = 0.1,
) -> list[PacketTrace]:
    """Labeled RPC-filtered session traces for detector training.

    Confirmation times sit on a block grid; most transactions are spaced
    several poll cycles apart, with a burst_fraction of them confirming one or
    two blocks after their predecessor so overlapping query sequences appear
    in the corpus.
    """
    rng = np.random.default_rng(seed)
    z = profile.block_time
    cycle = profile.query_cycle or 30.0
    spacing = max(4.0 * cycle, 6.0 * z)
    # Confirmation lag spans a couple of blocks, and on fast chains at least
    # one poll cycle, so pending-phase (nil) query windows appear.
    max_delay = max(2.0 * z, 1.2 * cycle) if profile.query_method == "periodic" else 2.0 * z
    traces = []
    for s in range(sessions):
        t_c = 10.0 * z
        events = []
        for _ in range(txs_per_session):
            if events and rng.random() < burst_fraction:
                t_c += z * int(rng.integers(1, 3))
            else:
                t_c += spacing * float(rng.uniform(1.0, 1.8))
                t_c = float(np.ceil(t_c / z) * z)
            t_s = t_c - float(rng.uniform(0.5 * z, max_delay))
            events.append(TxEvent(t_s, float(t_c)))
        plan = SessionPlan(profile, tuple(events), jitter=jitter, noise=noise)
        trace = synth_session(plan, rng_seed=int(rng.integers(0, 2**31)))
        traces.append(filter_rpc_flows(trace))
    return traces


def build_resources(scenario: Scenario) -> Resources:
    profile = get_profile(scenario.wallet)
    ledger = _build_ledger(scenario)
    k = scenario.k if scenario.k else estimate_k(profile).k
    window_k = scenario.window_k if scenario.window_k else k
    stats = measure_activity(ledger, window_k)
    theta_lambda = transacting_threshold(k, ledger.block_time, scenario.threshold_q)
    theta_p = theta_lambda / stats.lambda_total
    dists = DistributionSet.from_activity(stats)

    tx_index: dict[str, list[int]] = {}
    for block in ledger.blocks:
        for tx in block.transactions:
            tx_index.setdefault(tx.initiator, []).append(block.height)

    # Victims need m usable transactions away from the ledger edges.
    guard = (profile.query_cycle or 0.0) + profile.rtt + 2.0 * scenario.jitter.max + 2.0
    last_ok = ledger.blocks[-1].timestamp - guard
    first_ok = ledger.blocks[k - 1].timestamp if k <= len(ledger.blocks) else float("inf")
    want_active = scenario.victim_class == "active"
    eligible = []
    for user in ledger.users:
        rate = stats.lambda_i.get(user, 0.0)
        if (rate >= theta_lambda) != want_active:
            continue
        heights = tx_index.get(user, ())
        usable = [h for h in heights
                  if first_ok <= ledger.blocks[h].timestamp <= last_ok]
        if len(usable) >= scenario.rounds:
            eligible.append(user)
    if not eligible:
        raise ScenarioError(
            f"no {scenario.victim_class} pseudonym has {scenario.rounds} usable transactions"
        )

    classifier = None
    if scenario.detection == "detector":
        det = scenario.detector
        corpus = synth_training_corpus(
            profile, det.corpus_sessions, det.corpus_txs,
            seed=scenario.seed + 101, jitter=scenario.jitter,
            burst_fraction=det.burst_fraction,
        )
        dataset = build_training_set(corpus, profile, det.r, det.n_per_class,
                                     seed=scenario.seed + 202)
        classifier = train(dataset, TrainHyperparams(
            n_trees=det.n_trees, max_depth=det.max_depth, seed=scenario.seed + 303,
        ))

    return Resources(
        profile=profile, ledger=ledger, stats=stats, k=k,
        theta_lambda=theta_lambda, theta_p=theta_p, dists=dists,
        tx_index=tx_index, eligible=eligible, classifier=classifier,
    )


@dataclass(frozen=True)
class TrialResult:
    trial: int
    target: str
    outcome: AttackOutcome
    rounds_meta: tuple[CandidateSet, ...]
    detected: tuple[bool, ...]
    s_m: frozenset[str]
    success: bool
    fp_filtered: bool
    fp_unfiltered: bool
    unfiltered_success: bool

    def to_json(self) -> dict:
        payload = outcome_to_json(self.outcome, self.rounds_meta)
        payload.update({
            "trial": self.trial,
            "target": self.target,
            "detected": list(self.detected),
            "success": self.success,
            "fp_filtered": self.fp_filtered,
            "fp_unfiltered": self.fp_unfiltered,
            "unfiltered_success": self.unfiltered_success,
        })
        return payload


def _pick_target_txs(resources: Resources, scenario: Scenario,
                     rng: np.random.Generator) -> tuple[str, list[float]]:
    target = resources.eligible[int(rng.integers(0, len(resources.eligible)))]
    ledger = resources.ledger
    k, jmax = resources.k, scenario.jitter.max
    guard = (resources.profile.query_cycle or 0.0) + resources.profile.rtt + 2.0 * jmax + 2.0
    last_ok = ledger.blocks[-1].timestamp - guard
    first_ok = ledger.blocks[k - 1].timestamp
    usable = [h for h in resources.tx_index[target]
              if first_ok <= ledger.blocks[h].timestamp <= last_ok]
    chosen = rng.choice(len(usable), size=scenario.rounds, replace=False)
    heights = sorted(usable[i] for i in chosen)
    return target, [ledger.blocks[h].timestamp for h in heights]


def _alpha_round_timestamps(resources: Resources, scenario: Scenario,
                            confirms: Sequence[float],
                            rng: np.random.Generator) -> tuple[list[float], list[bool]]:
    """Query timestamps under the alpha-override detection shortcut."""
    ledger = resources.ledger
    k = resources.k
    lo = ledger.blocks[k - 1].timestamp
    hi = ledger.blocks[-1].timestamp
    stamps: list[float] = []
    flags: list[bool] = []
    for t_c in confirms:
        ok = bool(rng.random() < scenario.alpha)
        flags.append(ok)
        if ok:
            stamps.append(t_c + draw_query_delay(resources.profile, scenario.jitter, rng))
        elif scenario.failure_mode == "wrong_window":
            stamps.append(float(rng.uniform(lo, hi)))
        # "skip": no candidate set for this round
    return stamps, flags


def _detector_round_timestamps(resources: Resources, scenario: Scenario,
                               target: str, confirms: Sequence[float],
                               rng: np.random.Generator,
                               trial_index: int) -> tuple[list[float], list[bool]]:
    """Query timestamps recovered by the full traffic pipeline."""
    profile = resources.profile
    z = profile.block_time
    events = tuple(
        TxEvent(t_c - float(rng.uniform(0.5 * z, 2.0 * z)), t_c, target)
        for t_c in confirms
    )
    plan = SessionPlan(
        profile, events, jitter=scenario.jitter, noise=scenario.noise,
        block_times=tuple(b.timestamp for b in resources.ledger.blocks),
    )
    raw = synth_session(plan, rng_seed=int(rng.integers(0, 2**31)))
    if resources.trace_dir is not None:
        write_trace(raw, resources.trace_dir / f"trace_{trial_index:04d}.csv")
    trace = filter_rpc_flows(raw)
    dedup = profile.query_cycle or 4.0 * profile.rtt
    stamps = detect_tq(trace, resources.classifier, profile.target_api,
                       profile.overhead, dedup_window=dedup)
    flags = [any(t_c < ts <= t_c + (profile.query_cycle or 10.0) + 2.0 for ts in stamps)
             for t_c in confirms]
    return stamps, flags


def run_trial(scenario: Scenario, resources: Resources, trial_index: int) -> TrialResult:
    """One end-to-end attack: victim, rounds, intersection, identification."""
    rng = np.random.default_rng([scenario.seed, trial_index])
    target, confirms = _pick_target_txs(resources, scenario, rng)

    if scenario.detection == "alpha":
        stamps, flags = _alpha_round_timestamps(resources, scenario, confirms, rng)
    else:
        stamps, flags = _detector_round_timestamps(resources, scenario, target,
                                                   confirms, rng, trial_index)
        # a stray detection near the session edges may predate the k-th block
        ledger = resources.ledger
        lo = ledger.blocks[resources.k - 1].timestamp
        hi = ledger.blocks[-1].timestamp + ledger.block_time
        stamps = [t_q for t_q in stamps if lo <= t_q <= hi]

    rounds = tuple(
        candidate_set(resources.ledger, t_q, resources.k, round_index=i + 1)
        for i, t_q in enumerate(stamps)
    )
    s_m = intersect(rounds) if rounds else frozenset()
    outcome = identify(s_m, resources.stats, resources.theta_lambda,
                       rounds=len(rounds))
    if not rounds:
        outcome = AttackOutcome(OutcomeVariant.AMBIGUOUS_NORMAL, frozenset(), 0,
                                code="no_detections")

    success = outcome.variant is OutcomeVariant.UNIQUE and outcome.pseudonym == target
    non_target_filtered = {u for u in outcome.candidates if u != target} \
        if outcome.variant in (OutcomeVariant.UNIQUE, OutcomeVariant.AMBIGUOUS_NORMAL) \
        else set()
    return TrialResult(
        trial=trial_index,
        target=target,
        outcome=outcome,
        rounds_meta=rounds,
        detected=tuple(flags),
        s_m=s_m,
        success=success,
        fp_filtered=bool(non_target_filtered),
        fp_unfiltered=bool(s_m - {target}),
        unfiltered_success=s_m == frozenset({target}),
    )


@dataclass
class ExperimentReport:
    scenario: Scenario
    trials: list[TrialResult]
    expected: ExpectedSuccess
    expected_unfiltered: ExpectedSuccess
    k: int
    theta_lambda: float
    theta_p: float
    detector_metrics: dict | None = None

    @property
    def success_rate(self) -> float:
        return sum(t.success for t in self.trials) / len(self.trials)

    @property
    def unfiltered_success_rate(self) -> float:
        return sum(t.unfiltered_success for t in self.trials) / len(self.trials)

    @property
    def fp_rate_filtered(self) -> float:
        return sum(t.fp_filtered for t in self.trials) / len(self.trials)

    @property
    def fp_rate_unfiltered(self) -> float:
        return sum(t.fp_unfiltered for t in self.trials) / len(self.trials)

    def mean_cardinalities(self) -> list[float]:
        by_round: dict[int, list[int]] = {}
        for t in self.trials:
            for cs in t.rounds_meta:
                by_round.setdefault(cs.round, []).append(len(cs.pseudonyms))
        return [float(np.mean(by_round[r])) for r in sorted(by_round)]

    def outcome_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for t in self.trials:
            key = t.outcome.variant.value
            counts[key] = counts.get(key, 0) + 1
        return counts

    def to_json(self) -> dict:
        return {
            "config": self.scenario.to_json(),
            "attack": {
                "k": self.k,
                "theta_lambda": self.theta_lambda,
                "theta_p": self.theta_p,
            },
            "aggregate": {
                "trials": len(self.trials),
                "success_rate": self.success_rate,
                "unfiltered_success_rate": self.unfiltered_success_rate,
                "fp_rate_filtered": self.fp_rate_filtered,
                "fp_rate_unfiltered": self.fp_rate_unfiltered,
                "mean_candidates_per_round": self.mean_cardinalities(),
                "outcome_counts": self.outcome_counts(),
                "detector": self.detector_metrics,
            },
            "analytics": {
                "filtered": dataclasses.asdict(self.expected),
                "unfiltered": dataclasses.asdict(self.expected_unfiltered),
            },
            "trials": [t.to_json() for t in self.trials],
        }

    def payload_bytes(self) -> bytes:
        """Canonical serialization used for reproducibility comparisons."""
        return json.dumps(self.to_json(), sort_keys=True,
                          separators=(",", ":")).encode()


def run_experiment(scenario: Scenario, outdir=None,
                   config_path=None, resources: Resources | None = None) -> ExperimentReport:
    """Run all trials, attach the analytic counterpart, optionally write files."""
    if resources is None:
        resources = build_resources(scenario)
    if outdir is not None and scenario.detection == "detector":
        resources.trace_dir = Path(outdir)
        resources.trace_dir.mkdir(parents=True, exist_ok=True)
    trials = [run_trial(scenario, resources, i) for i in range(scenario.trials)]

    alpha = scenario.alpha
    detector_metrics = None
    if resources.classifier is not None:
        detector_metrics = {
            "holdout_accuracy": resources.classifier.holdout_accuracy,
            "holdout_precision": resources.classifier.holdout_precision,
            "holdout_recall": resources.classifier.holdout_recall,
            "r": resources.classifier.r,
            "mean_detection_recall": float(np.mean([
                np.mean(t.detected) for t in trials
            ])),
        }
        alpha = resources.classifier.holdout_accuracy

    expected = analytics.expected_success(
        resources.dists, alpha, scenario.rounds, theta_p=resources.theta_p,
        samples=scenario.analytic_samples, seed=scenario.seed + 7,
    )
    expected_unfiltered = analytics.expected_success(
        resources.dists, alpha, scenario.rounds, theta_p=None,
        samples=scenario.analytic_samples, seed=scenario.seed + 7,
    )
    report = ExperimentReport(
        scenario=scenario, trials=trials,
        expected=expected, expected_unfiltered=expected_unfiltered,
        k=resources.k, theta_lambda=resources.theta_lambda,
        theta_p=resources.theta_p, detector_metrics=detector_metrics,
    )

    if outdir is not None:
        _write_run_dir(report, resources, Path(outdir), config_path)
    return report


def _write_run_dir(report: ExperimentReport, resources: Resources,
                   outdir: Path, config_path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    if config_path is not None:
        shutil.copyfile(config_path, outdir / "config.toml")
    else:
        with open(outdir / "config.json", "w", encoding="utf-8") as fh:
            json.dump(report.scenario.to_json(), fh, sort_keys=True, indent=2)

    dump_ledger(resources.ledger, outdir / "ledger.jsonl")
    if resources.classifier is not None:
        resources.classifier.save(outdir / "classifier.json")
    with open(outdir / "report.json", "wb") as fh:
        fh.write(report.payload_bytes())

    with open(outdir / "report.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "target", "variant", "code", "success",
                         "fp_filtered", "fp_unfiltered", "rounds_run",
                         "cardinalities"])
        for t in report.trials:
            writer.writerow([
                t.trial, t.target, t.outcome.variant.value, t.outcome.code,
                int(t.success), int(t.fp_filtered), int(t.fp_unfiltered),
                len(t.rounds_meta),
                ";".join(str(len(cs.pseudonyms)) for cs in t.rounds_meta),
            ])

    if report.scenario.heatmap:
        rows = analytics.heatmap_grid(
            resources.dists,
            alphas=[0.90, 0.95, 0.99, 1.0],
            ms=[1, 2, 3, 4],
            theta_p=resources.theta_p,
            samples=min(report.scenario.analytic_samples, 100_000),
            seed=report.scenario.seed + 11,
        )
        analytics.write_model_report(rows, outdir / "heatmap.csv")
