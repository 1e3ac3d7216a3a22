"""Command-line front end.

Subcommands cover the pipeline stages: ledger synthesis and ingestion,
activity measurement, wallet profile listing, traffic synthesis, detector
training, timestamp detection, the intersection attack, the closed-form
model, and full experiments.  Failures exit nonzero with a machine-readable
JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analytics, detector, experiment, traffic
from .attack import candidate_set, estimate_k, identify, intersect, outcome_to_json
from .catalog import builtin_profiles, get_profile
from .detector import TrainHyperparams, build_training_set, rule_classify, train
from .ledger import (
    ActivityModel,
    ActivityStats,
    LedgerConfig,
    dump_ledger,
    load_ledger,
    measure_activity,
    synth_ledger,
    transacting_threshold,
)


def _cmd_synth_ledger(args) -> int:
    activity = (ActivityModel.zipf(args.zipf_exponent) if args.activity == "zipf"
                else ActivityModel.uniform())
    config = LedgerConfig(
        num_users=args.users, rate=args.rate, block_time=args.block_time,
        duration=args.duration, activity=activity, seed=args.seed,
    )
    led = synth_ledger(config)
    dump_ledger(led, args.out)
    print(json.dumps({
        "blocks": led.num_blocks,
        "transactions": led.total_transactions,
        "users": len(led.users),
        "out": str(args.out),
    }))
    return 0


def _cmd_ingest(args) -> int:
    led = load_ledger(args.input)
    if args.out:
        dump_ledger(led, args.out)
    print(json.dumps({
        "blocks": led.num_blocks,
        "transactions": led.total_transactions,
        "users": len(led.users),
        "block_time": led.block_time,
    }))
    return 0


def _cmd_measure(args) -> int:
    led = load_ledger(args.ledger)
    stats = measure_activity(led, args.k)
    stats.save(args.out)
    print(json.dumps({
        "lambda_total": stats.lambda_total,
        "users": len(stats.p),
        "window_k": stats.window_k,
        "out": str(args.out),
    }))
    return 0


def _cmd_profiles(args) -> int:
    rows = []
    for profile in builtin_profiles():
        est = estimate_k(profile)
        rows.append({
            "name": profile.name,
            "blockchain": profile.blockchain,
            "block_time": profile.block_time,
            "method": profile.query_method,
            "cycle": profile.query_cycle,
            "theoretical_k": est.theoretical_k,
            "k": est.k,
        })
    print(json.dumps(rows, indent=2))
    return 0


def _cmd_synth_traffic(args) -> int:
    profile = get_profile(args.wallet)
    rng = np.random.default_rng(args.seed)
    z = profile.block_time
    cycle = profile.query_cycle or 30.0
    spacing = max(4.0 * cycle, 6.0 * z)
    t_c, events = 10.0 * z, []
    for _ in range(args.txs):
        t_c += spacing * float(rng.uniform(1.0, 1.8))
        t_c = float(np.ceil(t_c / z) * z)
        events.append(traffic.TxEvent(t_c - float(rng.uniform(0.5 * z, 2.0 * z)), t_c))
    plan = traffic.SessionPlan(
        profile, tuple(events),
        noise=traffic.NoiseModel(flows=args.noise_flows) if args.noise_flows else None,
    )
    trace = traffic.synth_session(plan, rng_seed=args.seed)
    traffic.write_trace(trace, args.out)
    print(json.dumps({
        "records": len(trace),
        "targets": len(trace.target_timestamps()),
        "out": str(args.out),
    }))
    return 0


def _cmd_train(args) -> int:
    profile = get_profile(args.wallet)
    corpus = experiment.synth_training_corpus(
        profile, args.sessions, args.txs, seed=args.seed,
    )
    dataset = build_training_set(corpus, profile, args.r, args.n_per_class,
                                 seed=args.seed + 1)
    model = train(dataset, TrainHyperparams(
        n_trees=args.trees, max_depth=args.depth, seed=args.seed + 2,
    ))
    model.save(args.out)
    summary = {
        "r": model.r,
        "holdout_accuracy": model.holdout_accuracy,
        "holdout_precision": model.holdout_precision,
        "holdout_recall": model.holdout_recall,
        "out": str(args.out),
    }
    if args.report:
        rules = detector.RuleConfig.from_profile(profile)
        X, y = dataset.matrices()
        keys = [*dataset.positive_keys, *dataset.noise_keys, *dataset.random_keys]
        rule_pred = np.array([
            rule_classify(corpus[t], c, args.r, rules) for t, c in keys
        ])
        rule_acc = float(np.mean(rule_pred.astype(int) == y))
        import csv

        with open(args.report, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["r", "algorithm", "accuracy", "precision", "recall"])
            writer.writerow([model.r, "forest", model.holdout_accuracy,
                             model.holdout_precision, model.holdout_recall])
            tp = int(np.sum(rule_pred & (y == 1)))
            fp = int(np.sum(rule_pred & (y == 0)))
            fn = int(np.sum(~rule_pred & (y == 1)))
            writer.writerow([
                model.r, "rules", rule_acc,
                tp / (tp + fp) if tp + fp else 0.0,
                tp / (tp + fn) if tp + fn else 0.0,
            ])
        summary["rule_accuracy"] = rule_acc
    print(json.dumps(summary))
    return 0


def _cmd_detect(args) -> int:
    profile = get_profile(args.wallet)
    trace = traffic.read_trace(args.trace)
    trace = traffic.filter_rpc_flows(trace)
    model = detector.Classifier.load(args.classifier)
    dedup = profile.query_cycle or 4.0 * profile.rtt
    stamps = detector.detect_tq(trace, model, profile.target_api, profile.overhead,
                                dedup_window=dedup)
    payload = {"timestamps": stamps}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
    print(json.dumps(payload))
    return 0


def _cmd_attack(args) -> int:
    led = load_ledger(args.ledger)
    stats = ActivityStats.load(args.stats)
    with open(args.tq, "r", encoding="utf-8") as fh:
        stamps = json.load(fh)["timestamps"]
    theta = transacting_threshold(args.k, led.block_time, args.q)
    rounds = [candidate_set(led, t_q, args.k, round_index=i + 1)
              for i, t_q in enumerate(sorted(stamps))]
    s_m = intersect(rounds)
    outcome = identify(s_m, stats, theta, rounds=len(rounds))
    payload = outcome_to_json(outcome, rounds)
    payload["theta_lambda"] = theta
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)
    print(json.dumps(payload))
    return 0


def _cmd_analytic(args) -> int:
    stats = ActivityStats.load(args.stats)
    dists = analytics.DistributionSet.from_activity(stats)
    theta_p = None
    if args.filter:
        theta = transacting_threshold(args.k, args.block_time, args.q)
        theta_p = theta / stats.lambda_total
    result = analytics.expected_success(
        dists, args.alpha, args.m, theta_p=theta_p,
        samples=args.samples, seed=args.seed,
    )
    print(json.dumps({
        "E_P": result.e_p,
        "E_R": result.e_r,
        "stderr_P": result.stderr_p,
        "stderr_R": result.stderr_r,
        "alpha": args.alpha,
        "m": args.m,
        "filtered": result.filtered,
        "samples": result.samples,
    }))
    return 0


def _cmd_experiment(args) -> int:
    scenario = experiment.scenario_from_toml(args.config)
    report = experiment.run_experiment(scenario, outdir=args.out,
                                       config_path=args.config)
    print(json.dumps({
        "trials": len(report.trials),
        "success_rate": report.success_rate,
        "fp_rate_filtered": report.fp_rate_filtered,
        "fp_rate_unfiltered": report.fp_rate_unfiltered,
        "expected_P": report.expected.e_p,
        "expected_R": report.expected.e_r,
        "out": str(args.out),
    }))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rpclink")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-ledger", help="generate a synthetic ledger dump")
    p.add_argument("--users", type=int, default=1000)
    p.add_argument("--rate", type=float, default=12.68)
    p.add_argument("--block-time", type=float, default=12.0)
    p.add_argument("--duration", type=float, default=3600.0)
    p.add_argument("--activity", choices=["zipf", "uniform"], default="zipf")
    p.add_argument("--zipf-exponent", type=float, default=1.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_synth_ledger)

    p = sub.add_parser("ingest", help="validate an exported ledger dump")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("measure", help="measure activity statistics")
    p.add_argument("--ledger", type=Path, required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_measure)

    p = sub.add_parser("profiles", help="list builtin wallet profiles")
    p.set_defaults(func=_cmd_profiles)

    p = sub.add_parser("synth-traffic", help="synthesize one labeled session trace")
    p.add_argument("--wallet", default="MetaMask")
    p.add_argument("--txs", type=int, default=5)
    p.add_argument("--noise-flows", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_synth_traffic)

    p = sub.add_parser("train", help="train the window classifier")
    p.add_argument("--wallet", default="MetaMask")
    p.add_argument("--r", type=int, default=4)
    p.add_argument("--sessions", type=int, default=40)
    p.add_argument("--txs", type=int, default=10)
    p.add_argument("--n-per-class", type=int, default=300)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--report", type=Path)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("detect", help="recover query timestamps from a trace")
    p.add_argument("--trace", type=Path, required=True)
    p.add_argument("--classifier", type=Path, required=True)
    p.add_argument("--wallet", default="MetaMask")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("attack", help="candidate windows, intersection, identification")
    p.add_argument("--ledger", type=Path, required=True)
    p.add_argument("--stats", type=Path, required=True)
    p.add_argument("--tq", type=Path, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--q", type=float, default=0.01)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("analytic", help="closed-form expected success / false-positive rates")
    p.add_argument("--stats", type=Path, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--filter", action="store_true",
                   help="apply the active-user threshold to the share distribution")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--block-time", type=float, default=12.0)
    p.add_argument("--q", type=float, default=0.01)
    p.add_argument("--samples", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_analytic)

    p = sub.add_parser("experiment", help="run a scenario end to end")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            print(json.dumps({"error": "usage", "detail": "invalid arguments"}),
                  file=sys.stderr)
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - uniform machine-readable failure
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
