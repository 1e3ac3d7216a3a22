"""Ledger synthesis, ingestion and activity measurement."""

import json
import math

import numpy as np
import pytest
from scipy import stats as scistats

from rpclink.ledger import (
    ActivityModel,
    Block,
    Ledger,
    LedgerConfig,
    LedgerError,
    Transaction,
    UserClass,
    active_users,
    classify_user,
    dump_ledger,
    ingest_ledger,
    load_ledger,
    measure_activity,
    synth_ledger,
    transacting_threshold,
)

ETH_CONFIG = LedgerConfig(
    num_users=2000, rate=12.68, block_time=12.0, duration=12.0 * 3000,
    activity=ActivityModel.zipf(1.1), seed=42,
)


def manual_ledger():
    """2 blocks, 4 transactions: 3 by A, 1 by B."""
    blocks = (
        Block(0, 0.0, (Transaction("A", 0.0, 0), Transaction("A", 0.0, 0))),
        Block(1, 10.0, (Transaction("A", 10.0, 1), Transaction("B", 10.0, 1))),
    )
    return Ledger(blocks, 10.0, ("A", "B"))


class TestSynthLedger:
    def test_single_block_structure(self):
        config = LedgerConfig(num_users=2, rate=1.0, block_time=10.0,
                              duration=10.0, activity=ActivityModel.uniform(), seed=3)
        led = synth_ledger(config)
        assert led.num_blocks == 1
        assert led.blocks[0].height == 0
        assert led.blocks[0].timestamp == 0.0
        for tx in led.blocks[0].transactions:
            assert tx.confirm_time == 0.0 and tx.initiator in led.users

    def test_rejects_subblock_duration(self):
        with pytest.raises(LedgerError):
            LedgerConfig(num_users=2, rate=1.0, block_time=10.0, duration=5.0)

    def test_ethereum_window_mean(self):
        # Oracle: enumerate 3-block sliding windows straight off the blocks.
        led = synth_ledger(ETH_CONFIG)
        counts = [len(b.transactions) for b in led.blocks]
        windows = [sum(counts[i:i + 3]) for i in range(len(counts) - 2)]
        mean = np.mean(windows)
        assert abs(mean - 12.68 * 36) / (12.68 * 36) < 0.02

    def test_deterministic_given_seed(self, tmp_path):
        a, b = synth_ledger(ETH_CONFIG), synth_ledger(ETH_CONFIG)
        pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        dump_ledger(a, pa)
        dump_ledger(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_empirical_rate_within_3_se(self):
        led = synth_ledger(ETH_CONFIG)
        lam_hat = led.total_transactions / led.duration
        se = math.sqrt(ETH_CONFIG.rate / led.duration)
        assert abs(lam_hat - ETH_CONFIG.rate) <= 3 * se

    def test_share_invariants(self):
        stats = measure_activity(synth_ledger(ETH_CONFIG), k=3)
        assert abs(sum(stats.p.values()) - 1.0) <= 1e-9
        for user, share in stats.p.items():
            assert stats.lambda_i[user] == pytest.approx(stats.lambda_total * share)

    def test_empirical_weights(self):
        config = LedgerConfig(
            num_users=3, rate=5.0, block_time=5.0, duration=500.0,
            activity=ActivityModel.empirical([0.5, 0.5, 0.0]), seed=9,
        )
        stats = measure_activity(synth_ledger(config), k=1)
        assert stats.p[sorted(stats.p)[2]] == 0.0

    def test_window_counts_poisson_gof(self):
        # Non-overlapping windows (k=1) are iid Poisson(rate * T) draws.
        config = LedgerConfig(num_users=50, rate=2.0, block_time=5.0,
                              duration=5.0 * 10_500, seed=7,
                              activity=ActivityModel.uniform())
        stats = measure_activity(synth_ledger(config), k=1)
        n_windows = 10_500
        values = sorted(stats.pdf_x)
        observed = np.array([stats.pdf_x[v] * n_windows for v in values])
        expected = np.array([scistats.poisson.pmf(v, 10.0) * n_windows for v in values])
        # Pool tails so expected bin counts stay above 5.
        lo = [v for v in values if scistats.poisson.pmf(v, 10.0) * n_windows >= 5]
        keep = [values.index(v) for v in lo]
        obs = np.concatenate([[observed.sum() - observed[keep].sum()], observed[keep]])
        exp = np.concatenate([[expected.sum() - expected[keep].sum()], expected[keep]])
        exp *= obs.sum() / exp.sum()
        stat, pvalue = scistats.chisquare(obs, exp)
        assert pvalue > 0.01


class TestIngest:
    def test_two_line_dump(self):
        lines = [
            json.dumps({"height": 0, "timestamp": 0.0, "txs": [{"initiator": "a"}]}),
            json.dumps({"height": 1, "timestamp": 12.0, "txs": []}),
        ]
        led = ingest_ledger(lines)
        assert led.num_blocks == 2
        assert led.block_time == pytest.approx(12.0)

    def test_duplicate_height(self):
        lines = [
            json.dumps({"height": 0, "timestamp": 0.0, "txs": []}),
            json.dumps({"height": 0, "timestamp": 12.0, "txs": []}),
        ]
        with pytest.raises(LedgerError, match="duplicate"):
            ingest_ledger(lines)

    def test_non_monotonic_timestamp(self):
        lines = [
            json.dumps({"height": 0, "timestamp": 10.0, "txs": []}),
            json.dumps({"height": 1, "timestamp": 9.0, "txs": []}),
        ]
        with pytest.raises(LedgerError, match="monotonic"):
            ingest_ledger(lines)

    def test_malformed_record(self):
        with pytest.raises(LedgerError, match="malformed"):
            ingest_ledger(['{"height": 0}'])

    def test_thousand_block_dump_rate_oracle(self, tmp_path):
        config = LedgerConfig(num_users=50, rate=2.0, block_time=5.0,
                              duration=5.0 * 1000, seed=11,
                              activity=ActivityModel.uniform())
        path = tmp_path / "dump.jsonl"
        dump_ledger(synth_ledger(config), path)

        # Oracle: direct counts over the raw file.
        total, first_ts, last_ts, n_blocks = 0, None, None, 0
        for line in path.read_text().splitlines():
            rec = json.loads(line)
            total += len(rec["txs"])
            first_ts = rec["timestamp"] if first_ts is None else first_ts
            last_ts = rec["timestamp"]
            n_blocks += 1
        assert n_blocks == 1000
        mean_interval = (last_ts - first_ts) / (n_blocks - 1)
        oracle_rate = total / (n_blocks * mean_interval)

        led = load_ledger(path)
        stats = measure_activity(led, k=1)
        assert stats.lambda_total == pytest.approx(oracle_rate, rel=1e-12)


class TestMeasureActivity:
    def test_share_split(self):
        stats = measure_activity(manual_ledger(), k=1)
        assert stats.p["A"] == pytest.approx(0.75)
        assert stats.p["B"] == pytest.approx(0.25)

    def test_single_user(self):
        blocks = (Block(0, 0.0, (Transaction("s", 0.0, 0),)),
                  Block(1, 10.0, (Transaction("s", 10.0, 1),)))
        stats = measure_activity(Ledger(blocks, 10.0, ("s",)), k=1)
        assert stats.p == {"s": 1.0}
        assert stats.lambda_i["s"] == pytest.approx(stats.lambda_total)

    def test_k_too_large(self):
        with pytest.raises(LedgerError, match="exceeds"):
            measure_activity(manual_ledger(), k=3)

    def test_window_pmfs_sum_to_one(self):
        stats = measure_activity(synth_ledger(ETH_CONFIG), k=3)
        assert abs(sum(stats.pdf_x.values()) - 1.0) <= 1e-9
        assert abs(sum(stats.pdf_n.values()) - 1.0) <= 1e-9

    def test_pdf_x_mean_oracle(self):
        led = synth_ledger(ETH_CONFIG)
        stats = measure_activity(led, k=3)
        mean = sum(v * p for v, p in stats.pdf_x.items())
        counts = [len(b.transactions) for b in led.blocks]
        oracle = np.mean([sum(counts[i:i + 3]) for i in range(len(counts) - 2)])
        assert mean == pytest.approx(oracle, rel=1e-12)
        assert abs(mean - 36 * 12.68) / (36 * 12.68) < 0.02

    def test_span_restricts_measurement(self):
        led = synth_ledger(ETH_CONFIG)
        full = measure_activity(led, k=3)
        half = measure_activity(led, k=3, span=(0.0, led.duration / 2))
        assert half.lambda_total != full.lambda_total
        assert abs(half.lambda_total - full.lambda_total) / full.lambda_total < 0.05
        with pytest.raises(LedgerError, match="no blocks"):
            measure_activity(led, k=1, span=(-100.0, -50.0))

    def test_stats_json_roundtrip(self, tmp_path):
        stats = measure_activity(manual_ledger(), k=1)
        path = tmp_path / "stats.json"
        stats.save(path)
        loaded = type(stats).load(path)
        assert loaded == stats


class TestThreshold:
    def test_paper_value(self):
        assert transacting_threshold(3, 12.0, 0.01) == pytest.approx(0.00028, abs=5e-6)

    def test_inverse_relation(self):
        q = 1.0 - math.exp(-1.0)
        assert transacting_threshold(1, 1.0, q) == pytest.approx(1.0, rel=1e-12)

    def test_round_trip(self):
        theta = transacting_threshold(2, 120.0, 0.01)
        assert 1.0 - math.exp(-theta * 2 * 120.0) == pytest.approx(0.01, abs=1e-12)

    def test_monotonicity(self):
        base = transacting_threshold(3, 12.0, 0.01)
        assert transacting_threshold(3, 12.0, 0.02) > base
        assert transacting_threshold(4, 12.0, 0.01) < base
        assert transacting_threshold(3, 13.0, 0.01) < base

    def test_invalid_q(self):
        for q in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(LedgerError):
                transacting_threshold(3, 12.0, q)


class TestClassifyUser:
    def test_zero_rate_is_normal(self):
        assert classify_user(0.0, 1e-4) is UserClass.NORMAL

    def test_boundary_is_active(self):
        assert classify_user(2.5e-4, 2.5e-4) is UserClass.ACTIVE

    def test_partition_and_recount_oracle(self):
        stats = measure_activity(synth_ledger(ETH_CONFIG), k=3)
        theta = transacting_threshold(3, 12.0, 0.01)
        actives = active_users(stats, theta)
        oracle = {u for u, lam in stats.lambda_i.items() if lam >= theta}
        assert actives == oracle
        normals = {u for u in stats.lambda_i
                   if classify_user(stats.lambda_i[u], theta) is UserClass.NORMAL}
        assert normals | actives == set(stats.lambda_i)
        assert not normals & actives
        assert 0 < len(actives) < len(stats.lambda_i)
