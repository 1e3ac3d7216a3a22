"""Interval estimation, candidate windows, intersection, identification."""

import numpy as np
import pytest

from rpclink.attack import (
    AttackError,
    AttackOutcome,
    CandidateSet,
    OutcomeVariant,
    candidate_set,
    estimate_k,
    identify,
    intersect,
    outcome_to_json,
)
from rpclink.catalog import builtin_profiles, get_profile
from rpclink.ledger import (
    ActivityModel,
    ActivityStats,
    Block,
    Ledger,
    LedgerConfig,
    Transaction,
    synth_ledger,
)


def ledger_with(txs_by_height, block_time=10.0):
    """txs_by_height: {height: [initiators]}"""
    heights = range(max(txs_by_height) + 1)
    blocks = tuple(
        Block(h, h * block_time,
              tuple(Transaction(u, h * block_time, h) for u in txs_by_height.get(h, [])))
        for h in heights
    )
    users = tuple(dict.fromkeys(u for v in txs_by_height.values() for u in v))
    return Ledger(blocks, block_time, users)


def stats_for(rates, window_k=3):
    total = sum(rates.values())
    p = {u: r / total for u, r in rates.items()}
    return ActivityStats(p, total, dict(rates), {1: 1.0}, {1: 1.0}, window_k)


class TestEstimateK:
    def test_metamask(self):
        est = estimate_k(get_profile("MetaMask"))
        assert (est.theoretical_k, est.k) == (2, 3)
        assert est.method == "periodic"

    def test_electrum(self):
        est = estimate_k(get_profile("Electrum"))
        assert (est.theoretical_k, est.k) == (1, 2)
        assert est.method == "subscription"

    def test_torus(self):
        est = estimate_k(get_profile("Torus"))
        assert (est.theoretical_k, est.k) == (51, 60)

    def test_margin_consistency_all_profiles(self):
        for profile in builtin_profiles():
            est = estimate_k(profile)
            assert est.k == est.theoretical_k + est.safety_margin
            assert est.k >= est.theoretical_k >= 1


class TestCandidateSet:
    def test_boundary_inclusive(self):
        led = ledger_with({0: ["a"], 1: ["b"], 2: ["c"]})
        cs = candidate_set(led, t_q=20.0, k=1)
        assert cs.pseudonyms == frozenset({"c"})
        assert cs.window == (2, 1)

    def test_k_window_union(self):
        led = ledger_with({0: ["a"], 1: ["b", "c"], 2: ["c"]})
        cs = candidate_set(led, t_q=25.0, k=2)
        assert cs.pseudonyms == frozenset({"b", "c"})
        assert cs.window == (1, 2)

    def test_empty_window(self):
        led = ledger_with({0: ["a"], 1: [], 2: []})
        cs = candidate_set(led, t_q=25.0, k=2)
        assert cs.pseudonyms == frozenset()

    def test_insufficient_history(self):
        led = ledger_with({0: ["a"], 1: ["b"], 2: ["c"]})
        with pytest.raises(AttackError, match="need"):
            candidate_set(led, t_q=10.0, k=3)

    def test_outside_span(self):
        led = ledger_with({0: ["a"], 1: ["b"]})
        with pytest.raises(AttackError, match="span"):
            candidate_set(led, t_q=-5.0, k=1)
        with pytest.raises(AttackError, match="span"):
            candidate_set(led, t_q=31.0, k=1)

    def test_capture_rate_quick(self):
        # 200 simulated observations of a MetaMask-style victim; the window
        # must capture the confirmation block essentially always at k=3.
        profile = get_profile("MetaMask")
        config = LedgerConfig(num_users=100, rate=2.0, block_time=12.0,
                              duration=12.0 * 600, seed=3,
                              activity=ActivityModel.uniform())
        led = synth_ledger(config)
        rng = np.random.default_rng(0)
        captured = 0
        for _ in range(200):
            height = int(rng.integers(3, led.num_blocks - 3))
            block = led.blocks[height]
            if not block.transactions:
                continue
            victim = block.transactions[0].initiator
            t_q = block.timestamp + rng.uniform(0, profile.query_cycle) + profile.rtt
            cs = candidate_set(led, t_q, 3)
            captured += victim in cs.pseudonyms
        assert captured >= 195


class TestIntersect:
    def test_single_round_identity(self):
        cs = CandidateSet(1, frozenset({"a", "b"}), (0, 1))
        assert intersect([cs]) == frozenset({"a", "b"})

    def test_pairwise(self):
        a = CandidateSet(1, frozenset({"a", "b"}), (0, 1))
        b = CandidateSet(2, frozenset({"b", "c"}), (1, 1))
        assert intersect([a, b]) == frozenset({"b"})

    def test_no_rounds_rejected(self):
        with pytest.raises(AttackError):
            intersect([])

    def test_algebraic_properties(self):
        rng = np.random.default_rng(7)
        universe = [f"u{i}" for i in range(30)]
        for _ in range(50):
            sets = [
                CandidateSet(i, frozenset(rng.choice(universe,
                                                     size=rng.integers(1, 20),
                                                     replace=False)), (i, 1))
                for i in range(rng.integers(1, 5))
            ]
            result = intersect(sets)
            # idempotent
            assert intersect(sets + sets) == result
            # commutative
            perm = [sets[i] for i in rng.permutation(len(sets))]
            assert intersect(perm) == result
            # monotone non-increasing cardinality per appended round
            running = None
            for i in range(1, len(sets) + 1):
                cur = intersect(sets[:i])
                if running is not None:
                    assert len(cur) <= len(running)
                running = cur
            # result contained in every round
            for cs in sets:
                assert result <= cs.pseudonyms


class TestIdentify:
    def test_unique_normal(self):
        stats = stats_for({"t": 1e-6, "u": 1e-6})
        out = identify({"t"}, stats, threshold=1e-4)
        assert out.variant is OutcomeVariant.UNIQUE
        assert out.pseudonym == "t"

    def test_active_singleton(self):
        stats = stats_for({"a": 5e-4, "u": 1e-6})
        out = identify({"a"}, stats, threshold=1e-4)
        assert out.variant is OutcomeVariant.ACTIVE_TARGET
        assert out.candidates == frozenset({"a"})

    def test_two_normals_ambiguous(self):
        stats = stats_for({"t": 1e-6, "u": 1e-6})
        out = identify({"t", "u"}, stats, threshold=1e-4)
        assert out.variant is OutcomeVariant.AMBIGUOUS_NORMAL
        assert out.candidates == frozenset({"t", "u"})

    def test_active_filtered_to_unique(self):
        stats = stats_for({"t": 1e-6, "a": 5e-4})
        out = identify({"t", "a"}, stats, threshold=1e-4)
        assert out.variant is OutcomeVariant.UNIQUE
        assert out.pseudonym == "t"

    def test_empty_intersection_distinct_code(self):
        stats = stats_for({"t": 1e-6})
        out = identify(set(), stats, threshold=1e-4)
        assert out.variant is OutcomeVariant.AMBIGUOUS_NORMAL
        assert out.code == "empty_intersection"
        assert out.candidates == frozenset()

    def test_unknown_pseudonym_rejected(self):
        stats = stats_for({"t": 1e-6})
        with pytest.raises(AttackError, match="missing"):
            identify({"t", "ghost"}, stats, threshold=1e-4)

    def test_never_unique_active(self):
        rng = np.random.default_rng(11)
        threshold = 1e-4
        for _ in range(100):
            users = {f"u{i}": float(rng.choice([1e-6, 5e-4])) for i in range(8)}
            stats = stats_for(users)
            members = set(rng.choice(sorted(users),
                                     size=rng.integers(0, 8), replace=False))
            out = identify(members, stats, threshold)
            if out.variant is OutcomeVariant.UNIQUE:
                assert stats.lambda_i[out.pseudonym] < threshold

    def test_unique_requires_single_candidate(self):
        with pytest.raises(AttackError):
            AttackOutcome(OutcomeVariant.UNIQUE, frozenset({"a", "b"}), 1)


class TestSerialization:
    def test_outcome_json(self):
        stats = stats_for({"t": 1e-6, "u": 1e-6})
        out = identify({"t"}, stats, threshold=1e-4, rounds=3)
        rounds = (CandidateSet(1, frozenset({"t", "u"}), (10, 3)),
                  CandidateSet(2, frozenset({"t"}), (40, 3)))
        payload = outcome_to_json(out, rounds)
        assert payload["variant"] == "unique"
        assert payload["candidates"] == ["t"]
        assert payload["rounds"] == 3
        assert payload["windows"][0] == {"round": 1, "first_height": 10,
                                         "k": 3, "cardinality": 2}
