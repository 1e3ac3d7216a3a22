"""Closed-form model formulas against brute-force simulation oracles."""

import math

import numpy as np
import pytest

from rpclink.analytics import (
    AnalyticsError,
    DistributionSet,
    ModelParams,
    Pmf,
    appearance_prob,
    exclusion_prob,
    expected_fi,
    expected_success,
    heatmap_grid,
    success_rate,
    write_model_report,
)
from rpclink.ledger import ActivityModel, LedgerConfig, measure_activity, synth_ledger


def simulate_exclusion(p, xs, trials, seed):
    """Oracle: draw per-round membership (at least one of x transactions by
    the user) and count runs where some round misses the user."""
    rng = np.random.default_rng(seed)
    appears = np.ones(trials, dtype=bool)
    for x in xs:
        appears &= rng.binomial(int(x), p, size=trials) >= 1
    return 1.0 - appears.mean()


class TestAppearance:
    def test_zero_share(self):
        assert appearance_prob(0.0, 100) == 0.0

    def test_certain_share(self):
        assert appearance_prob(1.0, 1) == 1.0
        assert appearance_prob(1.0, 50) == 1.0

    def test_zero_window(self):
        assert appearance_prob(0.5, 0) == 0.0

    def test_closed_form(self):
        assert appearance_prob(0.1, 10) == pytest.approx(1 - 0.9 ** 10, rel=1e-12)

    def test_monte_carlo_oracle(self):
        p, x, trials = 0.1, 10, 1_000_000
        rng = np.random.default_rng(42)
        hits = (rng.binomial(x, p, size=trials) >= 1).mean()
        expected = appearance_prob(p, x)
        se = math.sqrt(expected * (1 - expected) / trials)
        assert abs(hits - expected) <= 3 * se

    def test_invalid_inputs(self):
        with pytest.raises(AnalyticsError):
            appearance_prob(1.5, 10)
        with pytest.raises(AnalyticsError):
            appearance_prob(0.5, -1)


class TestExclusion:
    def test_never_transacting_always_excluded(self):
        assert exclusion_prob(0.0, [450, 450]) == 1.0

    def test_always_present_never_excluded(self):
        assert exclusion_prob(1.0, [450, 450]) == 0.0

    def test_single_round_edge(self):
        # With one round there is no later window to drop out of.
        assert exclusion_prob(0.5, []) == 0.0

    def test_brute_force_oracle(self):
        p, xs, trials = 1e-4, [450, 450], 100_000
        estimate = simulate_exclusion(p, xs, trials, seed=5)
        exact = exclusion_prob(p, xs)
        se = math.sqrt(max(exact * (1 - exact), 1e-12) / trials)
        assert abs(estimate - exact) <= 3 * se

    def test_monotone_in_share_and_counts(self):
        ps = [0.0, 1e-4, 1e-3, 1e-2, 0.1, 1.0]
        for lo, hi in zip(ps, ps[1:]):
            assert exclusion_prob(hi, [100, 100]) <= exclusion_prob(lo, [100, 100])
        xs_grid = [[1, 1], [10, 10], [100, 100]]
        for lo, hi in zip(xs_grid, xs_grid[1:]):
            assert exclusion_prob(1e-3, hi) <= exclusion_prob(1e-3, lo)


class TestSuccessRate:
    def test_alpha_zero(self):
        params = ModelParams(0.0, 2, (1e-3,), (100,), 2)
        assert success_rate(params) == 0.0

    def test_single_member_single_round(self):
        assert success_rate(ModelParams(1.0, 1, (), (), 1)) == 1.0

    def test_multi_member_single_round_degenerate(self):
        # One round can never exclude anybody, so extra members kill success.
        params = ModelParams(1.0, 1, (1e-3, 1e-3), (), 3)
        assert success_rate(params) == 0.0

    def test_equals_alpha_m_when_all_excluded(self):
        params = ModelParams(0.9, 3, (0.0, 0.0), (100, 100), 3)
        assert success_rate(params) == pytest.approx(0.9 ** 3, rel=1e-12)

    def test_non_increasing_in_n(self):
        prev = None
        for n in (1, 2, 5, 20):
            params = ModelParams(1.0, 3, tuple([1e-3] * (n - 1)), (200, 200), n)
            value = success_rate(params)
            if prev is not None:
                assert value <= prev
            prev = value

    def test_validation(self):
        with pytest.raises(AnalyticsError):
            ModelParams(1.0, 2, (0.5,), (), 2)  # xs wrong length
        with pytest.raises(AnalyticsError):
            ModelParams(1.0, 2, (0.5, 0.5), (10,), 2)  # p wrong length


class TestExpectedFi:
    def test_point_mass_zero_share(self):
        dists = DistributionSet.point_mass(p=0.0, x=100, n=5)
        result = expected_fi(dists, m=3, samples=2000, seed=1)
        assert result.mean == 1.0
        assert result.stderr == 0.0

    def test_point_mass_matches_exclusion(self):
        dists = DistributionSet.point_mass(p=1e-3, x=250, n=5)
        result = expected_fi(dists, m=3, samples=500, seed=2)
        assert result.mean == pytest.approx(exclusion_prob(1e-3, [250, 250]), abs=1e-15)

    def test_mass_above_probe(self):
        dists = DistributionSet.point_mass(p=1e-6, x=400, n=5)
        result = expected_fi(dists, m=3, samples=500, seed=3)
        assert result.mass_above(0.999) == pytest.approx(1.0)


class TestExpectedSuccess:
    def test_point_mass_equals_success_rate(self):
        n, p, x = 6, 2e-4, 300.0
        dists = DistributionSet.point_mass(p=p, x=x, n=n)
        mc = expected_success(dists, alpha=0.97, m=3, samples=400, seed=4)
        exact = success_rate(ModelParams(0.97, 3, tuple([p] * (n - 1)),
                                         (x, x), n))
        assert mc.e_p == pytest.approx(exact, abs=1e-12)
        assert mc.stderr_p == pytest.approx(0.0, abs=1e-8)

    def test_certain_exclusion(self):
        dists = DistributionSet.point_mass(p=0.0, x=100, n=50)
        mc = expected_success(dists, alpha=1.0, m=2, samples=400, seed=5)
        assert mc.e_p == 1.0
        assert mc.e_r == 0.0

    def test_m1_degenerate(self):
        dists = DistributionSet.point_mass(p=1e-3, x=100, n=5)
        mc = expected_success(dists, alpha=1.0, m=1, samples=400, seed=6)
        assert mc.e_p == 0.0
        dists1 = DistributionSet.point_mass(p=1e-3, x=100, n=1)
        assert expected_success(dists1, 1.0, 1, samples=400, seed=6).e_p == 1.0

    def test_filter_never_decreases_exclusion(self):
        config = LedgerConfig(num_users=800, rate=3.0, block_time=12.0,
                              duration=12.0 * 1200, seed=21,
                              activity=ActivityModel.zipf(1.1))
        stats = measure_activity(synth_ledger(config), k=3)
        dists = DistributionSet.from_activity(stats)
        theta_p = 2.5 / stats.lambda_total * 1e-3
        theta_p = max(theta_p, float(np.quantile(list(stats.p.values()), 0.9)))
        plain = expected_success(dists, 1.0, 3, samples=20_000, seed=7)
        filtered = expected_success(dists, 1.0, 3, theta_p=theta_p,
                                    samples=20_000, seed=7)
        assert 1.0 - filtered.e_r >= 1.0 - plain.e_r

    def test_reproducible(self):
        dists = DistributionSet.point_mass(p=1e-4, x=200, n=10)
        a = expected_success(dists, 0.99, 3, samples=5_000, seed=9)
        b = expected_success(dists, 0.99, 3, samples=5_000, seed=9)
        assert a == b


class TestDistributionSet:
    def test_from_activity_drops_silent_users(self):
        config = LedgerConfig(num_users=500, rate=1.0, block_time=10.0,
                              duration=10.0 * 200, seed=2,
                              activity=ActivityModel.zipf(1.5))
        stats = measure_activity(synth_ledger(config), k=2)
        dists = DistributionSet.from_activity(stats)
        assert min(dists.f_p.values) > 0.0
        assert sum(dists.f_p.probs) == pytest.approx(1.0, abs=1e-9)

    def test_truncate_p(self):
        pmf = Pmf((1e-6, 1e-4, 1e-2), (0.5, 0.3, 0.2))
        dists = DistributionSet(pmf, Pmf.point(10), Pmf.point(5))
        cut = dists.truncate_p(1e-3)
        assert cut.f_p.values == (1e-6, 1e-4)
        assert sum(cut.f_p.probs) == pytest.approx(1.0)
        with pytest.raises(AnalyticsError):
            dists.truncate_p(1e-9)

    def test_discretize_preserves_mass_and_mean(self):
        rng = np.random.default_rng(3)
        values = np.sort(rng.uniform(1e-7, 1e-3, size=500))
        pmf = Pmf(tuple(values), tuple([1.0 / 500] * 500))
        dists = DistributionSet(pmf, Pmf.point(10), Pmf.point(5))
        packed = dists.discretize_p(bins=64)
        assert len(packed.f_p.values) <= 64
        assert sum(packed.f_p.probs) == pytest.approx(1.0, abs=1e-9)
        assert packed.f_p.mean() == pytest.approx(pmf.mean(), rel=0.05)

    def test_invalid_pmf(self):
        with pytest.raises(AnalyticsError):
            Pmf((0.5,), (0.9,))
        with pytest.raises(AnalyticsError):
            Pmf((0.5, 0.6), (0.5, -0.5))


@pytest.fixture(scope="module")
def chain_scale_stats():
    """Mid-size heavy-tailed ledger with both user classes populated."""
    config = LedgerConfig(num_users=20_000, rate=12.68, block_time=12.0,
                          duration=14_400.0, seed=31,
                          activity=ActivityModel.zipf(1.1))
    return measure_activity(synth_ledger(config), k=3)


class TestChainScaleShapes:
    def test_filtered_exclusion_concentrates_near_one(self, chain_scale_stats):
        from rpclink.ledger import transacting_threshold

        stats = chain_scale_stats
        theta_p = transacting_threshold(3, 12.0, 0.01) / stats.lambda_total
        dists = DistributionSet.from_activity(stats).truncate_p(theta_p)
        result = expected_fi(dists, m=3, samples=50_000, seed=4)
        assert result.mass_above(0.999) >= 0.99
        assert result.mass_above(0.9999) >= 0.95
        assert result.mean > 0.999

    def test_unfiltered_r_far_exceeds_filtered(self, chain_scale_stats):
        from rpclink.ledger import transacting_threshold

        stats = chain_scale_stats
        theta_p = transacting_threshold(3, 12.0, 0.01) / stats.lambda_total
        dists = DistributionSet.from_activity(stats)
        plain = expected_success(dists, 1.0, 3, samples=30_000, seed=6)
        filtered = expected_success(dists, 1.0, 3, theta_p=theta_p,
                                    samples=30_000, seed=6)
        assert plain.e_r >= 5.0 * filtered.e_r
        assert filtered.e_r < 0.05


class TestReports:
    def test_heatmap_and_csv(self, tmp_path):
        dists = DistributionSet.point_mass(p=1e-4, x=200, n=10)
        rows = heatmap_grid(dists, alphas=[0.9, 1.0], ms=[2, 3],
                            samples=2_000, seed=1)
        assert len(rows) == 4
        path = tmp_path / "model.csv"
        write_model_report(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("alpha,m,filter")
        assert len(lines) == 5
