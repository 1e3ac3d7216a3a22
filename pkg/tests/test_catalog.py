"""API catalogs, overhead model and wallet profiles."""

import json

import pytest

from rpclink.catalog import (
    ApiSpec,
    CatalogError,
    OverheadModel,
    Role,
    SizeRange,
    WalletProfile,
    builtin_profiles,
    get_profile,
    load_profiles,
    overlapping_apis,
    packet_size,
)

TARGET_BY_CHAIN = {
    "ethereum": "eth_getTransactionReceipt",
    "bitcoin": "blockchain.transaction.get_merkle",
    "solana": "getSignatureStatuses",
}


class TestPacketSize:
    def test_zero_overhead(self):
        assert packet_size(100, OverheadModel(0, 0)) == 100

    def test_additive(self):
        assert packet_size(150, OverheadModel(24, 9)) == 183

    def test_metamask_target_request_range(self):
        profile = get_profile("MetaMask")
        wire = profile.wire_request_range(profile.target_api)
        assert (wire.min, wire.max) == (193, 194)

    def test_monotone_in_json_bytes(self):
        overhead = OverheadModel()
        sizes = [packet_size(n, overhead) for n in range(1, 200)]
        assert sizes == sorted(sizes) and len(set(sizes)) == len(sizes)

    def test_rejects_nonpositive(self):
        with pytest.raises(CatalogError):
            packet_size(0, OverheadModel())


class TestSizeRange:
    def test_inverted_rejected(self):
        with pytest.raises(CatalogError):
            SizeRange(10, 5)

    def test_unbounded_contains_and_intersects(self):
        r = SizeRange(100, None)
        assert r.contains(10_000) and not r.contains(99)
        assert r.intersects(SizeRange(50, 100))
        assert not r.intersects(SizeRange(50, 99))

    def test_within(self):
        assert SizeRange(5, 10).within(SizeRange(5, None))
        assert not SizeRange(5, None).within(SizeRange(5, 10))


class TestOverlap:
    def test_bitcoin_theoretical_four(self):
        profile = get_profile("Electrum")
        assert len(overlapping_apis(profile.catalog, profile.target_api)) == 4

    def test_ethereum_theoretical_nine(self):
        profile = get_profile("MetaMask")
        assert len(overlapping_apis(profile.catalog, profile.target_api)) == 9

    def test_metamask_practical_single(self):
        profile = get_profile("MetaMask")
        practical = overlapping_apis(profile.catalog, profile.target_api, practical=True)
        assert {a.name for a in practical} == {"eth_getBlockByHash"}

    def test_torus_practical_three(self):
        profile = get_profile("Torus")
        practical = overlapping_apis(profile.catalog, profile.target_api, practical=True)
        assert {a.name for a in practical} == {
            "getAccountInfo", "getMultipleAccounts", "getTokenAccountsByOwner",
        }

    def test_disjoint_toy_catalog(self):
        target = ApiSpec("t", SizeRange(10, 20), SizeRange(100, 200), Role.TARGET)
        other = ApiSpec("o", SizeRange(30, 40), SizeRange(300, 400), Role.OTHER)
        assert overlapping_apis([target, other], target) == set()

    def test_target_not_in_catalog(self):
        target = ApiSpec("t", SizeRange(10, 20), SizeRange(100, 200), Role.TARGET)
        with pytest.raises(CatalogError):
            overlapping_apis([], target)

    def test_practical_subset_of_theoretical(self):
        for profile in builtin_profiles():
            theo = overlapping_apis(profile.catalog, profile.target_api)
            prac = overlapping_apis(profile.catalog, profile.target_api, practical=True)
            assert prac <= theo


class TestProfiles:
    def test_metamask(self):
        p = get_profile("MetaMask")
        assert p.query_method == "periodic" and p.query_cycle == 20.0
        assert p.block_time == 12.0

    def test_electrum(self):
        p = get_profile("Electrum")
        assert p.query_method == "subscription"
        assert p.block_time == 120.0

    def test_torus_cycle(self):
        p = get_profile("Torus")
        assert p.query_method == "periodic" and p.query_cycle == 10.0
        assert p.k_estimation_cycle == 20.0

    def test_one_target_per_catalog(self):
        for profile in builtin_profiles():
            targets = [a for a in profile.catalog if a.role is Role.TARGET]
            assert len(targets) == 1
            assert targets[0].name == TARGET_BY_CHAIN[profile.blockchain]

    def test_wallet_ranges_within_theoretical(self):
        for profile in builtin_profiles():
            for api in profile.catalog:
                assert api.practical_request.within(api.request_json)
                assert api.practical_response.within(api.response_json)

    def test_unknown_profile(self):
        with pytest.raises(CatalogError):
            get_profile("NoSuchWallet")

    def test_json_roundtrip(self):
        for profile in builtin_profiles():
            clone = WalletProfile.from_json(json.loads(json.dumps(profile.to_json())))
            assert clone == profile

    def test_load_profiles_override(self, tmp_path):
        custom = get_profile("MetaMask").to_json()
        custom["query_cycle"] = 5.0
        path = tmp_path / "profiles.json"
        path.write_text(json.dumps({"profiles": [custom]}))
        merged = {p.name: p for p in load_profiles(path)}
        assert merged["MetaMask"].query_cycle == 5.0
        assert len(merged) == len(builtin_profiles())

    def test_wallet_range_validation(self):
        with pytest.raises(CatalogError, match="exceeds theoretical"):
            ApiSpec("x", SizeRange(10, 20), SizeRange(5, 10), Role.OTHER,
                    wallet_request=SizeRange(5, 25))
