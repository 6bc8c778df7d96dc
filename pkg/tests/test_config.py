"""Scenario file parsing: defaults, overrides, and loud rejection of typos."""

import pytest

from drainguard.config import (
    ConfigError,
    REFERENCE_DEPLOYMENT,
    ScenarioConfig,
    VerifyCosts,
    load_config,
    parse_config,
)
from drainguard.limiter import Algorithm
from drainguard.protocols import Protocol
from drainguard.simnet import ChainedBursts, CompromisedFlood, GarbageInjection


def load_text(tmp_path, text):
    path = tmp_path / "scenario.toml"
    path.write_text(text)
    return load_config(path)


class TestDefaults:
    def test_no_path_gives_reference_scenario(self):
        cfg = load_config(None)
        assert cfg == ScenarioConfig()
        assert cfg.deployment == REFERENCE_DEPLOYMENT
        assert cfg.deployment.services == {1: 0.045}
        assert cfg.burst.requests == 10
        assert cfg.algorithm is Algorithm.LEAKY_BUCKET
        assert cfg.protocol is Protocol.PROXY
        assert cfg.request_probability == 0.2740
        assert cfg.attack is None

    def test_empty_file_equals_defaults(self, tmp_path):
        assert load_text(tmp_path, "") == load_config(None)

    def test_shipped_default_file_equals_defaults(self):
        import pathlib

        shipped = pathlib.Path(__file__).resolve().parent.parent / "configs" / "default.toml"
        assert load_config(shipped) == load_config(None)

    def test_verify_cost_tracks_protocol(self):
        costs = VerifyCosts()
        assert costs.for_protocol(Protocol.PROXY) == 1.21e-6
        assert costs.for_protocol(Protocol.TICKET) == 2.34e-6
        assert costs.for_protocol(Protocol.ASYMMETRIC) == 33.14e-3
        cfg = ScenarioConfig(protocol=Protocol.TICKET)
        assert cfg.verify_energy_j == 2.34e-6


class TestOverrides:
    def test_partial_sections_merge_over_defaults(self, tmp_path):
        cfg = load_text(
            tmp_path,
            """
            [limiter]
            algorithm = "ewma"

            [simulation]
            days = 30
            seed = 9
            """,
        )
        assert cfg.algorithm is Algorithm.EWMA
        assert (cfg.days, cfg.seed) == (30, 9)
        # untouched sections keep reference values
        assert cfg.deployment == REFERENCE_DEPLOYMENT
        assert cfg.burst.window_seconds == 600.0

    def test_full_deployment_override(self, tmp_path):
        cfg = load_text(
            tmp_path,
            """
            [deployment]
            battery_j = 1000.0
            reserved_fraction = 0.2
            supply_volts = 3.3
            rx_current_amps = 1e-5
            lifetime_days = 100
            requesters = 10

            [deployment.services]
            1 = 0.045
            7 = 0.002

            [limiter.tolerated_burst]
            service_id = 7

            [simulation]
            days = 100
            """,
        )
        assert cfg.deployment.battery_j == 1000.0
        assert cfg.deployment.services == {1: 0.045, 7: 0.002}
        assert cfg.burst.service_id == 7

    def test_protocol_and_links(self, tmp_path):
        cfg = load_text(
            tmp_path,
            """
            [protocol]
            kind = "p2"
            verify_energy_p2_j = 3e-6
            validity_distance = 4
            preshare_keys = false

            [links]
            provider_bytes_per_second = 50.0
            backbone_base_delay_s = 0.1
            """,
        )
        assert cfg.protocol is Protocol.TICKET
        assert cfg.verify_energy_j == 3e-6
        assert cfg.validity_distance == 4
        assert cfg.preshare_keys is False
        assert cfg.provider_link.bytes_per_second == 50.0
        assert cfg.backbone_link.base_delay_s == 0.1
        # the p1 cost keeps its default even when unused
        assert cfg.costs.proxy_j == 1.21e-6

    def test_asym_protocol(self, tmp_path):
        cfg = load_text(tmp_path, '[protocol]\nkind = "asym"\n')
        assert cfg.protocol is Protocol.ASYMMETRIC
        assert cfg.verify_energy_j == 33.14e-3


class TestAttackParsing:
    def test_chained_bursts(self, tmp_path):
        cfg = load_text(
            tmp_path,
            """
            [attack]
            kind = "chained_bursts"
            requester_id = 100
            start_day = 200
            days = 165
            """,
        )
        assert cfg.attack == ChainedBursts(
            requester_id=100,
            requests=10,
            window_seconds=600.0,
            start_day=200.0,
            days=165.0,
            service_id=1,
        )

    def test_compromised_flood(self, tmp_path):
        cfg = load_text(
            tmp_path,
            """
            [attack]
            kind = "compromised_flood"
            requester_ids = [3, 4]
            per_day = 1440.0
            """,
        )
        assert cfg.attack == CompromisedFlood(
            requester_ids=(3, 4), per_day=1440.0, start_day=0.0, days=1.0, service_id=1
        )

    def test_garbage_injection_defaults_to_scenario_provider(self, tmp_path):
        cfg = load_text(
            tmp_path,
            """
            [simulation]
            provider_id = 77

            [attack]
            kind = "garbage_injection"
            rate_per_second = 1.0
            days = 365
            """,
        )
        assert cfg.attack == GarbageInjection(
            provider_id=77, rate_per_second=1.0, size_bytes=9, start_day=0.0, days=365.0
        )

    def test_unknown_kind_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="attack.kind"):
            load_text(tmp_path, '[attack]\nkind = "meteor_strike"\n')

    def test_missing_required_field_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="requester_id is required"):
            load_text(tmp_path, '[attack]\nkind = "chained_bursts"\n')


class TestRejections:
    @pytest.mark.parametrize(
        "text,fragment",
        [
            ("[deployment]\nbattery_j = -5\n", "battery"),
            ("[deployment]\nbattery_j = \"big\"\n", "must be a number"),
            ("[deployment]\nrequesters = 2.5\n", "must be an integer"),
            ("[deployment.services]\nx = 0.2\n", "not a service id"),
            ("[deployment.services]\n", "non-empty"),
            ("[limiter]\nalgorithm = \"token\"\n", "lb, ewma"),
            ("[limiter]\ntick_seconds = 0\n", "tick_seconds"),
            ("[limiter.tolerated_burst]\nservice_id = 9\n", "not catalogued"),
            ("[protocol]\nkind = \"p3\"\n", "p1, p2, asym"),
            ("[protocol]\nvalidity_distance = -1\n", "validity_distance"),
            ("[protocol]\npreshare_keys = 1\n", "true or false"),
            ("[links]\nprovider_bytes_per_second = 0\n", "links"),
            ("[traffic]\nrequest_probability = 1.5\n", "request_probability"),
            ("[simulation]\ndays = 0\n", "days"),
            ("[simulation]\ndays = 9000\n", "lifetime"),
            ("[simulation]\nprovider_id = -3\n", "provider_id"),
        ],
    )
    def test_bad_values(self, tmp_path, text, fragment):
        with pytest.raises(ConfigError, match=fragment):
            load_text(tmp_path, text)

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown keys.*battery_joules"):
            load_text(tmp_path, "[deployment]\nbattery_joules = 3024.0\n")

    def test_unknown_section_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown keys.*weather"):
            load_text(tmp_path, "[weather]\nrain = true\n")

    def test_unreadable_path_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.toml")

    def test_broken_toml_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_text(tmp_path, "[deployment\nbattery_j = 1\n")

    def test_parse_config_requires_tables(self):
        with pytest.raises(ConfigError, match="must be a table"):
            parse_config({"deployment": 7})
