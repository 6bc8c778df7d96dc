"""Scenario configuration: TOML files layered over reference defaults.

Every knob has a default taken from the reference deployment (coin-cell
provider, 100 requesters, one 45 mJ service, 365-day lifetime), so an
empty or absent file yields a complete, runnable scenario.  Unknown keys
are rejected rather than ignored; a typo should fail loudly, not
silently fall back to a default.

Schema, all sections optional::

    [deployment]
    battery_j = 3024.0
    reserved_fraction = 0.10
    supply_volts = 3.0
    rx_current_amps = 24e-6
    lifetime_days = 365
    requesters = 100

    [deployment.services]   # service id -> energy per served request, J
    1 = 0.045

    [limiter]
    algorithm = "lb"        # lb | ewma
    tick_seconds = 60.0

    [limiter.tolerated_burst]
    requests = 10
    window_seconds = 600.0
    service_id = 1

    [protocol]
    kind = "p1"             # p1 | p2 | asym
    verify_energy_p1_j = 1.21e-6
    verify_energy_p2_j = 2.34e-6
    verify_energy_asym_j = 33.14e-3
    validity_distance = 16
    preshare_keys = true

    [links]
    provider_bytes_per_second = 20.0
    provider_base_delay_s = 0.0
    backbone_bytes_per_second = 125000.0
    backbone_base_delay_s = 0.02

    [traffic]
    request_probability = 0.2740

    [simulation]
    days = 365
    seed = 1
    provider_id = 1

    [attack]                # optional; absent means benign traffic only
    kind = "chained_bursts" # chained_bursts | compromised_flood | garbage_injection
    requester_id = 100
    requests = 10
    window_seconds = 600.0
    start_day = 200
    days = 165
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .energy import DeploymentConfig
from .limiter import Algorithm, ToleratedBurst
from .protocols import Protocol
from .simnet import (
    ChainedBursts,
    CompromisedFlood,
    GarbageInjection,
    LinkSpec,
)

Attack = Union[ChainedBursts, CompromisedFlood, GarbageInjection]


class ConfigError(ValueError):
    """Configuration file missing, unparsable, or invalid."""


REFERENCE_DEPLOYMENT = DeploymentConfig(
    battery_j=3024.0,
    reserved_fraction=0.10,
    supply_volts=3.0,
    rx_current_amps=24e-6,
    lifetime_days=365.0,
    requesters=100,
    services={1: 0.045},
)


@dataclass(frozen=True)
class VerifyCosts:
    """Provider-side cost of checking one inbound request, per scheme.

    These are measured platform numbers fed in as configuration, not
    derived quantities: one MAC check for the proxy scheme, a MAC plus a
    hash for tickets, and a full signature verification for the direct
    public-key baseline.
    """

    proxy_j: float = 1.21e-6
    ticket_j: float = 2.34e-6
    direct_j: float = 33.14e-3

    def __post_init__(self):
        for name in ("proxy_j", "ticket_j", "direct_j"):
            if getattr(self, name) < 0:
                raise ValueError("verification cost cannot be negative")

    def for_protocol(self, protocol: Protocol) -> float:
        if protocol is Protocol.PROXY:
            return self.proxy_j
        if protocol is Protocol.TICKET:
            return self.ticket_j
        return self.direct_j


@dataclass(frozen=True)
class ScenarioConfig:
    deployment: DeploymentConfig = REFERENCE_DEPLOYMENT
    burst: ToleratedBurst = ToleratedBurst(10, 600.0, 1)
    tick_seconds: float = 60.0
    algorithm: Algorithm = Algorithm.LEAKY_BUCKET
    protocol: Protocol = Protocol.PROXY
    costs: VerifyCosts = VerifyCosts()
    validity_distance: int = 16
    preshare_keys: bool = True
    backbone_link: LinkSpec = LinkSpec(125000.0, 0.02)
    provider_link: LinkSpec = LinkSpec(20.0, 0.0)
    request_probability: float = 0.2740
    days: int = 365
    seed: int = 1
    provider_id: int = 1
    attack: Optional[Attack] = None

    @property
    def verify_energy_j(self) -> float:
        return self.costs.for_protocol(self.protocol)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

_MISSING = object()


class _Section:
    """One TOML table; every read pops its key so leftovers are typos."""

    def __init__(self, name: str, table):
        if not isinstance(table, dict):
            raise ConfigError(f"[{name}] must be a table")
        self.name = name
        self._table = dict(table)

    def _pop(self, key, default):
        value = self._table.pop(key, default)
        if value is _MISSING:
            raise ConfigError(f"{self.name}.{key} is required")
        return value

    def take_number(self, key, default=_MISSING) -> float:
        value = self._pop(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{self.name}.{key} must be a number")
        return float(value)

    def take_int(self, key, default=_MISSING) -> int:
        value = self._pop(key, default)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{self.name}.{key} must be an integer")
        return value

    def take_bool(self, key, default=_MISSING) -> bool:
        value = self._pop(key, default)
        if not isinstance(value, bool):
            raise ConfigError(f"{self.name}.{key} must be true or false")
        return value

    def take_str(self, key, default=_MISSING) -> str:
        value = self._pop(key, default)
        if not isinstance(value, str):
            raise ConfigError(f"{self.name}.{key} must be a string")
        return value

    def take_raw(self, key, default=_MISSING):
        return self._pop(key, default)

    def finish(self) -> None:
        if self._table:
            stray = ", ".join(sorted(map(str, self._table)))
            raise ConfigError(f"unknown keys in [{self.name}]: {stray}")


def _build(factory, context: str, /, **kwargs):
    try:
        return factory(**kwargs)
    except ValueError as err:
        raise ConfigError(f"{context}: {err}") from None


def _parse_deployment(section: _Section) -> DeploymentConfig:
    ref = REFERENCE_DEPLOYMENT
    raw_services = section.take_raw("services", dict(ref.services))
    if not isinstance(raw_services, dict) or not raw_services:
        raise ConfigError("deployment.services must be a non-empty table")
    services = {}
    for key, energy in raw_services.items():
        label = str(key)
        if not label.isdigit():
            raise ConfigError(f"deployment.services key {label!r} is not a service id")
        if isinstance(energy, bool) or not isinstance(energy, (int, float)):
            raise ConfigError(f"deployment.services.{label} must be a number")
        services[int(label)] = float(energy)
    cfg = _build(
        DeploymentConfig,
        "deployment",
        battery_j=section.take_number("battery_j", ref.battery_j),
        reserved_fraction=section.take_number("reserved_fraction", ref.reserved_fraction),
        supply_volts=section.take_number("supply_volts", ref.supply_volts),
        rx_current_amps=section.take_number("rx_current_amps", ref.rx_current_amps),
        lifetime_days=section.take_number("lifetime_days", ref.lifetime_days),
        requesters=section.take_int("requesters", ref.requesters),
        services=services,
    )
    section.finish()
    return cfg


def _parse_enum(enum_cls, label: str, value: str):
    try:
        return enum_cls(value)
    except ValueError:
        choices = ", ".join(member.value for member in enum_cls)
        raise ConfigError(f"{label} must be one of: {choices}") from None


def _parse_attack(section: _Section, default_provider: int) -> Attack:
    kind = section.take_str("kind")
    if kind == "chained_bursts":
        attack = _build(
            ChainedBursts,
            "attack",
            requester_id=section.take_int("requester_id"),
            requests=section.take_int("requests", 10),
            window_seconds=section.take_number("window_seconds", 600.0),
            start_day=section.take_number("start_day", 0.0),
            days=section.take_number("days", 1.0),
            service_id=section.take_int("service_id", 1),
        )
    elif kind == "compromised_flood":
        raw_ids = section.take_raw("requester_ids")
        if not isinstance(raw_ids, list) or not all(
            isinstance(item, int) and not isinstance(item, bool) for item in raw_ids
        ):
            raise ConfigError("attack.requester_ids must be a list of integers")
        attack = _build(
            CompromisedFlood,
            "attack",
            requester_ids=tuple(raw_ids),
            per_day=section.take_number("per_day"),
            start_day=section.take_number("start_day", 0.0),
            days=section.take_number("days", 1.0),
            service_id=section.take_int("service_id", 1),
        )
    elif kind == "garbage_injection":
        attack = _build(
            GarbageInjection,
            "attack",
            provider_id=section.take_int("provider_id", default_provider),
            rate_per_second=section.take_number("rate_per_second"),
            size_bytes=section.take_int("size_bytes", 9),
            start_day=section.take_number("start_day", 0.0),
            days=section.take_number("days", 1.0),
        )
    else:
        raise ConfigError(
            "attack.kind must be one of: chained_bursts, compromised_flood, "
            "garbage_injection"
        )
    section.finish()
    return attack


def parse_config(doc: dict) -> ScenarioConfig:
    top = _Section("top level", doc)
    defaults = ScenarioConfig()

    deployment = _parse_deployment(_Section("deployment", top.take_raw("deployment", {})))

    limiter = _Section("limiter", top.take_raw("limiter", {}))
    algorithm = _parse_enum(
        Algorithm, "limiter.algorithm", limiter.take_str("algorithm", defaults.algorithm.value)
    )
    tick_seconds = limiter.take_number("tick_seconds", defaults.tick_seconds)
    if tick_seconds <= 0:
        raise ConfigError("limiter.tick_seconds must be positive")
    burst_section = _Section(
        "limiter.tolerated_burst", limiter.take_raw("tolerated_burst", {})
    )
    burst = _build(
        ToleratedBurst,
        "limiter.tolerated_burst",
        requests=burst_section.take_int("requests", defaults.burst.requests),
        window_seconds=burst_section.take_number(
            "window_seconds", defaults.burst.window_seconds
        ),
        service_id=burst_section.take_int("service_id", defaults.burst.service_id),
    )
    burst_section.finish()
    limiter.finish()
    if burst.service_id not in deployment.services:
        raise ConfigError(
            f"limiter.tolerated_burst.service_id {burst.service_id} is not catalogued"
        )

    protocol_section = _Section("protocol", top.take_raw("protocol", {}))
    protocol = _parse_enum(
        Protocol, "protocol.kind", protocol_section.take_str("kind", defaults.protocol.value)
    )
    costs = _build(
        VerifyCosts,
        "protocol",
        proxy_j=protocol_section.take_number("verify_energy_p1_j", defaults.costs.proxy_j),
        ticket_j=protocol_section.take_number("verify_energy_p2_j", defaults.costs.ticket_j),
        direct_j=protocol_section.take_number(
            "verify_energy_asym_j", defaults.costs.direct_j
        ),
    )
    validity_distance = protocol_section.take_int(
        "validity_distance", defaults.validity_distance
    )
    if validity_distance < 0:
        raise ConfigError("protocol.validity_distance cannot be negative")
    preshare_keys = protocol_section.take_bool("preshare_keys", defaults.preshare_keys)
    protocol_section.finish()

    links = _Section("links", top.take_raw("links", {}))
    provider_link = _build(
        LinkSpec,
        "links",
        bytes_per_second=links.take_number(
            "provider_bytes_per_second", defaults.provider_link.bytes_per_second
        ),
        base_delay_s=links.take_number(
            "provider_base_delay_s", defaults.provider_link.base_delay_s
        ),
    )
    backbone_link = _build(
        LinkSpec,
        "links",
        bytes_per_second=links.take_number(
            "backbone_bytes_per_second", defaults.backbone_link.bytes_per_second
        ),
        base_delay_s=links.take_number(
            "backbone_base_delay_s", defaults.backbone_link.base_delay_s
        ),
    )
    links.finish()

    traffic = _Section("traffic", top.take_raw("traffic", {}))
    request_probability = traffic.take_number(
        "request_probability", defaults.request_probability
    )
    traffic.finish()
    if not 0.0 <= request_probability <= 1.0:
        raise ConfigError("traffic.request_probability must lie in [0, 1]")

    simulation = _Section("simulation", top.take_raw("simulation", {}))
    days = simulation.take_int("days", defaults.days)
    seed = simulation.take_int("seed", defaults.seed)
    provider_id = simulation.take_int("provider_id", defaults.provider_id)
    simulation.finish()
    if days < 1:
        raise ConfigError("simulation.days must be at least one")
    if days > deployment.lifetime_days:
        raise ConfigError("simulation.days exceeds the deployment lifetime")
    if not 0 <= provider_id <= 0xFFFFFFFF:
        raise ConfigError("simulation.provider_id does not fit four bytes")

    attack = None
    raw_attack = top.take_raw("attack", None)
    if raw_attack is not None:
        attack = _parse_attack(_Section("attack", raw_attack), provider_id)

    top.finish()
    return ScenarioConfig(
        deployment=deployment,
        burst=burst,
        tick_seconds=tick_seconds,
        algorithm=algorithm,
        protocol=protocol,
        costs=costs,
        validity_distance=validity_distance,
        preshare_keys=preshare_keys,
        backbone_link=backbone_link,
        provider_link=provider_link,
        request_probability=request_probability,
        days=days,
        seed=seed,
        provider_id=provider_id,
        attack=attack,
    )


def load_config(path: Optional[Union[str, Path]] = None) -> ScenarioConfig:
    """Reference defaults when ``path`` is None, else the parsed file."""
    if path is None:
        return ScenarioConfig()
    try:
        raw = Path(path).read_bytes()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from None
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as err:
        raise ConfigError(f"{path}: {err}") from None
    return parse_config(doc)
