"""Ready-made studies over one scenario configuration.

Each function here turns a ``ScenarioConfig`` into numbers or a report:
the derived limiter parameters, exhaustion times under chained bursts,
a year-long detection study, request latencies on the constrained link,
and the drain an injection attacker can force.  The detection study runs
against the limiter alone; full-stack runs with radios and protocol
engines go through ``run_scenario``.
"""

from dataclasses import dataclass, replace
from random import Random
from typing import Dict, List, Optional, Sequence, Tuple

from .config import ScenarioConfig
from .energy import (
    rx_baseline_energy,
    threshold_depletion_rate,
    time_to_exhaustion,
    usable_service_energy,
)
from .limiter import Algorithm, Decision, LimiterTable, build_params
from .messages import ASYM_REQUEST_BYTES, PROXY_REQUEST_BYTES, TICKET_REDEEM_BYTES
from .protocols import Protocol
from .simnet import (
    SECONDS_PER_DAY,
    SimulationReport,
    Topology,
    TopologySpec,
    UnknownRequester,
    spawn_attack,
    spawn_benign_traffic,
    transmit_latency,
)


# ---------------------------------------------------------------------------
# derived parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParameterTable:
    """Everything the deployment derives from its static configuration."""

    rx_baseline_j: float
    service_budget_j: float
    depletion_rate_j_per_day: float
    tick_seconds: float
    leak_per_tick_j: float
    bucket_threshold_j: float
    ewma_decay: float
    ewma_start_j: float
    ewma_threshold_j: float

    def rows(self) -> List[Tuple[str, float, str]]:
        return [
            ("rx_baseline_j", self.rx_baseline_j, "J over lifetime"),
            ("service_budget_j", self.service_budget_j, "J over lifetime"),
            ("depletion_rate_j_per_day", self.depletion_rate_j_per_day, "J/day per requester"),
            ("tick_seconds", self.tick_seconds, "s"),
            ("leak_per_tick_j", self.leak_per_tick_j, "J/tick"),
            ("bucket_threshold_j", self.bucket_threshold_j, "J"),
            ("ewma_decay", self.ewma_decay, "per tick"),
            ("ewma_start_j", self.ewma_start_j, "J"),
            ("ewma_threshold_j", self.ewma_threshold_j, "J"),
        ]

    def render(self) -> str:
        width = max(len(name) for name, _, _ in self.rows())
        lines = [
            f"{name:<{width}}  {value:.12g}  {unit}" for name, value, unit in self.rows()
        ]
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        lines = ["parameter,value,unit"]
        lines.extend(f"{name},{value!r},{unit}" for name, value, unit in self.rows())
        return "\n".join(lines) + "\n"


def parameter_table(cfg: ScenarioConfig) -> ParameterTable:
    params = build_params(cfg.deployment, cfg.burst, cfg.tick_seconds)
    return ParameterTable(
        rx_baseline_j=rx_baseline_energy(cfg.deployment),
        service_budget_j=usable_service_energy(cfg.deployment),
        depletion_rate_j_per_day=threshold_depletion_rate(cfg.deployment),
        tick_seconds=params.tick_seconds,
        leak_per_tick_j=params.leak_per_tick,
        bucket_threshold_j=params.lb_threshold,
        ewma_decay=params.decay,
        ewma_start_j=params.ewma_init,
        ewma_threshold_j=params.ewma_threshold,
    )


# ---------------------------------------------------------------------------
# attack severity without rate limitation
# ---------------------------------------------------------------------------

DEFAULT_SEVERITY_GRID: Tuple[Tuple[int, float], ...] = (
    (1, 600.0),
    (10, 600.0),
    (100, 600.0),
    (1000, 600.0),
)


@dataclass(frozen=True)
class SeverityRow:
    burst_requests: int
    burst_window_s: float
    drain_j_per_day: float
    days_to_exhaustion: float


def severity_grid(
    cfg: ScenarioConfig,
    grid: Sequence[Tuple[int, float]] = DEFAULT_SEVERITY_GRID,
    service_id: Optional[int] = None,
) -> List[SeverityRow]:
    """Days until an unthrottled chained-burst attacker kills the battery.

    This is the motivating number: without rate limitation nothing stops
    a requester from repeating its burst back to back, so the whole
    battery (not just the service budget) is on the line.
    """
    if service_id is None:
        service_id = cfg.burst.service_id
    request_energy = cfg.deployment.service_energy(service_id)
    rows = []
    for requests, window_s in grid:
        days = time_to_exhaustion(
            cfg.deployment, cfg.deployment.battery_j, requests, window_s, service_id
        )
        drain = requests * request_energy / (window_s / SECONDS_PER_DAY)
        rows.append(SeverityRow(requests, window_s, drain, days))
    return rows


def severity_csv(rows: Sequence[SeverityRow]) -> str:
    lines = ["burst_requests,burst_window_s,drain_j_per_day,days_to_exhaustion"]
    for row in rows:
        lines.append(
            f"{row.burst_requests},{row.burst_window_s!r},"
            f"{row.drain_j_per_day!r},{row.days_to_exhaustion!r}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# detection study (limiter level)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectionSpec:
    """A year of benign load with compromised requesters turning hostile.

    Benign requesters keep their daily request habit for the whole run;
    from ``attack_start_day`` each attacker additionally repeats the
    tolerated burst back to back (one request per burst spacing, around
    the clock).  ``transient_days`` after the attack starts are excluded
    from steady-state rates.
    """

    days: Optional[int] = None
    attack_start_day: float = 200.0
    attacker_ids: Tuple[int, ...] = (100,)
    attack_requests: int = 10
    attack_window_seconds: float = 600.0
    transient_days: float = 5.0
    service_id: Optional[int] = None


@dataclass
class DetectionResult:
    algorithm: Algorithm
    seed: int
    days: int
    attack_start_day: float
    transient_days: float
    attacker_ids: Tuple[int, ...]
    request_energy_j: float
    benign_requests: int
    benign_drops: int
    attack_served: Dict[int, int]
    attack_post_transient: Dict[int, int]
    serves_by_requester: Dict[int, int]
    rows: Tuple[Tuple[int, int, int, int, float], ...]

    def false_drop_rate(self) -> float:
        if self.benign_requests == 0:
            return 0.0
        return self.benign_drops / self.benign_requests

    @property
    def attack_days(self) -> float:
        return self.days - self.attack_start_day

    def post_transient_rate(self, requester_id: int) -> float:
        """Served requests per day once the attack has settled."""
        span = self.days - self.attack_start_day - self.transient_days
        if span <= 0:
            raise ValueError("no post-transient span in this run")
        return self.attack_post_transient[requester_id] / span

    def served_energy_j(self, requester_id: int) -> float:
        return self.serves_by_requester.get(requester_id, 0) * self.request_energy_j

    def csv(self) -> str:
        lines = ["day,requester_id,served,dropped,level_j"]
        for day, requester_id, served, dropped, level in self.rows:
            lines.append(f"{day},{requester_id},{served},{dropped},{level!r}")
        return "\n".join(lines) + "\n"


def run_detection(
    cfg: ScenarioConfig,
    algorithm: Optional[Algorithm] = None,
    seed: Optional[int] = None,
    spec: DetectionSpec = DetectionSpec(),
) -> DetectionResult:
    """Drive the limiter with a year of mixed traffic, request by request.

    Runs at the limiter's level of abstraction: request timestamps go
    straight into the backend's table, with no radios or handshakes in
    between.  That keeps a multi-seed, both-algorithms study in seconds
    while exercising exactly the arithmetic the backend would run.
    """
    algorithm = cfg.algorithm if algorithm is None else Algorithm(algorithm)
    seed = cfg.seed if seed is None else seed
    days = cfg.days if spec.days is None else spec.days
    service_id = cfg.burst.service_id if spec.service_id is None else spec.service_id
    request_energy = cfg.deployment.service_energy(service_id)
    population = range(1, cfg.deployment.requesters + 1)
    for attacker in spec.attacker_ids:
        if attacker not in population:
            raise UnknownRequester(f"no requester {attacker} in deployment")
    if not 0 <= spec.attack_start_day <= days:
        raise ValueError("attack start must fall inside the run")

    # benign: each requester at most once per day at a uniform moment
    events: List[Tuple[float, int, int]] = []
    for requester_id in population:
        rng = Random(f"{seed}:benign:{requester_id}")
        for day in range(days):
            if rng.random() < cfg.request_probability:
                moment = day * SECONDS_PER_DAY + rng.uniform(0.0, SECONDS_PER_DAY)
                events.append((moment, requester_id, 0))
    # attackers: the tolerated burst pace, back to back, around the clock
    spacing = spec.attack_window_seconds / spec.attack_requests
    start_s = spec.attack_start_day * SECONDS_PER_DAY
    count = int((days * SECONDS_PER_DAY - start_s) / spacing)
    for requester_id in spec.attacker_ids:
        events.extend(
            (start_s + index * spacing, requester_id, 1) for index in range(count)
        )
    events.sort()

    params = build_params(cfg.deployment, cfg.burst, cfg.tick_seconds)
    table = LimiterTable(params, algorithm, cfg.deployment.services)

    served: Dict[Tuple[int, int], int] = {}
    dropped: Dict[Tuple[int, int], int] = {}
    serves_by_requester: Dict[int, int] = {}
    benign_requests = 0
    benign_drops = 0
    attack_served = {requester_id: 0 for requester_id in spec.attacker_ids}
    attack_post = {requester_id: 0 for requester_id in spec.attacker_ids}
    post_start_s = (spec.attack_start_day + spec.transient_days) * SECONDS_PER_DAY

    rows: List[Tuple[int, int, int, int, float]] = []
    cursor = 0
    for day in range(days):
        boundary = (day + 1) * SECONDS_PER_DAY
        while cursor < len(events) and events[cursor][0] < boundary:
            moment, requester_id, is_attack = events[cursor]
            cursor += 1
            decision = table.check_and_update(requester_id, service_id, moment)
            key = (day, requester_id)
            if decision is Decision.SERVED:
                served[key] = served.get(key, 0) + 1
                serves_by_requester[requester_id] = (
                    serves_by_requester.get(requester_id, 0) + 1
                )
            else:
                dropped[key] = dropped.get(key, 0) + 1
            if moment < start_s:
                benign_requests += 1
                benign_drops += decision is Decision.DROPPED
            elif is_attack:
                if decision is Decision.SERVED:
                    attack_served[requester_id] += 1
                    attack_post[requester_id] += moment >= post_start_s
        for requester_id in population:
            key = (day, requester_id)
            rows.append(
                (
                    day,
                    requester_id,
                    served.get(key, 0),
                    dropped.get(key, 0),
                    table.level(requester_id, boundary),
                )
            )

    return DetectionResult(
        algorithm=algorithm,
        seed=seed,
        days=days,
        attack_start_day=spec.attack_start_day,
        transient_days=spec.transient_days,
        attacker_ids=spec.attacker_ids,
        request_energy_j=request_energy,
        benign_requests=benign_requests,
        benign_drops=benign_drops,
        attack_served=attack_served,
        attack_post_transient=attack_post,
        serves_by_requester=serves_by_requester,
        rows=tuple(rows),
    )


def served_energy_bound(cfg: ScenarioConfig, algorithm: Algorithm) -> float:
    """Worst-case service energy one requester can extract over a lifetime.

    A full counter admits at most one threshold's worth plus one request
    that lands exactly on it, and the counter refills no faster than the
    tolerated depletion rate.
    """
    params = build_params(cfg.deployment, cfg.burst, cfg.tick_seconds)
    threshold = (
        params.lb_threshold
        if Algorithm(algorithm) is Algorithm.LEAKY_BUCKET
        else params.ewma_threshold
    )
    request_energy = cfg.deployment.service_energy(cfg.burst.service_id)
    rate = threshold_depletion_rate(cfg.deployment)
    return threshold + request_energy + rate * cfg.deployment.lifetime_days


@dataclass(frozen=True)
class DetectionSummary:
    """Multi-seed aggregate of one algorithm's detection study."""

    algorithm: Algorithm
    seeds: Tuple[int, ...]
    false_drop_rate: float
    attack_served_per_seed: float
    post_transient_rate: float
    worst_served_energy_j: float

    def render(self) -> str:
        return (
            f"algorithm={self.algorithm.value} seeds={len(self.seeds)} "
            f"false_drop_rate={self.false_drop_rate:.6f} "
            f"attack_served_per_seed={self.attack_served_per_seed:.3f} "
            f"post_transient_rate={self.post_transient_rate:.6f} "
            f"worst_served_energy_j={self.worst_served_energy_j:.6f}\n"
        )


def summarize_detection(results: Sequence[DetectionResult]) -> DetectionSummary:
    if not results:
        raise ValueError("nothing to summarize")
    algorithms = {result.algorithm for result in results}
    if len(algorithms) != 1:
        raise ValueError("mixed algorithms in one summary")
    total_requests = sum(result.benign_requests for result in results)
    total_drops = sum(result.benign_drops for result in results)
    attack_totals = [
        sum(result.attack_served.values()) for result in results
    ]
    rates = [
        result.post_transient_rate(requester_id)
        for result in results
        for requester_id in result.attacker_ids
    ]
    worst = max(
        result.served_energy_j(requester_id)
        for result in results
        for requester_id in result.serves_by_requester
    )
    return DetectionSummary(
        algorithm=algorithms.pop(),
        seeds=tuple(result.seed for result in results),
        false_drop_rate=total_drops / total_requests if total_requests else 0.0,
        attack_served_per_seed=sum(attack_totals) / len(attack_totals),
        post_transient_rate=sum(rates) / len(rates) if rates else 0.0,
        worst_served_energy_j=worst,
    )


# ---------------------------------------------------------------------------
# request latency on the constrained link
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatencyRow:
    scheme: str
    request_bytes: int
    seconds: float


def latency_table(cfg: ScenarioConfig) -> List[LatencyRow]:
    """Time for one provider-bound request to cross the provider's radio."""
    sizes = [
        (Protocol.PROXY.value, PROXY_REQUEST_BYTES),
        (Protocol.TICKET.value, TICKET_REDEEM_BYTES),
        (Protocol.ASYMMETRIC.value, ASYM_REQUEST_BYTES),
    ]
    return [
        LatencyRow(name, size, transmit_latency(cfg.provider_link, size))
        for name, size in sizes
    ]


def latency_csv(rows: Sequence[LatencyRow]) -> str:
    lines = ["scheme,request_bytes,seconds"]
    for row in rows:
        lines.append(f"{row.scheme},{row.request_bytes},{row.seconds!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# garbage-injection drain
# ---------------------------------------------------------------------------

REQUEST_SIZES = {
    Protocol.PROXY: PROXY_REQUEST_BYTES,
    Protocol.TICKET: TICKET_REDEEM_BYTES,
    Protocol.ASYMMETRIC: ASYM_REQUEST_BYTES,
}


@dataclass(frozen=True)
class InjectionDrain:
    scheme: str
    rate_per_second: float
    days: float
    size_bytes: int
    attempted: int
    delivered: int
    drained_j: float
    battery_fraction: float

    def render(self) -> str:
        return (
            f"scheme={self.scheme} rate_per_second={self.rate_per_second:g} "
            f"days={self.days:g} size_bytes={self.size_bytes} "
            f"attempted={self.attempted} delivered={self.delivered} "
            f"drained_j={self.drained_j:.6g} "
            f"battery_fraction={self.battery_fraction:.6g}\n"
        )


def injection_drain(
    cfg: ScenarioConfig,
    protocol: Optional[Protocol] = None,
    rate_per_second: float = 1.0,
    days: Optional[float] = None,
    size_bytes: Optional[int] = None,
) -> InjectionDrain:
    """Verification energy a sustained stream of garbage requests drains.

    The attacker sends well-formed but unauthenticated requests of the
    protocol's exact size, each forcing one verification.  The provider's
    radio caps how many can arrive: past its byte rate, extra datagrams
    queue forever and stop mattering.
    """
    if rate_per_second < 0:
        raise ValueError("injection rate cannot be negative")
    protocol = cfg.protocol if protocol is None else protocol
    days = float(cfg.days) if days is None else days
    if size_bytes is None:
        size_bytes = REQUEST_SIZES[protocol]
    verify_j = cfg.costs.for_protocol(protocol)
    horizon_s = days * SECONDS_PER_DAY
    attempted = int(horizon_s * rate_per_second)
    capacity_per_second = cfg.provider_link.bytes_per_second / size_bytes
    delivered = min(attempted, int(horizon_s * capacity_per_second))
    drained = delivered * verify_j
    return InjectionDrain(
        scheme=protocol.value,
        rate_per_second=rate_per_second,
        days=days,
        size_bytes=size_bytes,
        attempted=attempted,
        delivered=delivered,
        drained_j=drained,
        battery_fraction=drained / cfg.deployment.battery_j,
    )


def injection_csv(rows: Sequence[InjectionDrain]) -> str:
    lines = [
        "scheme,rate_per_second,days,size_bytes,attempted,delivered,"
        "drained_j,battery_fraction"
    ]
    for row in rows:
        lines.append(
            f"{row.scheme},{row.rate_per_second!r},{row.days!r},{row.size_bytes},"
            f"{row.attempted},{row.delivered},{row.drained_j!r},"
            f"{row.battery_fraction!r}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# full-stack scenario runs
# ---------------------------------------------------------------------------

def build_topology_spec(cfg: ScenarioConfig) -> TopologySpec:
    return TopologySpec(
        deployment=cfg.deployment,
        burst=cfg.burst,
        algorithm=cfg.algorithm,
        protocol=cfg.protocol,
        provider_ids=(cfg.provider_id,),
        verify_energy_j=cfg.verify_energy_j,
        tick_seconds=cfg.tick_seconds,
        backbone_link=cfg.backbone_link,
        provider_link=cfg.provider_link,
        preshare_keys=cfg.preshare_keys,
        validity_distance=cfg.validity_distance,
    )


def run_scenario(cfg: ScenarioConfig, seed: Optional[int] = None) -> SimulationReport:
    """One full-stack run: radios, handshakes, limiter, energy ledgers."""
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    topology = Topology(build_topology_spec(cfg), cfg.seed)
    spawn_benign_traffic(
        topology, cfg.days, cfg.request_probability, cfg.burst.service_id
    )
    if cfg.attack is not None:
        spawn_attack(topology, cfg.attack)
    return topology.run(cfg.days)
