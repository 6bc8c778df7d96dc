"""Deterministic discrete-event network around the protocol engines.

Time is integer milliseconds on a single event heap; ties break by
insertion order, so a run is a pure function of its seed.  Every actor
draws from its own ``Random`` stream derived from the run seed and the
actor's name, which keeps traffic reproducible even when the topology
grows.

Links model the receiver's radio, not the sender's: each node owns one
inbound channel with a byte rate and base delay, and concurrent senders
queue behind each other on it.  That is where a constrained provider
hurts; at 20 bytes per second, a 9-byte request occupies the radio for
almost half a second no matter who sent it.

The attacker sits beside the network, sees a copy of every datagram, and
can inject arbitrary bytes at any node, claiming any source name.  It
cannot drop or rewrite traffic in flight, and it holds no honest keys
unless a scenario hands it a compromised requester.
"""

import heapq
from collections import Counter
from dataclasses import dataclass
from random import Random
from typing import Callable, Dict, List, Optional, Tuple

from .energy import DeploymentConfig, usable_service_energy
from .limiter import Algorithm, LimiterTable, ToleratedBurst, build_params
from .messages import ASYM_REQUEST_BYTES, MalformedMessage, encode_asym_request
from .protocols import (
    Deployment,
    Protocol,
    ProtocolError,
    Reject,
    Serve,
    build_deployment,
)

SECONDS_PER_DAY = 86400.0


class UnknownRequester(ValueError):
    """Attack names a requester that is not part of the topology."""


# ---------------------------------------------------------------------------
# clock and links
# ---------------------------------------------------------------------------

class Simulation:
    """Event heap with a millisecond clock."""

    def __init__(self):
        self.now_ms = 0
        self._seq = 0
        self._heap: List[Tuple[int, int, Callable[[], None]]] = []

    @property
    def now_s(self) -> float:
        return self.now_ms / 1000.0

    def at(self, time_s: float, fn: Callable[[], None]) -> None:
        time_ms = max(int(round(time_s * 1000.0)), self.now_ms)
        heapq.heappush(self._heap, (time_ms, self._seq, fn))
        self._seq += 1

    def after(self, delay_s: float, fn: Callable[[], None]) -> None:
        self.at(self.now_s + delay_s, fn)

    def run_until(self, end_s: float) -> None:
        end_ms = int(round(end_s * 1000.0))
        while self._heap and self._heap[0][0] <= end_ms:
            time_ms, _, fn = heapq.heappop(self._heap)
            self.now_ms = time_ms
            fn()
        self.now_ms = max(self.now_ms, end_ms)


@dataclass(frozen=True)
class LinkSpec:
    bytes_per_second: float
    base_delay_s: float = 0.0

    def __post_init__(self):
        if self.bytes_per_second <= 0:
            raise ValueError("link rate must be positive")
        if self.base_delay_s < 0:
            raise ValueError("link delay cannot be negative")


def transmit_latency(link: LinkSpec, size_bytes: int) -> float:
    """Seconds from transmission start to full reception, unqueued."""
    return size_bytes / link.bytes_per_second + link.base_delay_s


class _Inbound:
    """One node's receive path: datagrams serialise over its radio."""

    def __init__(self, sim: Simulation, link: LinkSpec, node: "Node"):
        self._sim = sim
        self._link = link
        self._node = node
        self._busy_until_ms = 0

    def push(self, payload: bytes, sender: str) -> None:
        airtime_ms = int(round(len(payload) / self._link.bytes_per_second * 1000.0))
        start_ms = max(self._sim.now_ms, self._busy_until_ms)
        self._busy_until_ms = start_ms + airtime_ms
        arrival_ms = self._busy_until_ms + int(round(self._link.base_delay_s * 1000.0))
        self._sim.at(arrival_ms / 1000.0, lambda: self._node.receive(payload, sender))


class Network:
    """Name-addressed datagram fabric with an optional observer tap."""

    def __init__(self, sim: Simulation):
        self._sim = sim
        self._inbound: Dict[str, _Inbound] = {}
        self.nodes: Dict[str, "Node"] = {}
        self.attacker: Optional["AttackerNode"] = None

    def attach(self, node: "Node", link: LinkSpec) -> None:
        if node.name in self.nodes:
            raise ValueError(f"duplicate node name {node.name!r}")
        self.nodes[node.name] = node
        self._inbound[node.name] = _Inbound(self._sim, link, node)

    def send(self, src: str, dst: str, payload: bytes) -> None:
        if self.attacker is not None:
            self.attacker.observe(self._sim.now_s, src, dst, payload)
        self._inbound[dst].push(payload, src)


# ---------------------------------------------------------------------------
# nodes
# ---------------------------------------------------------------------------

class Node:
    def __init__(self, name: str, network: Network, sim: Simulation):
        self.name = name
        self.network = network
        self.sim = sim

    def receive(self, payload: bytes, sender: str) -> None:
        raise NotImplementedError


class RequesterNode(Node):
    def __init__(self, name, network, sim, actor, traffic_rng: Random):
        super().__init__(name, network, sim)
        self.actor = actor
        self.traffic_rng = traffic_rng
        self.granted = 0
        self.throttled = 0
        self.errors: Counter = Counter()

    def start_request(self, service_id: int, provider_id: int) -> None:
        if self.actor is None:
            # Baseline mode: straight to the provider, certificates and all.
            self.network.send(
                self.name, f"provider:{provider_id}", encode_asym_request(service_id)
            )
            return
        hello = self.actor.begin(service_id, provider_id)
        self.network.send(self.name, "backend", hello)

    def receive(self, payload: bytes, sender: str) -> None:
        try:
            step = self.actor.handle_backend(payload)
        except (ProtocolError, MalformedMessage) as error:
            self.errors[type(error).__name__] += 1
            return
        if step.to_backend is not None:
            self.network.send(self.name, "backend", step.to_backend)
        if step.to_provider is not None:
            provider_id, request = step.to_provider
            self.network.send(self.name, f"provider:{provider_id}", request)
        if step.granted:
            self.granted += 1
        if step.throttled:
            self.throttled += 1


class BackendNode(Node):
    def __init__(self, name, network, sim, core):
        super().__init__(name, network, sim)
        self.core = core
        self.errors: Counter = Counter()
        # (day, requester_id) -> counts of limiter verdicts
        self.served: Counter = Counter()
        self.throttled: Counter = Counter()

    def receive(self, payload: bytes, sender: str) -> None:
        try:
            result = self.core.handle_datagram(payload, self.sim.now_s)
        except (ProtocolError, MalformedMessage) as error:
            self.errors[type(error).__name__] += 1
            return
        day = int(self.sim.now_s // SECONDS_PER_DAY)
        if result.served:
            self.served[(day, result.requester_id)] += 1
        if result.throttled:
            self.throttled[(day, result.requester_id)] += 1
        if result.reply is not None:
            self.network.send(self.name, sender, result.reply)
        if result.forward is not None:
            provider_id, request = result.forward
            self.network.send(self.name, f"provider:{provider_id}", request)


class ProviderNode(Node):
    def __init__(self, name, network, sim, core):
        super().__init__(name, network, sim)
        self.core = core
        self.outcomes: Counter = Counter()
        self.served_by_day: Counter = Counter()

    def receive(self, payload: bytes, sender: str) -> None:
        outcome = self.core.handle_request(payload)
        if isinstance(outcome, Serve):
            self.outcomes["serve"] += 1
            self.served_by_day[int(self.sim.now_s // SECONDS_PER_DAY)] += 1
        elif isinstance(outcome, Reject):
            self.outcomes[outcome.reason.value] += 1


@dataclass(frozen=True)
class Observed:
    time_s: float
    src: str
    dst: str
    payload: bytes


class AttackerNode(Node):
    """Sees everything, owns nothing.  Injection claims any source name."""

    def __init__(self, name, network, sim, rng: Random):
        super().__init__(name, network, sim)
        self.rng = rng
        self.observed: List[Observed] = []

    def observe(self, time_s: float, src: str, dst: str, payload: bytes) -> None:
        if src != self.name:
            self.observed.append(Observed(time_s, src, dst, payload))

    def inject(self, dst: str, payload: bytes, claim_src: Optional[str] = None) -> None:
        self.network._inbound[dst].push(payload, claim_src or self.name)

    def receive(self, payload: bytes, sender: str) -> None:
        # Replies to spoofed traffic land here; they are just more intel.
        self.observed.append(Observed(self.sim.now_s, sender, self.name, payload))


# ---------------------------------------------------------------------------
# topology
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TopologySpec:
    deployment: DeploymentConfig
    burst: ToleratedBurst
    algorithm: Algorithm
    protocol: Protocol
    provider_ids: Tuple[int, ...]
    verify_energy_j: float
    tick_seconds: float = 60.0
    backbone_link: LinkSpec = LinkSpec(125000.0, 0.02)
    provider_link: LinkSpec = LinkSpec(20.0, 0.0)
    preshare_keys: bool = True
    record_issued: bool = False
    validity_distance: int = 16


class Topology:
    """A fully wired network plus the bookkeeping for one run."""

    def __init__(self, spec: TopologySpec, seed: int):
        self.spec = spec
        self.seed = seed
        self.sim = Simulation()
        self.network = Network(self.sim)
        self._energy_rows: List[Tuple[int, int, float, float]] = []
        self._limiter_rows: List[Tuple[int, int, float]] = []

        params = build_params(spec.deployment, spec.burst, spec.tick_seconds)
        self.limiter = LimiterTable(params, spec.algorithm, spec.deployment.services)
        limiter = self.limiter
        requester_ids = list(range(1, spec.deployment.requesters + 1))
        self.deployment: Deployment = build_deployment(
            limiter,
            spec.deployment.services,
            spec.protocol,
            requester_ids,
            list(spec.provider_ids),
            spec.verify_energy_j,
            usable_service_energy(spec.deployment),
            seed,
            preshare_keys=spec.preshare_keys,
            record_issued=spec.record_issued,
            validity_distance=spec.validity_distance,
        )

        self.backend = BackendNode(
            "backend", self.network, self.sim, self.deployment.backend
        )
        self.network.attach(self.backend, spec.backbone_link)
        self.requesters: Dict[int, RequesterNode] = {}
        for requester_id in requester_ids:
            node = RequesterNode(
                f"requester:{requester_id}",
                self.network,
                self.sim,
                self.deployment.requesters.get(requester_id),
                Random(f"{seed}:traffic:{requester_id}"),
            )
            self.network.attach(node, spec.backbone_link)
            self.requesters[requester_id] = node
        self.providers: Dict[int, ProviderNode] = {}
        for provider_id in spec.provider_ids:
            node = ProviderNode(
                f"provider:{provider_id}",
                self.network,
                self.sim,
                self.deployment.providers[provider_id],
            )
            self.network.attach(node, spec.provider_link)
            self.providers[provider_id] = node
        self.attacker = AttackerNode(
            "attacker", self.network, self.sim, Random(f"{seed}:attacker")
        )
        self.network.attach(self.attacker, spec.backbone_link)
        self.network.attacker = self.attacker

    def run(self, days: float, settle_seconds: float = 60.0) -> "SimulationReport":
        """Run the clock ``days`` forward, plus a settle window so
        exchanges straddling the horizon can finish."""
        horizon_s = days * SECONDS_PER_DAY
        whole_days = int(days)
        for day in range(whole_days):
            for provider_id in self.spec.provider_ids:
                self.sim.at(
                    (day + 1) * SECONDS_PER_DAY,
                    self._energy_sampler(day, provider_id),
                )
            self.sim.at((day + 1) * SECONDS_PER_DAY, self._limiter_sampler(day))
        self.sim.run_until(horizon_s + settle_seconds)
        return self._report(whole_days)

    def _energy_sampler(self, day: int, provider_id: int):
        def sample():
            ledger = self.deployment.providers[provider_id].ledger
            self._energy_rows.append(
                (day, provider_id, ledger.drained_j, ledger.remaining_j)
            )

        return sample

    def _limiter_sampler(self, day: int):
        def sample():
            now_s = self.sim.now_s
            for requester_id in sorted(self.limiter.requester_ids()):
                self._limiter_rows.append(
                    (day, requester_id, self.limiter.level(requester_id, now_s))
                )

        return sample

    def _report(self, days: int) -> "SimulationReport":
        grant_keys = sorted(set(self.backend.served) | set(self.backend.throttled))
        grants = tuple(
            (key[0], key[1], self.backend.served[key], self.backend.throttled[key])
            for key in grant_keys
        )
        outcomes = tuple(
            (provider_id, outcome, count)
            for provider_id in sorted(self.providers)
            for outcome, count in sorted(self.providers[provider_id].outcomes.items())
        )
        errors = Counter(self.backend.errors)
        for node in self.requesters.values():
            errors.update(node.errors)
        return SimulationReport(
            seed=self.seed,
            days=days,
            grants=grants,
            provider_outcomes=outcomes,
            energy=tuple(self._energy_rows),
            limiter_levels=tuple(self._limiter_rows),
            errors=tuple(sorted(errors.items())),
        )


# ---------------------------------------------------------------------------
# traffic and attacks
# ---------------------------------------------------------------------------

def spawn_benign_traffic(
    topology: Topology,
    days: int,
    request_probability: float,
    service_id: int,
) -> int:
    """Each requester wakes at most once per day, at a uniform moment.

    Returns the number of requests scheduled.  The horizon must stay
    within the deployment's planned lifetime; the energy budget is sized
    for exactly that span.
    """
    if not 0.0 <= request_probability <= 1.0:
        raise ValueError("request probability must lie in [0, 1]")
    if days > topology.spec.deployment.lifetime_days:
        raise ValueError("traffic horizon exceeds the deployment lifetime")
    provider_ids = topology.spec.provider_ids
    scheduled = 0
    for requester_id, node in topology.requesters.items():
        rng = node.traffic_rng
        for day in range(days):
            if rng.random() >= request_probability:
                continue
            moment = day * SECONDS_PER_DAY + rng.uniform(0.0, SECONDS_PER_DAY)
            provider_id = provider_ids[rng.randrange(len(provider_ids))]
            topology.sim.at(
                moment,
                lambda n=node, p=provider_id: n.start_request(service_id, p),
            )
            scheduled += 1
    return scheduled


@dataclass(frozen=True)
class ChainedBursts:
    """One compromised requester repeating its tolerated burst back to back."""

    requester_id: int
    requests: int
    window_seconds: float
    start_day: float = 0.0
    days: float = 1.0
    service_id: int = 1


@dataclass(frozen=True)
class CompromisedFlood:
    """Several compromised requesters at a steady per-day request rate."""

    requester_ids: Tuple[int, ...]
    per_day: float
    start_day: float = 0.0
    days: float = 1.0
    service_id: int = 1


@dataclass(frozen=True)
class GarbageInjection:
    """Attacker-forged provider datagrams at a steady rate; every one of
    them costs the provider a verification."""

    provider_id: int
    rate_per_second: float
    size_bytes: int = 9
    start_day: float = 0.0
    days: float = 1.0


def _compromised(topology: Topology, requester_id: int) -> RequesterNode:
    try:
        return topology.requesters[requester_id]
    except KeyError:
        raise UnknownRequester(f"no requester {requester_id} in topology") from None


def spawn_attack(topology: Topology, attack) -> None:
    if isinstance(attack, ChainedBursts):
        node = _compromised(topology, attack.requester_id)
        provider_id = topology.spec.provider_ids[0]
        spacing = attack.window_seconds / attack.requests
        start = attack.start_day * SECONDS_PER_DAY
        count = int(attack.days * SECONDS_PER_DAY / spacing)
        for index in range(count):
            topology.sim.at(
                start + index * spacing,
                lambda n=node, p=provider_id: n.start_request(attack.service_id, p),
            )
        return
    if isinstance(attack, CompromisedFlood):
        spacing = SECONDS_PER_DAY / attack.per_day
        start = attack.start_day * SECONDS_PER_DAY
        count = int(attack.days * attack.per_day)
        for requester_id in attack.requester_ids:
            node = _compromised(topology, requester_id)
            provider_id = topology.spec.provider_ids[0]
            for index in range(count):
                topology.sim.at(
                    start + index * spacing,
                    lambda n=node, p=provider_id: n.start_request(attack.service_id, p),
                )
        return
    if isinstance(attack, GarbageInjection):
        attacker = topology.attacker
        spacing = 1.0 / attack.rate_per_second
        start = attack.start_day * SECONDS_PER_DAY
        count = int(attack.days * SECONDS_PER_DAY * attack.rate_per_second)
        target = f"provider:{attack.provider_id}"
        for index in range(count):
            topology.sim.at(
                start + index * spacing,
                lambda a=attacker, t=target, n=attack.size_bytes: a.inject(
                    t, a.rng.randbytes(n)
                ),
            )
        return
    raise TypeError(f"unknown attack {type(attack).__name__}")


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationReport:
    seed: int
    days: int
    grants: Tuple[Tuple[int, int, int, int], ...]
    provider_outcomes: Tuple[Tuple[int, str, int], ...]
    energy: Tuple[Tuple[int, int, float, float], ...]
    limiter_levels: Tuple[Tuple[int, int, float], ...]
    errors: Tuple[Tuple[str, int], ...]

    def grants_csv(self) -> str:
        lines = ["day,requester_id,served,throttled"]
        for day, requester_id, served, throttled in self.grants:
            lines.append(f"{day},{requester_id},{served},{throttled}")
        return "\n".join(lines) + "\n"

    def energy_csv(self) -> str:
        lines = ["day,provider_id,drained_j,remaining_j"]
        for day, provider_id, drained, remaining in self.energy:
            lines.append(f"{day},{provider_id},{drained!r},{remaining!r}")
        return "\n".join(lines) + "\n"

    def limiter_csv(self) -> str:
        lines = ["day,requester_id,level_j"]
        for day, requester_id, level in self.limiter_levels:
            lines.append(f"{day},{requester_id},{level!r}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        served = sum(row[2] for row in self.grants)
        throttled = sum(row[3] for row in self.grants)
        outcome_totals: Counter = Counter()
        for _, outcome, count in self.provider_outcomes:
            outcome_totals[outcome] += count
        parts = [
            f"days={self.days}",
            f"granted={served}",
            f"throttled={throttled}",
        ]
        parts.extend(
            f"{outcome}={count}" for outcome, count in sorted(outcome_totals.items())
        )
        for name, count in self.errors:
            parts.append(f"{name}={count}")
        return " ".join(parts)
