"""Battery budget arithmetic for a constrained service provider.

A provider runs from a fixed primary cell.  Keeping the radio receive-ready
costs a constant average current over the whole deployment lifetime, a
configurable share of the battery is reserved for everything that is neither
radio nor request serving, and the remainder is the budget that served
requests may drain.  Splitting that budget over the expected requester
population and the lifetime yields the tolerated average depletion rate per
requester, which is what the rate limiter enforces.

Energies are joules, currents amperes, voltages volts, durations days unless
a name says otherwise.
"""

import math
from dataclasses import dataclass, field
from typing import Mapping

SECONDS_PER_DAY = 86400.0


class NonPositiveBudget(ValueError):
    """Radio listening plus the reserved share already exceed the battery."""


@dataclass(frozen=True)
class DeploymentConfig:
    """Static parameters of one provider deployment.

    ``services`` maps a one-byte service id to the energy a single served
    request of that service drains.
    """

    battery_j: float
    reserved_fraction: float
    supply_volts: float
    rx_current_amps: float
    lifetime_days: float
    requesters: int
    services: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.battery_j <= 0:
            raise ValueError("battery capacity must be positive")
        if not 0.0 <= self.reserved_fraction < 1.0:
            raise ValueError("reserved fraction must lie in [0, 1)")
        if self.supply_volts <= 0:
            raise ValueError("supply voltage must be positive")
        if self.rx_current_amps < 0:
            raise ValueError("receive current cannot be negative")
        if self.lifetime_days <= 0:
            raise ValueError("lifetime must be positive")
        if self.requesters < 1:
            raise ValueError("at least one requester is required")
        services = dict(self.services)
        for service_id, request_energy in services.items():
            if not 0 <= service_id <= 0xFF:
                raise ValueError(f"service id {service_id} does not fit one byte")
            if request_energy <= 0:
                raise ValueError(f"service {service_id} energy must be positive")
        object.__setattr__(self, "services", services)

    def service_energy(self, service_id: int) -> float:
        return self.services[service_id]

    def sole_service(self) -> int:
        """Id of the only catalogued service; error if that is ambiguous."""
        if len(self.services) != 1:
            raise ValueError("deployment offers several services, pass an explicit id")
        return next(iter(self.services))


def rx_baseline_energy(cfg: DeploymentConfig) -> float:
    """Energy spent keeping the radio receiving over the whole lifetime."""
    return cfg.supply_volts * cfg.rx_current_amps * cfg.lifetime_days * SECONDS_PER_DAY


def usable_service_energy(cfg: DeploymentConfig) -> float:
    """Battery share left for serving requests after radio and reserve."""
    budget = cfg.battery_j - rx_baseline_energy(cfg) - cfg.reserved_fraction * cfg.battery_j
    if budget <= 0:
        raise NonPositiveBudget(
            f"radio baseline and reserve leave no service budget ({budget:.3g} J)"
        )
    return budget


def threshold_depletion_rate(cfg: DeploymentConfig) -> float:
    """Tolerated average drain per requester, joules per day."""
    return usable_service_energy(cfg) / (cfg.lifetime_days * cfg.requesters)


def time_to_exhaustion(
    cfg: DeploymentConfig,
    remaining_j: float,
    burst_requests: int,
    burst_window_s: float,
    service_id: int | None = None,
) -> float:
    """Days until ``remaining_j`` is gone under back-to-back bursts.

    The attacker repeats ``burst_requests`` requests per ``burst_window_s``
    without pause; the receive baseline keeps draining concurrently.  The
    burst is smeared into a constant rate, which matches a request-by-request
    account whenever exhaustion falls on a window boundary and is otherwise
    accurate to one request spacing.
    """
    if remaining_j <= 0:
        raise ValueError("remaining energy must be positive")
    if burst_requests < 1:
        raise ValueError("a burst needs at least one request")
    if burst_window_s <= 0:
        raise ValueError("burst window must be positive")
    if service_id is None:
        service_id = cfg.sole_service()
    request_energy = cfg.service_energy(service_id)
    burst_rate = burst_requests * request_energy / (burst_window_s / SECONDS_PER_DAY)
    baseline_rate = cfg.supply_volts * cfg.rx_current_amps * SECONDS_PER_DAY
    return remaining_j / (burst_rate + baseline_rate)


@dataclass
class EnergyLedger:
    """Running account of request-serving drain against the usable budget.

    Draining past the budget is allowed; exhaustion is a predicate, not a
    clamp, so over-budget runs stay visible in reports.
    """

    budget_j: float
    drained_j: float = 0.0

    def drain(self, amount_j: float) -> None:
        if amount_j < 0 or math.isnan(amount_j):
            raise ValueError("drain amount must be non-negative")
        self.drained_j += amount_j

    @property
    def exhausted(self) -> bool:
        return self.drained_j >= self.budget_j

    @property
    def remaining_j(self) -> float:
        return self.budget_j - self.drained_j
