"""Per-requester rate limitation of service-request energy.

Two interchangeable algorithms track one energy counter per requester and
compare it against a burst-tolerance threshold on every request:

* leaky bucket: served requests add their energy, the bucket drains linearly
  at the tolerated average rate and floors at zero;
* EWMA: an exponentially weighted moving average of served request energy
  with a per-tick decay factor tied to the deployment lifetime.

Both use check-before-increment: a request is dropped when the decayed
counter already exceeds the threshold, and dropped requests leave the
counter untouched.  Time is continuous; the tick only fixes the unit in
which per-tick constants are expressed, so updates take fractional elapsed
ticks.  Thresholds are sized so the configured tolerated burst is admitted
in full from a fresh state while anything faster starts tripping.
"""

import enum
import io
import csv
import math
from dataclasses import dataclass

from .energy import SECONDS_PER_DAY, DeploymentConfig, threshold_depletion_rate


class Algorithm(enum.Enum):
    LEAKY_BUCKET = "lb"
    EWMA = "ewma"


class Decision(enum.Enum):
    SERVED = "served"
    DROPPED = "dropped"


class ClockWentBackwards(ValueError):
    """Update timestamp precedes the state's last update."""


class DegenerateBurst(ValueError):
    """Tolerated burst is no faster than the tolerated average rate."""


class UnknownService(LookupError):
    """Request names a service id outside the catalogue."""


@dataclass(frozen=True)
class ToleratedBurst:
    """Burst the deployment promises to admit: ``requests`` requests of one
    service inside ``window_seconds``."""

    requests: int
    window_seconds: float
    service_id: int

    def __post_init__(self):
        if self.requests < 1:
            raise ValueError("a burst needs at least one request")
        if self.window_seconds <= 0:
            raise ValueError("burst window must be positive")


@dataclass(frozen=True)
class LimiterParams:
    tick_seconds: float
    leak_per_tick: float
    lb_threshold: float
    decay: float
    ewma_init: float
    ewma_threshold: float

    def __post_init__(self):
        if self.tick_seconds <= 0:
            raise ValueError("tick must be positive")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay factor must lie in (0, 1)")


@dataclass(frozen=True)
class LeakyBucketState:
    level_j: float
    last_update_s: float


@dataclass(frozen=True)
class EwmaState:
    level_j: float
    last_update_s: float


def lb_update(
    state: LeakyBucketState,
    params: LimiterParams,
    now_s: float,
    request_energy_j: float | None = None,
) -> tuple[LeakyBucketState, Decision | None]:
    """Decay the bucket to ``now_s`` and admit or drop an optional request."""
    if now_s < state.last_update_s:
        raise ClockWentBackwards(f"{now_s} s precedes {state.last_update_s} s")
    elapsed_ticks = (now_s - state.last_update_s) / params.tick_seconds
    level = max(0.0, state.level_j - params.leak_per_tick * elapsed_ticks)
    decision = None
    if request_energy_j is not None:
        if request_energy_j <= 0:
            raise ValueError("request energy must be positive")
        if level > params.lb_threshold:
            decision = Decision.DROPPED
        else:
            level += request_energy_j
            decision = Decision.SERVED
    return LeakyBucketState(level, now_s), decision


def ewma_update(
    state: EwmaState,
    params: LimiterParams,
    now_s: float,
    request_energy_j: float | None = None,
) -> tuple[EwmaState, Decision | None]:
    """Decay the average to ``now_s`` and admit or drop an optional request."""
    if now_s < state.last_update_s:
        raise ClockWentBackwards(f"{now_s} s precedes {state.last_update_s} s")
    elapsed_ticks = (now_s - state.last_update_s) / params.tick_seconds
    level = state.level_j * params.decay**elapsed_ticks
    decision = None
    if request_energy_j is not None:
        if request_energy_j <= 0:
            raise ValueError("request energy must be positive")
        if level > params.ewma_threshold:
            decision = Decision.DROPPED
        else:
            level = (1.0 - params.decay) * request_energy_j + level
            decision = Decision.SERVED
    return EwmaState(level, now_s), decision


def lb_level(state: LeakyBucketState, params: LimiterParams, now_s: float) -> float:
    """Decayed bucket level at ``now_s`` without touching the state."""
    elapsed_ticks = max(0.0, now_s - state.last_update_s) / params.tick_seconds
    return max(0.0, state.level_j - params.leak_per_tick * elapsed_ticks)


def ewma_level(state: EwmaState, params: LimiterParams, now_s: float) -> float:
    """Decayed average at ``now_s`` without touching the state."""
    elapsed_ticks = max(0.0, now_s - state.last_update_s) / params.tick_seconds
    return state.level_j * params.decay**elapsed_ticks


def derive_lb_params(
    cfg: DeploymentConfig, burst: ToleratedBurst, tick_seconds: float = 60.0
) -> tuple[float, float]:
    """Leak per tick and bucket threshold sized to the tolerated burst.

    The threshold is the bucket level right before the burst's final request
    when the burst starts at the window's start, is spread uniformly over the
    window and is fed from an empty bucket: the final request is still
    admitted, one more at the same pace is not.  Absent flooring this equals
    (requests - 1) * (request energy - leak per request spacing).

    The derivation replays exactly the arithmetic a fresh table entry sees,
    so the final burst request lands on the threshold, not above it.
    """
    leak_per_tick = threshold_depletion_rate(cfg) * tick_seconds / SECONDS_PER_DAY
    try:
        request_energy = cfg.service_energy(burst.service_id)
    except KeyError:
        raise UnknownService(f"service {burst.service_id} not in catalogue") from None
    spacing_ticks = burst.window_seconds / burst.requests / tick_seconds
    level = 0.0
    for _ in range(burst.requests - 1):
        level += request_energy
        level = max(0.0, level - leak_per_tick * spacing_ticks)
    if level <= 0.0:
        raise DegenerateBurst("tolerated burst is slower than the tolerated average rate")
    return leak_per_tick, level


def derive_ewma_params(
    cfg: DeploymentConfig, burst: ToleratedBurst, tick_seconds: float = 60.0
) -> tuple[float, float, float]:
    """Decay factor, start level and threshold for the moving average.

    The per-tick decay factor is exp(-1 / lifetime-in-ticks), the start level
    is the tolerated drain per tick, and the threshold is the average right
    before the burst's final request when the burst is fed from the start
    level, mirroring the leaky-bucket sizing (first request at the window's
    start, so a fresh table entry replays the same arithmetic).
    """
    lifetime_ticks = cfg.lifetime_days * SECONDS_PER_DAY / tick_seconds
    decay = math.exp(-1.0 / lifetime_ticks)
    ewma_init = threshold_depletion_rate(cfg) * tick_seconds / SECONDS_PER_DAY
    try:
        request_energy = cfg.service_energy(burst.service_id)
    except KeyError:
        raise UnknownService(f"service {burst.service_id} not in catalogue") from None
    spacing_ticks = burst.window_seconds / burst.requests / tick_seconds
    level = ewma_init
    for _ in range(burst.requests - 1):
        level = (1.0 - decay) * request_energy + level
        level = level * decay**spacing_ticks
    if level <= 0.0:
        raise DegenerateBurst("tolerated burst yields a non-positive threshold")
    return decay, ewma_init, level


def build_params(
    cfg: DeploymentConfig, burst: ToleratedBurst, tick_seconds: float = 60.0
) -> LimiterParams:
    """Derive the full parameter set for both algorithms at once."""
    leak_per_tick, lb_threshold = derive_lb_params(cfg, burst, tick_seconds)
    decay, ewma_init, ewma_threshold = derive_ewma_params(cfg, burst, tick_seconds)
    return LimiterParams(
        tick_seconds=tick_seconds,
        leak_per_tick=leak_per_tick,
        lb_threshold=lb_threshold,
        decay=decay,
        ewma_init=ewma_init,
        ewma_threshold=ewma_threshold,
    )


class LimiterTable:
    """Per-requester limiter states, materialised on first sight.

    One table lives at the backend.  States of distinct requesters are fully
    independent; a fresh entry starts empty (bucket) or at the start level
    (EWMA) with its creation time as last update.
    """

    def __init__(self, params: LimiterParams, algorithm: Algorithm, services):
        self.params = params
        self.algorithm = Algorithm(algorithm)
        self._services = dict(services)
        self._states: dict = {}

    def check_and_update(self, requester_id, service_id: int, now_s: float) -> Decision:
        try:
            request_energy = self._services[service_id]
        except KeyError:
            raise UnknownService(f"service {service_id} not in catalogue") from None
        state = self._states.get(requester_id)
        if self.algorithm is Algorithm.LEAKY_BUCKET:
            if state is None:
                state = LeakyBucketState(0.0, now_s)
            state, decision = lb_update(state, self.params, now_s, request_energy)
        else:
            if state is None:
                state = EwmaState(self.params.ewma_init, now_s)
            state, decision = ewma_update(state, self.params, now_s, request_energy)
        self._states[requester_id] = state
        return decision

    def level(self, requester_id, now_s: float) -> float:
        """Decayed counter of one requester at ``now_s`` (read-only)."""
        state = self._states.get(requester_id)
        if self.algorithm is Algorithm.LEAKY_BUCKET:
            if state is None:
                return 0.0
            return lb_level(state, self.params, now_s)
        if state is None:
            return self.params.ewma_init
        return ewma_level(state, self.params, now_s)

    def requester_ids(self):
        return list(self._states)

    def dump_csv(self) -> str:
        """Current raw states, one row per requester."""
        out = io.StringIO()
        writer = csv.writer(out)
        writer.writerow(["requester_id", "algorithm", "level_j", "last_update_s"])
        for requester_id, state in self._states.items():
            writer.writerow(
                [requester_id, self.algorithm.value, repr(state.level_j), repr(state.last_update_s)]
            )
        return out.getvalue()
