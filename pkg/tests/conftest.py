import pytest

from drainguard.energy import DeploymentConfig
from drainguard.limiter import ToleratedBurst

# Reference deployment used throughout the suite: a 3 V coin cell (840 mWh),
# 10 % reserved for housekeeping, a radio drawing 24 uA on average while
# receive-ready, 100 requesters over a one-year lifetime, and a single
# 45 mJ service.  The promised burst is 10 requests in 10 minutes.
COIN_CELL = dict(
    battery_j=3024.0,
    reserved_fraction=0.10,
    supply_volts=3.0,
    rx_current_amps=24e-6,
    lifetime_days=365.0,
    requesters=100,
    services={1: 0.045},
)

SERVICE_ID = 1
REQUEST_ENERGY_J = 0.045


@pytest.fixture
def deployment() -> DeploymentConfig:
    return DeploymentConfig(**COIN_CELL)


@pytest.fixture
def burst() -> ToleratedBurst:
    return ToleratedBurst(requests=10, window_seconds=600.0, service_id=SERVICE_ID)
