import random
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from kychain.ledger import ManualClock
from kychain.protocol import kycs_setup, register

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("default")

START_MS = 1_700_000_000_000
DAY = 86_400_000
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def rng():
    return random.Random(1234).randbytes


@pytest.fixture
def clock():
    return ManualClock(START_MS)


@pytest.fixture
def system(clock, rng):
    return kycs_setup(128, 2, clock=clock, rng=rng)


@pytest.fixture
def alice(system):
    return register(system, "AB123456C")


@pytest.fixture
def bob(system):
    return register(system, "AB123456C")
