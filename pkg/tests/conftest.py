"""Shared fixtures. RSA-3072 generation is the only expensive setup, so
keypairs are created once per session and reused everywhere."""

from __future__ import annotations

import random
from fractions import Fraction

import pytest

from eaas import crypto
from eaas.config import DEFAULT_PLATFORM_MEASUREMENT, ServerConfig
from eaas.pool import EntropyPool, SourceDescriptor
from eaas.server import EntropyService
from eaas.trusted import TrustedApplication


@pytest.fixture(scope="session")
def server_keypair():
    return crypto.generate_keypair()


@pytest.fixture(scope="session")
def client_keypair():
    return crypto.generate_keypair()


@pytest.fixture(scope="session")
def other_keypair():
    return crypto.generate_keypair()


class ManualClock:
    def __init__(self, start_ms: int = 1_750_000_000_000):
        self.t = start_ms

    def now(self) -> int:
        return self.t

    def advance(self, ms: int) -> None:
        self.t += ms


def seeded_generator(seed: int):
    return random.Random(seed).randbytes


def make_pool(clock, *, seed: int = 0, n_sources: int = 2,
              density: Fraction = Fraction(1),
              max_rate: Fraction = Fraction(1 << 20)) -> EntropyPool:
    pool = EntropyPool(clock.now if isinstance(clock, ManualClock) else clock)
    for i in range(n_sources):
        pool.register_source(
            SourceDescriptor(source_id=f"src{i}", declared_density=density,
                             max_rate=max_rate),
            seeded_generator(seed * 101 + i))
    return pool


def make_stack(server_keypair, *, seed: int = 0, max_delta_s: int = 4096,
               capacity: Fraction = Fraction(5),
               refill: Fraction = Fraction(1),
               n_sources: int = 2,
               density: Fraction = Fraction(1),
               max_rate: Fraction = Fraction(1 << 20)):
    """An injected-clock (clock, pool, ta, service) stack on one keypair."""
    clock = ManualClock()
    pool = make_pool(clock, seed=seed, n_sources=n_sources, density=density,
                     max_rate=max_rate)
    rng = seeded_generator(seed + 7777)
    ta = TrustedApplication(server_keypair, pool,
                            sm_measurement=DEFAULT_PLATFORM_MEASUREMENT,
                            clock=clock.now, rng=rng,
                            max_delta_s=max_delta_s)
    config = ServerConfig(max_delta_s=max_delta_s, throttle_capacity=capacity,
                          throttle_refill_rate=refill, clock_mode="injected")
    service = EntropyService(config, ta, clock.now)
    return clock, pool, ta, service


@pytest.fixture
def stack(server_keypair):
    return make_stack(server_keypair, capacity=Fraction(10 ** 6))
