"""Entropy source kinds and their pull-based generators.

A generator is a callable taking a byte count and returning exactly that
many bytes. Four kinds are supported in server configuration:

    os-random         OS CSPRNG (os.urandom)
    simulated-sensor  deterministic PRNG stream from a seed (simulation)
    file-replay       cycles through a file's bytes
    constant          a single repeated byte value (test source)
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import ConfigError
from .pool import EntropyPool, Generator, SourceDescriptor

SOURCE_KINDS = ("os-random", "simulated-sensor", "file-replay", "constant")


@dataclass(frozen=True)
class SourceSpec:
    """Config-level description of one source."""

    source_id: str
    kind: str
    density: Fraction
    max_rate: Fraction
    params: dict[str, str] = field(default_factory=dict)


def make_generator(spec: SourceSpec) -> Generator:
    if spec.kind == "os-random":
        return os.urandom
    if spec.kind == "simulated-sensor":
        prng = random.Random(int(spec.params.get("seed", "0")))
        return prng.randbytes
    if spec.kind == "constant":
        value = int(spec.params.get("value", "0"), 0)
        if not 0 <= value <= 255:
            raise ConfigError(f"constant value {value} not a byte")
        pattern = bytes([value])
        return lambda n: pattern * n
    if spec.kind == "file-replay":
        path = spec.params.get("path")
        if not path:
            raise ConfigError(f"source {spec.source_id}: file-replay "
                              "needs a path")
        data = Path(path).read_bytes()
        if not data:
            raise ConfigError(f"source {spec.source_id}: replay file empty")
        offset = 0

        def replay(n: int) -> bytes:
            nonlocal offset
            out = bytearray()
            while len(out) < n:
                take = min(n - len(out), len(data) - offset)
                out += data[offset:offset + take]
                offset = (offset + take) % len(data)
            return bytes(out)

        return replay
    raise ConfigError(f"unknown source kind {spec.kind!r}")


def register_sources(pool: EntropyPool, specs: list[SourceSpec]) -> None:
    for spec in specs:
        pool.register_source(
            SourceDescriptor(source_id=spec.source_id,
                             declared_density=spec.density,
                             max_rate=spec.max_rate),
            make_generator(spec))
