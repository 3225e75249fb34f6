"""Randomness quality checks for delivered entropy.

Three classical tests over at least 1 MiB of data, each with a fixed
pass threshold at roughly the 1e-4 significance level:

    monobit     z = |2*ones - n| / sqrt(n) over bits, pass iff z < 3.89
    runs        Wald-Wolfowitz normal approximation, pass iff |z| < 3.89
    chi_square  byte-value frequencies, 255 dof, pass iff the statistic
                lies within [153.9, 385.2]

These are smoke tests for gross defects, not an SP 800-90B estimation
suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputTooShort

MIN_INPUT_BYTES = 1 << 20

MONOBIT_Z_MAX = 3.89
RUNS_Z_MAX = 3.89
CHI_SQUARE_RANGE = (153.9, 385.2)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    passed: bool


def monobit(data: bytes) -> TestResult:
    n_bits = 8 * len(data)
    ones = int.from_bytes(data, "big").bit_count()
    z = abs(2 * ones - n_bits) / math.sqrt(n_bits)
    return TestResult(statistic=z, passed=z < MONOBIT_Z_MAX)


def runs(data: bytes) -> TestResult:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    n = bits.size
    n1 = int(bits.sum())
    n0 = n - n1
    if n1 == 0 or n0 == 0:
        return TestResult(statistic=math.inf, passed=False)
    observed = 1 + int(np.count_nonzero(np.diff(bits)))
    mean = 2.0 * n1 * n0 / n + 1.0
    var = (2.0 * n1 * n0 * (2.0 * n1 * n0 - n)) / (n * n * (n - 1.0))
    if var <= 0:
        return TestResult(statistic=math.inf, passed=False)
    z = (observed - mean) / math.sqrt(var)
    return TestResult(statistic=z, passed=abs(z) < RUNS_Z_MAX)


def chi_square(data: bytes) -> TestResult:
    counts = np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256)
    expected = len(data) / 256.0
    statistic = float(((counts - expected) ** 2 / expected).sum())
    lo, hi = CHI_SQUARE_RANGE
    return TestResult(statistic=statistic, passed=lo <= statistic <= hi)


def stats_suite(data: bytes) -> dict[str, TestResult]:
    """Run all three tests; input must be at least 1 MiB."""
    if len(data) < MIN_INPUT_BYTES:
        raise InputTooShort(
            f"need at least {MIN_INPUT_BYTES} bytes, got {len(data)}")
    return {
        "monobit": monobit(data),
        "runs": runs(data),
        "chi_square": chi_square(data),
    }
