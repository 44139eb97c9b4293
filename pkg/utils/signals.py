"""
Seeded random streams, Johnson-Nyquist noise scaling and trace statistics
"""
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.constants as const


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


@dataclass(frozen=True)
class PhysicalConstants:
    """Immutable physical constants used by the noise model"""
    k_B: float = const.k  # J/K, CODATA 1.380649e-23


CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class RngStream:
    """
    Reproducible random stream addressed by (seed, stream_id)

    Uses the counter-based Philox generator keyed through a SeedSequence
    spawn key, so substreams do not depend on scheduling order.
    """
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise DomainError("seed and stream_id must be non-negative")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream"""
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(seq))

    def substream(self, index: int) -> 'RngStream':
        """Independent child stream, e.g. one per trial or grid point"""
        return RngStream(self.seed, self.stream_id * 1_000_003 + index + 1)


@dataclass
class SampledTrace:
    """Uniformly sampled time series (volts or amperes, tracked by the caller)"""
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise DomainError("samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise DomainError("trace contains NaN or Inf")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.samples)) * self.dt


def nyquist_frequency(dt: float) -> float:
    """f_N = 1/(2 dt), the bandwidth of the discrete-time white noise"""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    return 1.0 / (2.0 * dt)


def johnson_sigma(R: float, T: float, dt: float, bandwidth: float = None) -> float:
    """
    Per-sample standard deviation of a resistor's Thevenin noise source

    sigma = sqrt(4 k_B T R B) with B = f_N = 1/(2 dt) unless a narrower
    bandwidth is given.
    """
    if not (math.isfinite(R) and math.isfinite(T)):
        raise DomainError(f"R and T must be finite (R={R}, T={T}); an open end has no Johnson source")
    if R < 0 or T < 0:
        raise DomainError(f"R and T must be non-negative (R={R}, T={T})")
    f_n = nyquist_frequency(dt)
    band = f_n if bandwidth is None else bandwidth
    if not 0 < band <= f_n:
        raise DomainError(f"bandwidth must lie in (0, f_N], got {band}")
    return math.sqrt(4.0 * CONSTANTS.k_B * T * R * band)


def thermal_noise(R: float, T: float, dt: float, n: int, rng: np.random.Generator) -> SampledTrace:
    """White Gaussian Johnson noise trace of n samples"""
    sigma = johnson_sigma(R, T, dt)
    return SampledTrace(dt, sigma * rng.standard_normal(n))


def _window_slice(trace: SampledTrace, window: Tuple[int, int]) -> np.ndarray:
    if window is None:
        return trace.samples
    start, stop = window
    if start < 0 or stop > len(trace) or start >= stop:
        raise DomainError(f"window {window} is empty or outside trace of length {len(trace)}")
    return trace.samples[start:stop]


def mean_square(trace: SampledTrace, window: Tuple[int, int] = None) -> float:
    """Arithmetic mean of squared samples over [start, stop)"""
    values = _window_slice(trace, window)
    if values.size == 0:
        raise DomainError("mean_square of an empty window")
    return float(np.mean(values * values))


def cross_correlation(a: SampledTrace, b: SampledTrace, lag: int) -> float:
    """(1/n) sum a(t) b(t+lag) over the overlapping region"""
    if not math.isclose(a.dt, b.dt, rel_tol=1e-12):
        raise DomainError(f"traces have different dt ({a.dt} vs {b.dt})")
    x, y = a.samples, b.samples
    if lag >= 0:
        n = min(len(x), len(y) - lag)
        x, y = x[:n], y[lag:lag + n]
    else:
        n = min(len(x) + lag, len(y))
        x, y = x[-lag:-lag + n], y[:n]
    if n <= 0:
        raise DomainError(f"no overlap at lag {lag}")
    return float(np.mean(x * y))
