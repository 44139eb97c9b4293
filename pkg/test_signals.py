"""
Test seeded streams, noise scaling and trace statistics
"""
import math

import numpy as np
import pytest

from utils.signals import (CONSTANTS, DomainError, RngStream, SampledTrace, cross_correlation, johnson_sigma,
                           mean_square, nyquist_frequency, thermal_noise)


def test_rng_stream_is_reproducible():
    """Same (seed, stream_id) gives the same draws; substreams differ"""
    a = RngStream(42, 3).generator().standard_normal(5)
    b = RngStream(42, 3).generator().standard_normal(5)
    assert np.array_equal(a, b)
    c = RngStream(42, 3).substream(0).generator().standard_normal(5)
    d = RngStream(42, 3).substream(1).generator().standard_normal(5)
    assert not np.array_equal(a, c)
    assert not np.array_equal(c, d)


def test_rng_stream_rejects_negative_seed():
    with pytest.raises(DomainError):
        RngStream(-1)


def test_johnson_sigma_matches_formula():
    """1 kOhm at 300 K over f_N = 100 kHz"""
    sigma = johnson_sigma(1000.0, 300.0, 5e-6)
    expected = math.sqrt(4 * CONSTANTS.k_B * 300.0 * 1000.0 * 1e5)
    assert sigma == pytest.approx(expected, rel=1e-12)
    assert sigma == pytest.approx(1.287e-6, rel=1e-3)


def test_johnson_sigma_edges():
    assert johnson_sigma(0.0, 300.0, 1e-6) == 0.0
    assert johnson_sigma(1000.0, 0.0, 1e-6) == 0.0
    with pytest.raises(DomainError):
        johnson_sigma(-1.0, 300.0, 1e-6)
    with pytest.raises(DomainError):
        johnson_sigma(1000.0, 300.0, 0.0)
    with pytest.raises(DomainError):
        johnson_sigma(1000.0, 300.0, 1e-6, bandwidth=2 * nyquist_frequency(1e-6))


@pytest.mark.parametrize('R, T', [(math.inf, 300.0), (math.nan, 300.0), (1000.0, math.inf)])
def test_johnson_sigma_rejects_non_finite(R, T):
    with pytest.raises(DomainError):
        johnson_sigma(R, T, 1e-6)


def test_thermal_noise_variance():
    gen = RngStream(1).generator()
    trace = thermal_noise(1000.0, 300.0, 1e-6, 200_000, gen)
    sigma2 = johnson_sigma(1000.0, 300.0, 1e-6) ** 2
    assert mean_square(trace) == pytest.approx(sigma2, rel=5 * math.sqrt(2 / 200_000))


def test_sampled_trace_validation():
    with pytest.raises(DomainError):
        SampledTrace(0.0, [1.0])
    with pytest.raises(DomainError):
        SampledTrace(1.0, [1.0, float('nan')])
    with pytest.raises(DomainError):
        SampledTrace(1.0, np.zeros((2, 2)))
    assert np.allclose(SampledTrace(0.5, [0, 0, 0]).times, [0.0, 0.5, 1.0])


def test_mean_square_windows():
    trace = SampledTrace(1.0, [1.0, 2.0, 3.0, 4.0])
    assert mean_square(trace) == pytest.approx(7.5)
    assert mean_square(trace, (2, 4)) == pytest.approx(12.5)
    with pytest.raises(DomainError):
        mean_square(trace, (3, 3))
    with pytest.raises(DomainError):
        mean_square(trace, (0, 5))


def test_cross_correlation_recovers_delay():
    """b is a copy of a delayed by 7 samples"""
    gen = RngStream(5).generator()
    x = gen.standard_normal(10_000)
    y = np.concatenate([np.zeros(7), x[:-7]])
    a, b = SampledTrace(1.0, x), SampledTrace(1.0, y)
    assert cross_correlation(a, b, 7) == pytest.approx(np.mean(x[:-7] ** 2), rel=1e-12)
    assert abs(cross_correlation(a, b, 3)) < 0.05
    assert cross_correlation(b, a, -7) == pytest.approx(cross_correlation(a, b, 7), rel=1e-12)


def test_cross_correlation_errors():
    a = SampledTrace(1.0, [1.0, 2.0])
    with pytest.raises(DomainError):
        cross_correlation(a, SampledTrace(2.0, [1.0, 2.0]), 0)
    with pytest.raises(DomainError):
        cross_correlation(a, a, 5)
