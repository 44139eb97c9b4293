"""
Test the noisy-observation source, advantage distillation and the key-rate bound
"""
import csv
import math

import numpy as np
import pytest

from lab import distill
from lab.distill import Fig3Params
from lab.experiments import accepted_error_closed_form, advantage_check
from lab.infotheory import gaussian_cmi
from utils.signals import DomainError, RngStream


def test_fig3_params_validation():
    with pytest.raises(DomainError):
        Fig3Params(V0=0.0)
    with pytest.raises(DomainError):
        Fig3Params(R_A=0.0)
    with pytest.raises(DomainError):
        Fig3Params(R_E=-1.0)
    with pytest.raises(DomainError):
        Fig3Params(n=0)
    params = Fig3Params()
    assert params.sigmas['A'] == pytest.approx(1.287e-6, rel=1e-3)
    assert params.to_dict()['R_E'] == 700.0


def test_fig3_sample_columns():
    params = Fig3Params(n=20_000)
    samples = distill.fig3_sample(params, RngStream(1))
    assert set(samples.columns) == {'U', 'A', 'B', 'E'}
    assert set(np.unique(samples['U'])) == {0.0, params.V0}
    noise = samples['A'] - samples['U']
    assert np.std(noise) == pytest.approx(params.sigmas['A'], rel=0.03)


def test_fig3_sample_noiseless_eve_sees_the_source():
    samples = distill.fig3_sample(Fig3Params(R_E=0.0, n=1000), RngStream(2))
    assert np.array_equal(samples['E'], samples['U'])


def test_decision_error():
    assert distill.decision_error(1.0, 0.0) == 0.0
    assert distill.decision_error(2.0, 1.0) == pytest.approx(0.158655, rel=1e-5)
    params = Fig3Params()
    assert distill.decision_error(params.V0, params.sigmas['A']) == pytest.approx(0.156, abs=0.002)


def test_hard_decision():
    bits, eps = distill.hard_decision(np.array([0.1, 0.9, 0.5]), 0.5)
    assert list(bits) == [0, 1, 0] and eps is None
    _, eps = distill.hard_decision(np.zeros(3), 0.5, sigma=1.0, V0=2.0)
    assert eps == pytest.approx(distill.decision_error(2.0, 1.0))
    with pytest.raises(DomainError):
        distill.hard_decision(np.zeros(3), math.inf)


def test_pairwise_error_rates():
    a = np.array([0, 1, 1, 0])
    b = np.array([0, 1, 0, 0])
    e = np.array([1, 0, 1, 1])
    assert distill.pairwise_error_rates(a, b, e) == (0.25, 0.75, 1.0)
    with pytest.raises(DomainError):
        distill.pairwise_error_rates(a, b[:3], e)
    with pytest.raises(DomainError):
        distill.pairwise_error_rates(a[:0], b[:0], e[:0])


def test_advantage_distill_perfect_parties():
    gen = RngStream(3).generator()
    a = gen.integers(0, 2, 10).astype(np.int8)
    blocks = distill.advantage_distill(a, a, a, 3, RngStream(4))
    # the trailing bit does not fill a block
    assert len(blocks) == 3
    assert blocks.accept_rate == 1.0
    assert np.array_equal(blocks.bob_bits, blocks.true_bits)
    assert np.array_equal(blocks.eve_bits, blocks.true_bits)
    assert blocks.eps_B == 0.0 and blocks.eps_E == 0.0
    assert all(block.accepted and block.bob_bit == block.true_bit for block in blocks)


def test_advantage_distill_rejects_inconsistent_blocks():
    a = np.array([0, 0, 0, 1, 1, 1], dtype=np.int8)
    b = np.array([0, 1, 0, 1, 1, 1], dtype=np.int8)
    blocks = distill.advantage_distill(a, b, a, 3, RngStream(5))
    assert list(blocks.accepted) == [False, True]
    assert blocks.bob_bits[0] == -1
    assert list(blocks)[0].bob_bit is None
    assert blocks.accepted_count == 1
    with pytest.raises(DomainError):
        distill.advantage_distill(a, b, a, 0)
    with pytest.raises(DomainError):
        distill.advantage_distill(a, b[:5], a, 3)


def test_advantage_distill_empty_acceptance():
    a = np.zeros(4, dtype=np.int8)
    blocks = distill.advantage_distill(a, 1 - a, a, 2, RngStream(6))
    # Bob disagrees everywhere, so every block is consistent and inverted
    assert blocks.accept_rate == 1.0 and blocks.eps_B == 1.0
    none = distill.advantage_distill(np.array([0, 0], dtype=np.int8), np.array([0, 1], dtype=np.int8),
                                     np.zeros(2, dtype=np.int8), 2, RngStream(6))
    assert none.accepted_count == 0
    assert math.isnan(none.eps_B)
    assert distill.conservative_ck_rate(none) == 0.0


@pytest.mark.parametrize('N', [1, 3, 5])
def test_bob_accepted_error_matches_closed_form(N):
    eps = 0.2
    gen = RngStream(7, N).generator()
    a = gen.integers(0, 2, 300_000).astype(np.int8)
    b = a ^ (gen.random(a.size) < eps).astype(np.int8)
    blocks = distill.advantage_distill(a, b, a, N, gen)
    expected = accepted_error_closed_form(eps, N)
    se = math.sqrt(expected * (1 - expected) / blocks.accepted_count)
    assert abs(blocks.eps_B - expected) <= 5 * se
    assert blocks.accept_rate == pytest.approx(eps ** N + (1 - eps) ** N, abs=0.01)


def test_binary_entropy():
    assert distill.binary_entropy(0.5) == 1.0
    assert distill.binary_entropy(0.0) == 0.0 and distill.binary_entropy(1.0) == 0.0
    assert distill.binary_entropy(0.11) == pytest.approx(0.4999, abs=1e-3)
    with pytest.raises(DomainError):
        distill.binary_entropy(1.5)


def test_ck_rate():
    h = distill.binary_entropy
    assert distill.ck_rate(0.1, 0.3) == pytest.approx(h(0.3) - h(0.1))
    assert distill.ck_rate(0.3, 0.1) == 0.0
    # Eve wrong more often than not is as informed as her complement
    assert distill.ck_rate(0.1, 0.7) == pytest.approx(distill.ck_rate(0.1, 0.3))
    with pytest.raises(DomainError):
        distill.ck_rate(-0.1, 0.3)


def test_clopper_pearson():
    assert distill.clopper_pearson(0, 0) == (0.0, 1.0)
    lower, upper = distill.clopper_pearson(0, 10)
    assert lower == 0.0 and upper == pytest.approx(1 - 0.025 ** 0.1, rel=1e-9)
    assert distill.clopper_pearson(10, 10)[1] == 1.0
    lower, upper = distill.clopper_pearson(30, 100)
    assert lower < 0.3 < upper


def test_conservative_rate_never_exceeds_point_estimate():
    gen = RngStream(8).generator()
    a = gen.integers(0, 2, 60_000).astype(np.int8)
    b = a ^ (gen.random(a.size) < 0.1).astype(np.int8)
    e = a ^ (gen.random(a.size) < 0.3).astype(np.int8)
    blocks = distill.advantage_distill(a, b, e, 3, gen)
    conservative = distill.conservative_ck_rate(blocks)
    assert 0.0 < conservative <= distill.ck_rate(blocks.eps_B, blocks.eps_E)


def test_gaussian_surrogate():
    params = Fig3Params()
    model = distill.gaussian_surrogate(params)
    s = params.sigmas
    var_u = params.V0 ** 2 / 4
    assert model.block(['A'])[0, 0] == pytest.approx(var_u + s['A'] ** 2)
    assert model.block(['A', 'E'])[0, 1] == pytest.approx(var_u)
    assert gaussian_cmi(distill.gaussian_surrogate(Fig3Params(R_E=0.0)), ['A'], ['B'], ['E']) == 0.0


def test_pipeline_without_eve_noise_has_no_key():
    report = distill.key_rate_pipeline(Fig3Params(R_E=0.0), rng=RngStream(9))
    assert report.best.ck_rate_per_sample == 0.0
    assert report.cmi_bound_gauss == 0.0
    assert report.cmi_bound_mc <= 0.01
    assert report.bound_ok


def test_pipeline_distills_a_key_with_eve_ahead():
    report = distill.key_rate_pipeline(Fig3Params(), rng=RngStream(10))
    eps = report.eps_table
    assert eps['eps_AE'] < eps['eps_AB']
    assert eps['eps_A'] == pytest.approx(distill.decision_error(2.6e-6, report.params.sigmas['A']))
    assert [row.N for row in report.rows] == list(distill.DEFAULT_N_GRID)
    assert any(row.ck_rate > 0 and row.eps_B < row.eps_E for row in report.rows)
    assert report.bound_ok and not report.notes
    assert report.best.ck_rate_per_sample <= report.cmi_bound_mc
    assert report.raw_mi['I(A;E)'] > report.raw_mi['I(A;B)']
    check = advantage_check(report)
    assert check.passed is True
    assert check.value > 0


def test_advantage_check_fails_when_eve_is_behind():
    """A noisier Eve makes the raw channel favour Bob, so the check has nothing to show"""
    report = distill.key_rate_pipeline(Fig3Params(R_E=5000.0, n=30_000), rng=RngStream(11))
    assert report.eps_table['eps_AE'] > report.eps_table['eps_AB']
    check = advantage_check(report)
    assert check.passed is False
    assert 'not ahead' in check.detail


def test_sweep_and_csv(tmp_path):
    base = Fig3Params(n=30_000)
    reports = distill.sweep_RE(base, [0.0, 250.0, 1000.0], [1, 3, 5], RngStream(11))
    assert [r.params.R_E for r in reports] == [0.0, 250.0, 1000.0]
    bounds = [r.cmi_bound_gauss for r in reports]
    assert bounds == sorted(bounds)
    assert [row[0] for row in distill.best_rows(reports)] == [0.0, 250.0, 1000.0]
    with pytest.raises(DomainError):
        distill.sweep_RE(base, [], [1])

    path = str(tmp_path / 'distill_sweep.csv')
    distill.write_sweep_csv(path, reports)
    with open(path, encoding='utf-8', newline='') as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 9
    assert list(rows[0]) == ['R_E', 'N', 'accept_rate', 'eps_B', 'eps_E', 'ck_rate_per_sample', 'cmi_bound_mc',
                             'cmi_bound_gauss']


def test_sweep_is_reproducible():
    base = Fig3Params(n=5_000)
    first = distill.sweep_RE(base, [500.0], [3], RngStream(12))
    second = distill.sweep_RE(base, [500.0], [3], RngStream(12))
    assert first[0].rows == second[0].rows
