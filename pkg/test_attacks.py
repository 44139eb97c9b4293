"""
Test Eve's attacks, the leakage monitor and the attack scoring
"""
import csv
import math

import numpy as np
import pytest

from lab import attacks
from lab.attacks import EchoConfig, EveGuess
from lab.protocols import Choice, CycleClock, CycleOutcome, KljnParams, NoiselessParams, kljn_run, noiseless_run
from lab.txline import EndRecord, LineConfig, Shunt, TapRecord, Termination, TransmissionLine
from utils.signals import DomainError, RngStream, SampledTrace

Z0 = 3000.0
DT = 5e-6


def tap_from(v_plus, v_minus=None, position=1) -> TapRecord:
    v_plus = np.asarray(v_plus, dtype=float)
    v_minus = np.zeros_like(v_plus) if v_minus is None else np.asarray(v_minus, dtype=float)
    return TapRecord(position, SampledTrace(DT, v_plus), SampledTrace(DT, v_minus), Z0)


def outcome(cycle, alice_bit, kept=True) -> CycleOutcome:
    a = Choice.H if alice_bit else Choice.L
    b = Choice.L if alice_bit else Choice.H
    if not kept:
        return CycleOutcome(cycle, a, a, False)
    return CycleOutcome(cycle, a, b, True, alice_bit, alice_bit)


def test_rms_attack_labels_and_forced_guess():
    clock = CycleClock(samples_per_cycle=100, cycles=3)
    msv = [0.5, 1.5, 3.0]
    tap = tap_from(np.repeat(np.sqrt(msv), 100))
    passive = attacks.rms_attack(tap, clock, (1.0, 2.0))
    assert [g.label for g in passive] == ['LOW', 'MID', 'HIGH']
    assert all(g.abstained for g in passive)
    assert [g.statistic for g in passive] == pytest.approx(msv)

    forced = attacks.rms_attack(tap, clock, (1.0, 2.0), forced=True)
    # 1.5 lies above the geometric centre sqrt(2) of the MID band
    assert forced[1].guessed_bit == 1
    assert forced[0].abstained and forced[2].abstained


def test_echo_config():
    clock = CycleClock(samples_per_cycle=1000, cycles=1, settle_samples=100)
    cfg = EchoConfig.for_tap(6, 2, clock)
    assert (cfg.delta_b, cfg.delta_a, cfg.window) == (8, 4, (100, 1000))
    with pytest.raises(DomainError):
        EchoConfig(delta_b=8, delta_a=4, window=(0, 8))
    with pytest.raises(DomainError):
        EchoConfig(delta_b=0, delta_a=4, window=(0, 100))


def test_echo_attack_reads_both_reflection_coefficients():
    """Cycle 0: Alice H, Bob L; cycle 1: Alice L, Bob H"""
    line = LineConfig(Z0=Z0, D=6, dt=DT, tap_positions=[2])
    spc = 20000
    sched_a = [(0, Termination.resistor(9000.0, 300.0)), (spc, Termination.resistor(1000.0, 300.0))]
    sched_b = [(0, Termination.resistor(1000.0, 300.0)), (spc, Termination.resistor(9000.0, 300.0))]
    result = TransmissionLine(line).run(sched_a, sched_b, 2 * spc, RngStream(21))
    clock = CycleClock(spc, 2, settle_samples=100)
    cfg = EchoConfig.for_tap(line.D, 2, clock)

    both = attacks.echo_attack(result.taps[2], clock, cfg)
    assert [g.guessed_bit for g in both] == [1, 0]
    assert both[0].statistic == pytest.approx(1.0, abs=0.1)
    assert both[1].statistic == pytest.approx(-1.0, abs=0.1)
    assert [g.guessed_bit for g in attacks.echo_attack(result.taps[2], clock, cfg, side='alice')] == [1, 0]
    assert [g.guessed_bit for g in attacks.echo_attack(result.taps[2], clock, cfg, side='bob')] == [1, 0]
    with pytest.raises(DomainError):
        attacks.echo_attack(result.taps[2], clock, cfg, side='eve')


def test_echo_attack_recovers_kljn_key():
    params = KljnParams(cycles=20, samples_per_cycle=10000, settle_samples=500)
    line = LineConfig(Z0=Z0, D=2, dt=DT, tap_positions=[1])
    run = kljn_run(params, line, RngStream(9))
    cfg = EchoConfig.for_tap(line.D, 1, run.clock)
    report = attacks.attack_accuracy(attacks.echo_attack(run.taps[1], run.clock, cfg), run.outcomes)
    assert report.scored == report.kept > 0
    assert report.accuracy == 1.0


def opposite_choices_run(cycles: int, spc: int, rng):
    """Alice and Bob always pick opposite resistors; returns Eve's tap at cell 2 of 6 and the truth"""
    config = LineConfig(Z0=Z0, D=6, dt=DT, tap_positions=[2])
    gen = rng.generator()
    alice_h = gen.integers(0, 2, cycles).astype(bool)
    sched_a = [(c * spc, Termination.resistor(9000.0 if h else 1000.0, 300.0)) for c, h in enumerate(alice_h)]
    sched_b = [(c * spc, Termination.resistor(1000.0 if h else 9000.0, 300.0)) for c, h in enumerate(alice_h)]
    result = TransmissionLine(config).run(sched_a, sched_b, cycles * spc, gen)
    return result.taps[2], [outcome(c, int(h)) for c, h in enumerate(alice_h)]


def test_echo_accuracy_grows_with_window():
    cycles, spc, settle = 200, 2100, 100
    tap, truth = opposite_choices_run(cycles, spc, RngStream(31))
    clock = CycleClock(spc, cycles, settle_samples=settle)
    accuracies = []
    for length in (10, 40, 400, 2000):
        cfg = EchoConfig(delta_b=8, delta_a=4, window=(settle, settle + length))
        accuracies.append(attacks.attack_accuracy(attacks.echo_attack(tap, clock, cfg), truth).accuracy)
    for shorter, longer in zip(accuracies, accuracies[1:]):
        assert longer >= shorter - math.sqrt(shorter * (1 - shorter) / cycles)
    assert accuracies[0] < accuracies[-1] == 1.0


def test_echo_at_chance_with_both_ends_matched():
    cycles, spc = 300, 1000
    config = LineConfig(Z0=Z0, D=6, dt=DT, tap_positions=[2])
    matched = Termination.resistor(Z0, 300.0)
    result = TransmissionLine(config).run(matched, matched, cycles * spc, RngStream(32))
    clock = CycleClock(spc, cycles, settle_samples=100)
    guesses = attacks.echo_attack(result.taps[2], clock, EchoConfig.for_tap(config.D, 2, clock))
    positive = sum(g.statistic > 0 for g in guesses)
    assert attacks.binomial_chance_test(positive, cycles) >= 0.001
    assert abs(np.mean([g.statistic for g in guesses])) < 0.05


def test_noise_floor():
    steps = SampledTrace(DT, np.concatenate([np.zeros(50), np.ones(50)]))
    assert attacks.noise_floor(steps) == 0.0
    gen = RngStream(4).generator()
    noisy = SampledTrace(DT, 0.3 * gen.standard_normal(50_000))
    assert attacks.noise_floor(noisy) == pytest.approx(0.3, rel=0.03)
    assert attacks.noise_floor(SampledTrace(DT, [1.0])) == 0.0


def test_transient_attack_first_arrival():
    half = 20
    clock = CycleClock(samples_per_cycle=2 * half, cycles=4, settle_samples=8, samples_per_half=half,
                       ground_samples=2)
    v_plus = np.zeros(4 * 2 * half)
    v_minus = np.zeros_like(v_plus)
    v_plus[0 * 40 + 5], v_minus[0 * 40 + 9] = 1.0, 1.0   # Alice first
    v_plus[1 * 40 + 9], v_minus[1 * 40 + 5] = 1.0, 1.0   # Bob first
    v_plus[3 * 40 + 6], v_minus[3 * 40 + 6] = 1.0, 1.0   # simultaneous
    guesses = attacks.transient_attack(tap_from(v_plus, v_minus), clock)
    assert [g.guessed_bit for g in guesses] == [1, 0, None, None]
    assert [g.label for g in guesses] == ['alice', 'bob', 'none', 'tie']
    assert guesses[0].statistic == 4.0


def test_transient_attack_ignores_ground_window():
    clock = CycleClock(samples_per_cycle=40, cycles=1, samples_per_half=20, ground_samples=3)
    v_plus = np.zeros(40)
    v_minus = np.zeros(40)
    v_plus[1] = 1.0     # inside the grounding window
    v_minus[10] = 1.0
    guesses = attacks.transient_attack(tap_from(v_plus, v_minus), clock, threshold=0.5)
    assert guesses[0].guessed_bit == 0


def test_transient_attack_breaks_noiseless():
    params = NoiselessParams(cycles=40)
    run = noiseless_run(params, LineConfig(Z0=Z0, D=8, dt=DT, tap_positions=[4]), RngStream(2))
    report = attacks.attack_accuracy(attacks.transient_attack(run.taps[4], run.clock), run.outcomes)
    assert report.kept > 0
    assert report.abstain_rate == 0.0
    assert report.accuracy == 1.0


def test_combine_guesses():
    primary = [EveGuess(0, 1, 1.0), EveGuess(1, None, 0.0)]
    fallback = [EveGuess(0, 0, -1.0), EveGuess(1, 0, -1.0)]
    combined = attacks.combine_guesses(primary, fallback)
    assert [g.guessed_bit for g in combined] == [1, 0]
    with pytest.raises(DomainError):
        attacks.combine_guesses(primary, fallback[:1])


def test_shunt_attack_compares_feed_currents():
    half, cycles = 10, 3
    clock = CycleClock(samples_per_cycle=2 * half, cycles=cycles, settle_samples=2, samples_per_half=half)
    i_left = np.zeros(2 * half * cycles)
    i_right = np.zeros_like(i_left)
    i_left[0:half], i_right[half:2 * half] = 1e-3, -1e-3              # Alice feeds first
    i_right[2 * half:3 * half], i_left[3 * half:4 * half] = -1e-3, 1e-3  # Bob feeds first
    left, right = tap_from(i_left * Z0, position=3), tap_from(i_right * Z0, position=5)

    guesses = attacks.shunt_attack(left, right, clock)
    assert [g.guessed_bit for g in guesses] == [1, 0, None]
    assert guesses[2].label == 'tie'
    coin = attacks.shunt_attack(left, right, clock, rng=RngStream(1))
    assert coin[2].label == 'coin' and coin[2].guessed_bit in (0, 1)


def test_shunt_attack_and_leakage_monitor_on_the_line():
    params = NoiselessParams(cycles=24)
    plain = noiseless_run(params, LineConfig(Z0=Z0, D=8, dt=DT, tap_positions=[4]), RngStream(5))
    shunted_line = LineConfig(Z0=Z0, D=8, dt=DT, tap_positions=[3, 5], shunt=Shunt(4, 100 * Z0))
    shunted = noiseless_run(params, shunted_line, RngStream(5))

    guesses = attacks.shunt_attack(shunted.taps[3], shunted.taps[5], shunted.clock)
    report = attacks.attack_accuracy(guesses, shunted.outcomes)
    assert report.kept > 0 and report.accuracy == 1.0

    # the shunt drains V0/(Z0 + R_s), far above the ammeter resolution
    caught = attacks.leakage_monitor(shunted.line_run.alice, shunted.line_run.bob, shunted.clock, 1e-9)
    assert caught.abort
    assert caught.max_discrepancy == pytest.approx(1.0 / (Z0 + 100 * Z0), rel=0.05)
    quiet = attacks.leakage_monitor(plain.line_run.alice, plain.line_run.bob, plain.clock, 1e-9)
    assert not quiet.abort and quiet.flagged_halves == 0


def test_weak_shunt_evades_monitor_but_still_leaks():
    I_min = 1e-9
    params = NoiselessParams(cycles=16)
    line = LineConfig(Z0=Z0, D=8, dt=DT, tap_positions=[3, 5], shunt=Shunt(4, 10 * params.V0 / I_min))
    run = noiseless_run(params, line, RngStream(6))
    decision = attacks.leakage_monitor(run.line_run.alice, run.line_run.bob, run.clock, I_min)
    assert not decision.abort
    report = attacks.attack_accuracy(attacks.shunt_attack(run.taps[3], run.taps[5], run.clock), run.outcomes)
    assert report.accuracy == 1.0


def test_leakage_monitor_against_reference_run():
    clock = CycleClock(samples_per_cycle=20, cycles=1, settle_samples=2, samples_per_half=10)
    current = SampledTrace(DT, np.full(20, 5e-6))
    end = EndRecord(0, SampledTrace(DT, np.zeros(20)), current)
    assert attacks.leakage_monitor(end, end, clock, 1e-9).abort
    assert not attacks.leakage_monitor(end, end, clock, 1e-9, predicted=(end, end)).abort
    with pytest.raises(DomainError):
        attacks.leakage_monitor(end, end, clock, -1.0)
    with pytest.raises(DomainError):
        attacks.leakage_monitor(end, end, CycleClock(samples_per_cycle=20, cycles=1), 1e-9)


def test_attack_accuracy_scores_kept_cycles_only():
    truth = [outcome(0, 1), outcome(1, 0), outcome(2, 1, kept=False), outcome(3, 1)]
    guesses = [EveGuess(0, 1, 1.0), EveGuess(1, 1, 1.0), EveGuess(2, 0, -1.0), EveGuess(3, None, 0.0)]
    report = attacks.attack_accuracy(guesses, truth)
    assert (report.kept, report.scored, report.correct) == (3, 2, 1)
    assert report.accuracy == 0.5
    assert report.abstain_rate == pytest.approx(1 / 3)

    silent = attacks.attack_accuracy([EveGuess(0, None, 0.0)], [outcome(0, 1)])
    assert silent.accuracy is None and silent.abstain_rate == 1.0
    with pytest.raises(DomainError):
        attacks.attack_accuracy(guesses[:2], truth)
    with pytest.raises(DomainError):
        attacks.attack_accuracy([EveGuess(5, 1, 1.0)], [outcome(0, 1)])


def test_level_identification_accuracy():
    truth = [outcome(0, 1, kept=False), outcome(1, 0, kept=False), outcome(2, 1)]
    guesses = [EveGuess(0, None, 9.0, 'HIGH'), EveGuess(1, None, 1.0, 'MID'), EveGuess(2, None, 4.0, 'MID')]
    # cycle 0 is HH (labelled HIGH), cycle 1 is LL (missed); cycle 2 is mixed and ignored
    assert attacks.level_identification_accuracy(guesses, truth) == 0.5
    assert attacks.level_identification_accuracy(guesses[2:], truth[2:]) is None


def test_binomial_chance_test():
    assert attacks.binomial_chance_test(50, 100) == pytest.approx(1.0)
    assert attacks.binomial_chance_test(100, 100) < 1e-20
    assert attacks.binomial_chance_test(0, 0) == 1.0


def test_write_attack_report_csv_appends(tmp_path):
    path = str(tmp_path / 'attack_report.csv')
    truth = [outcome(0, 1), outcome(1, 0, kept=False)]
    guesses = [EveGuess(0, 1, 0.25), EveGuess(1, None, 0.0)]
    attacks.write_attack_report_csv(path, 'echo', guesses, truth)
    attacks.write_attack_report_csv(path, 'rms', guesses, truth, append=True)
    with open(path, encoding='utf-8', newline='') as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 4
    assert rows[0] == {'cycle': '0', 'attack': 'echo', 'statistic': '0.25', 'guess': '1', 'truth': '1',
                       'correct': '1'}
    assert rows[1]['guess'] == 'ABSTAIN' and rows[1]['truth'] == '' and rows[1]['correct'] == ''
    assert rows[3]['attack'] == 'rms'
