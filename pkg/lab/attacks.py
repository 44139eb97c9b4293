"""
Eve's toolkit: passive RMS, echo and transient attacks, the active shunt
attack, and the defenders' leakage monitor
"""
import csv
import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from lab.protocols import CycleClock, CycleOutcome, MsvLevel, classify_msv, meter_msv
from lab.txline import EndRecord, TapRecord, as_generator
from utils.signals import DomainError, SampledTrace, cross_correlation, mean_square

logger = logging.getLogger(__name__)

ABSTAIN = None


@dataclass
class EveGuess:
    cycle: int
    guessed_bit: Optional[int]
    statistic: float
    label: str = ''

    @property
    def abstained(self) -> bool:
        return self.guessed_bit is ABSTAIN


@dataclass
class EchoConfig:
    """Round-trip lags from Eve's tap and the per-cycle window (offsets from cycle start)"""
    delta_b: int
    delta_a: int
    window: Tuple[int, int]

    def __post_init__(self):
        start, stop = self.window
        if self.delta_a <= 0 or self.delta_b <= 0:
            raise DomainError("echo lags must be positive")
        if stop - start <= max(self.delta_a, self.delta_b):
            raise DomainError(f"window {self.window} is shorter than the echo lag")

    @classmethod
    def for_tap(cls, D: int, tap: int, clock: CycleClock) -> 'EchoConfig':
        return cls(delta_b=2 * (D - tap), delta_a=2 * tap,
                   window=(clock.settle_samples, clock.samples_per_cycle))


@dataclass
class AccuracyReport:
    accuracy: Optional[float]  # None when every kept cycle abstained
    abstain_rate: float
    kept: int
    scored: int
    correct: int


@dataclass
class LeakageDecision:
    abort: bool
    max_discrepancy: float
    flagged_halves: int


def _by_cycle(trace: SampledTrace, clock: CycleClock) -> np.ndarray:
    return trace.samples[:clock.cycles * clock.samples_per_cycle].reshape(clock.cycles, clock.samples_per_cycle)


# --- Passive attacks ---

def rms_attack(tap: TapRecord, clock: CycleClock, thresholds: Tuple[float, float],
               meter_sos=None, forced: bool = False) -> List[EveGuess]:
    """
    Classify each cycle from the mean-square node voltage at the tap.

    LOW/HIGH cycles reveal LL/HH. On MID cycles Eve abstains, or when forced
    guesses bit 1 iff the MSV exceeds the centre of the MID band.
    """
    msv = meter_msv(tap.voltage.samples, clock, meter_sos)
    centre = float(np.sqrt(thresholds[0] * thresholds[1])) if thresholds[0] > 0 else float(np.mean(thresholds))
    guesses = []
    for c, value in enumerate(msv):
        level = classify_msv(float(value), thresholds)
        bit = ABSTAIN
        if level == MsvLevel.MID and forced:
            bit = int(value > centre)
        guesses.append(EveGuess(c, bit, float(value), level.value))
    return guesses


def echo_attack(tap: TapRecord, clock: CycleClock, cfg: EchoConfig, side: str = 'both') -> List[EveGuess]:
    """
    Read the ends' reflection coefficients from wave/echo correlations.

    c_B correlates the wave heading to Bob with the wave coming back delta_b
    samples later; c_A does the same toward Alice. Normalised by the
    outgoing wave's mean square they estimate Gamma_B and Gamma_A; with Z0
    between R_L and R_H a positive estimate means H.
    """
    if side not in ('both', 'alice', 'bob'):
        raise DomainError(f"unknown echo side {side!r}")
    start, stop = cfg.window
    if stop > clock.samples_per_cycle or start < 0:
        raise DomainError(f"echo window {cfg.window} outside the cycle")
    dt = tap.v_plus.dt
    plus = _by_cycle(tap.v_plus, clock)[:, start:stop]
    minus = _by_cycle(tap.v_minus, clock)[:, start:stop]
    guesses = []
    for c in range(clock.cycles):
        p = SampledTrace(dt, plus[c])
        m = SampledTrace(dt, minus[c])
        ms_p = mean_square(p)
        ms_m = mean_square(m)
        gamma_b = cross_correlation(p, m, cfg.delta_b) / ms_p if ms_p > 0 else 0.0
        gamma_a = cross_correlation(m, p, cfg.delta_a) / ms_m if ms_m > 0 else 0.0
        if side == 'both':
            statistic = gamma_a - gamma_b
        elif side == 'alice':
            statistic = gamma_a
        else:
            statistic = -gamma_b
        bit = ABSTAIN if statistic == 0 else int(statistic > 0)
        guesses.append(EveGuess(c, bit, float(statistic), f"gA={gamma_a:.3f} gB={gamma_b:.3f}"))
    return guesses


def noise_floor(trace: SampledTrace) -> float:
    """
    Robust per-sample noise standard deviation from first differences, so
    steps and plateaus of a deterministic signal read as zero noise.
    """
    steps = np.diff(trace.samples)
    if steps.size == 0:
        return 0.0
    return float(1.4826 * np.median(np.abs(steps)) / np.sqrt(2.0))


def transient_attack(tap: TapRecord, clock: CycleClock, threshold: float = None,
                     search_samples: int = None) -> List[EveGuess]:
    """
    Find which side's wavefront reaches the tap first after the cycle starts.

    An earlier crossing on v_plus means Alice connected first (bit 1), on
    v_minus Bob (bit 0). The default threshold is five times the tap's noise
    floor, i.e. any nonzero sample on a noiseless line.
    """
    if threshold is None:
        threshold = 5.0 * max(noise_floor(tap.v_plus), noise_floor(tap.v_minus))
    offset = clock.ground_samples
    span = clock.samples_per_half or clock.samples_per_cycle
    if search_samples is None:
        search_samples = span - offset
    stop = min(offset + search_samples, clock.samples_per_cycle)
    plus = np.abs(_by_cycle(tap.v_plus, clock)[:, offset:stop]) > threshold
    minus = np.abs(_by_cycle(tap.v_minus, clock)[:, offset:stop]) > threshold
    never = stop - offset

    guesses = []
    for c in range(clock.cycles):
        first_plus = int(np.argmax(plus[c])) if plus[c].any() else never
        first_minus = int(np.argmax(minus[c])) if minus[c].any() else never
        statistic = float(first_minus - first_plus)
        if first_plus == first_minus:
            guesses.append(EveGuess(c, ABSTAIN, statistic, 'none' if first_plus == never else 'tie'))
        elif first_plus < first_minus:
            guesses.append(EveGuess(c, 1, statistic, 'alice'))
        else:
            guesses.append(EveGuess(c, 0, statistic, 'bob'))
    return guesses


def combine_guesses(primary: Sequence[EveGuess], fallback: Sequence[EveGuess]) -> List[EveGuess]:
    """Use the primary attack's guess unless it abstained"""
    if len(primary) != len(fallback):
        raise DomainError("guess lists differ in length")
    return [p if not p.abstained else f for p, f in zip(primary, fallback)]


# --- Active attack and countermeasure ---

def _half_means(trace: SampledTrace, clock: CycleClock) -> np.ndarray:
    """Mean of a trace over each half-cycle's steady window, shape (cycles, 2)"""
    if clock.samples_per_half is None:
        raise DomainError("half-cycle clock required")
    half = clock.samples_per_half
    values = trace.samples[:clock.cycles * 2 * half].reshape(clock.cycles, 2, half)
    return values[:, :, clock.settle_samples:].mean(axis=2)


def shunt_attack(tap_alice_side: TapRecord, tap_bob_side: TapRecord, clock: CycleClock,
                 rng=None) -> List[EveGuess]:
    """
    Compare steady line currents on both sides of Eve's shunt.

    In each half the side feeding the shunt carries the current. Half 1 fed
    from Alice's side means Alice chose H-first (bit 1). Zero statistics are
    ties: abstain, or a fair coin when rng is given.
    """
    i_alice = np.abs(_half_means(tap_alice_side.current, clock))
    i_bob = np.abs(_half_means(tap_bob_side.current, clock))
    feed = i_alice - i_bob
    statistic = feed[:, 0] - feed[:, 1]
    gen = as_generator(rng) if rng is not None else None
    guesses = []
    for c, value in enumerate(statistic):
        if value != 0:
            guesses.append(EveGuess(c, int(value > 0), float(value), 'feed'))
        elif gen is not None:
            guesses.append(EveGuess(c, int(gen.integers(0, 2)), 0.0, 'coin'))
        else:
            guesses.append(EveGuess(c, ABSTAIN, 0.0, 'tie'))
    return guesses


def leakage_monitor(alice: EndRecord, bob: EndRecord, clock: CycleClock, I_min: float,
                    predicted: Tuple[EndRecord, EndRecord] = None) -> LeakageDecision:
    """
    Alice and Bob compare their steady terminal currents with the no-shunt
    prediction (zero: the far end of a fed half is open, unless a reference
    run is supplied) and abort on any discrepancy above I_min.
    """
    if I_min < 0:
        raise DomainError("I_min must be non-negative")
    measured = np.stack([_half_means(alice.current, clock), _half_means(bob.current, clock)])
    if predicted is None:
        expected = np.zeros_like(measured)
    else:
        expected = np.stack([_half_means(predicted[0].current, clock),
                             _half_means(predicted[1].current, clock)])
    discrepancy = np.abs(measured - expected)
    flagged = int(np.sum(discrepancy > I_min))
    decision = LeakageDecision(abort=flagged > 0, max_discrepancy=float(discrepancy.max()),
                               flagged_halves=flagged)
    if decision.abort:
        logger.warning(f"Leakage monitor abort: {flagged} half-cycles above {I_min:.3e} A "
                       f"(max {decision.max_discrepancy:.3e} A)")
    return decision


# --- Scoring ---

def attack_accuracy(guesses: Sequence[EveGuess], truth: Sequence[CycleOutcome]) -> AccuracyReport:
    """Accuracy over non-abstained kept cycles against Alice's bit"""
    if len(guesses) != len(truth):
        raise DomainError(f"{len(guesses)} guesses for {len(truth)} cycles")
    kept = scored = correct = 0
    for guess, outcome in zip(guesses, truth):
        if guess.cycle != outcome.cycle:
            raise DomainError(f"cycle index mismatch ({guess.cycle} vs {outcome.cycle})")
        if not outcome.kept:
            continue
        kept += 1
        if guess.abstained:
            continue
        scored += 1
        correct += int(guess.guessed_bit == outcome.alice_bit)
    accuracy = correct / scored if scored else None
    abstain_rate = (kept - scored) / kept if kept else 1.0
    return AccuracyReport(accuracy, abstain_rate, kept, scored, correct)


def level_identification_accuracy(guesses: Sequence[EveGuess], truth: Sequence[CycleOutcome]) -> Optional[float]:
    """Fraction of LL/HH cycles the RMS attack labelled LOW/HIGH correctly"""
    hits = total = 0
    for guess, outcome in zip(guesses, truth):
        if outcome.choices_differ:
            continue
        total += 1
        expected = MsvLevel.LOW.value if outcome.alice_choice.value == 'L' else MsvLevel.HIGH.value
        hits += int(guess.label == expected)
    return hits / total if total else None


def binomial_chance_test(correct: int, trials: int) -> float:
    """Two-sided p-value of correct/trials against a fair coin"""
    if trials == 0:
        return 1.0
    return float(stats.binomtest(correct, trials, 0.5, alternative='two-sided').pvalue)


def write_attack_report_csv(path: str, attack: str, guesses: Sequence[EveGuess],
                            truth: Sequence[CycleOutcome], append: bool = False):
    """cycle,attack,statistic,guess,truth,correct"""
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    write_header = not (append and os.path.exists(path))
    with open(path, 'a' if append else 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        if write_header:
            writer.writerow(['cycle', 'attack', 'statistic', 'guess', 'truth', 'correct'])
        for guess, outcome in zip(guesses, truth):
            truth_bit = outcome.alice_bit if outcome.kept else ''
            guess_bit = 'ABSTAIN' if guess.abstained else guess.guessed_bit
            correct = '' if (guess.abstained or not outcome.kept) else int(guess.guessed_bit == outcome.alice_bit)
            writer.writerow([guess.cycle, attack, repr(guess.statistic), guess_bit, truth_bit, correct])
