"""
KLJN and noiseless key-distribution protocols on the transmission line
"""
import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import signal

from lab.txline import LineConfig, LineRun, TapRecord, Termination, TransmissionLine, as_generator
from utils.signals import CONSTANTS, DomainError, nyquist_frequency

logger = logging.getLogger(__name__)


class Choice(str, Enum):
    L = 'L'
    H = 'H'
    L_FIRST = 'L-first'
    H_FIRST = 'H-first'


class MsvLevel(str, Enum):
    LOW = 'LOW'
    MID = 'MID'
    HIGH = 'HIGH'


@dataclass
class KljnParams:
    """Resistor pair, temperature, clock and the parties' voltmeter"""
    R_L: float = 1000.0
    R_H: float = 9000.0
    T: float = 300.0
    cycles: int = 200
    samples_per_cycle: int = 10000
    settle_samples: int = 500
    thresholds: Optional[Tuple[float, float]] = None
    meter_bandwidth_fraction: float = 0.02  # B / f_N; 1.0 means no meter filter
    meter_order: int = 4

    def __post_init__(self):
        if not 0 < self.R_L < self.R_H:
            raise DomainError(f"need 0 < R_L < R_H (got {self.R_L}, {self.R_H})")
        if self.T < 0:
            raise DomainError("temperature must be non-negative")
        if self.cycles < 1:
            raise DomainError("cycles must be at least 1")
        if not 0 <= self.settle_samples < self.samples_per_cycle:
            raise DomainError("settle_samples must be smaller than samples_per_cycle")
        if self.thresholds is not None:
            low, high = self.thresholds
            if not low < high:
                raise DomainError(f"thresholds must satisfy low < high, got {self.thresholds}")
            self.thresholds = (float(low), float(high))
        if not 0 < self.meter_bandwidth_fraction <= 1:
            raise DomainError("meter_bandwidth_fraction must lie in (0, 1]")


@dataclass
class NoiselessParams:
    """Battery voltage and clock of the noiseless protocol"""
    V0: float = 1.0
    cycles: int = 200
    samples_per_half: int = 128
    ground_samples: int = 4
    settle_samples: int = 48
    source_ohms: Optional[float] = None  # None: matched to the line

    def __post_init__(self):
        if not self.V0 > 0:
            raise DomainError("V0 must be positive")
        if self.cycles < 1:
            raise DomainError("cycles must be at least 1")
        if not 0 <= self.ground_samples < self.samples_per_half:
            raise DomainError("ground_samples must be smaller than samples_per_half")
        if self.ground_samples + self.settle_samples >= self.samples_per_half:
            raise DomainError("ground_samples + settle_samples must leave a steady window")
        if self.source_ohms is not None and self.source_ohms < 0:
            raise DomainError("source_ohms must be non-negative")


@dataclass
class CycleOutcome:
    cycle: int
    alice_choice: Choice
    bob_choice: Choice
    kept: bool
    alice_bit: Optional[int] = None
    bob_bit: Optional[int] = None
    msv_alice: float = 0.0
    msv_bob: float = 0.0

    def __post_init__(self):
        if self.kept and (self.alice_bit is None or self.bob_bit is None):
            raise DomainError(f"kept cycle {self.cycle} needs both bits")

    @property
    def choices_differ(self) -> bool:
        return self.alice_choice != self.bob_choice

    def to_dict(self) -> Dict:
        row = asdict(self)
        row['alice_choice'] = self.alice_choice.value
        row['bob_choice'] = self.bob_choice.value
        return row


@dataclass
class CycleClock:
    """Public clock: cycle c occupies samples [c*samples_per_cycle, (c+1)*samples_per_cycle)"""
    samples_per_cycle: int
    cycles: int
    settle_samples: int = 0
    samples_per_half: Optional[int] = None
    ground_samples: int = 0

    def start(self, cycle: int) -> int:
        return cycle * self.samples_per_cycle

    def window(self, cycle: int) -> Tuple[int, int]:
        start = self.start(cycle)
        return start + self.settle_samples, start + self.samples_per_cycle

    def half_start(self, cycle: int, half: int) -> int:
        return self.start(cycle) + half * self.samples_per_half


@dataclass
class ProtocolRun:
    protocol: str
    key_a: np.ndarray
    key_b: np.ndarray
    outcomes: List[CycleOutcome]
    line_run: LineRun
    clock: CycleClock
    extras: Dict = field(default_factory=dict)

    @property
    def taps(self) -> Dict[int, TapRecord]:
        return self.line_run.taps

    @property
    def kept_count(self) -> int:
        return int(len(self.key_a))

    @property
    def disagreement_rate(self) -> float:
        if len(self.key_a) == 0:
            return 0.0
        return float(np.mean(self.key_a != self.key_b))

    def true_bits(self) -> np.ndarray:
        """Per-cycle shared bit (Alice's), -1 on discarded cycles"""
        return np.array([o.alice_bit if o.kept else -1 for o in self.outcomes])


# --- Voltmeter and MSV levels ---

def meter_filter(fraction: float, order: int = 4) -> Optional[np.ndarray]:
    """Butterworth low-pass (second-order sections) with cutoff fraction * f_N"""
    if fraction >= 1.0:
        return None
    return signal.butter(order, fraction, output='sos')


def noise_bandwidth_fraction(sos: Optional[np.ndarray], fraction: float = 1.0) -> float:
    """Equivalent noise bandwidth of the meter divided by f_N (sum of squared impulse response)"""
    if sos is None:
        return 1.0
    length = int(200 / fraction) + 1000
    impulse = np.zeros(length)
    impulse[0] = 1.0
    h = signal.sosfilt(sos, impulse)
    return float(np.sum(h * h))


def meter_msv(samples: np.ndarray, clock: CycleClock, sos: Optional[np.ndarray]) -> np.ndarray:
    """Per-cycle mean square of the (meter-filtered) voltage over each cycle's window"""
    filtered = samples if sos is None else signal.sosfilt(sos, samples)
    blocks = filtered[:clock.cycles * clock.samples_per_cycle].reshape(clock.cycles, clock.samples_per_cycle)
    settled = blocks[:, clock.settle_samples:]
    return np.mean(settled * settled, axis=1)


def parallel(R_a: float, R_b: float) -> float:
    return R_a * R_b / (R_a + R_b)


def lumped_msv_levels(R_L: float, R_H: float, T: float, dt: float,
                      band_fraction: float = 1.0) -> Dict[str, float]:
    """Quasi-static MSV 4 k_B T (R_A || R_B) B for LL, LH/HL and HH"""
    scale = 4.0 * CONSTANTS.k_B * T * nyquist_frequency(dt) * band_fraction
    return {
        'LL': scale * parallel(R_L, R_L),
        'LH': scale * parallel(R_L, R_H),
        'HH': scale * parallel(R_H, R_H),
    }


def default_thresholds(levels: Dict[str, float]) -> Tuple[float, float]:
    """Geometric midpoints between adjacent analytic levels"""
    return math.sqrt(levels['LL'] * levels['LH']), math.sqrt(levels['LH'] * levels['HH'])


def classify_msv(msv: float, thresholds: Tuple[float, float]) -> MsvLevel:
    low, high = thresholds
    if low > high:
        raise DomainError(f"thresholds must satisfy low <= high, got {thresholds}")
    if msv < low:
        return MsvLevel.LOW
    if msv > high:
        return MsvLevel.HIGH
    if low == high:
        # degenerate thresholds classify every cycle as LOW or HIGH
        return MsvLevel.HIGH
    return MsvLevel.MID


def classify_levels(msv: np.ndarray, thresholds: Tuple[float, float]) -> List[MsvLevel]:
    return [classify_msv(float(m), thresholds) for m in msv]


def kljn_meter(params: KljnParams, dt: float) -> Tuple[Optional[np.ndarray], Dict[str, float], Tuple[float, float]]:
    """Meter filter, analytic levels and the thresholds in force for a KLJN run"""
    sos = meter_filter(params.meter_bandwidth_fraction, params.meter_order)
    band = noise_bandwidth_fraction(sos, params.meter_bandwidth_fraction)
    levels = lumped_msv_levels(params.R_L, params.R_H, params.T, dt, band)
    thresholds = params.thresholds or default_thresholds(levels)
    return sos, levels, thresholds


# --- Protocol runners ---

def kljn_run(params: KljnParams, line: LineConfig, rng=None) -> ProtocolRun:
    """
    Each cycle both parties pick L or H at random, terminate the line with a
    thermal resistor and measure the mean-square voltage at their own end.
    Cycles both parties classify as MID are kept; bit = 1 iff Alice chose H.
    """
    gen = as_generator(rng)
    spc = params.samples_per_cycle
    n = params.cycles * spc
    alice_h = gen.integers(0, 2, params.cycles).astype(bool)
    bob_h = gen.integers(0, 2, params.cycles).astype(bool)

    def schedule(high_flags):
        return [(c * spc, Termination.resistor(params.R_H if h else params.R_L, params.T))
                for c, h in enumerate(high_flags)]

    logger.info(f"KLJN run: {params.cycles} cycles x {spc} samples, D={line.D}")
    line_run = TransmissionLine(line).run(schedule(alice_h), schedule(bob_h), n, gen)

    clock = CycleClock(spc, params.cycles, params.settle_samples)
    sos, levels, thresholds = kljn_meter(params, line.dt)
    msv_a = meter_msv(line_run.alice.voltage.samples, clock, sos)
    msv_b = meter_msv(line_run.bob.voltage.samples, clock, sos)
    class_a = classify_levels(msv_a, thresholds)
    class_b = classify_levels(msv_b, thresholds)

    outcomes = []
    for c in range(params.cycles):
        kept = class_a[c] == MsvLevel.MID and class_b[c] == MsvLevel.MID
        outcomes.append(CycleOutcome(
            cycle=c,
            alice_choice=Choice.H if alice_h[c] else Choice.L,
            bob_choice=Choice.H if bob_h[c] else Choice.L,
            kept=kept,
            alice_bit=int(alice_h[c]) if kept else None,
            bob_bit=int(not bob_h[c]) if kept else None,
            msv_alice=float(msv_a[c]),
            msv_bob=float(msv_b[c]),
        ))
    result = _finish('kljn', outcomes, line_run, clock)
    result.extras.update({'levels': levels, 'thresholds': thresholds, 'meter_sos': sos})
    logger.info(f"KLJN kept {result.kept_count}/{params.cycles} cycles, "
                f"key disagreement {result.disagreement_rate:.4f}")
    return result


def noiseless_schedules(params: NoiselessParams, line: LineConfig, alice_hfirst: np.ndarray,
                        bob_hfirst: np.ndarray) -> Tuple[list, list, np.ndarray]:
    """Battery-or-open schedules for both parties and the grounding mask"""
    half = params.samples_per_half
    source_ohms = line.Z0 if params.source_ohms is None else params.source_ohms
    battery = Termination.battery(params.V0, line.dt, R=source_ohms)
    open_end = Termination()
    n = params.cycles * 2 * half
    ground = np.zeros(n, dtype=bool)
    sched_a, sched_b = [], []
    for c in range(params.cycles):
        for h in (0, 1):
            start = (2 * c + h) * half
            ground[start:start + params.ground_samples] = True
            sched_a.append((start, battery if (h == 0) == bool(alice_hfirst[c]) else open_end))
            sched_b.append((start, battery if (h == 0) == bool(bob_hfirst[c]) else open_end))
    return sched_a, sched_b, ground


def noiseless_run(params: NoiselessParams, line: LineConfig, rng=None) -> ProtocolRun:
    """
    Each cycle both parties pick L-first or H-first; in an H half a party
    connects its battery, in an L half its end is open. The line is grounded
    for ground_samples at every half boundary. A cycle is kept when both
    halves carry voltage at both ends; bit = 1 iff Alice chose H-first.
    """
    gen = as_generator(rng)
    half = params.samples_per_half
    alice_hfirst = gen.integers(0, 2, params.cycles).astype(bool)
    bob_hfirst = gen.integers(0, 2, params.cycles).astype(bool)
    sched_a, sched_b, ground = noiseless_schedules(params, line, alice_hfirst, bob_hfirst)

    n = params.cycles * 2 * half
    logger.info(f"Noiseless run: {params.cycles} cycles x {2 * half} samples, D={line.D}")
    line_run = TransmissionLine(line).run(sched_a, sched_b, n, gen, ground=ground)

    steady_from = params.ground_samples + params.settle_samples
    clock = CycleClock(2 * half, params.cycles, steady_from, samples_per_half=half,
                       ground_samples=params.ground_samples)
    va = line_run.alice.voltage.samples.reshape(params.cycles, 2, half)[:, :, steady_from:]
    vb = line_run.bob.voltage.samples.reshape(params.cycles, 2, half)[:, :, steady_from:]
    live_a = np.all(np.abs(va.mean(axis=2)) > params.V0 / 2, axis=1)
    live_b = np.all(np.abs(vb.mean(axis=2)) > params.V0 / 2, axis=1)
    msv_a = np.mean(va * va, axis=(1, 2))
    msv_b = np.mean(vb * vb, axis=(1, 2))

    outcomes = []
    for c in range(params.cycles):
        kept = bool(live_a[c] and live_b[c])
        outcomes.append(CycleOutcome(
            cycle=c,
            alice_choice=Choice.H_FIRST if alice_hfirst[c] else Choice.L_FIRST,
            bob_choice=Choice.H_FIRST if bob_hfirst[c] else Choice.L_FIRST,
            kept=kept,
            alice_bit=int(alice_hfirst[c]) if kept else None,
            bob_bit=int(not bob_hfirst[c]) if kept else None,
            msv_alice=float(msv_a[c]),
            msv_bob=float(msv_b[c]),
        ))
    result = _finish('noiseless', outcomes, line_run, clock)
    result.extras.update({'ground': ground, 'params': params})
    logger.info(f"Noiseless kept {result.kept_count}/{params.cycles} cycles")
    return result


def _finish(protocol: str, outcomes: List[CycleOutcome], line_run: LineRun,
            clock: CycleClock) -> ProtocolRun:
    kept = [o for o in outcomes if o.kept]
    key_a = np.array([o.alice_bit for o in kept], dtype=np.int8)
    key_b = np.array([o.bob_bit for o in kept], dtype=np.int8)
    return ProtocolRun(protocol, key_a, key_b, outcomes, line_run, clock)


def write_run_summary_csv(outcomes: Sequence[CycleOutcome], path: str):
    """cycle,alice_choice,bob_choice,kept,alice_bit,bob_bit,msv_alice,msv_bob"""
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    fieldnames = ['cycle', 'alice_choice', 'bob_choice', 'kept', 'alice_bit', 'bob_bit',
                  'msv_alice', 'msv_bob']
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for outcome in outcomes:
            row = outcome.to_dict()
            row['kept'] = int(outcome.kept)
            row['alice_bit'] = '' if outcome.alice_bit is None else outcome.alice_bit
            row['bob_bit'] = '' if outcome.bob_bit is None else outcome.bob_bit
            row['msv_alice'] = repr(outcome.msv_alice)
            row['msv_bob'] = repr(outcome.msv_bob)
            writer.writerow(row)
