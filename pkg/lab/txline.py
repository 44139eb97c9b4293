"""
Lossless delay-line transmission line with Thevenin terminations

The line has nodes 0..D (Alice at node 0, Bob at node D). A wave moves
exactly one node per sample, so D*dt is the one-way delay. Each node holds
a right-moving and a left-moving wave amplitude; the node voltage is their
sum and the rightward current is their difference over Z0.
"""
import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import signal

from utils.signals import DomainError, RngStream, SampledTrace, johnson_sigma

logger = logging.getLogger(__name__)

OPEN = math.inf


# --- Scattering primitives ---

def reflection_coefficient(R: float, Z0: float) -> float:
    """Gamma = (R - Z0)/(R + Z0); exactly +1 for an open end, -1 for a short"""
    if not Z0 > 0:
        raise DomainError(f"Z0 must be positive, got {Z0}")
    if R < 0:
        raise DomainError(f"R must be non-negative or open, got {R}")
    if math.isinf(R):
        return 1.0
    return (R - Z0) / (R + Z0)


def transmission_coefficient(R: float, Z0: float) -> float:
    """Fraction Z0/(R + Z0) of the series source launched into the line"""
    if math.isinf(R):
        return 0.0
    return Z0 / (R + Z0)


def shunt_reflection(R_s: float, Z0: float) -> float:
    """Junction reflection rho = -Z0/(Z0 + 2 R_s) of a shunt to ground"""
    if not R_s > 0:
        raise DomainError(f"shunt resistance must be positive, got {R_s}")
    if math.isinf(R_s):
        return 0.0
    return -Z0 / (Z0 + 2.0 * R_s)


def wave_decompose(V, I, Z0: float) -> Tuple:
    """Split (V, I) into the right-moving and left-moving waves"""
    if not Z0 > 0:
        raise DomainError(f"Z0 must be positive, got {Z0}")
    return (V + Z0 * I) / 2.0, (V - Z0 * I) / 2.0


def wave_recombine(v_plus, v_minus, Z0: float) -> Tuple:
    """Inverse of wave_decompose"""
    return v_plus + v_minus, (v_plus - v_minus) / Z0


def shunt_scatter(a_L: float, a_R: float, R_s: float, Z0: float) -> Tuple[float, float]:
    """
    Three-way junction with a shunt resistor to ground

    Args:
        a_L: wave arriving from the left (moving right)
        a_R: wave arriving from the right (moving left)

    Returns:
        (b_L, b_R): waves leaving to the left and to the right
    """
    rho = shunt_reflection(R_s, Z0)
    b_L = rho * a_L + (1.0 + rho) * a_R
    b_R = (1.0 + rho) * a_L + rho * a_R
    return b_L, b_R


def shunt_node_voltage(a_L: float, a_R: float, R_s: float, Z0: float) -> float:
    return (1.0 + shunt_reflection(R_s, Z0)) * (a_L + a_R)


# --- Configuration ---

@dataclass(frozen=True)
class Shunt:
    position: int
    R_s: float


@dataclass
class LineConfig:
    """Ideal line: impedance Z0, one-way delay D samples, taps and optional shunt"""
    Z0: float
    D: int
    dt: float
    tap_positions: List[int] = field(default_factory=list)
    shunt: Optional[Shunt] = None

    def __post_init__(self):
        if not self.Z0 > 0:
            raise DomainError(f"Z0 must be positive, got {self.Z0}")
        if self.D < 2:
            raise DomainError(f"D must be at least 2, got {self.D}")
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        self.tap_positions = [int(p) for p in self.tap_positions]
        for p in self.tap_positions:
            if not 1 <= p <= self.D - 1:
                raise DomainError(f"tap position {p} outside [1, {self.D - 1}]")
        if self.shunt is not None:
            if not 1 <= self.shunt.position <= self.D - 1:
                raise DomainError(f"shunt position {self.shunt.position} outside [1, {self.D - 1}]")
            shunt_reflection(self.shunt.R_s, self.Z0)
            if self.shunt.position in self.tap_positions:
                raise DomainError("a tap cannot sit on the shunt cell; use the adjacent cells")

    @property
    def midpoint(self) -> int:
        return self.D // 2

    def to_dict(self) -> Dict:
        return {
            'Z0_ohms': self.Z0,
            'D_samples': self.D,
            'dt_seconds': self.dt,
            'tap_positions': list(self.tap_positions),
            'shunt': None if self.shunt is None else {
                'position': self.shunt.position, 'R_s_ohms': self.shunt.R_s},
        }


@dataclass(frozen=True)
class Termination:
    """
    Thevenin termination: resistor R (math.inf = open) in series with an
    optional source trace and/or its own Johnson noise at temperature T.

    The source trace is indexed from the moment the termination is connected
    and holds its last value afterwards, so a one-sample trace is a battery.
    """
    R: float = OPEN
    source: Optional[SampledTrace] = None
    thermal: bool = False
    T: float = 0.0

    def __post_init__(self):
        if self.R < 0:
            raise DomainError(f"termination R must be non-negative, got {self.R}")
        if self.thermal and (math.isinf(self.R) or self.R <= 0):
            raise DomainError("thermal termination needs a finite positive R")
        if self.T < 0:
            raise DomainError(f"temperature must be non-negative, got {self.T}")

    @property
    def is_open(self) -> bool:
        return math.isinf(self.R)

    @classmethod
    def battery(cls, V0: float, dt: float, R: float = 0.0) -> 'Termination':
        return cls(R=R, source=SampledTrace(dt, [V0]))

    @classmethod
    def resistor(cls, R: float, T: float = 0.0) -> 'Termination':
        return cls(R=R, thermal=T > 0 and not math.isinf(R), T=T)

    def source_samples(self, count: int, dt: float, rng: np.random.Generator) -> np.ndarray:
        values = np.zeros(count)
        if self.source is not None and len(self.source) > 0:
            src = self.source.samples
            m = min(count, len(src))
            values[:m] = src[:m]
            values[m:] = src[-1]
        if self.thermal:
            values += johnson_sigma(self.R, self.T, dt) * rng.standard_normal(count)
        return values


# A termination that switches at given sample indices: [(start, Termination), ...]
Schedule = Union[Termination, Sequence[Tuple[int, Termination]]]


# --- State and records ---

@dataclass
class LineState:
    """Right- and left-moving wave amplitudes at nodes 0..D (volts)"""
    right: np.ndarray
    left: np.ndarray

    @classmethod
    def zeros(cls, D: int) -> 'LineState':
        return cls(np.zeros(D + 1), np.zeros(D + 1))

    def copy(self) -> 'LineState':
        return LineState(self.right.copy(), self.left.copy())

    def node_voltage(self, i: int) -> float:
        return float(self.right[i] + self.left[i])

    def node_current(self, i: int, Z0: float) -> float:
        return float((self.right[i] - self.left[i]) / Z0)


def wave_energy(state: LineState, Z0: float) -> float:
    """Sum of squared in-flight waves over Z0 (each wave counted once)"""
    return float((np.sum(state.right[:-1] ** 2) + np.sum(state.left[1:] ** 2)) / Z0)


@dataclass
class TapRecord:
    """Eve's view at one node: v_plus heads toward Bob (Z_B), v_minus toward Alice (Z_A)"""
    position: int
    v_plus: SampledTrace
    v_minus: SampledTrace
    Z0: float

    def __post_init__(self):
        if len(self.v_plus) != len(self.v_minus):
            raise DomainError("tap traces must have equal length")

    @property
    def voltage(self) -> SampledTrace:
        return SampledTrace(self.v_plus.dt, self.v_plus.samples + self.v_minus.samples)

    @property
    def current(self) -> SampledTrace:
        return SampledTrace(self.v_plus.dt, (self.v_plus.samples - self.v_minus.samples) / self.Z0)


@dataclass
class EndRecord:
    """Node voltage and rightward line current at a terminated end"""
    position: int
    voltage: SampledTrace
    current: SampledTrace


@dataclass
class LineRun:
    taps: Dict[int, TapRecord]
    alice: EndRecord
    bob: EndRecord

    @property
    def n(self) -> int:
        return len(self.alice.voltage)


# --- Propagation ---

def terminate_scatter(a: float, term: Termination, e: float, Z0: float) -> float:
    """Outgoing wave b = Gamma a + Z0/(R + Z0) e at a Thevenin termination"""
    if term.is_open:
        return a
    return reflection_coefficient(term.R, Z0) * a + transmission_coefficient(term.R, Z0) * e


def _advance(right: np.ndarray, left: np.ndarray, ga: float, ta: float, ea: float,
             gb: float, tb: float, eb: float, shunt_pos: Optional[int], rho: float):
    """Move every wave one node and scatter at the ends and the shunt, in place"""
    right[1:] = right[:-1]
    left[:-1] = left[1:]
    right[0] = ga * left[0] + ta * ea
    left[-1] = gb * right[-1] + tb * eb
    if shunt_pos is not None:
        a_L = right[shunt_pos]
        a_R = left[shunt_pos]
        right[shunt_pos] = (1.0 + rho) * a_L + rho * a_R
        left[shunt_pos] = rho * a_L + (1.0 + rho) * a_R


def _termination_sample(term: Termination, t: int, dt: float, gen: np.random.Generator) -> float:
    e = 0.0
    if term.source is not None and len(term.source) > 0:
        e = float(term.source.samples[min(t, len(term.source) - 1)])
    if term.thermal:
        e += johnson_sigma(term.R, term.T, dt) * gen.standard_normal()
    return e


def step(state: LineState, config: LineConfig, term_a: Termination, term_b: Termination,
         rng=None, t: int = 0) -> LineState:
    """
    One sample of propagation; returns a new state.

    t is the number of samples since the terminations were connected and
    selects the source sample; thermal terminations draw from rng.
    """
    gen = as_generator(rng)
    Z0 = config.Z0
    ea = _termination_sample(term_a, t, config.dt, gen)
    eb = _termination_sample(term_b, t, config.dt, gen)
    new = state.copy()
    shunt_pos, rho = _shunt_params(config)
    _advance(new.right, new.left,
             reflection_coefficient(term_a.R, Z0), transmission_coefficient(term_a.R, Z0), ea,
             reflection_coefficient(term_b.R, Z0), transmission_coefficient(term_b.R, Z0), eb,
             shunt_pos, rho)
    return new


def _shunt_params(config: LineConfig) -> Tuple[Optional[int], float]:
    if config.shunt is None:
        return None, 0.0
    return config.shunt.position, shunt_reflection(config.shunt.R_s, config.Z0)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if rng is None:
        return RngStream(0).generator()
    raise DomainError(f"unsupported rng type {type(rng).__name__}")


def _normalize_schedule(schedule: Schedule) -> List[Tuple[int, Termination]]:
    if isinstance(schedule, Termination):
        return [(0, schedule)]
    entries = [(int(start), term) for start, term in schedule]
    if not entries or entries[0][0] != 0:
        raise DomainError("a termination schedule must start at sample 0")
    for (s0, _), (s1, _) in zip(entries, entries[1:]):
        if s1 <= s0:
            raise DomainError("termination schedule starts must be strictly increasing")
    return entries


def _expand_schedule(schedule: Schedule, n: int, config: LineConfig,
                     gen: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-sample reflection, launch fraction and source arrays"""
    entries = _normalize_schedule(schedule)
    gamma = np.empty(n)
    tau = np.empty(n)
    source = np.zeros(n)
    for k, (start, term) in enumerate(entries):
        if start >= n:
            break
        stop = entries[k + 1][0] if k + 1 < len(entries) else n
        stop = min(stop, n)
        gamma[start:stop] = reflection_coefficient(term.R, config.Z0)
        tau[start:stop] = transmission_coefficient(term.R, config.Z0)
        source[start:stop] = term.source_samples(stop - start, config.dt, gen)
    return gamma, tau, source


def _delay(x: np.ndarray, k: int) -> np.ndarray:
    """x shifted k samples later, zero-filled"""
    y = np.zeros_like(x)
    if k < len(x):
        y[k:] = x[:len(x) - k]
    return y


class TransmissionLine:
    """Simulator for one line configuration"""

    def __init__(self, config: LineConfig):
        self.config = config

    def run(self, schedule_a: Schedule, schedule_b: Schedule, n: int, rng=None,
            ground: Optional[np.ndarray] = None) -> LineRun:
        """
        Propagate n samples from a quiet line.

        Args:
            schedule_a, schedule_b: Alice's and Bob's terminations over time
            ground: boolean mask; on masked samples every wave on the line is zeroed

        Returns:
            LineRun with one TapRecord per configured tap and both end records
        """
        if n < 1:
            raise DomainError(f"n must be at least 1, got {n}")
        cfg = self.config
        gen = as_generator(rng)
        ga, ta, ea = _expand_schedule(schedule_a, n, cfg, gen)
        gb, tb, eb = _expand_schedule(schedule_b, n, cfg, gen)
        if ground is not None:
            ground = np.asarray(ground, dtype=bool)
            if ground.shape != (n,):
                raise DomainError("ground mask must have one entry per sample")

        if cfg.shunt is None:
            logger.debug(f"Two-port solve: n={n}, D={cfg.D}")
            return self._run_two_port(n, ga, ta, ea, gb, tb, eb, ground)
        logger.debug(f"Cell stepping with shunt at {cfg.shunt.position}: n={n}, D={cfg.D}")
        return self._run_cells(n, ga, ta, ea, gb, tb, eb, ground)

    def _records(self, n: int, b_a, a_a, b_b, a_b, plus: Dict[int, np.ndarray],
                 minus: Dict[int, np.ndarray]) -> LineRun:
        cfg = self.config
        dt, Z0 = cfg.dt, cfg.Z0
        taps = {
            p: TapRecord(p, SampledTrace(dt, plus[p]), SampledTrace(dt, minus[p]), Z0)
            for p in cfg.tap_positions
        }
        alice = EndRecord(0, SampledTrace(dt, a_a + b_a), SampledTrace(dt, (b_a - a_a) / Z0))
        bob = EndRecord(cfg.D, SampledTrace(dt, a_b + b_b), SampledTrace(dt, (a_b - b_b) / Z0))
        return LineRun(taps, alice, bob)

    def _run_two_port(self, n, ga, ta, ea, gb, tb, eb, ground) -> LineRun:
        """
        Without a shunt only the two ends scatter. Alice's outgoing wave obeys
            b_A[t] = ga[t] gb[t-D] b_A[t-2D] + ga[t] src_B[t-D] + src_A[t]
        which is a linear recursion on every stretch of constant terminations.
        Each stretch is one lfilter call seeded with the preceding 2D outputs.
        """
        D = self.config.D
        src_a = ta * ea
        src_b = tb * eb
        if ground is not None:
            src_a[ground] = 0.0
            src_b[ground] = 0.0
            count = np.cumsum(ground)
        else:
            count = np.zeros(n, dtype=int)
        # alive_k[t]: a wave launched at t-k has not crossed a grounding sample by t
        alive_d = count == _delay(count, D)

        u = src_a + ga * _delay(src_b, D) * alive_d
        cuts = {0, n}
        cuts.update((np.flatnonzero(np.diff(ga)) + 1).tolist())
        cuts.update((np.flatnonzero(np.diff(gb)) + 1 + D).tolist())
        if ground is not None:
            cuts.update((np.flatnonzero(np.diff(ground.astype(int))) + 1).tolist())
        cuts = sorted(c for c in cuts if 0 <= c <= n)

        b_a = np.zeros(n)
        two_d = 2 * D
        for s0, s1 in zip(cuts[:-1], cuts[1:]):
            if ground is not None and ground[s0]:
                continue
            # before t = D nothing has come back from Bob, so gb[0] is as good as any
            p = ga[s0] * gb[max(s0 - D, 0)]
            history = np.zeros(two_d)
            lo = max(0, s0 - two_d)
            history[two_d - (s0 - lo):] = b_a[lo:s0] * (count[lo:s0] == count[s0])
            a = np.zeros(two_d + 1)
            a[0] = 1.0
            a[-1] = -p
            zi = signal.lfiltic([1.0], a, y=history[::-1])
            b_a[s0:s1], _ = signal.lfilter([1.0], a, u[s0:s1], zi=zi)

        a_b = _delay(b_a, D) * alive_d
        b_b = gb * a_b + src_b
        a_a = _delay(b_b, D) * alive_d

        plus, minus = {}, {}
        for pos in self.config.tap_positions:
            plus[pos] = _delay(b_a, pos) * (count == _delay(count, pos))
            minus[pos] = _delay(b_b, D - pos) * (count == _delay(count, D - pos))
        return self._records(n, b_a, a_a, b_b, a_b, plus, minus)

    def _run_cells(self, n, ga, ta, ea, gb, tb, eb, ground) -> LineRun:
        cfg = self.config
        D = cfg.D
        shunt_pos, rho = _shunt_params(cfg)
        right = np.zeros(D + 1)
        left = np.zeros(D + 1)
        b_a, a_a, b_b, a_b = (np.zeros(n) for _ in range(4))
        plus = {p: np.zeros(n) for p in cfg.tap_positions}
        minus = {p: np.zeros(n) for p in cfg.tap_positions}
        for t in range(n):
            _advance(right, left, ga[t], ta[t], ea[t], gb[t], tb[t], eb[t], shunt_pos, rho)
            if ground is not None and ground[t]:
                right[:] = 0.0
                left[:] = 0.0
            b_a[t], a_a[t] = right[0], left[0]
            a_b[t], b_b[t] = right[D], left[D]
            for p in cfg.tap_positions:
                plus[p][t] = right[p]
                minus[p][t] = left[p]
        return self._records(n, b_a, a_a, b_b, a_b, plus, minus)


def run(config: LineConfig, term_a: Schedule, term_b: Schedule, n: int, rng=None,
        ground: Optional[np.ndarray] = None) -> LineRun:
    return TransmissionLine(config).run(term_a, term_b, n, rng, ground)


def export_traces_csv(line_run: LineRun, out_dir: str, prefix: str = 'line') -> List[str]:
    """Write one CSV per tap and per end: sample,time_s,quantity,value"""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    series = []
    for pos, tap in sorted(line_run.taps.items()):
        series.append((f"{prefix}_tap{pos}.csv", [('v_plus', tap.v_plus), ('v_minus', tap.v_minus)]))
    for name, end in (('alice', line_run.alice), ('bob', line_run.bob)):
        series.append((f"{prefix}_{name}.csv", [('voltage', end.voltage), ('current', end.current)]))
    for filename, quantities in series:
        path = os.path.join(out_dir, filename)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(['sample', 'time_s', 'quantity', 'value'])
            for quantity, trace in quantities:
                times = trace.times
                for k, value in enumerate(trace.samples):
                    writer.writerow([k, f"{times[k]:.9e}", quantity, repr(float(value))])
        written.append(path)
    logger.info(f"Exported {len(written)} trace files to {out_dir}")
    return written
