"""
Plug-in entropy, mutual information and conditional mutual information on
binned samples, the closed-form Gaussian CMI, and the Markov-chain test
"""
import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from lab.attacks import noise_floor
from lab.protocols import Choice, ProtocolRun
from lab.txline import as_generator
from utils.signals import DomainError

logger = logging.getLogger(__name__)

DEFAULT_BINS = 16


@dataclass
class JointSamples:
    """Named columns of equal length, one row per sample"""
    columns: Dict[str, np.ndarray]

    def __post_init__(self):
        if not self.columns:
            raise DomainError("JointSamples needs at least one column")
        self.columns = {name: np.asarray(values) for name, values in self.columns.items()}
        lengths = {len(values) for values in self.columns.values()}
        if len(lengths) != 1:
            raise DomainError(f"columns have different lengths: {sorted(lengths)}")

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values())))

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise DomainError(f"no column named {name!r}")
        return self.columns[name]

    def subset(self, rows) -> 'JointSamples':
        return JointSamples({name: values[rows] for name, values in self.columns.items()})


@dataclass
class BinningSpec:
    """
    Equal-width binning for continuous columns; integer and boolean columns,
    and any named in `discrete`, pass through unchanged.
    """
    bins: int = DEFAULT_BINS
    per_column: Dict[str, int] = field(default_factory=dict)
    ranges: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    discrete: Tuple[str, ...] = ()

    def __post_init__(self):
        for name, count in [('default', self.bins)] + list(self.per_column.items()):
            if count < 2:
                raise DomainError(f"bin count for {name} must be >= 2, got {count}")

    def is_discrete(self, name: str, values: np.ndarray) -> bool:
        return name in self.discrete or values.dtype.kind in 'biuUSO'

    def codes(self, name: str, values: np.ndarray) -> np.ndarray:
        """Integer symbol per sample"""
        if self.is_discrete(name, values):
            return np.unique(values, return_inverse=True)[1].ravel()
        k = self.per_column.get(name, self.bins)
        lo, hi = self.ranges.get(name, (float(np.min(values)), float(np.max(values))))
        if not hi > lo:
            return np.zeros(len(values), dtype=np.int64)
        idx = np.floor((values - lo) / (hi - lo) * k).astype(np.int64)
        return np.clip(idx, 0, k - 1)


def _joint_codes(samples: JointSamples, names: Sequence[str], binning: BinningSpec) -> np.ndarray:
    if not names:
        return np.zeros(samples.n, dtype=np.int64)
    stacked = np.stack([binning.codes(name, samples[name]) for name in names], axis=1)
    return np.unique(stacked, axis=0, return_inverse=True)[1].ravel()


def _entropy_of_codes(codes: np.ndarray) -> float:
    # sorted so that equal partitions give bit-identical entropies
    counts = np.sort(np.bincount(codes))
    counts = counts[counts > 0]
    p = counts / counts.sum()
    return float(max(0.0, -np.sum(p * np.log2(p))))


def entropy(samples: JointSamples, columns: Sequence[str] = None, binning: BinningSpec = None) -> float:
    """Plug-in Shannon entropy (bits) of the empirical joint distribution"""
    if samples.n == 0:
        raise DomainError("entropy of an empty sample")
    names = list(samples.columns) if columns is None else list(columns)
    return _entropy_of_codes(_joint_codes(samples, names, binning or BinningSpec()))


def conditional_entropy(samples: JointSamples, target: Sequence[str], given: Sequence[str],
                        binning: BinningSpec = None) -> float:
    """H(target | given) = H(target, given) - H(given)"""
    binning = binning or BinningSpec()
    joint = entropy(samples, list(target) + list(given), binning)
    return max(0.0, joint - entropy(samples, given, binning)) if given else joint


def mutual_information(samples: JointSamples, x: Sequence[str], y: Sequence[str],
                       binning: BinningSpec = None) -> float:
    binning = binning or BinningSpec()
    value = entropy(samples, x, binning) + entropy(samples, y, binning) - entropy(samples, list(x) + list(y), binning)
    return max(0.0, value)


def _cmi_codes(xc: np.ndarray, yc: np.ndarray, zc: np.ndarray) -> float:
    def h(*parts):
        stacked = np.stack(parts, axis=1)
        return _entropy_of_codes(np.unique(stacked, axis=0, return_inverse=True)[1].ravel())
    # paired differences cancel exactly when Y or X is a function of Z
    value = (h(xc, zc) - h(xc, yc, zc)) + (h(yc, zc) - h(zc))
    return max(0.0, value)


def _shuffle_within(codes: np.ndarray, groups: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Permute codes among rows that share a group"""
    by_group = np.argsort(groups, kind='stable')
    shuffled = np.lexsort((gen.random(len(groups)), groups))
    out = np.empty_like(codes)
    out[by_group] = codes[shuffled]
    return out


@dataclass
class CmiEstimate:
    estimate: float
    baseline: float
    n: int
    sparse_z_bins: int  # Z-bins holding fewer than two samples; they contribute zero
    z_bins: int
    stderr: float = float('nan')

    @property
    def corrected(self) -> float:
        return max(0.0, self.estimate - self.baseline)


def cmi(samples: JointSamples, x: Sequence[str], y: Sequence[str], z: Sequence[str],
        binning: BinningSpec = None, rng=None, shuffles: int = 1, blocks: int = 10) -> CmiEstimate:
    """
    I(X;Y|Z) on binned data, with a shuffle baseline (Y permuted inside each
    Z-bin, averaged over `shuffles` draws) as the empirical zero and a
    block standard error when there are enough samples.
    """
    if samples.n == 0:
        raise DomainError("cmi of an empty sample")
    binning = binning or BinningSpec()
    gen = as_generator(rng)
    xc = _joint_codes(samples, x, binning)
    yc = _joint_codes(samples, y, binning)
    zc = _joint_codes(samples, z, binning)

    estimate = _cmi_codes(xc, yc, zc)
    baseline = float(np.mean([_cmi_codes(xc, _shuffle_within(yc, zc, gen), zc) for _ in range(max(1, shuffles))]))
    counts = np.bincount(zc)
    sparse = int(np.sum(counts[counts > 0] < 2))

    stderr = float('nan')
    if blocks >= 2 and samples.n >= 50 * blocks:
        parts = np.array_split(np.arange(samples.n), blocks)
        values = [_cmi_codes(xc[p], yc[p], zc[p]) for p in parts]
        stderr = float(np.std(values, ddof=1) / math.sqrt(blocks))

    if sparse:
        logger.debug(f"cmi: {sparse} of {int(np.sum(counts > 0))} Z-bins hold a single sample")
    return CmiEstimate(estimate, baseline, samples.n, sparse, int(np.sum(counts > 0)), stderr)


# --- Gaussian closed form ---

@dataclass
class GaussianModel:
    names: List[str]
    covariance: np.ndarray
    mean: Optional[np.ndarray] = None

    def __post_init__(self):
        self.covariance = np.asarray(self.covariance, dtype=float)
        k = len(self.names)
        if len(set(self.names)) != k:
            raise DomainError("variable names must be unique")
        if self.covariance.shape != (k, k):
            raise DomainError(f"covariance shape {self.covariance.shape} does not match {k} names")
        if not np.allclose(self.covariance, self.covariance.T, rtol=1e-10, atol=0.0):
            raise DomainError("covariance must be symmetric")
        eig = np.linalg.eigvalsh(self.covariance)
        if eig.min() < -1e-10 * max(eig.max(), 1e-300):
            raise DomainError("covariance must be positive semidefinite")
        self.mean = np.zeros(k) if self.mean is None else np.asarray(self.mean, dtype=float)

    def block(self, names: Sequence[str]) -> np.ndarray:
        idx = [self.names.index(name) for name in names]
        return self.covariance[np.ix_(idx, idx)]

    def sample(self, n: int, rng=None) -> JointSamples:
        values = as_generator(rng).multivariate_normal(self.mean, self.covariance, size=n)
        return JointSamples({name: values[:, i] for i, name in enumerate(self.names)})


def _logdet(matrix: np.ndarray) -> Optional[float]:
    """Natural log-determinant, or None when the block is numerically singular"""
    if matrix.size == 0:
        return 0.0
    eig = np.linalg.eigvalsh(matrix)
    if eig.min() <= 1e-12 * max(eig.max(), 1e-300):
        return None
    sign, value = np.linalg.slogdet(matrix)
    return float(value) if sign > 0 else None


def gaussian_cmi(model: GaussianModel, a: Sequence[str], b: Sequence[str], e: Sequence[str]) -> float:
    """
    I(A;B|E) = 1/2 log2(det S_AE det S_BE / (det S_E det S_ABE)).

    Singular S_E, S_AE or S_BE raise DomainError naming the block; a singular
    S_ABE alone means deterministic dependence and returns +inf.
    """
    a, b, e = list(a), list(b), list(e)
    if not a or not b:
        raise DomainError("A and B must be nonempty")
    logs = {}
    for label, names in (('E', e), ('AE', a + e), ('BE', b + e)):
        value = _logdet(model.block(names))
        if value is None:
            raise DomainError(f"covariance block Sigma_{label} is singular")
        logs[label] = value
    joint = _logdet(model.block(a + b + e))
    if joint is None:
        return math.inf
    value = 0.5 * (logs['AE'] + logs['BE'] - logs['E'] - joint) / math.log(2.0)
    # rounding leaves ~1e-16 where the bound is exactly zero
    return value if value > 1e-12 else 0.0


# --- Markov chain test ---

@dataclass
class ReportRow:
    quantity: str
    estimate_bits: float
    baseline_bits: Optional[float]
    n: int
    bins: int
    passed: Optional[bool] = None

    def to_dict(self) -> Dict:
        return {
            'quantity': self.quantity,
            'estimate_bits': self.estimate_bits,
            'baseline_bits': '' if self.baseline_bits is None else self.baseline_bits,
            'n': self.n,
            'bins': self.bins,
            'pass': '' if self.passed is None else ('PASS' if self.passed else 'FAIL'),
        }


@dataclass
class MarkovReport:
    rows: List[ReportRow]
    passed: bool
    tolerance: float

    def row(self, quantity: str) -> ReportRow:
        for row in self.rows:
            if row.quantity == quantity:
                return row
        raise KeyError(quantity)


def markov_test(samples: JointSamples, x: Sequence[str] = ('X',), y: Sequence[str] = ('Y',),
                z_a: Sequence[str] = ('Z_A',), z_b: Sequence[str] = ('Z_B',),
                binning: BinningSpec = None, tolerance: float = 0.01, rng=None) -> MarkovReport:
    """
    Check H(X|Z_A) = H(X|Z) = H(X|Z,Y) and I(X;Y|Z) = 0 with Z = (Z_A, Z_B).

    The first gap is I(X;Z_B|Z_A), the second I(X;Y|Z); each passes when it
    stays within its shuffle baseline plus the tolerance.
    """
    x, y, z_a, z_b = list(x), list(y), list(z_a), list(z_b)
    for name in x + y + z_a + z_b:
        samples[name]
    binning = binning or BinningSpec()
    gen = as_generator(rng)
    z = z_a + z_b
    n, bins = samples.n, binning.bins

    rows = [
        ReportRow('H(X|Z_A)', conditional_entropy(samples, x, z_a, binning), None, n, bins),
        ReportRow('H(X|Z)', conditional_entropy(samples, x, z, binning), None, n, bins),
        ReportRow('H(X|Z,Y)', conditional_entropy(samples, x, z + y, binning), None, n, bins),
    ]
    gap = cmi(samples, x, z_b, z_a, binning, gen)
    leak = cmi(samples, x, y, z, binning, gen)
    gap_ok = gap.estimate <= gap.baseline + tolerance
    leak_ok = leak.estimate <= leak.baseline + tolerance
    rows.append(ReportRow('I(X;Z_B|Z_A)', gap.estimate, gap.baseline, n, bins, gap_ok))
    rows.append(ReportRow('I(X;Y|Z)', leak.estimate, leak.baseline, n, bins, leak_ok))

    report = MarkovReport(rows, gap_ok and leak_ok, tolerance)
    logger.info(f"Markov test {'PASS' if report.passed else 'FAIL'}: "
                f"I(X;Y|Z)={leak.estimate:.4f} (baseline {leak.baseline:.4f}) bits, n={n}")
    return report


def write_report_csv(path: str, rows: Sequence[ReportRow]):
    """quantity,estimate_bits,baseline_bits,n,bins,pass"""
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=['quantity', 'estimate_bits', 'baseline_bits', 'n', 'bins', 'pass'])
        writer.writeheader()
        for row in rows:
            writer.writerow(row.to_dict())


def _first_arrivals(samples: np.ndarray, run: ProtocolRun, threshold: float) -> np.ndarray:
    """Index of the first sample above threshold in each half, len(half) if none"""
    clock = run.clock
    half = clock.samples_per_half
    values = np.abs(samples[:clock.cycles * 2 * half].reshape(clock.cycles, 2, half)) > threshold
    values = values[:, :, clock.ground_samples:]
    never = values.shape[2]
    return np.where(values.any(axis=2), values.argmax(axis=2), never)


def protocol_joint_samples(run: ProtocolRun, tap: int = None, threshold: float = None) -> JointSamples:
    """
    Per-cycle summaries of a noiseless run for the Markov test.

    X and Y are Alice's and Bob's H-first flags. Z_A encodes the first
    arrival of the left-moving wave at Eve's tap in both halves (what
    reaches her from Bob's side), Z_B the same for the right-moving wave,
    and Z_msv is the steady mean-square tap voltage.
    """
    if run.clock.samples_per_half is None:
        raise DomainError("protocol_joint_samples needs a half-cycle (noiseless) run")
    taps = run.taps
    record = taps[tap] if tap is not None else next(iter(taps.values()))
    if threshold is None:
        threshold = 5.0 * max(noise_floor(record.v_plus), noise_floor(record.v_minus))

    minus = _first_arrivals(record.v_minus.samples, run, threshold)
    plus = _first_arrivals(record.v_plus.samples, run, threshold)
    width = int(max(minus.max(), plus.max())) + 1
    half = run.clock.samples_per_half
    v = record.voltage.samples[:run.clock.cycles * 2 * half].reshape(run.clock.cycles, 2, half)
    steady = v[:, :, run.clock.settle_samples:]

    return JointSamples({
        'X': np.array([o.alice_choice == Choice.H_FIRST for o in run.outcomes], dtype=np.int64),
        'Y': np.array([o.bob_choice == Choice.H_FIRST for o in run.outcomes], dtype=np.int64),
        'Z_A': (minus[:, 0] * width + minus[:, 1]).astype(np.int64),
        'Z_B': (plus[:, 0] * width + plus[:, 1]).astype(np.int64),
        'Z_msv': np.mean(steady * steady, axis=(1, 2)),
    })
