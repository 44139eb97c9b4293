"""
Noisy-observation source, hard decisions and one round of advantage
distillation, with the conditional-mutual-information bound on the key rate
"""
import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from lab.infotheory import BinningSpec, GaussianModel, JointSamples, cmi, gaussian_cmi, mutual_information
from lab.txline import as_generator
from utils.signals import DomainError, RngStream, johnson_sigma

logger = logging.getLogger(__name__)

DEFAULT_N_GRID = (1, 3, 5, 7, 9, 11, 13, 15)
DEFAULT_RE_GRID = (0.0, 100.0, 250.0, 500.0, 700.0, 1000.0)


@dataclass
class Fig3Params:
    """A random binary source seen by Alice, Bob and Eve through thermal resistors"""
    V0: float = 2.6e-6
    R_A: float = 1000.0
    R_B: float = 1000.0
    R_E: float = 700.0
    T: float = 300.0
    dt: float = 5e-6
    n: int = 100_000

    def __post_init__(self):
        if not self.V0 > 0:
            raise DomainError("V0 must be positive")
        if not (self.R_A > 0 and self.R_B > 0):
            raise DomainError("R_A and R_B must be positive")
        if self.R_E < 0:
            raise DomainError("R_E must be non-negative")
        if self.n < 1:
            raise DomainError("n must be at least 1")

    def sigma(self, R: float) -> float:
        return johnson_sigma(R, self.T, self.dt)

    @property
    def sigmas(self) -> Dict[str, float]:
        return {'A': self.sigma(self.R_A), 'B': self.sigma(self.R_B), 'E': self.sigma(self.R_E)}

    def to_dict(self) -> Dict:
        return asdict(self)


def fig3_sample(params: Fig3Params, rng=None) -> JointSamples:
    """U uniform on {0, V0}; A, B, E = U plus independent Johnson noise"""
    gen = as_generator(rng)
    u = params.V0 * gen.integers(0, 2, params.n)
    columns = {'U': u.astype(float)}
    for name, sigma in params.sigmas.items():
        columns[name] = u + sigma * gen.standard_normal(params.n)
    return JointSamples(columns)


def decision_error(V0: float, sigma: float) -> float:
    """Upper normal tail at V0/(2 sigma): per-bit error of the midpoint decision"""
    if sigma == 0:
        return 0.0
    return float(stats.norm.sf(V0 / (2.0 * sigma)))


def hard_decision(column: np.ndarray, threshold: float, sigma: float = None,
                  V0: float = None) -> Tuple[np.ndarray, Optional[float]]:
    """Bits = column > threshold, with the analytic error when sigma and V0 are known"""
    if not math.isfinite(threshold):
        raise DomainError("threshold must be finite")
    bits = (np.asarray(column) > threshold).astype(np.int8)
    eps = decision_error(V0, sigma) if sigma is not None and V0 is not None else None
    return bits, eps


def pairwise_error_rates(bits_a: np.ndarray, bits_b: np.ndarray, bits_e: np.ndarray) -> Tuple[float, float, float]:
    """Empirical disagreement fractions (eps_AB, eps_AE, eps_BE)"""
    if not len(bits_a) == len(bits_b) == len(bits_e):
        raise DomainError("bit sequences differ in length")
    if len(bits_a) == 0:
        raise DomainError("empty bit sequences")
    return (float(np.mean(bits_a != bits_b)), float(np.mean(bits_a != bits_e)),
            float(np.mean(bits_b != bits_e)))


@dataclass
class DistillBlock:
    N: int
    accepted: bool
    bob_bit: Optional[int]
    eve_bit: int
    true_bit: int


@dataclass
class DistillBlocks:
    """One round of repetition-code advantage distillation, block-vectorised"""
    N: int
    accepted: np.ndarray
    bob_bits: np.ndarray  # -1 on rejected blocks
    eve_bits: np.ndarray
    true_bits: np.ndarray

    def __len__(self) -> int:
        return len(self.accepted)

    def __iter__(self) -> Iterator[DistillBlock]:
        for ok, bob, eve, true in zip(self.accepted, self.bob_bits, self.eve_bits, self.true_bits):
            yield DistillBlock(self.N, bool(ok), int(bob) if ok else None, int(eve), int(true))

    @property
    def accepted_count(self) -> int:
        return int(self.accepted.sum())

    @property
    def accept_rate(self) -> float:
        return self.accepted_count / len(self) if len(self) else 0.0

    @property
    def bob_errors(self) -> int:
        return int(np.sum(self.bob_bits[self.accepted] != self.true_bits[self.accepted]))

    @property
    def eve_errors(self) -> int:
        return int(np.sum(self.eve_bits[self.accepted] != self.true_bits[self.accepted]))

    @property
    def eps_B(self) -> float:
        return self.bob_errors / self.accepted_count if self.accepted_count else float('nan')

    @property
    def eps_E(self) -> float:
        return self.eve_errors / self.accepted_count if self.accepted_count else float('nan')


def advantage_distill(bits_a: np.ndarray, bits_b: np.ndarray, bits_e: np.ndarray, N: int, rng=None) -> DistillBlocks:
    """
    Alice draws a secret bit C per block of N and publishes M = A xor C.
    Bob accepts when every B xor M agrees and takes that value. Eve takes the
    majority of E xor M, with a fair coin on ties. Trailing bits that do not
    fill a block are dropped.
    """
    if N < 1:
        raise DomainError(f"block length must be >= 1, got {N}")
    if not len(bits_a) == len(bits_b) == len(bits_e):
        raise DomainError("bit sequences differ in length")
    gen = as_generator(rng)
    blocks = len(bits_a) // N
    used = blocks * N
    a = np.asarray(bits_a[:used], dtype=np.int8).reshape(blocks, N)
    b = np.asarray(bits_b[:used], dtype=np.int8).reshape(blocks, N)
    e = np.asarray(bits_e[:used], dtype=np.int8).reshape(blocks, N)

    c = gen.integers(0, 2, blocks).astype(np.int8)
    m = a ^ c[:, None]
    bob_view = b ^ m
    accepted = np.all(bob_view == bob_view[:, :1], axis=1)
    bob_bits = np.where(accepted, bob_view[:, 0], -1).astype(np.int8)

    votes = np.sum(e ^ m, axis=1)
    coin = gen.integers(0, 2, blocks)
    eve_bits = np.where(2 * votes > N, 1, np.where(2 * votes < N, 0, coin)).astype(np.int8)

    logger.debug(f"Advantage distillation N={N}: {int(accepted.sum())}/{blocks} blocks accepted")
    return DistillBlocks(N, accepted, bob_bits, eve_bits, c)


def binary_entropy(p: float) -> float:
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"probability out of range: {p}")
    if p in (0.0, 1.0):
        return 0.0
    return float(-p * math.log2(p) - (1 - p) * math.log2(1 - p))


def _fold(eps: float) -> float:
    # an error rate above 1/2 is as good as its complement to whoever flips
    if not 0.0 <= eps <= 1.0:
        raise DomainError(f"error rate out of range: {eps}")
    return min(eps, 1.0 - eps)


def ck_rate(eps_B: float, eps_E: float) -> float:
    """h(eps_E) - h(eps_B) bits per accepted block, floored at zero"""
    return max(0.0, binary_entropy(_fold(eps_E)) - binary_entropy(_fold(eps_B)))


def clopper_pearson(errors: int, trials: int, confidence: float = 0.95) -> Tuple[float, float]:
    """Exact two-sided binomial interval for the error rate"""
    if trials == 0:
        return 0.0, 1.0
    alpha = 1.0 - confidence
    lower = 0.0 if errors == 0 else float(stats.beta.ppf(alpha / 2, errors, trials - errors + 1))
    upper = 1.0 if errors == trials else float(stats.beta.ppf(1 - alpha / 2, errors + 1, trials - errors))
    return lower, upper


def conservative_ck_rate(blocks: DistillBlocks, confidence: float = 0.95) -> float:
    """ck_rate with Bob's error at its upper and Eve's at her lower confidence limit"""
    n = blocks.accepted_count
    if n == 0:
        return 0.0
    eps_b_hi = min(0.5, clopper_pearson(blocks.bob_errors, n, confidence)[1])
    eve = min(blocks.eve_errors, n - blocks.eve_errors)
    eps_e_lo = min(0.5, clopper_pearson(eve, n, confidence)[0])
    return max(0.0, binary_entropy(eps_e_lo) - binary_entropy(eps_b_hi))


def gaussian_surrogate(params: Fig3Params) -> GaussianModel:
    """(A, B, E) with U replaced by a Gaussian of the same variance V0^2/4"""
    var_u = params.V0 ** 2 / 4.0
    s = params.sigmas
    cov = var_u * np.ones((3, 3)) + np.diag([s['A'] ** 2, s['B'] ** 2, s['E'] ** 2])
    return GaussianModel(['A', 'B', 'E'], cov)


@dataclass
class SweepRow:
    R_E: float
    N: int
    accept_rate: float
    eps_B: float
    eps_E: float
    ck_rate: float
    ck_rate_per_sample: float
    cmi_bound_mc: float
    cmi_bound_gauss: float

    def csv_row(self) -> Dict:
        return {
            'R_E': self.R_E, 'N': self.N, 'accept_rate': self.accept_rate,
            'eps_B': self.eps_B, 'eps_E': self.eps_E,
            'ck_rate_per_sample': self.ck_rate_per_sample,
            'cmi_bound_mc': self.cmi_bound_mc, 'cmi_bound_gauss': self.cmi_bound_gauss,
        }


@dataclass
class KeyRateReport:
    params: Fig3Params
    raw_mi: Dict[str, float]
    eps_table: Dict[str, float]
    rows: List[SweepRow]
    cmi_bound_mc: float
    cmi_mc_stderr: float
    cmi_bound_gauss: float
    bound_ok: bool
    notes: List[str] = field(default_factory=list)

    @property
    def best(self) -> SweepRow:
        return max(self.rows, key=lambda row: (row.ck_rate_per_sample, -row.N))


def key_rate_pipeline(params: Fig3Params, n_grid: Sequence[int] = DEFAULT_N_GRID, rng=None,
                      bins: int = 16) -> KeyRateReport:
    """
    Sample, hard-decide, distill over the N grid and compare each per-sample
    rate (conservative ck_rate x accepted blocks / n) with the CMI bound.

    The binding bound is the baseline-corrected binned I(A;B|E) on the
    binary-source samples, allowed three block standard errors of slack.
    """
    gen = as_generator(rng)
    samples = fig3_sample(params, gen)
    sigmas = params.sigmas
    threshold = params.V0 / 2.0
    bits = {name: hard_decision(samples[name], threshold)[0] for name in ('A', 'B', 'E')}
    eps_ab, eps_ae, eps_be = pairwise_error_rates(bits['A'], bits['B'], bits['E'])
    eps_table = {
        'eps_A': decision_error(params.V0, sigmas['A']),
        'eps_B': decision_error(params.V0, sigmas['B']),
        'eps_E': decision_error(params.V0, sigmas['E']),
        'eps_AB': eps_ab, 'eps_AE': eps_ae, 'eps_BE': eps_be,
    }
    bit_samples = JointSamples({name: value for name, value in bits.items()})
    raw_mi = {
        'I(A;B)': mutual_information(bit_samples, ['A'], ['B']),
        'I(A;E)': mutual_information(bit_samples, ['A'], ['E']),
        'I(B;E)': mutual_information(bit_samples, ['B'], ['E']),
    }

    estimate = cmi(samples, ['A'], ['B'], ['E'], BinningSpec(bins=bins), gen)
    bound_mc = estimate.corrected
    stderr = 0.0 if math.isnan(estimate.stderr) else estimate.stderr
    bound_gauss = gaussian_cmi(gaussian_surrogate(params), ['A'], ['B'], ['E'])

    rows = []
    bound_ok = True
    notes = []
    for N in n_grid:
        blocks = advantage_distill(bits['A'], bits['B'], bits['E'], N, gen)
        rate = conservative_ck_rate(blocks)
        per_sample = rate * blocks.accepted_count / params.n
        rows.append(SweepRow(params.R_E, N, blocks.accept_rate, blocks.eps_B, blocks.eps_E,
                             rate, per_sample, bound_mc, bound_gauss))
        if per_sample > bound_mc + 3.0 * stderr:
            bound_ok = False
            notes.append(f"N={N}: rate {per_sample:.4g} exceeds bound {bound_mc:.4g} + 3x{stderr:.2g}")

    logger.info(f"R_E={params.R_E:g}: eps_AB={eps_ab:.4f} eps_AE={eps_ae:.4f} "
                f"I(A;B|E) mc={bound_mc:.4f} gauss={bound_gauss:.4f}")
    for note in notes:
        logger.warning(note)
    return KeyRateReport(params, raw_mi, eps_table, rows, bound_mc, stderr, bound_gauss, bound_ok, notes)


def _pipeline_task(args) -> KeyRateReport:
    params, n_grid, stream, bins = args
    return key_rate_pipeline(params, n_grid, stream, bins)


def sweep_RE(params: Fig3Params, re_grid: Sequence[float] = DEFAULT_RE_GRID,
             n_grid: Sequence[int] = DEFAULT_N_GRID, stream: RngStream = None,
             workers: int = 1, bins: int = 16) -> List[KeyRateReport]:
    """One key_rate_pipeline per R_E, each on its own substream, in grid order"""
    if not re_grid or not n_grid:
        raise DomainError("R_E and N grids must be nonempty")
    stream = stream or RngStream(0)
    tasks = []
    for i, r_e in enumerate(re_grid):
        point = Fig3Params(**{**params.to_dict(), 'R_E': float(r_e)})
        tasks.append((point, tuple(n_grid), stream.substream(i), bins))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_pipeline_task, tasks))
    return [_pipeline_task(task) for task in tasks]


def best_rows(reports: Sequence[KeyRateReport]) -> List[Tuple[float, float, float]]:
    """(R_E, best-N rate per sample, cmi bound) per grid point"""
    return [(r.params.R_E, r.best.ck_rate_per_sample, r.cmi_bound_mc) for r in reports]


def write_sweep_csv(path: str, reports: Sequence[KeyRateReport]):
    """R_E,N,accept_rate,eps_B,eps_E,ck_rate_per_sample,cmi_bound_mc,cmi_bound_gauss"""
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    fields = ['R_E', 'N', 'accept_rate', 'eps_B', 'eps_E', 'ck_rate_per_sample', 'cmi_bound_mc', 'cmi_bound_gauss']
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for report in reports:
            for row in report.rows:
                writer.writerow(row.csv_row())
