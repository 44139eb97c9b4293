"""
Parse, validate and resolve experiment configuration
"""
import copy
import logging
import os
from typing import Any, Dict, Optional, Tuple

import yaml

from lab.distill import DEFAULT_N_GRID, DEFAULT_RE_GRID, Fig3Params
from lab.protocols import KljnParams, NoiselessParams
from lab.txline import LineConfig, Shunt
from utils.signals import DomainError

logger = logging.getLogger(__name__)

EXPERIMENTS = ('kljn', 'noiseless', 'attack-suite', 'markov-test', 'distill-sweep')

ALIASES = {
    'attacks': 'attack-suite',
    'attack_suite': 'attack-suite',
    'markov': 'markov-test',
    'markov_test': 'markov-test',
    'distill': 'distill-sweep',
    'distill_sweep': 'distill-sweep',
}

DEFAULTS: Dict[str, Any] = {
    'experiment': 'kljn',
    'seed': 0,
    'workers': 1,
    'trials': 1,
    'export_traces': False,
    'line': {
        'Z0_ohms': 3000.0,
        'dt_seconds': 5e-6,
        'D_cells': 2,
        'tap_cells': 1,
    },
    'kljn': {
        'R_L_ohms': 1000.0,
        'R_H_ohms': 9000.0,
        'T_kelvin': 300.0,
        'cycles': 200,
        'samples_per_cycle': 10000,
        'settle_samples': 500,
        'thresholds_volts2': None,
        'meter_bandwidth_fraction': 0.02,
        'meter_order': 4,
    },
    'noiseless': {
        'V0_volts': 1.0,
        'cycles': 200,
        'samples_per_half': 128,
        'ground_samples': 4,
        'settle_samples': 48,
        'source_ohms': None,
        'D_cells': 8,
        'tap_cells': 4,
    },
    'attacks': {
        'echo_side': 'both',
        'shunt_cell': None,
        'shunt_ohms': None,
        'I_min_amperes': 1e-9,
        'chance_alpha': 0.001,
    },
    'infotheory': {
        'bins': 16,
        'tolerance_bits': 0.01,
        'cycles': 2000,
        'gaussian_samples': 1_000_000,
        'gaussian_bins': 32,
    },
    'distill': {
        'V0_volts': 2.6e-6,
        'R_A_ohms': 1000.0,
        'R_B_ohms': 1000.0,
        'R_E_ohms': 700.0,
        'T_kelvin': 300.0,
        'dt_seconds': 5e-6,
        'n_samples': 100_000,
        'R_E_grid_ohms': list(DEFAULT_RE_GRID),
        'N_grid': list(DEFAULT_N_GRID),
        'bins': 16,
    },
}


class ConfigError(ValueError):
    """Invalid or inconsistent configuration"""


def normalize_experiment(name: str) -> str:
    """Map an experiment name or alias to its canonical form"""
    cleaned = str(name).strip().lower()
    cleaned = ALIASES.get(cleaned, cleaned)
    if cleaned not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose one of {', '.join(EXPERIMENTS)}")
    return cleaned


def _merge(base: Dict, update: Dict, path: str = '') -> Dict:
    """Overlay update on base; keys not present in base are rejected"""
    merged = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown configuration key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be a mapping")
            merged[key] = _merge(base[key], value, where + '.')
        else:
            merged[key] = value
    return merged


def read_yaml(path: str) -> Dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"could not parse {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    return data


def load_config(path: Optional[str] = None, overrides: Optional[Dict] = None) -> Dict:
    """
    Resolve defaults <- YAML file <- overrides into an effective config.

    The result is validated by building every parameter object from it, so
    a config that loads is one the experiments can run.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        cfg = _merge(cfg, read_yaml(path))
    if overrides:
        cfg = _merge(cfg, {k: v for k, v in overrides.items() if v is not None})
    cfg['experiment'] = normalize_experiment(cfg['experiment'])
    validate_config(cfg)
    return cfg


def _int(cfg: Dict, key: str, minimum: int) -> int:
    value = cfg[key]
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"'{key}' must be an integer >= {minimum}, got {value!r}")
    return value


def validate_config(cfg: Dict):
    _int(cfg, 'seed', 0)
    _int(cfg, 'workers', 1)
    _int(cfg, 'trials', 1)
    if cfg['attacks']['echo_side'] not in ('both', 'alice', 'bob'):
        raise ConfigError("attacks.echo_side must be both, alice or bob")
    if not cfg['distill']['R_E_grid_ohms'] or not cfg['distill']['N_grid']:
        raise ConfigError("distill grids must be nonempty")
    try:
        kljn_line(cfg)
        kljn_params(cfg)
        noiseless_line(cfg)
        noiseless_line(cfg, with_shunt=True)
        noiseless_params(cfg)
        fig3_params(cfg)
    except (DomainError, TypeError) as e:
        raise ConfigError(str(e)) from e


# --- Builders ---

def kljn_line(cfg: Dict) -> LineConfig:
    line = cfg['line']
    return LineConfig(Z0=float(line['Z0_ohms']), D=int(line['D_cells']), dt=float(line['dt_seconds']),
                      tap_positions=[int(line['tap_cells'])])


def kljn_params(cfg: Dict) -> KljnParams:
    k = cfg['kljn']
    thresholds = k['thresholds_volts2']
    return KljnParams(
        R_L=float(k['R_L_ohms']),
        R_H=float(k['R_H_ohms']),
        T=float(k['T_kelvin']),
        cycles=int(k['cycles']),
        samples_per_cycle=int(k['samples_per_cycle']),
        settle_samples=int(k['settle_samples']),
        thresholds=None if thresholds is None else tuple(float(v) for v in thresholds),
        meter_bandwidth_fraction=float(k['meter_bandwidth_fraction']),
        meter_order=int(k['meter_order']),
    )


def shunt_taps(cfg: Dict) -> Tuple[int, int]:
    """Cells either side of Eve's shunt"""
    position = shunt_position(cfg)
    return position - 1, position + 1


def shunt_position(cfg: Dict) -> int:
    cell = cfg['attacks']['shunt_cell']
    return int(cfg['noiseless']['tap_cells'] if cell is None else cell)


def noiseless_line(cfg: Dict, with_shunt: bool = False) -> LineConfig:
    """
    Passive taps sit at noiseless.tap_cells; with a shunt the taps move to
    the cells either side of it.
    """
    n, line = cfg['noiseless'], cfg['line']
    Z0 = float(line['Z0_ohms'])
    if not with_shunt:
        return LineConfig(Z0=Z0, D=int(n['D_cells']), dt=float(line['dt_seconds']),
                          tap_positions=[int(n['tap_cells'])])
    R_s = cfg['attacks']['shunt_ohms']
    R_s = 100.0 * Z0 if R_s is None else float(R_s)
    return LineConfig(Z0=Z0, D=int(n['D_cells']), dt=float(line['dt_seconds']),
                      tap_positions=list(shunt_taps(cfg)), shunt=Shunt(shunt_position(cfg), R_s))


def noiseless_params(cfg: Dict, cycles: int = None) -> NoiselessParams:
    n = cfg['noiseless']
    return NoiselessParams(
        V0=float(n['V0_volts']),
        cycles=int(n['cycles'] if cycles is None else cycles),
        samples_per_half=int(n['samples_per_half']),
        ground_samples=int(n['ground_samples']),
        settle_samples=int(n['settle_samples']),
        source_ohms=None if n['source_ohms'] is None else float(n['source_ohms']),
    )


def fig3_params(cfg: Dict, R_E: float = None) -> Fig3Params:
    d = cfg['distill']
    return Fig3Params(
        V0=float(d['V0_volts']),
        R_A=float(d['R_A_ohms']),
        R_B=float(d['R_B_ohms']),
        R_E=float(d['R_E_ohms'] if R_E is None else R_E),
        T=float(d['T_kelvin']),
        dt=float(d['dt_seconds']),
        n=int(d['n_samples']),
    )


def save_effective_config(cfg: Dict, path: str) -> str:
    """Echo the resolved config; loading it again reproduces the run"""
    os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(cfg, f, sort_keys=False, default_flow_style=False)
    return path
