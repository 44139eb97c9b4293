"""
Run a named experiment from a YAML config and write its reports

    python cli.py --experiment attack-suite --seed 7 --out runs/attacks
    python cli.py --config configs/acceptance.yaml --out runs/full

Exit codes: 0 all checks pass, 1 a check failed, 2 usage or config error.
"""
import argparse
import logging
import sys
from typing import Dict, List, Optional

from lab.experiments import run_named
from utils.config_loader import EXPERIMENTS, ConfigError, load_config, save_effective_config
from utils.logger import close_run_logging, setup_run_logging
from utils.run_manager import CheckResult, RunManager, RunRecord

EXIT_PASS = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

logger = logging.getLogger('lab.cli')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Noise-based key distribution lab: protocols, attacks and key-rate bounds")
    parser.add_argument('--config', type=str, default=None, help="YAML config file (defaults fill anything missing)")
    parser.add_argument('--out', type=str, required=True, help="output directory; nothing is written outside it")
    parser.add_argument('--experiment', type=str, default=None,
                        help=f"overrides the config: {', '.join(EXPERIMENTS)}")
    parser.add_argument('--seed', type=int, default=None, help="overrides the config seed")
    parser.add_argument('--workers', type=int, default=None, help="processes for trial and grid fan-out")
    parser.add_argument('--export-traces', action='store_true', default=None,
                        help="write per-sample tap and end traces of the first trial")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        'experiment': args.experiment,
        'seed': args.seed,
        'workers': args.workers,
        'export_traces': args.export_traces,
    }
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    manager = RunManager(args.out)
    log_file = setup_run_logging(manager.log_dir)
    try:
        return run_experiment(cfg, manager, log_file)
    finally:
        close_run_logging()


def run_experiment(cfg: Dict, manager: RunManager, log_file: str = '') -> int:
    """Run the configured experiment into manager's directory; returns the exit code"""
    save_effective_config(cfg, manager.path('effective_config.yaml'))
    run = manager.create_run(cfg['experiment'], cfg['seed'], log_file)
    checks: List[CheckResult] = []
    lines: List[str] = []
    try:
        result = run_named(cfg, manager.out_dir)
        checks, lines = result['checks'], result.get('lines', [])
        run.update_from_result(result)
    except Exception as e:
        logger.error(f"Experiment {cfg['experiment']} failed: {e}", exc_info=True)
        run.mark_failed(f"{type(e).__name__}: {e}")

    save_outputs(manager, run, checks, lines)
    for check in checks:
        (logger.info if check.passed else logger.warning)(check.line())
    logger.info(f"Run {run.status}; summary in {manager.path('summary.txt')}")
    return EXIT_PASS if run.passed else EXIT_CHECK_FAILED


def save_outputs(manager: RunManager, run: RunRecord, checks: List[CheckResult], lines: List[str]):
    """
    Write checks.csv, run.json and summary.txt. A table or record that cannot
    be written fails the run, and the summary is still attempted.
    """
    try:
        manager.save_checks_csv(run)
    except (OSError, ValueError) as e:
        logger.error(f"Error saving checks table: {e}")
        run.mark_failed(f"checks.csv not written: {e}")
    if not manager.save_run(run):
        run.mark_failed("run.json not written")
    try:
        manager.write_summary(run, checks, lines)
    except OSError as e:
        logger.error(f"Error writing summary: {e}")
        run.mark_failed(f"summary.txt not written: {e}")


if __name__ == '__main__':
    sys.exit(main())
