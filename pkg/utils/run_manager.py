"""
Track experiment runs, their acceptance checks and output files
"""
import csv
import json
import logging
import os
import uuid
from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    """One acceptance check; failures are reported, never raised"""
    name: str
    passed: bool
    value: Optional[float] = None
    limit: Optional[float] = None
    detail: str = ''

    def __post_init__(self):
        # numpy scalars do not survive json.dump
        self.passed = bool(self.passed)
        if self.value is not None:
            self.value = float(self.value)
        if self.limit is not None:
            self.limit = float(self.limit)

    def to_dict(self) -> Dict:
        return asdict(self)

    def line(self) -> str:
        status = 'PASS' if self.passed else 'FAIL'
        numbers = ''
        if self.value is not None:
            numbers = f" value={self.value:.6g}"
            if self.limit is not None:
                numbers += f" limit={self.limit:.6g}"
        detail = f" ({self.detail})" if self.detail else ''
        return f"[{status}] {self.name}{numbers}{detail}"


@dataclass
class RunRecord:
    """Experiment run tracking"""
    run_id: str
    experiment: str
    seed: int
    status: str  # queued, running, completed, checks_failed, failed
    output_directory: str = ""
    checks: List[Dict] = None
    outputs: List[str] = None
    error_messages: List[str] = None
    created_at: str = ""
    completed_at: Optional[str] = None
    log_file: str = ""

    def __post_init__(self):
        if self.checks is None:
            self.checks = []
        if self.outputs is None:
            self.outputs = []
        if self.error_messages is None:
            self.error_messages = []
        if not self.created_at:
            self.created_at = datetime.now().isoformat()

    def to_dict(self) -> Dict:
        return asdict(self)

    @property
    def passed(self) -> bool:
        return self.status == 'completed'

    def update_from_result(self, result: Dict):
        """Update the record from an experiment result dict"""
        self.checks = [check.to_dict() for check in result.get('checks', [])]
        self.outputs.extend(result.get('outputs', []))
        if result.get('errors'):
            self.error_messages.extend(result['errors'])

        if self.error_messages:
            self.status = 'failed'
        elif all(check['passed'] for check in self.checks):
            self.status = 'completed'
        else:
            self.status = 'checks_failed'
        self.completed_at = datetime.now().isoformat()

    def mark_failed(self, message: str):
        self.error_messages.append(message)
        self.status = 'failed'
        self.completed_at = datetime.now().isoformat()


class RunManager:
    """Write run records, check tables and summaries into one output directory"""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.record_file = os.path.join(out_dir, 'run.json')
        self.log_dir = os.path.join(out_dir, 'logs')

    def path(self, filename: str) -> str:
        return os.path.join(self.out_dir, filename)

    def create_run(self, experiment: str, seed: int, log_file: str = '') -> RunRecord:
        run = RunRecord(
            run_id=str(uuid.uuid4()),
            experiment=experiment,
            seed=seed,
            status='running',
            output_directory=self.out_dir,
            log_file=log_file,
        )
        self.save_run(run)
        return run

    def save_run(self, run: RunRecord) -> bool:
        """Save the run record as JSON; returns False if it could not be written"""
        try:
            text = json.dumps(run.to_dict(), indent=2)
            with open(self.record_file, 'w', encoding='utf-8') as f:
                f.write(text)
        except (OSError, TypeError, ValueError) as e:
            logger.error(f"Error saving run record: {e}")
            return False
        return True

    def load_run(self) -> Optional[RunRecord]:
        if not os.path.exists(self.record_file):
            return None
        with open(self.record_file, 'r', encoding='utf-8') as f:
            return RunRecord(**json.load(f))

    def save_checks_csv(self, run: RunRecord) -> Optional[str]:
        """Save the acceptance checks to checks.csv"""
        if not run.checks:
            return None
        csv_path = self.path('checks.csv')
        with open(csv_path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.DictWriter(f, fieldnames=['name', 'passed', 'value', 'limit', 'detail'])
            writer.writeheader()
            writer.writerows(run.checks)
        return csv_path

    def write_summary(self, run: RunRecord, checks: List[CheckResult], lines: List[str] = None) -> str:
        """Human-readable summary.txt: verdict, checks, then any extra lines"""
        summary_path = self.path('summary.txt')
        with open(summary_path, 'w', encoding='utf-8') as f:
            f.write(f"experiment: {run.experiment}\n")
            f.write(f"seed: {run.seed}\n")
            if run.log_file:
                f.write(f"log: {run.log_file}\n")
            f.write(f"status: {run.status}\n\n")
            for check in checks:
                f.write(check.line() + '\n')
            for message in run.error_messages:
                f.write(f"[ERROR] {message}\n")
            if lines:
                f.write('\n')
                f.writelines(line + '\n' for line in lines)
        return summary_path
