import json
import logging
import sys
from collections import Counter
from datetime import datetime
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

from .config import settings

CONSOLE_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
FILE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(name: str = "minkowski_tensors", log_file: Optional[str] = None) -> logging.Logger:
    """
    Configure the toolkit logger.

    Console output goes to stdout with short timestamps; the file handler
    rotates at 10MB and keeps 5 backups.
    """
    path = Path(log_file or settings.LOG_FILE)
    path.parent.mkdir(parents=True, exist_ok=True)

    log = logging.getLogger(name)
    log.setLevel(settings.log_level_value)
    log.handlers = []

    console = logging.StreamHandler(sys.stdout)
    console.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt='%H:%M:%S'))
    log.addHandler(console)

    rotating = RotatingFileHandler(path, maxBytes=10 * 1024 * 1024, backupCount=5, encoding="utf-8")
    rotating.setFormatter(logging.Formatter(FILE_FORMAT))
    log.addHandler(rotating)

    return log


class ResultLogger:
    """
    Records identity checks and experiment rows in JSONL format.
    """
    def __init__(self, file_path: str = None):
        self.file_path = Path(file_path or settings.RESULT_LOG_FILE)
        self.file_path.parent.mkdir(parents=True, exist_ok=True)

    def _write(self, command: str, check: str, status: str, **fields):
        record = {"timestamp": datetime.now().isoformat(), "command": command, "check": check, "status": status}
        record.update(fields)
        with open(self.file_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record) + "\n")

    def log_check(self,
                  command: str,
                  check: str,
                  status: str,
                  value: float = None,
                  tolerance: float = None,
                  detail: str = None):
        """
        Log a single identity/acceptance check.

        status is one of pass, fail, error.
        """
        self._write(command, check, status, value=value, tolerance=tolerance, detail=detail)

    def log_experiment_row(self, config_hash: str, row: dict):
        """Log one t-level of an experiment report."""
        self._write("experiment", f"experiment:{config_hash}", "row", row=row)

    def _records_for(self, day: str):
        if not self.file_path.exists():
            return
        with open(self.file_path, "r", encoding="utf-8") as f:
            for line in f:
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    continue
                if str(record.get("timestamp", "")).startswith(day):
                    yield record

    def generate_run_summary(self) -> dict:
        """Aggregate today's records into pass/fail counts."""
        today = datetime.now().date().isoformat()
        statuses = Counter()
        families = Counter()

        try:
            for record in self._records_for(today):
                status = record.get("status", "unknown")
                statuses[status] += 1
                if status not in ("pass", "row"):
                    families[str(record.get("check", "unknown")).split(":")[0]] += 1
        except OSError as e:
            logger.error(f"Error reading result log {self.file_path}: {e}")

        checks = sum(count for status, count in statuses.items() if status != "row")
        return {
            "date": today,
            "total_checks": checks,
            "passed": statuses["pass"],
            "failed": statuses["fail"],
            "errors": checks - statuses["pass"] - statuses["fail"],
            "experiment_rows": statuses["row"],
            "failures_by_family": dict(families),
        }

    def log_run_summary(self) -> dict:
        """Write today's summary to the main log."""
        summary = self.generate_run_summary()
        logger.info(
            f"Check summary {summary['date']}: {summary['total_checks']} checks, "
            f"{summary['passed']} passed, {summary['failed']} failed, {summary['errors']} errors, "
            f"{summary['experiment_rows']} experiment rows"
        )
        if summary['failures_by_family']:
            logger.info(f"Failures by family: {summary['failures_by_family']}")
        return summary


logger = setup_logging()
result_logger = ResultLogger()
