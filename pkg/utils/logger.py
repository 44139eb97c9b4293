"""
Per-run logging: one dated log file inside the run directory and one console
stream, shared by the 'lab' and 'utils' logger trees
"""
import logging
import os
from datetime import datetime
from typing import Sequence

RUN_LOGGERS = ('lab', 'utils')

FILE_FORMAT = '[%(asctime)s] [%(levelname)s] [%(name)s] %(message)s'
CONSOLE_FORMAT = '%(levelname)s: %(message)s'


def log_file_for(log_dir: str, when: datetime = None) -> str:
    return os.path.join(log_dir, f'{(when or datetime.now()).strftime("%Y%m%d")}.log')


def setup_run_logging(log_dir: str, names: Sequence[str] = RUN_LOGGERS,
                      console_level: int = logging.INFO) -> str:
    """
    Route every named logger to <log_dir>/YYYYMMDD.log at DEBUG (per-cycle and
    per-block detail) and to the console at console_level (run boundaries and
    check results). Handlers left by an earlier run in the same process are
    closed first, so each run logs only into its own directory.

    Returns the log file path.
    """
    os.makedirs(log_dir, exist_ok=True)
    log_file = log_file_for(log_dir)

    file_handler = logging.FileHandler(log_file, encoding='utf-8')
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))

    console_handler = logging.StreamHandler()
    console_handler.setLevel(console_level)
    console_handler.setFormatter(logging.Formatter(CONSOLE_FORMAT))

    for name in names:
        close_run_logging([name])
        logger = logging.getLogger(name)
        logger.setLevel(logging.DEBUG)
        logger.addHandler(file_handler)
        logger.addHandler(console_handler)
    return log_file


def close_run_logging(names: Sequence[str] = RUN_LOGGERS):
    """Detach and close the handlers of every named logger"""
    for name in names:
        logger = logging.getLogger(name)
        for handler in list(logger.handlers):
            handler.close()
            logger.removeHandler(handler)
