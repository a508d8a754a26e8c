#!/usr/bin/env python3
"""Configure logging for devdiet commands"""

import logging
import logging.config
from pathlib import Path

SHORT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DETAILED_FORMAT = (
    "%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s"
)
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def setup_logger(
    name: str = "devdiet",
    level=logging.INFO,
    log_dir: Path = Path("logs"),
    console_level=logging.WARNING,
):
    """
    Create the root logger for a command

    Args:
        name: Name of the command (e.g., 'pretrain', 'eval', 'synth')
        level: Level written to logs/<name>.log (default: INFO)
        log_dir: Directory for log files
        console_level: Console threshold (default: warnings and above)

    Returns:
        Configured root logger
    """
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)

    logger = logging.getLogger()
    logger.setLevel(min(level, console_level))

    # Clear existing handlers to avoid duplicates
    logger.handlers.clear()

    fh = logging.FileHandler(log_dir / f"{name}.log")
    fh.setLevel(level)
    fh.setFormatter(logging.Formatter(DETAILED_FORMAT, datefmt=DATE_FORMAT))

    ch = logging.StreamHandler()
    ch.setLevel(console_level)
    ch.setFormatter(logging.Formatter(SHORT_FORMAT, datefmt=DATE_FORMAT))

    logger.addHandler(fh)
    logger.addHandler(ch)
    return logger


def load_config_logging(settings: dict, name: str = "devdiet", verbosity: int = 0):
    """
    Configure logging from the settings `logging:` section

    A full dictConfig under `logging.dict_config` wins; otherwise the
    `logging.level` / `logging.console_level` keys feed setup_logger.
    -v / -vv on the command line lower the console threshold.

    Returns:
        Root logger
    """
    log_cfg = (settings or {}).get("logging") or {}
    log_dir = Path(settings.get("paths", {}).get("logs_dir", "logs")) if settings else Path("logs")

    if log_cfg.get("dict_config"):
        try:
            log_dir.mkdir(parents=True, exist_ok=True)
            logging.config.dictConfig(log_cfg["dict_config"])
            return logging.getLogger()
        except (ValueError, TypeError, AttributeError, ImportError) as e:
            print(f"Warning: Could not apply logging dict_config: {e}")

    level = getattr(logging, str(log_cfg.get("level", "INFO")).upper(), logging.INFO)
    console = getattr(
        logging, str(log_cfg.get("console_level", "WARNING")).upper(), logging.WARNING
    )
    if verbosity == 1:
        console = min(console, logging.INFO)
    elif verbosity >= 2:
        console = logging.DEBUG
        level = logging.DEBUG
    return setup_logger(name, level=level, log_dir=log_dir, console_level=console)
