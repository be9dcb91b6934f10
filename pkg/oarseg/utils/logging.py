"""
Logging configuration for oarseg.
"""

import logging
import os
from datetime import datetime
from typing import Optional

from rich.logging import RichHandler

LOGGER_NAME = "oarseg"


class Logger:
    """Logger for oarseg."""

    def __init__(self, log_dir: Optional[str] = None, level: str = "INFO"):
        """Initialize logger.

        Args:
            log_dir: Directory for log files. If None, logs go to the console only.
            level: Initial logging level name
        """
        self.log_dir = log_dir
        self._setup_logger()
        self.set_level(level)

    def _setup_logger(self) -> None:
        """Set up logging configuration."""
        self.logger = logging.getLogger(LOGGER_NAME)
        self.logger.propagate = False

        # Handlers are shared across Logger instances
        if not any(isinstance(h, RichHandler) for h in self.logger.handlers):
            console_handler = RichHandler(show_path=False, rich_tracebacks=False)
            console_handler.setFormatter(logging.Formatter("%(message)s"))
            self.logger.addHandler(console_handler)

        if self.log_dir:
            os.makedirs(self.log_dir, exist_ok=True)
            log_path = os.path.abspath(
                os.path.join(self.log_dir, f"oarseg_{datetime.now().strftime('%Y%m%d')}.log")
            )
            # One log file at a time; a new directory retires the previous handler
            for handler in list(self.logger.handlers):
                if isinstance(handler, logging.FileHandler) and handler.baseFilename != log_path:
                    self.logger.removeHandler(handler)
                    handler.close()
            if not any(isinstance(h, logging.FileHandler) for h in self.logger.handlers):
                file_handler = logging.FileHandler(log_path)
                file_handler.setFormatter(logging.Formatter(
                    '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
                ))
                self.logger.addHandler(file_handler)

    def debug(self, message: str) -> None:
        """Log debug message."""
        self.logger.debug(message)

    def info(self, message: str) -> None:
        """Log info message."""
        self.logger.info(message)

    def warning(self, message: str) -> None:
        """Log warning message."""
        self.logger.warning(message)

    def error(self, message: str) -> None:
        """Log error message."""
        self.logger.error(message)

    def critical(self, message: str) -> None:
        """Log critical message."""
        self.logger.critical(message)

    def set_level(self, level: str) -> None:
        """Set logging level.

        Args:
            level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        """
        level_map = {
            "DEBUG": logging.DEBUG,
            "INFO": logging.INFO,
            "WARNING": logging.WARNING,
            "ERROR": logging.ERROR,
            "CRITICAL": logging.CRITICAL
        }
        self.logger.setLevel(level_map.get(str(level).upper(), logging.INFO))
