"""Logging configuration for VolMate."""

import sys
from typing import Optional
from loguru import logger

from config import settings


def setup_logging(level: Optional[str] = None, log_file: Optional[str] = None):
    """Configure loguru logger."""
    level = (level or settings.LOG_LEVEL).upper()

    # Remove default handler
    logger.remove()

    # Console handler with colorized output
    logger.add(
        sys.stderr,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
        level=level,
        colorize=True
    )

    # File handler
    if log_file or settings.LOG_TO_FILE:
        path = settings.get_log_file() if log_file is None else settings.BASE_DIR / log_file
        path.parent.mkdir(parents=True, exist_ok=True)

        logger.add(
            str(path),
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
            level=level,
            rotation="10 MB",
            retention="1 week",
            compression="zip"
        )

    logger.debug(f"Logging initialized at level {level}")


# Initialize logging when module is imported
setup_logging()
