import logging
import os

_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# Enable per-call detail with: SLOPPY_DEBUG=1
SLOPPY_DEBUG = os.getenv("SLOPPY_DEBUG", "0") in {"1", "true", "True"}


def _level() -> int:
    if SLOPPY_DEBUG:
        return logging.DEBUG
    name = os.getenv("SLOPPY_LOG_LEVEL", "INFO").upper()
    return getattr(logging, name, logging.INFO)


def get_logger(name: str):
    logger = logging.getLogger(name)
    if not logger.handlers:
        handler = logging.StreamHandler()
        formatter = logging.Formatter(_FORMAT)
        handler.setFormatter(formatter)
        logger.addHandler(handler)
        logger.setLevel(_level())
    return logger
