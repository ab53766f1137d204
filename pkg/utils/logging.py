import logging
import os
from typing import Optional

from config import config

LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"


def setup_logging(level: Optional[str] = None, log_dir: Optional[str] = None) -> None:
    """Configure console and file logging for the CLI"""
    level = (level or config.LOG_LEVEL).upper()
    log_dir = log_dir or config.LOG_PATH
    os.makedirs(log_dir, exist_ok=True)

    handlers = [
        logging.StreamHandler(),
        logging.FileHandler(os.path.join(log_dir, "evt.log")),
    ]
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)
    # numexpr announces its thread count at INFO when pandas imports it
    logging.getLogger("numexpr").setLevel(logging.WARNING)
