"""
Logging configuration
"""
import logging
import sys
from pathlib import Path

from inode_lab.core.config import settings

_configured = False


def setup_logging(force: bool = False) -> None:
    """Configure root logging once per process"""
    global _configured
    if _configured and not force:
        return

    log_format = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    date_format = "%Y-%m-%d %H:%M:%S"

    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if settings.LOG_TO_FILE:
        log_dir = Path(settings.LOG_DIR)
        log_dir.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_dir / "inode_lab.log"))

    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL.upper()),
        format=log_format,
        datefmt=date_format,
        handlers=handlers,
        force=force,
    )

    # numpy warnings about overflow during rejected solver steps are noise
    logging.getLogger("py.warnings").setLevel(logging.ERROR)
    _configured = True
