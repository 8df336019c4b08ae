# Copyright (C) 2025-2026, crowdship-sim contributors.

# This program is licensed under the Apache License 2.0.
# See LICENSE or go to <https://opensource.org/licenses/Apache-2.0> for full license details.

import os
from logging import INFO, FileHandler, Formatter, Logger, StreamHandler, _nameToLevel, getLogger

__all__ = ["logger", "get_logger"]


def get_logger(mode: str = "INFO", log_file: str | None = "crowdship.log") -> Logger:
    """
    Returns a logger to use for the entire module.

    Args:
        mode: str: The logging level to use. Defaults to "INFO".
        log_file: str | None: Path of the log file, None to log to the stream only.

    Returns:
        Logger-Object with a unified name for the module.
    """
    log = getLogger("crowdship-logger")
    log.setLevel(_nameToLevel.get(mode.upper(), INFO))

    # Re-imports and repeated calls must not stack handlers
    if log.handlers:
        return log

    formatter = Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    stream_handler = StreamHandler()
    stream_handler.setFormatter(formatter)
    log.addHandler(stream_handler)

    if log_file:
        file_handler = FileHandler(log_file)
        file_handler.setFormatter(formatter)
        log.addHandler(file_handler)

    return log


logger = get_logger(
    mode=os.environ.get("CROWDSHIP_LOG_LEVEL", "INFO"),
    log_file=os.environ.get("CROWDSHIP_LOG_FILE", "crowdship.log") or None,
)
