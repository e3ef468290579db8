import json
import logging

import numpy as np


def _to_jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    return str(value)


class StructuredLogger(logging.LoggerAdapter):
    """
    A logger adapter that renders the message and its context as one JSON object.
    """

    def process(self, msg, kwargs):
        extra = self.extra.copy()
        if "extra" in kwargs:
            extra.update(kwargs.pop("extra"))

        log_struct = {"message": msg}
        log_struct.update(extra)

        return json.dumps(log_struct, default=_to_jsonable), kwargs

    def bind(self, **context):
        """Return a child adapter carrying additional context on every record."""
        merged = self.extra.copy()
        merged.update(context)
        return StructuredLogger(self.logger, merged)


def get_logger(name, **kwargs):
    """
    Get a logger instance that will produce structured JSON logs.

    :param name: The name of the logger.
    :param kwargs: Key-value pairs to be included in every log message.
    """
    logger = logging.getLogger(name)
    return StructuredLogger(logger, kwargs)


def configure_logging(level="INFO", log_file=None):
    """Configure the root logger: stderr always, plus an optional file with timestamps."""
    formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file, mode="a", encoding="utf-8"))
    for handler in handlers:
        handler.setFormatter(formatter)
    logging.basicConfig(level=level, handlers=handlers, force=True)
