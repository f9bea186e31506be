# -*- coding: utf-8 -*-
import logging


"""
This module contains logging helpers. Every authex logger lives under
the 'authex' namespace; the event manager writes one structured
key=value line per wire frame.
"""

LOG_FORMAT = '%(asctime)s %(name)s %(levelname)s %(message)s'
ROOT_LOGGER = 'authex'


def init_logging(name):
    """
    **Parameters**

    name : str
        component name, e.g. 'event_manager'

    **Returns**

    logger : logging.Logger
        child of the 'authex' logger
    """
    logger = logging.getLogger('%s.%s' % (ROOT_LOGGER, name))
    logger.addHandler(logging.NullHandler())
    return logger


def configure(verbose=False, stream=None):
    """Attaches a stream handler to the root authex logger (CLI only)."""
    root = logging.getLogger(ROOT_LOGGER)
    for old in [h for h in root.handlers if getattr(h, 'cli', False)]:
        root.removeHandler(old)
    handler = logging.StreamHandler(stream)
    handler.cli = True
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    return root


def format_fields(**fields):
    parts = []
    for key in sorted(fields):
        value = fields[key]
        if isinstance(value, bytes):
            value = value.hex()
        parts.append('%s=%s' % (key, value))
    return ' '.join(parts)


def frame_line(ts, opcode, outcome, **fields):
    """
    Builds the structured line logged for one wire frame.

    **Parameters**

    ts : float
        manager clock

    opcode : int

    outcome : str
        'ok', 'error', 'dropped', ...

    **Returns**

    line : str
        'ts=<ts> opcode=0x<op> outcome=<outcome> k=v ...'
    """
    line = 'ts=%.6f opcode=0x%02x outcome=%s' % (ts, opcode, outcome)
    extra = format_fields(**fields)
    if extra:
        line += ' ' + extra
    return line


def log_frame(logger, ts, opcode, outcome, **fields):
    line = frame_line(ts, opcode, outcome, **fields)
    logger.info(line)
    return line


def parse_frame_line(line):
    """Inverse of frame_line, values are kept as strings."""
    record = {}
    for token in line.split():
        if '=' in token:
            key, value = token.split('=', 1)
            record[key] = value
    return record
