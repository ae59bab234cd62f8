"""idemine: mine development-process models and metrics from IDE event logs."""

__version__ = "0.1.0"

from . import discovery, eventlog, learn, metrics, stats, synth  # noqa: F401
