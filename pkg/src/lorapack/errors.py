"""Failure classes shared across the toolkit.

Invalid arguments raise plain ``ValueError`` everywhere; the classes below
cover domain failures that callers (and the CLI) need to tell apart.
"""


class MemoryExceededError(RuntimeError):
    """A device configuration reserves more GPU memory than exists."""


class StarvationError(RuntimeError):
    """No starvation-free placement of the workload is possible."""


class FitFailureError(RuntimeError):
    """Calibration could not be fitted (rank-deficient or missing data)."""


class NoFeasiblePointError(RuntimeError):
    """Every point of a packing sweep was starved."""
