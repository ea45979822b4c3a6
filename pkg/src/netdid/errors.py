"""Exception types shared across the package."""


class NetDidError(Exception):
    """Base class for package errors."""


class DataError(NetDidError, ValueError):
    """Malformed or inconsistent input data."""


class EstimationError(NetDidError):
    """A statistical procedure could not produce an estimate."""


class OverlapError(EstimationError):
    """An exposure cell needed by an estimator has no units."""

    def __init__(self, d: int, g: int, detail: str = ""):
        self.d, self.g = d, g
        msg = f"overlap failure: no units in cell (D={d}, G={g})"
        super().__init__(f"{msg}; {detail}" if detail else msg)


class ConvergenceError(EstimationError):
    """An iterative solver stopped without meeting its tolerance."""
