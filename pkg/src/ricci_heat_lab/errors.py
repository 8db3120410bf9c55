"""Exception types shared across the lab."""


class RicciLabError(Exception):
    """Base class for all lab-specific failures."""


class GridError(RicciLabError, ValueError):
    """Invalid grid parameters or mismatched field shapes."""


class UnsupportedRankError(RicciLabError, ValueError):
    """Covariant-derivative rank beyond the configured cap."""


class CflViolationError(RicciLabError, ValueError):
    """Time step rejected: dt exceeds the parabolic stability bound."""


class BlowupError(RicciLabError, RuntimeError):
    """Non-finite values appeared during a flow; carries the last good state.

    Attributes
    ----------
    trajectory : the partial trajectory up to the last finite snapshot,
        or None if the very first step blew up.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class DomainError(RicciLabError, ValueError):
    """Evaluation outside a model's valid domain (e.g. past sphere blowup)."""


class NormalizationError(RicciLabError, ValueError):
    """An L2-normalization precondition failed."""


class PositivityError(RicciLabError, ValueError):
    """A field required to be strictly positive is not."""


class LedgerError(RicciLabError, ValueError):
    """A constant-ledger invariant is violated."""


class BracketError(RicciLabError, RuntimeError):
    """Root bracketing failed during constant solving."""


class ConfigError(RicciLabError, ValueError):
    """Scenario configuration failed to parse or validate."""
