"""Exception types shared across the package.

Argument errors use plain ValueError; the classes below distinguish
numerical failures (CLI exit code 3) from config/contract problems
(exit code 2).
"""


class NumericalError(RuntimeError):
    """A numerical routine failed (non-convergence, overflow, bad state)."""


class TruncationError(NumericalError):
    """A series could not be truncated to the requested tolerance.

    Carries the best certified relative tail bound that was achieved.
    """

    def __init__(self, message, achieved_bound):
        super().__init__(f"{message} (achieved relative bound {achieved_bound:.3e})")
        self.achieved_bound = achieved_bound


class SamplerFailureError(NumericalError):
    """A rejection sampler exceeded its proposal budget."""


class ContractViolationError(ValueError):
    """An input violated a documented precondition (e.g. non-orthonormal basis)."""


class DegenerateChainError(ValueError):
    """A scalar chain has no variability; the diagnostic is undefined."""


class UndefinedOddsError(ValueError):
    """The rank prior assigns zero mass to both of the compared ranks."""


class PartitionError(ValueError):
    """A cross-validation fold ended up with no usable entries."""


class ParseError(ValueError):
    """A data file could not be parsed; message carries the line number."""
