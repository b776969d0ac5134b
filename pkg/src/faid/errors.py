"""Exception hierarchy shared across the toolkit.

Exit-code mapping used by the CLI: configuration / malformed-input errors
exit 2, runtime (solver, external-predictor) errors exit 3. Check failures
(e.g. a gradcheck threshold breach) are reported via exit code 1 without
raising.
"""


class FaidError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(FaidError):
    """Invalid geometry or design parameters (bad counts, self-intersection,
    minimum-feature violations, out-of-grid polygons)."""


class ConfigError(FaidError):
    """Invalid configuration: unknown/missing keys, bad values, violated
    solver preconditions (resolution, PML thickness)."""


class GridFileError(ConfigError):
    """Malformed density-grid or field file. Carries the byte offset at
    which parsing failed."""

    def __init__(self, message: str, byte_offset: int = -1):
        if byte_offset >= 0:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class SolverError(FaidError):
    """Linear-solver failure (singular matrix, residual check failure)."""


class NoGuidedModeError(SolverError):
    """The 1D slab eigenproblem found no guided mode on the port slice."""


class NonDifferentiableModelError(FaidError):
    """A vector-Jacobian product was requested from a lithography model
    that does not provide one."""


class ExternalPredictorError(FaidError):
    """Base class for external lithography-predictor failures."""


class ExternalPredictorFailed(ExternalPredictorError):
    """External predictor command exited with nonzero status."""


class ExternalPredictorTimeout(ExternalPredictorError):
    """External predictor exceeded its per-call timeout."""


class ExternalPredictorOutputError(ExternalPredictorError):
    """External predictor produced missing, malformed, or shape-mismatched
    output."""
