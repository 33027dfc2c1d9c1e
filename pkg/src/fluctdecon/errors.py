"""Exception hierarchy shared across the toolkit.

Each class maps to one CLI exit code (see cli.EXIT_CODES).
"""


class FluctDeconError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(FluctDeconError, ValueError):
    """Invalid configuration or function argument."""


class FormatError(FluctDeconError):
    """Malformed or truncated file content.

    ``offset`` is the byte offset where parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConvergenceError(FluctDeconError):
    """An iterative routine failed to reach its tolerance.

    ``achieved`` carries the last residual/gap value for diagnostics.
    """

    def __init__(self, message: str, achieved: float | None = None):
        if achieved is not None:
            message = f"{message} (achieved {achieved:.3e})"
        super().__init__(message)
        self.achieved = achieved


class DivergenceError(FluctDeconError):
    """Iterates became non-finite (step size too large or bad data)."""

    def __init__(self, message: str, iteration: int | None = None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class BridgeError(FluctDeconError):
    """Transport-level failure talking to an external denoiser.

    ``trace`` holds any partial solver trace collected before the failure.
    """

    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class ProtocolError(BridgeError):
    """The remote peer violated the wire protocol (bad frame, NaN payload)."""
