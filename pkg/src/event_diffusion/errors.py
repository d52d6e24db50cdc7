"""Exception hierarchy shared across the package.

Validation failures split into two families so the CLI can map them to
distinct exit codes: bad data shapes/values are ``InvalidInputError``,
out-of-range configuration is ``InvalidParameterError``. Runtime failures
during sampling raise ``GuidanceDivergenceError``.
"""

from __future__ import annotations


class EventDiffusionError(Exception):
    """Base class for all package errors."""


class InvalidInputError(EventDiffusionError):
    """An input value violates an operation's preconditions."""


class InvalidParameterError(EventDiffusionError):
    """A configuration parameter is outside its documented range."""


class UnsupportedCodecError(EventDiffusionError):
    """The codec cannot be used for guided sampling (not lossless or
    not differentiable)."""


class GuidanceDivergenceError(EventDiffusionError):
    """The guided inner optimization produced a non-finite loss.

    Carries the diffusion time and frame index where divergence occurred.
    """

    def __init__(self, tau: int, frame: int, message: str | None = None):
        self.tau = int(tau)
        self.frame = int(frame)
        if message is None:
            message = f"non-finite guidance loss at tau={tau}, frame={frame}"
        super().__init__(message)
