#!/usr/bin/env python3
"""
Exception hierarchy shared by the estimation scripts.

Every error carries the process exit code that main.py should return:
2 for invalid input or configuration, 3 for numerical failures.
"""


class MixRegError(Exception):
    """Base class for all expected failures."""

    exit_code = 1


class ValidationError(MixRegError):
    """Invalid arguments, configuration or input files."""

    exit_code = 2


class MalformedCSVError(ValidationError):
    """A CSV input could not be parsed; `line` is 1-based within the file."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}, line {line}: {message}")


class MissingFitError(ValidationError):
    """A density was requested at a design point with no prior fit."""


class NumericalError(MixRegError):
    """A numerical step could not be carried out."""

    exit_code = 3


class DegenerateTransferError(NumericalError):
    """|M(t,u)| vanished; only possible outside the identifiable parameter space."""


class NonFiniteContrastError(NumericalError):
    """The contrast produced NaN or inf during a search."""


class InsufficientDataError(NumericalError):
    """Fewer observations than the computation needs."""


class DegenerateDesignError(NumericalError):
    """All design points coincide, so no bandwidth can be formed."""


class EmptyGroupError(NumericalError):
    """Initialization classified every observation into the same group."""


class VanishingDesignDensityError(NumericalError):
    """The design density estimate at x0 is too small to divide by."""


class InversionWindowError(NumericalError):
    """The Fourier inversion grid does not capture the numerator's mass."""
