"""Exception types raised by steklab.

Every error carries a short, stable ``code`` so that harness error records
and CLI messages can be matched without parsing the message text.
"""


class SteklabError(Exception):
    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def to_dict(self):
        return {"code": self.code, "message": self.message}


class InvalidSpecError(SteklabError, ValueError):
    code = "invalid-spec"


class DegenerateMeshError(SteklabError, ValueError):
    code = "degenerate-mesh"


class MeshParseError(SteklabError, ValueError):
    code = "parse"


class OrientationError(SteklabError, ValueError):
    code = "orientation"


class NonManifoldError(SteklabError, ValueError):
    code = "non-manifold"


class InvalidDensityError(SteklabError, ValueError):
    code = "invalid-density"


class InvalidMetricError(SteklabError, ValueError):
    code = "invalid-metric"


class InvalidInputError(SteklabError, ValueError):
    code = "invalid-input"


class SolverFailureError(SteklabError, RuntimeError):
    code = "solver-failure"


class UndefinedQuotientError(SteklabError, ValueError):
    code = "undefined-quotient"


class InvalidAnnulusError(SteklabError, ValueError):
    code = "invalid-annulus"


class InvalidFamilyError(SteklabError, ValueError):
    code = "invalid-family"


class SpectrumTruncationError(SteklabError, ValueError):
    code = "truncation"


class OutOfRegimeError(SteklabError, ValueError):
    code = "out-of-regime"


class IncompleteReportError(SteklabError, ValueError):
    code = "incomplete-report"


class ConfigError(SteklabError, ValueError):
    code = "config"


class SpectrumTruncationWarning(UserWarning):
    """Fewer eigenpairs than requested were returned."""
