"""Exception hierarchy.

Every error carries a short machine-readable ``code`` and the process exit
status the command line front end maps it to.
"""


class QmxwError(Exception):
    code = "ERROR"
    exit_code = 1

    def __init__(self, message="", **details):
        super().__init__(message)
        self.details = details


class ConfigError(QmxwError):
    code = "CONFIG_PARSE"
    exit_code = 2

    def __init__(self, message, line=None, column=None, **details):
        if line is not None:
            message = f"line {line}, column {column or 1}: {message}"
        super().__init__(message, line=line, column=column, **details)
        self.line = line
        self.column = column


class AssumptionError(QmxwError):
    code = "ASSUMPTION"
    exit_code = 3


class FailsAtZero(AssumptionError):
    code = "FAILS_AT_ZERO"


class SingularReference(AssumptionError):
    code = "SINGULAR_REFERENCE"


class NotStarShaped(AssumptionError):
    code = "NOT_STAR_SHAPED"


class NonUnitNormal(QmxwError):
    code = "NON_UNIT_NORMAL"


class SolverError(QmxwError):
    code = "SOLVER"
    exit_code = 4

    def __init__(self, message="", time=None, **details):
        if time is not None:
            message = f"{message} (t = {time:.6g})"
        super().__init__(message, time=time, **details)
        self.time = time


class NoConvergence(SolverError):
    code = "NO_CONVERGENCE"


class SingularJacobian(SolverError):
    code = "SINGULAR_JACOBIAN"


class CflViolation(SolverError):
    code = "CFL_VIOLATION"


class VerificationError(QmxwError):
    code = "VERIFICATION"
    exit_code = 5


class MissingArtifacts(VerificationError):
    code = "MISSING_ARTIFACTS"


class DegenerateFit(QmxwError):
    code = "DEGENERATE_FIT"
    exit_code = 5


class NonpositiveValues(QmxwError):
    code = "NONPOSITIVE_VALUES"
    exit_code = 5


class ZeroRhs(QmxwError):
    code = "ZERO_RHS"


class SmallPivot(QmxwError):
    code = "SMALL_PIVOT"
