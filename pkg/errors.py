"""
Exceptions raised across the QUIDS simulator.

Every error is a ValueError so callers that only guard against bad input
keep working.
"""


class QuidsError(ValueError):
    """Base class for simulator errors"""


class ConfigurationError(QuidsError):
    """
    Invalid configuration or mismatched inputs.

    Args:
        message (str): Human readable description
        field (str, optional): Dotted path of the offending config field
    """
    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class EvaluationError(QuidsError):
    """A metric cannot be evaluated on the given inputs"""


class DegenerateWeightsError(QuidsError):
    """Every sensor contributing to a cell carries zero weight"""


class TrajectoryParseError(QuidsError):
    """
    A trajectory or reading CSV row could not be parsed.

    Args:
        message (str): Description of the problem
        line (int, optional): 1-based line number in the source file
    """
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrajectoryValidationError(QuidsError):
    """
    A parsed trajectory violates a Trajectory invariant.

    Args:
        message (str): Description of the problem
        violations (list): Violation dicts from validate_trajectory
        line (int, optional): Line of the first offending CSV row
    """
    def __init__(self, message, violations=None, line=None):
        self.violations = list(violations or [])
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
