"""Exception hierarchy.

``AssumptionViolation`` subclasses signal that a reproduction law fails one of
the model hypotheses; the CLI maps them (and ``PreconditionError``) to exit
code 2.
"""

from __future__ import annotations


class CMJError(Exception):
    pass


class AssumptionViolation(CMJError):
    assumption = "?"

    def __init__(self, message: str, value: float | None = None):
        super().__init__(f"({self.assumption}) violated: {message}")
        self.value = value


class SubcriticalLaw(AssumptionViolation):
    assumption = "A1"


class NoFiniteBranch(AssumptionViolation):
    assumption = "A2"


class A3Violated(AssumptionViolation):
    assumption = "A3"


class A4Violated(AssumptionViolation):
    assumption = "A4"


class PreconditionError(CMJError):
    """An operation was called outside its stated domain."""


class TooFewReplicas(PreconditionError):
    pass


class TooFewRetained(PreconditionError):
    pass


class TooFewSamples(PreconditionError):
    pass


class CurveTooShort(PreconditionError):
    pass


class GridBeyondHorizon(PreconditionError):
    pass


class WindowBeyondHorizon(PreconditionError):
    pass


class NoTiltedSampler(CMJError):
    pass


class ConfigError(CMJError):
    pass
