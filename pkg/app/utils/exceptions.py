from typing import Any, Optional


EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RESOURCE_CAP = 3


class LabException(Exception):
    """Base exception for laboratory errors"""
    def __init__(self, detail: str, exit_code: int = EXIT_USAGE):
        super().__init__(detail)
        self.detail = detail
        self.exit_code = exit_code


class UsageException(LabException):
    """Exception for violated operation preconditions and bad arguments"""
    def __init__(self, detail: str):
        super().__init__(detail=detail, exit_code=EXIT_USAGE)


class ModelValidationException(LabException):
    """Exception for POMDP or policy tables that break their invariants"""
    def __init__(self, detail: str):
        super().__init__(
            detail=f"Invalid model: {detail}",
            exit_code=EXIT_VALIDATION
        )


class AssumptionViolationException(LabException):
    """Exception for models that are not weakly revealing"""
    def __init__(self, detail: str, h: Optional[int] = None, sigma: Optional[float] = None):
        super().__init__(detail=detail, exit_code=EXIT_VALIDATION)
        self.h = h
        self.sigma = sigma


class ConfigurationException(LabException):
    """Exception for malformed input files and unusable learner setups"""
    def __init__(self, detail: str):
        super().__init__(detail=detail, exit_code=EXIT_VALIDATION)


class EnumerationCapException(LabException):
    """Exception for exhausted enumeration or search budgets"""
    def __init__(self, detail: str = "Enumeration too large", partial: Any = None):
        super().__init__(detail=detail, exit_code=EXIT_RESOURCE_CAP)
        self.partial = partial


class GenerationException(LabException):
    """Exception for rejection samplers that ran out of tries"""
    def __init__(self, detail: str):
        super().__init__(detail=detail, exit_code=EXIT_RESOURCE_CAP)
