"""Exception hierarchy shared across the package."""


class FairflowError(Exception):
    """Base class for all package errors."""


class ParameterError(FairflowError, ValueError):
    pass


class ParseError(FairflowError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InstanceError(FairflowError):
    """Instance data is syntactically fine but physically meaningless."""


class ValidationError(FairflowError):
    def __init__(self, message, diagnostics=()):
        self.diagnostics = list(diagnostics)
        super().__init__(message)


class RoutingError(FairflowError):
    def __init__(self, message, commodity=None):
        self.commodity = commodity
        super().__init__(message)


class DecompositionError(FairflowError):
    """Commodity flows cannot be turned into a consistent origin-destination DAG."""


class RestrictionError(FairflowError):
    """Restricted path LP is infeasible for the supplied capacities."""


class EnforceabilityError(FairflowError):
    pass
