"""Exception hierarchy shared by all dagfit modules."""


class DagfitError(Exception):
    """Base class for every error raised by dagfit."""


# graph
class CycleError(DagfitError):
    pass


class AlreadyBound(DagfitError):
    pass


class TypeMismatch(DagfitError):
    pass


class UnboundInput(TypeMismatch):
    pass


class FrozenWhileTainted(DagfitError):
    pass


class EvalError(DagfitError):
    """An evaluation function failed; ``node`` names the culprit."""

    def __init__(self, node: str, reason: str):
        super().__init__(f"evaluation of node '{node}' failed: {reason}")
        self.node = node
        self.reason = reason


# parameters
class DuplicateName(DagfitError):
    pass


class UnknownName(DagfitError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class BadBounds(DagfitError, ValueError):
    pass


class NegativeSigma(DagfitError, ValueError):
    pass


class OutOfBounds(DagfitError, ValueError):
    pass


class FixedParameter(DagfitError):
    pass


class NotPSD(DagfitError):
    pass


class UnknownMember(UnknownName):
    pass


# transforms / numerics
class BadEdges(DagfitError, ValueError):
    pass


class BadOrder(DagfitError, ValueError):
    pass


class BadKnots(DagfitError, ValueError):
    pass


class NotPositiveDefinite(DagfitError):
    pass


class EdgesNotSubset(TypeMismatch):
    pass


class NonPositivePrediction(DagfitError, ValueError):
    pass


# fitting
class MaxEvaluations(DagfitError):
    """Evaluation budget exhausted; ``result`` holds the best point found."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SingularHessian(DagfitError):
    pass


# expressions
class LexError(DagfitError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column


class ParseError(DagfitError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column


class UnknownAxis(DagfitError):
    pass


class UnboundIndex(DagfitError):
    pass


# bundles / config
class UnknownBundleKind(DagfitError):
    pass


class DuplicateKind(DagfitError):
    pass


class ConfigError(DagfitError):
    """Invalid model configuration; ``key`` points at the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
