"""Exception hierarchy shared by all stages."""

from __future__ import annotations


class SpatialPCTMCError(Exception):
    """Base class for every error raised by this package."""


class EvaluationError(SpatialPCTMCError):
    """A rate expression could not be evaluated (division by zero)."""

    def __init__(self, message: str, transition: str | None = None,
                 time: float | None = None, state=None):
        self.transition = transition
        self.time = time
        self.state = state
        parts = [message]
        if transition is not None:
            parts.append(f"transition={transition!r}")
        if time is not None:
            parts.append(f"t={time:g}")
        super().__init__(", ".join(parts))


class NegativePopulation(SpatialPCTMCError):
    pass


class ModelError(SpatialPCTMCError):
    """Structurally invalid model (bad indices, empty updates, ...)."""


class ParseError(SpatialPCTMCError):
    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"{message} (line {line}, column {column})")


class UnknownIdentifier(ParseError):
    pass


class DuplicateDeclaration(ParseError):
    pass


class ConfigError(SpatialPCTMCError):
    pass


class UnsupportedRate(SpatialPCTMCError):
    """Rate is not a polynomial of degree <= 2 in the populations."""


class Divergence(SpatialPCTMCError):
    pass


class NotConverged(SpatialPCTMCError):
    pass


class MissingCoordinates(SpatialPCTMCError):
    pass


class AllZeroDistances(SpatialPCTMCError):
    pass


class IsolatedVertex(SpatialPCTMCError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"vertex {index} has (near) zero degree in the similarity graph")


class EmptyCluster(SpatialPCTMCError):
    pass


class GridMismatch(SpatialPCTMCError):
    pass


class MissingArtifact(SpatialPCTMCError):
    pass


class StageError(SpatialPCTMCError):
    """Wraps a failure inside one pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
