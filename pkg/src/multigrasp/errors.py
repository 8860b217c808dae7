"""Exception hierarchy shared by every module in the package."""


class GraspError(Exception):
    """Base class for all package errors."""


class EmptyCloud(GraspError, ValueError):
    pass


class DegenerateNeighborhood(GraspError):
    pass


class ParseError(GraspError, ValueError):
    """Base for structured parser failures."""


class MalformedHeader(ParseError):
    pass


class CountMismatch(ParseError):
    pass


class BadFloat(ParseError):
    pass


class SchemaViolation(ParseError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class NonPositiveScale(SchemaViolation):
    pass


class JointOutOfRange(GraspError, ValueError):
    pass


class InsufficientSurface(GraspError):
    pass


class EmptyRegion(GraspError):
    pass


class ShapeMismatch(GraspError, ValueError):
    pass


class EmptySplit(GraspError):
    pass


class ManifestMismatch(GraspError):
    pass


class BufferLengthMismatch(GraspError):
    pass


class NoVisibleSurface(GraspError):
    pass


class NoFeasibleGrasp(GraspError):
    pass
