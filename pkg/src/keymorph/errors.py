"""Exception types shared across the package."""


class KeymorphError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(KeymorphError):
    pass


class SingularMatrix(KeymorphError):
    pass


class DegenerateConfiguration(KeymorphError):
    pass


class DuplicatePoints(KeymorphError):
    pass


class NonScalarRoot(KeymorphError):
    pass


class NondeterministicFunction(KeymorphError):
    pass


class NonFiniteActivation(KeymorphError):
    pass


class GridTooSmall(KeymorphError):
    pass


class EmptyMask(KeymorphError):
    pass


class DivergedLoss(KeymorphError):
    pass
