"""Exception classes raised across the package.

Every error carries its class name into the CLI's machine-readable error line,
so names are part of the public surface.
"""


class TierTransformError(Exception):
    """Base class for all package errors."""


# molio
class MalformedFile(TierTransformError):
    def __init__(self, reason, line=None, path=None):
        self.reason = reason
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {reason}" if where else reason)


class DanglingReference(MalformedFile):
    pass


class DuplicateId(MalformedFile):
    pass


class RowCountMismatch(MalformedFile):
    pass


class UnknownSecondaryStructureLabel(MalformedFile):
    pass


class RotatableBondNotInTopology(MalformedFile):
    pass


class IoFailure(TierTransformError):
    pass


# segmentation
class EmptyMovableSet(TierTransformError):
    pass


class LigandAbsent(TierTransformError):
    pass


# transform / energy / gradient
class ShapeMismatch(TierTransformError):
    pass


class SingularPair(TierTransformError):
    pass


class NonFiniteEnergy(TierTransformError):
    pass


class NonFiniteGradient(TierTransformError):
    pass


# features
class FailedRecord(TierTransformError):
    pass


class LengthNotDivisible(TierTransformError):
    pass


class ScoreCountMismatch(TierTransformError):
    pass


# analysis
class DegenerateGeometry(TierTransformError):
    pass


class CountMismatch(TierTransformError):
    pass


class NoActives(TierTransformError):
    pass


class SingleClass(TierTransformError):
    pass


class RankDeficient(UserWarning):
    """Warning: fewer than two directions carry variance in a PCA fit."""
