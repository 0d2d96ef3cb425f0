"""Exception hierarchy shared by every module of the toolkit."""


class SfemError(Exception):
    """Base class for all errors raised by :mod:`sfem`."""


class DataError(SfemError):
    """Input data is malformed or violates a dataset invariant."""


class MissingColumn(DataError):
    pass


class OutOfRangePhase(DataError):
    def __init__(self, row, value, message=None):
        self.row = row
        self.value = value
        super().__init__(message or f"row {row}: phase value {value!r} outside [-180, 180]")


class DuplicateCycleKey(DataError):
    pass


class EmptyFile(DataError):
    pass


class MissingGroup(DataError):
    pass


class InvalidConfig(SfemError, ValueError):
    pass


class SingularCovariance(SfemError):
    pass


class NumericalUnderflow(SfemError):
    pass


class TooFewPoints(SfemError):
    pass


class EmptyCluster(SfemError):
    def __init__(self, clusters, message=None):
        self.clusters = tuple(int(k) for k in clusters)
        super().__init__(message or f"empty cluster(s): {list(self.clusters)}")


class DegenerateScatter(SfemError):
    pass


class SingularProjectedScatter(SfemError):
    pass


class AllRestartsFailed(SfemError):
    pass


class SparsityError(SfemError):
    pass


class AllZeroColumn(SparsityError):
    pass


class LabelOutOfRange(SfemError, ValueError):
    pass
