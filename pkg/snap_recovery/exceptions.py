class SnapRecoveryError(Exception):
    pass


class Misconfigured(SnapRecoveryError):
    pass


class DataError(SnapRecoveryError):
    pass


class HorizonOutOfRange(DataError):
    pass


class GridError(DataError):
    pass


class ShapeError(DataError):
    pass


class OffsetOutOfRange(DataError):
    pass


class RankError(SnapRecoveryError):
    pass


class TrainingError(SnapRecoveryError):
    pass


class DegenerateLabels(TrainingError):
    pass


class ConvergenceError(TrainingError):
    pass


class DegenerateNode(TrainingError):
    pass


class UnsplittableNode(TrainingError):
    pass


class UndefinedAccuracy(TrainingError):
    pass


class NotCalibrated(SnapRecoveryError):
    pass


class ProbeUnavailable(SnapRecoveryError):
    pass


class IncompatibleModel(SnapRecoveryError):
    pass
