"""Exception hierarchy shared by every stage of the harness."""


class BenchError(Exception):
    """Base class; the CLI maps any subclass to a nonzero exit code."""


# dataset
class MissingFileError(BenchError, FileNotFoundError):
    pass


class EmptyManifestError(BenchError, ValueError):
    pass


class BadLabelError(BenchError, ValueError):
    pass


class DuplicateIdError(BenchError, ValueError):
    pass


class RootUnavailableError(BenchError, FileNotFoundError):
    pass


# splitter
class EmptyClassError(BenchError, ValueError):
    pass


class InvalidSpecError(BenchError, ValueError):
    pass


class IndexOutOfRangeError(BenchError, IndexError):
    pass


# preprocess
class UnknownArchitectureError(BenchError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NonFiniteInputError(BenchError, ValueError):
    pass


class InvalidConfigError(BenchError, ValueError):
    pass


# model_zoo
class WeightsUnavailableError(BenchError, FileNotFoundError):
    pass


class ChecksumMismatchError(BenchError, ValueError):
    pass


class InvalidClassCountError(BenchError, ValueError):
    pass


class ShapeMismatchError(BenchError, ValueError):
    pass


# train_engine
class InvalidDistributionError(BenchError, ValueError):
    pass


class PersistFailureError(BenchError, OSError):
    pass


class EmptySplitError(BenchError, ValueError):
    pass


class DivergedLossError(BenchError, FloatingPointError):
    pass


# metrics
class LengthMismatchError(BenchError, ValueError):
    pass


class EmptyInputError(BenchError, ValueError):
    pass


class BadClassError(BenchError, ValueError):
    pass


class MissingClassError(BenchError, ValueError):
    pass


# experiment
class ConfigInvalidError(BenchError, ValueError):
    pass


class NoRunsError(BenchError, ValueError):
    pass


class PlotBackendUnavailableError(BenchError, RuntimeError):
    pass


class DiskFullError(BenchError, OSError):
    pass
