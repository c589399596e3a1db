"""Exception hierarchy.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
OSError -> 4.
"""


class ExciteLensError(Exception):
    pass


class ConfigError(ExciteLensError):
    pass


class DataError(ExciteLensError):
    pass


class ShapeError(DataError, ValueError):
    pass


# model file
class ModelFormatError(DataError):
    pass


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class PayloadLengthError(ModelFormatError):
    pass


class DanglingWeightRefError(ModelFormatError):
    pass


class GraphError(ModelFormatError):
    """Graph is not a topologically ordered DAG or breaks a layer invariant."""


class TargetLayerError(DataError, ValueError):
    pass


# manifests / annotations / images
class ManifestError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateIdError(ManifestError):
    pass


class UnknownGroupError(ManifestError):
    pass


class UnknownSplitError(ManifestError):
    pass


class ImageFormatError(DataError):
    pass


# statistics
class UndefinedCorrelationError(DataError, ValueError):
    pass


class EmptySetError(DataError, ValueError):
    pass
