"""Exception types shared across the package.

Engine errors (bad inputs to numerical routines) and file-format errors are
kept apart so the command line can map them onto distinct exit codes.
"""


class EngineError(ValueError):
    """Invalid input or unrecoverable state inside a numerical routine."""


class DimensionMismatch(EngineError):
    def __init__(self, what, a, b):
        super().__init__(f"dimension mismatch: {what} {tuple(a)} vs {tuple(b)}")


class VolumeFormatError(Exception):
    """A volume file could not be decoded or encoded.

    ``code`` is a short stable identifier, one per failure mode.
    """

    code = "format"

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class BadMagic(VolumeFormatError):
    code = "bad-magic"


class VersionMismatch(VolumeFormatError):
    code = "version-mismatch"


class SizeMismatch(VolumeFormatError):
    code = "size-mismatch"


class KindDtypeMismatch(VolumeFormatError):
    code = "kind-dtype-mismatch"


class UnsupportedNifti(VolumeFormatError):
    code = "unsupported-nifti"
