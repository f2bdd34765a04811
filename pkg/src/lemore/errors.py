"""Exception hierarchy shared by all lemore modules."""


class LemoreError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(LemoreError, ValueError):
    """Operands have incompatible or malformed shapes."""


class InvalidArgumentError(LemoreError, ValueError):
    """A scalar argument is out of its legal range."""


class ConfigError(LemoreError, ValueError):
    """A model configuration violates an invariant.

    The message names the offending field.
    """


class TapeHandleError(LemoreError, ValueError):
    """A value handle does not belong to the tape it was used with."""


class PixmapError(LemoreError, ValueError):
    """A netpbm stream failed to parse.

    Attributes:
        offset: byte position at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class WeightFileError(LemoreError, ValueError):
    """Base class for checkpoint load failures."""


class BadMagicError(WeightFileError):
    pass


class BadVersionError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class UnknownEntryError(WeightFileError):
    """The file contains an entry the model registry does not."""


class MissingEntryError(WeightFileError):
    """The model registry expects an entry the file does not contain."""


class EntryShapeError(WeightFileError):
    """An entry's stored dims do not match the registry tensor."""
