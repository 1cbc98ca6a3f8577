"""Exception hierarchy. Anything deriving from DataError maps to CLI exit code 2."""


class DataError(Exception):
    """Bad input data or files."""


class AudioError(DataError):
    pass


class UnreadableAudioError(AudioError):
    pass


class UnsupportedEncodingError(AudioError):
    pass


class EmptyAudioError(AudioError):
    pass


class ClipTooShortError(AudioError):
    pass


class ShapeError(DataError, ValueError):
    pass


class NegativeValueError(DataError, ValueError):
    pass


class UntrainableNoteError(DataError):
    pass


class LibraryError(DataError):
    pass


class NotALibraryError(LibraryError):
    pass


class LibraryVersionError(LibraryError):
    pass


class TruncatedLibraryError(LibraryError):
    pass


class ConfigMismatchError(LibraryError):
    pass


class MidiError(DataError):
    pass
