"""Exception hierarchy shared by every cryage module."""


class CryAgeError(Exception):
    """Base class for all toolkit errors."""


class MalformedWav(CryAgeError):
    pass


class UnsupportedEncoding(CryAgeError):
    pass


class MonthOutOfRange(CryAgeError, ValueError):
    pass


class UnstableFilter(CryAgeError):
    pass


class ClipTooShort(CryAgeError, ValueError):
    pass


class DegenerateFrame(CryAgeError, ValueError):
    pass


class EmptyGroup(CryAgeError):
    pass


class ShapeMismatch(CryAgeError, ValueError):
    pass


class EmptyClass(CryAgeError):
    pass


class CheckpointError(CryAgeError):
    pass


class MalformedManifest(CryAgeError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingFile(CryAgeError):
    def __init__(self, paths):
        self.paths = list(paths)
        super().__init__("missing files: " + ", ".join(str(p) for p in self.paths))


class ClassTooSmall(CryAgeError):
    pass


class MissingGender(CryAgeError):
    pass


class MissingMonth(CryAgeError):
    pass


class SubjectLeakage(CryAgeError):
    pass


class ConfigError(CryAgeError):
    pass


class IoError(CryAgeError):
    pass
