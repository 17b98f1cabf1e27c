"""Exception hierarchy. Everything raised on purpose derives from RotamerForgeError."""


class RotamerForgeError(Exception):
    pass


class PDBParseError(RotamerForgeError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class GeometryError(RotamerForgeError):
    pass


class IncompleteResidueError(GeometryError):
    pass


class ContextTooSmallError(GeometryError):
    pass


class LibraryParseError(RotamerForgeError):
    pass


class LibraryValidationError(RotamerForgeError):
    pass


class SamplerError(RotamerForgeError):
    pass


class VocabularyError(RotamerForgeError):
    pass


class ConfigError(RotamerForgeError):
    pass


class NumericError(RotamerForgeError):
    pass


class CheckpointError(RotamerForgeError):
    pass


class ContractError(RotamerForgeError, ValueError):
    """A caller violated an operation's precondition."""


class EmptyReportError(RotamerForgeError, ValueError):
    pass
