"""Exception types.  Everything raised on bad data derives from MicroMILError."""


class MicroMILError(Exception):
    pass


class ContractError(MicroMILError, ValueError):
    """A documented precondition was violated."""


class DimensionError(ContractError):
    pass


class DomainError(ContractError):
    pass


class FormatError(MicroMILError, ValueError):
    """A file does not follow the MILB, manifest or model format."""


class ManifestError(FormatError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UndefinedMetric(MicroMILError):
    """A metric has no value for the given input (e.g. AUC with one class)."""
