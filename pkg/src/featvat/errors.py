"""Exception types shared across the package."""


class FeatVatError(Exception):
    """Base class for all package errors."""


class ContractError(FeatVatError):
    """An operation was called with arguments that violate its contract."""


class ConfigError(FeatVatError):
    """Invalid or inconsistent configuration."""


class FormatError(FeatVatError):
    """A file does not conform to the expected container format."""


class CorruptionError(FormatError):
    """A container file is truncated or internally inconsistent."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class NumericalError(FeatVatError):
    """A numerical operation produced non-finite values."""


class TrainAbort(NumericalError):
    """Training stopped because a loss or gradient became non-finite."""

    def __init__(self, message: str, checkpoint_path: str | None = None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
