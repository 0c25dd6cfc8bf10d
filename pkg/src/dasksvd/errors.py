"""Exception hierarchy.

Every error the library raises derives from :class:`DasKsvdError`.  The CLI
maps the three families onto exit codes: configuration problems (2), data
problems (3) and numerical divergence (4).
"""


class DasKsvdError(Exception):
    """Base class for all library errors."""


class ConfigError(DasKsvdError, ValueError):
    """A parameter lies outside its allowed domain."""


class DataError(DasKsvdError, ValueError):
    """Input data is missing, malformed or insufficient."""


class UnrecoverableRecordError(DataError):
    pass


class ShortRecordError(DataError):
    pass


class QuotaError(DataError):
    def __init__(self, label, available, quota):
        self.label = label
        self.available = available
        self.quota = quota
        super().__init__(
            f"class {label!r} has {available} segments, quota is {quota}"
        )


class InsufficientDataError(DataError):
    pass


class ShapeError(DataError):
    pass


class InvalidSignalError(DataError):
    pass


class EmptyClassError(DataError):
    pass


class DegenerateCohortError(DataError):
    pass


class SpecError(ConfigError):
    """A synthetic cohort specification cannot be realised."""


class DivergenceError(DasKsvdError, ArithmeticError):
    def __init__(self, epoch, message="loss became non-finite"):
        self.epoch = epoch
        super().__init__(f"{message} at epoch {epoch}")
