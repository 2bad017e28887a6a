"""Exception hierarchy shared by the latent_edit package."""


class LatentEditError(Exception):
    """Base class for every error raised by latent_edit."""


class ShapeMismatchError(LatentEditError, ValueError):
    """Two grids or maps that must be aligned are not."""


class ScheduleError(LatentEditError, ValueError):
    """Invalid schedule construction or an impossible step."""


class DenoiserError(LatentEditError, ValueError):
    """Invalid mixture definition or a prediction outside its domain."""


class ConfigError(LatentEditError, ValueError):
    """Run configuration could not be loaded or validated."""


class ScenarioError(LatentEditError, ValueError):
    """Scenario specification is inconsistent with the grid."""


class LatentFileError(LatentEditError):
    """A LatentFile could not be read or written."""

    code = 1

    def __init__(self, message: str, path=None):
        self.path = path
        prefix = f"{path}: " if path is not None else ""
        super().__init__(f"{prefix}{message}")


class BadMagicError(LatentFileError):
    code = 10


class UnsupportedVersionError(LatentFileError):
    code = 11


class UnsupportedDtypeError(LatentFileError):
    code = 12


class TruncatedPayloadError(LatentFileError):
    code = 13


class NonFiniteValueError(LatentFileError):
    code = 14
