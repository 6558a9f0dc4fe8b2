"""Exception hierarchy shared across the package."""


class SocialMAEError(Exception):
    pass


class SceneFormatError(SocialMAEError, ValueError):
    """A scene document is malformed; the message names the offending field."""


class SceneValidationError(SocialMAEError, ValueError):
    """A scene is well-formed but violates an invariant."""


class DegenerateInputError(SocialMAEError, ValueError):
    pass


class NumericError(SocialMAEError, ArithmeticError):
    pass


class TrainingError(SocialMAEError, RuntimeError):
    pass


class ConfigError(SocialMAEError, ValueError):
    pass
