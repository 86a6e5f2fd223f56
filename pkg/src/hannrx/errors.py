"""Exception types shared across the package."""


class InvalidInput(ValueError):
    """Raised when an operation receives arguments outside its contract."""


class ConfigError(ValueError):
    """Scenario configuration failed validation.

    ``path`` is the dotted location of the offending field, e.g.
    ``"interferers[1].snr_db"``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")
