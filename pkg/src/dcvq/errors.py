"""Exception types raised across the package."""


class InvalidParameterError(ValueError):
    """A model or channel parameter is outside its admissible range."""


class InvalidArgumentError(ValueError):
    """A call argument (index, batch, shape) is unusable."""


class DegenerateModelError(ValueError):
    """The requested quantity does not exist for noiseless measurements.

    Raised by the support-posterior machinery when a measurement-noise
    variance is zero; callers should fall back to the oracle (known-support)
    estimator instead.
    """


class ConfigError(ValueError):
    """Experiment configuration could not be parsed or validated."""

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
