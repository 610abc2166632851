"""Exception types shared across the package.

``ConfigError`` covers bad inputs and unusable settings (CLI exit code 2);
``NumericalError`` covers numerical failures such as a root search that
does not bracket (exit code 3).
"""


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass
