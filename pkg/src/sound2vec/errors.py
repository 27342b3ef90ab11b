"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures without a
lookup table: 2 for configuration problems, 3 for bad data, 4 for numeric
divergence.
"""


class Sound2VecError(Exception):
    exit_code = 1


class ConfigError(Sound2VecError, ValueError):
    exit_code = 2


class DataError(Sound2VecError):
    exit_code = 3


class WavParseError(DataError):
    pass


class UnsupportedFormatError(DataError):
    pass


class TooShortError(DataError, ValueError):
    pass


class EmptyDatasetError(DataError, ValueError):
    pass


class EmptyLabelError(DataError, ValueError):
    pass


class TooFewUtterancesError(DataError, ValueError):
    pass


class InsufficientDataError(DataError, ValueError):
    pass


class InfeasibleAlignmentError(DataError, ValueError):
    """Label sequence cannot be aligned to the given number of frames."""


class CheckpointError(DataError):
    pass


class DivergenceError(Sound2VecError, ArithmeticError):
    exit_code = 4


class NonFiniteGradientError(DivergenceError):
    pass
