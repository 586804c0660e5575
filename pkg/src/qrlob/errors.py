"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line layer can map it
without a lookup table: 2 for bad input, 3 for model-validity problems and
4 for numerical non-convergence.
"""


class QrlobError(Exception):
    exit_code = 1


class InputError(QrlobError):
    exit_code = 2


class ModelError(QrlobError):
    exit_code = 3


class NumericalError(QrlobError):
    exit_code = 4


class UnknownRegime(ModelError):
    pass


class CrossedBook(InputError):
    pass


class InsufficientData(InputError):
    pass


class NoData(InputError):
    pass


class DegenerateLaw(InputError):
    pass


class NonErgodic(ModelError):
    pass


class AssumptionViolated(ModelError):
    pass


class Unstable(ModelError):
    pass


class NoConvergence(NumericalError):
    pass


class Absorbing(ModelError):
    """Raised when a state has no outgoing transition."""


class BadInitial(InputError):
    pass


class NoTrades(QrlobError):
    pass


class NoMoves(QrlobError):
    """A statistic needs reference-price moves and the path has none."""
