"""Exception hierarchy shared by every module of the package."""


class CellCycleError(Exception):
    """Base class for all errors raised by :mod:`cellcycle`."""


class PreconditionError(CellCycleError, ValueError):
    """An operation was called outside its documented domain."""


# model_core
class UnknownModel(CellCycleError, KeyError):
    pass


class InvalidParams(CellCycleError, ValueError):
    pass


class NormalizationViolation(CellCycleError):
    pass


class NonFiniteValue(CellCycleError):
    pass


class AssumptionViolation(PreconditionError):
    """The audited model does not satisfy an assumption an operation needs."""


# chain_sim
class EnvelopeViolation(CellCycleError):
    pass


class MaxTrialsExceeded(CellCycleError):
    pass


class StateEscape(CellCycleError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NoiseOutOfBall(CellCycleError, ValueError):
    pass


# fm_metric
class SupportTooLarge(CellCycleError, ValueError):
    pass


class DegenerateMetric(CellCycleError, ValueError):
    pass


# coupling_engine
class QuadratureFailure(CellCycleError):
    pass


class InvalidKappa(PreconditionError):
    pass


# ergodicity_lab
class InsufficientSignal(CellCycleError):
    pass


class StationarityWarning(UserWarning):
    pass


# limit_lab
class NonCenteredObservable(PreconditionError):
    pass


class TruncationNotConverged(CellCycleError):
    pass


class SigmaZero(PreconditionError):
    pass


# cli
class ConfigParseError(CellCycleError):
    pass
