"""
Exceptions raised by the hjbnode modules
"""


class HJBError(Exception):
    """Base class for all errors raised by hjbnode"""
    pass


class ContractError(HJBError, ValueError):
    """Raised when the inputs of an operation violate its preconditions (shapes, empty data, bad settings)"""
    pass


class NumericDomainError(HJBError, ArithmeticError):
    """
    Raised when a computation receives or produces non-finite numbers

    :ivar diagnostics: Dict with additional information about where the problem occurred
    """

    def __init__(self, message, diagnostics=None):
        super(NumericDomainError, self).__init__(message)
        self.diagnostics = diagnostics if diagnostics is not None else {}


class DivergedRolloutError(NumericDomainError):
    """
    Raised when a closed loop rollout produces a non-finite state

    :ivar step: Index k of the first non-finite state x_k
    """

    def __init__(self, step, diagnostics=None):
        super(DivergedRolloutError, self).__init__('Rollout diverged at step %i' % step, diagnostics)
        self.step = step


class ControllerError(HJBError, RuntimeError):
    """Raised by the MPPI controller when no sampled rollout stayed finite"""
    pass


class CheckpointParseError(HJBError, ValueError):
    """
    Raised when a checkpoint or config document is malformed

    :ivar field: Name of the offending field
    """

    def __init__(self, field, message):
        super(CheckpointParseError, self).__init__('Invalid field "%s": %s' % (field, message))
        self.field = field


class UsageError(HJBError, ValueError):
    """Raised for command line and artifact misuse"""
    pass


class TrainingDiverged(HJBError, RuntimeError):
    """
    Raised by train when a rollout diverged during an epoch

    :ivar result: The partial TrainResult with the curves up to the failed epoch
    """

    def __init__(self, result, cause):
        super(TrainingDiverged, self).__init__('Training aborted at epoch %i: %s' % (result.failed_epoch, cause))
        self.result = result
        self.cause = cause
