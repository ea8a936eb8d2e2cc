"""Error types shared by every module.

Each error carries the process exit code the CLI maps it to.
"""


class ExactUncertaintyError(Exception):
    exit_code = 1

    def __init__(self, message: str = "", trace=None):
        super().__init__(message)
        # partial results (e.g. a truncated trace) survive the failure
        self.trace = trace

    @property
    def name(self) -> str:
        return type(self).__name__


class InvalidField(ExactUncertaintyError):
    pass


class InvalidArgument(ExactUncertaintyError):
    exit_code = 2


class NotNormalized(ExactUncertaintyError):
    pass


class GridTooSmall(ExactUncertaintyError):
    pass


class GridTooLarge(ExactUncertaintyError):
    pass


class NodePresent(ExactUncertaintyError):
    pass


class InvalidDensity(ExactUncertaintyError):
    pass


class DensityUnderflow(ExactUncertaintyError):
    pass


class InvalidPerturbation(ExactUncertaintyError):
    pass


class StateSpecParse(ExactUncertaintyError):
    exit_code = 2


class NodeFormed(ExactUncertaintyError):
    exit_code = 3

    def __init__(self, message: str = "", trace=None, t: float | None = None):
        super().__init__(message, trace)
        self.t = t


class UnstableStep(ExactUncertaintyError):
    exit_code = 4


class InconsistentEvidence(ExactUncertaintyError):
    exit_code = 5
