"""Exception and warning types raised by the engine."""


class ScmError(Exception):
    """Base class for every error raised by scmdyn."""


class GraphError(ScmError):
    pass


class CycleError(GraphError):
    def __init__(self, cycle):
        self.cycle = tuple(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle))


class DanglingParentError(GraphError):
    def __init__(self, node, parent):
        self.node, self.parent = node, parent
        super().__init__(f"node {node!r} reads unknown input {parent!r}")


class PlateMismatchError(GraphError):
    pass


class DuplicateNodeError(GraphError):
    pass


class InvalidPriorError(ScmError, ValueError):
    pass


class IncompleteExogenousError(ScmError):
    pass


class EquationDomainError(ScmError, ValueError):
    pass


class InsufficientSamplesError(ScmError, ValueError):
    pass


class UnknownNodeError(ScmError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown node"


class KindMismatchError(ScmError, TypeError):
    pass


class ConflictError(ScmError):
    pass


class InconsistentObservationError(ScmError):
    """No value of the exogenous noise reproduces the observation."""


class InvalidDatasetError(ScmError, ValueError):
    pass


class EmptyDatasetError(InvalidDatasetError):
    pass


class UnsupportedActionError(ScmError):
    pass


class AllWorldsInconsistentError(InconsistentObservationError):
    pass


class InvalidParamsError(ScmError, ValueError):
    pass


class InfeasibleConstraintError(ScmError):
    def __init__(self, message, closest=None):
        super().__init__(message)
        self.closest = closest


class ConfigSchemaError(ScmError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class OrphanNoiseWarning(UserWarning):
    """An exogenous node has no endogenous consumer."""


class ThresholdClampWarning(UserWarning):
    pass


class DensityUnavailableWarning(UserWarning):
    """Score density had to be estimated by finite differences."""
