"""Exception hierarchy. Each class carries the CLI exit code of its stage."""


class HytlError(Exception):
    exit_code = 1


class ConfigError(HytlError):
    exit_code = 2


class ModelError(HytlError):
    exit_code = 2


class SimulationError(HytlError):
    exit_code = 3


class IntegrationError(SimulationError):
    pass


class SchedulingError(SimulationError):
    pass


class DeadlockError(SimulationError):
    pass


class BisimError(HytlError):
    exit_code = 4


class InfeasibleError(BisimError):
    pass


class DegenerateError(BisimError):
    pass


class InconsistencyError(BisimError):
    """A perturbed trajectory triggered a different event than the nominal one."""


class AbstractionError(HytlError):
    exit_code = 5


class ObserverError(HytlError):
    exit_code = 6


class CycleError(ObserverError):
    pass


class ResourceError(ObserverError):
    pass


class ObservationInconsistent(ObserverError):
    """The observed symbol stream cannot be produced by the abstraction."""


class HorizonEnd(ObserverError):
    pass


class MtlError(HytlError):
    exit_code = 7


class MtlSyntaxError(MtlError):
    def __init__(self, msg, pos=None):
        super().__init__(msg if pos is None else f"{msg} at position {pos}")
        self.pos = pos


class HorizonError(MtlError):
    pass


class InferenceError(HytlError):
    exit_code = 7


class RefinementError(HytlError):
    exit_code = 8
