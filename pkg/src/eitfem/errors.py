"""Exception hierarchy. Each family carries the CLI exit code it maps to."""


class EITError(Exception):
    exit_code = 1


class InvalidArgumentError(EITError, ValueError):
    exit_code = 1


class ConfigError(EITError, ValueError):
    exit_code = 1

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshError(EITError):
    exit_code = 2


class InvalidMeshError(MeshError, ValueError):
    pass


class ElectrodeUnresolvedError(MeshError):
    """An electrode arc captured no boundary edge; the mesh is too coarse."""


class MissingElectrodeError(MeshError):
    pass


class OutOfDomainError(MeshError, ValueError):
    pass


class AmbiguousNormalError(MeshError, ValueError):
    pass


class UnsupportedDomainError(MeshError):
    pass


class SolverError(EITError):
    exit_code = 3


class InadmissibleConductivityError(SolverError, ValueError):
    pass


class LinearSolverError(SolverError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class InverseCrimeError(SolverError):
    """Synthetic data was generated on a mesh not finer than the inversion mesh."""


class OptimizerError(EITError):
    exit_code = 4


class NonsmoothPenaltyError(OptimizerError, ValueError):
    pass


class DivergedError(OptimizerError):
    def __init__(self, message, history=None):
        self.history = list(history or [])
        super().__init__(message)


class DataIOError(EITError, OSError):
    exit_code = 5
