class VnsError(RuntimeError):
    """Base class for every error raised by the simulator."""


class ConfigError(VnsError):
    pass


class InvalidDelta0(ConfigError):
    pass


class InvalidGrid(ConfigError):
    pass


class InvalidTimeStep(ConfigError):
    pass


class UnknownConfigKey(ConfigError):
    pass


class NonFiniteField(VnsError):
    pass


class FieldHistoryUnavailable(VnsError):
    pass


class SingularDifference(VnsError):
    pass


class UnnormalizableSpec(VnsError):
    pass


class DeadParticle(VnsError):
    pass


class DivergentFunctional(VnsError):
    pass


class DivergentIntegral(VnsError):
    pass


class GridMismatch(VnsError):
    pass


class CflViolation(VnsError):
    pass


class SolverDivergence(VnsError):
    pass


class DomainError(VnsError):
    pass


class ExponentViolation(VnsError):
    pass


class NonPositiveData(VnsError):
    pass


class MissingColumn(VnsError):
    pass


class SnapshotFormatError(VnsError):
    pass


class AcceptanceFailure(VnsError):
    def __init__(self, failed_checks) -> None:
        self.failed_checks = list(failed_checks)
        super().__init__(f"Acceptance checks failed: {', '.join(self.failed_checks)}")
