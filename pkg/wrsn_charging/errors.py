class WRSNError(Exception):
    """Base error of the package. ``exit_code`` is what the CLI exits with."""

    exit_code: int = 1


class ConfigError(WRSNError):
    exit_code = 2


class CheckpointMismatchError(ConfigError):
    """Checkpoint manifest does not fit the scenario (grid size, bounds or agent count)."""


class ScenarioParseError(WRSNError):
    exit_code = 3


class ScenarioValidationError(WRSNError):
    exit_code = 3


class InfeasibleScenarioError(ScenarioValidationError):
    def __init__(self, message: str, *, n_targets: int, n_sensors: int, added: int):
        super().__init__(f"{message} (targets={n_targets}, sensors={n_sensors}, repair sensors added={added})")
        self.n_targets = n_targets
        self.n_sensors = n_sensors
        self.added = added


class InvariantViolation(WRSNError):
    exit_code = 4


class ChargerEnergyUnderflow(InvariantViolation):
    pass


class NonFiniteGradientError(InvariantViolation):
    def __init__(self, block: str):
        super().__init__(f"non-finite gradient in parameter block {block!r}")
        self.block = block


class NonFiniteRatioError(InvariantViolation):
    def __init__(self, index: int):
        super().__init__(f"non-finite importance ratio at frame {index}")
        self.index = index


class DegenerateScenarioError(InvariantViolation):
    pass


class OracleSizeError(ValueError):
    pass
