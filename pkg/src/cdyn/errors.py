"""Exception types shared across the package."""


class NumericsError(RuntimeError):
    """Raised when a computation blows up (NaN, CFL violation, divergence)."""


class TrainingDivergedError(NumericsError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, cycle: int, step: int, loss: float):
        self.cycle = cycle
        self.step = step
        super().__init__(
            f"training loss became non-finite ({loss}) at cycle {cycle}, step {step}"
        )


class ConfigError(ValueError):
    """Raised for invalid or unparseable configuration."""


class FormatError(ValueError):
    """Raised when a binary container or CSV file is malformed."""
