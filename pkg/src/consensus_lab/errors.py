class ConfigError(ValueError):
    """Invalid scenario or fault configuration. ``path`` names the offending field."""

    def __init__(self, message: str, path: str = "") -> None:
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class SimulationIdle(Exception):
    """Raised by Network.step() when nothing is in flight."""


class EngineAbort(RuntimeError):
    """A run cannot continue (surfaced by the CLI as exit code 2)."""


class NoEligibleValidators(EngineAbort):
    pass
