"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or inconsistent inputs."""


class TopologyError(ConfigError):
    """Feeder graph is not a tree rooted at the feeder head."""


class ParseError(ValueError):
    """Malformed input file; message carries the offending line when known."""


class ScenarioError(RuntimeError):
    """A scenario cannot be advanced (exhausted profiles, exhausted trace, ...)."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""
