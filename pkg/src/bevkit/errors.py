"""Exception hierarchy shared by all bevkit modules."""


class BevkitError(Exception):
    """Base class for every error raised by bevkit."""


class ConfigError(BevkitError, ValueError):
    """Invalid grid spec, rig, depth bins or config file."""


class ContractError(BevkitError, ValueError):
    """Inputs violate an operation's preconditions (shape or length mismatch)."""

    def __init__(self, message: str, stage: str | None = None):
        self.stage = stage
        if stage:
            message = f"[{stage}] {message}"
        super().__init__(message)


class FormatError(BevkitError, ValueError):
    """A grid or scene file is malformed."""


class GenerationError(BevkitError, RuntimeError):
    """A synthetic scene cannot be generated from the given config."""
