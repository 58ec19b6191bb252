"""Exception types raised across the package."""


class IntegrationDivergedError(RuntimeError):
    """A time integration produced a non-finite or blown-up state."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"integration diverged at step {step}")


class ExtensionFailedError(RuntimeError):
    """Nystrom extension could not find any anchor within the grown radius."""


class DisconnectedGraphWarning(UserWarning):
    """The kernel graph of the anchor set has more than one component."""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class MissingArtifactError(FileNotFoundError):
    """A pipeline stage was run before the stage producing its input."""

    def __init__(self, path, stage):
        self.path = path
        self.stage = stage
        super().__init__(f"missing artifact {path}; run stage '{stage}' first")


class EmptyCoveringError(RuntimeError):
    """Selection removed every box; nothing is left to embed."""
