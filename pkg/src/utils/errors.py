# src/utils/errors.py


class LLTEBDError(Exception):
    """Base class for every error raised on purpose by the simulator."""

    exit_code = 1


class ConfigError(LLTEBDError, ValueError):
    """Invalid experiment configuration or physical parameters."""

    exit_code = 2


class NumericalAbort(LLTEBDError, RuntimeError):
    """
    The integration cannot continue: SVD failure, collapsed trace,
    per-step discard over the abort threshold, bad gate exponentials.
    """

    exit_code = 3

    def __init__(self, message: str, diagnostics: dict = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class WallClockExceeded(LLTEBDError):
    """Run stopped on its wall-clock budget; resumable from `checkpoint_path`."""

    exit_code = 10

    def __init__(self, message: str, checkpoint_path: str = ""):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
