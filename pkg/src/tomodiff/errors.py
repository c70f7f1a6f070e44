"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when inputs, configuration, or file contents violate a contract."""


class DivergenceError(RuntimeError):
    """Raised when an iterative reconstruction residual grows repeatedly.

    Carries the 0-based iteration index at which divergence was detected.
    """

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"residual diverged at iteration {step}")


class SamplingError(RuntimeError):
    """Raised when the diffusion loop produces a non-finite state.

    Carries the 0-based sampling step index.
    """

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite state at sampling step {step}")


class ProtocolError(RuntimeError):
    """Raised on any violation of the external denoiser wire protocol."""


class DenoiserError(RuntimeError):
    """Raised when a denoiser fails; carries the sampling step when known."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        super().__init__(message if step is None else f"step {step}: {message}")
