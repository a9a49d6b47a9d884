"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all toolkit-specific failures."""


class DomainError(ToolkitError, ValueError):
    """An argument fell outside a function's declared domain (e.g. s < 0)."""


class RangeError(ToolkitError, ValueError):
    """A requested value is unreachable (bracket growth exceeded its cap)."""


class FiniteEscapeError(ToolkitError, RuntimeError):
    """State norm blew past the divergence threshold during integration."""

    def __init__(self, time: float, norm: float, index: int = 0):
        self.time = float(time)
        self.norm = float(norm)
        self.index = int(index)
        super().__init__(
            f"trajectory {index} diverged at t={time:.6g} (|x|={norm:.3e})"
        )


class GradientMismatchError(ToolkitError, RuntimeError):
    """Analytic and finite-difference gradients disagree beyond tolerance."""


class UnsupportedShapeError(ToolkitError, ValueError):
    """Geometry or level sets violate an assumption of the construction."""


class SchemaError(ToolkitError, ValueError):
    """An experiment spec failed validation."""
