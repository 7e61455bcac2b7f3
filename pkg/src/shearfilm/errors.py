"""Exception types raised across the package."""


class ShearFilmError(Exception):
    """Base class for all package errors."""


class DomainCollapse(ShearFilmError):
    """The flattening map degenerated: the Jacobian fell below the floor."""

    def __init__(self, min_jacobian: float, floor: float):
        self.min_jacobian = float(min_jacobian)
        self.floor = float(floor)
        super().__init__(
            f"Jacobian minimum {self.min_jacobian:.6g} below floor {self.floor:.6g}"
        )


class SolverError(ShearFilmError):
    """A linear solve or time step failed."""


class SingularModeError(SolverError):
    def __init__(self, mode: tuple[int, int], detail: str = ""):
        self.mode = mode
        super().__init__(f"singular system at horizontal mode {mode}" + (f": {detail}" if detail else ""))


class IncompatibleDataError(ShearFilmError, ValueError):
    """Boundary/volume data violate a solvability condition."""


class InsufficientHistory(ShearFilmError, ValueError):
    """Not enough snapshots to form the requested time derivatives."""


class ConfigError(ShearFilmError, ValueError):
    """Experiment configuration could not be parsed or validated."""
