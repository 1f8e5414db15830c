"""Exception types shared across the package."""


class PlanError(ValueError):
    """A schedule or plan is malformed or violates a required invariant."""


class ScheduleRangeError(IndexError):
    """Step index outside ``[0, T)``."""


class UnsupportedScheduleError(ValueError):
    """No closed-form bound exists for this schedule combination."""


class ConstraintError(ValueError):
    """A numeric constraint of a bound is violated (e.g. ``L * eta_max >= 2``)."""


class DegeneratePlanError(ValueError):
    """The learning-rate sum is zero, so B_T and V_T are undefined."""


class DivergedError(RuntimeError):
    """SGD iterates left the finite region."""

    def __init__(self, message, *, last_finite_t, seed=None):
        super().__init__(message)
        self.last_finite_t = last_finite_t
        self.seed = seed


class EnumerationTooLargeError(ValueError):
    """Exhaustive batch enumeration would exceed the size limit."""


class ConfigError(ValueError):
    """Malformed configuration document; ``line`` points into the source when known."""

    def __init__(self, message, *, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:{line}: " if line is not None else f"{source}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class NonFiniteError(FloatingPointError):
    """Input contains NaN or infinity."""
